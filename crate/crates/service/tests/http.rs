use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use ballbot_core::config::LabConfig;
use ballbot_service::clock::TokioClock;
use ballbot_service::engine::CommandLog;
use ballbot_service::server::{router, AppState};
use ballbot_service::session::SessionInfo;
use futures::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

fn state() -> Arc<AppState> {
    AppState::new(
        LabConfig::preset_text("miapure").unwrap().to_string(),
        Arc::new(TokioClock::new()),
    )
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

#[tokio::test]
async fn session_lifecycle_over_http() {
    let app = router(state());
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({}))).await;
    assert_eq!(status, StatusCode::CREATED);
    let info: SessionInfo = serde_json::from_value(body).unwrap();
    assert_eq!(info.t, 0.0);
    assert_eq!(serde_json::to_value(info.status).unwrap(), "paused");

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({"preset": "piptb", "seed": 4}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["platform"], "piptb");
    assert_eq!(body["seed"], 4);

    let (status, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 2);

    let (status, one) = call(&app, "GET", &format!("/sessions/{}", info.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(one["id"], info.id.as_str());

    let (status, log) = call(&app, "GET", &format!("/sessions/{}/log", info.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let log: CommandLog = serde_json::from_value(log).unwrap();
    assert!(log.entries.is_empty());

    let (status, _) = call(&app, "DELETE", &format!("/sessions/{}", info.id), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, "GET", &format!("/sessions/{}", info.id), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "DELETE", &format!("/sessions/{}", info.id), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_configs_allocate_nothing() {
    let app = router(state());
    for body in [
        json!({"config": "platform = ["}),
        json!({"preset": "segway"}),
        json!({"overrides": ["service.stream_hz=500"]}),
        json!({"overrides": ["plant.wip.nonsense=1"]}),
        json!({"bogus": 1}),
    ] {
        let (status, err) = call(&app, "POST", "/sessions", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(err["error"].as_str().is_some_and(|m| !m.is_empty()));
    }
    let (_, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(list, json!([]));
}

#[tokio::test]
async fn unknown_socket_ids_are_not_found() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(ballbot_service::serve_on(listener, state(), std::future::pending()));
    match tokio_tungstenite::connect_async(format!("ws://{addr}/session/s99")).await {
        Err(tokio_tungstenite::tungstenite::Error::Http(resp)) => assert_eq!(resp.status(), StatusCode::NOT_FOUND),
        other => panic!("{:?}", other.map(|_| ())),
    }
}

async fn next_of_type(
    ws: &mut (impl StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin),
    kind: &str,
) -> Value {
    loop {
        let msg = ws.next().await.expect("socket open").unwrap();
        if let Message::Text(text) = msg {
            let v: Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["proto_version"], 1);
            if v["type"] == kind {
                return v;
            }
        }
    }
}

#[tokio::test]
async fn websocket_round_trip() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let st = state();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(ballbot_service::serve_on(listener, st.clone(), async {
        let _ = stopped.await;
    }));

    let link = st.create(&Default::default()).unwrap();
    let url = format!("ws://{addr}/session/{}", link.id());
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();

    ws.send(Message::text(r#"{"proto_version":1,"type":"control","seq":1,"action":"start"}"#))
        .await
        .unwrap();
    let ack = next_of_type(&mut ws, "ack").await;
    assert_eq!(ack["seq"], 1);
    assert_eq!(ack["status"], "running");

    ws.send(Message::text(
        r#"{"proto_version":1,"type":"command","seq":2,"v":3.0,"heading_deg":180.0}"#,
    ))
    .await
    .unwrap();
    let ack = next_of_type(&mut ws, "ack").await;
    assert_eq!(ack["seq"], 2);
    assert_eq!(ack["clamped"], true);

    let frame = next_of_type(&mut ws, "telemetry").await;
    assert!(frame["t"].as_f64().unwrap() > 0.0);
    assert!(frame["signals"]["theta_x"].is_number());
    assert!(frame["signals"]["margin1"].is_number());

    ws.send(Message::text(r#"{"proto_version":2,"type":"control","seq":3,"action":"pause"}"#))
        .await
        .unwrap();
    let err = next_of_type(&mut ws, "error").await;
    assert_eq!(err["code"], "unsupported_version");
    assert_eq!(err["seq"], 3);

    ws.send(Message::text("not json")).await.unwrap();
    assert_eq!(next_of_type(&mut ws, "error").await["code"], "bad_json");

    ws.send(Message::text(
        r#"{"proto_version":1,"type":"control","seq":4,"action":"set_param","name":"plant.wip.m_b","value":1}"#,
    ))
    .await
    .unwrap();
    assert_eq!(next_of_type(&mut ws, "error").await["code"], "param_not_whitelisted");

    ws.close(None).await.unwrap();
    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
}

#[tokio::test]
async fn binding_a_taken_port_is_a_bind_error() {
    let taken = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    match ballbot_service::bind(&addr).await {
        Err(ballbot_service::ServiceError::Bind { addr: a, .. }) => assert_eq!(a, addr),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn deleting_a_session_closes_its_sockets() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let st = state();
    tokio::spawn(ballbot_service::serve_on(listener, st.clone(), std::future::pending()));
    let link = st.create(&Default::default()).unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session/{}", link.id()))
        .await
        .unwrap();
    let (status, _) = call(&router(st.clone()), "DELETE", &format!("/sessions/{}", link.id()), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let closed = tokio::time::timeout(std::time::Duration::from_secs(5), async {
        loop {
            match ws.next().await {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            }
        }
    })
    .await;
    assert!(closed.is_ok(), "socket still open after delete");
}
