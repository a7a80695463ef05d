//! HTTP endpoints for the session lifecycle and the per-session WebSocket.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create; body [`CreateSession`] |
//! | GET | `/sessions` | list |
//! | GET | `/sessions/{id}` | status |
//! | GET | `/sessions/{id}/log` | command log for offline replay |
//! | DELETE | `/sessions/{id}` | stop and remove |
//! | GET (upgrade) | `/session/{id}` | protocol v1 socket |

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use ballbot_core::config::LabConfig;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::engine::SessionEngine;
use crate::protocol::{parse_client, ServerMessage};
use crate::session::{Session, SessionInfo, SessionLink};

/// Body of `POST /sessions`. Without `config` the server's default
/// document is used; `preset` picks a shipped preset instead.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateSession {
    pub preset: Option<String>,
    /// Full TOML configuration document.
    pub config: Option<String>,
    /// Dotted `key=value` overrides.
    pub overrides: Vec<String>,
    pub seed: u64,
}

pub struct AppState {
    defaults: String,
    clock: Arc<dyn Clock>,
    next_id: AtomicU64,
    sessions: Mutex<BTreeMap<String, Session>>,
}

impl AppState {
    /// `defaults` is the TOML document new sessions start from.
    pub fn new(defaults: String, clock: Arc<dyn Clock>) -> Arc<Self> {
        Arc::new(Self {
            defaults,
            clock,
            next_id: AtomicU64::new(1),
            sessions: Mutex::new(BTreeMap::new()),
        })
    }

    /// Creates and starts a session task.
    pub fn create(&self, req: &CreateSession) -> Result<SessionLink, String> {
        let text = match (&req.config, &req.preset) {
            (Some(text), _) => text.clone(),
            (None, Some(name)) => LabConfig::preset_text(name).map_err(|e| e.to_string())?.to_string(),
            (None, None) => self.defaults.clone(),
        };
        let cfg = LabConfig::from_toml_str(&text, &req.overrides).map_err(|e| e.to_string())?;
        let engine = SessionEngine::new(&cfg, req.seed).map_err(|e| e.to_string())?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let session = Session::spawn(id.clone(), engine, self.clock.clone());
        let link = session.link();
        self.lock().insert(id, session);
        Ok(link)
    }

    pub fn link(&self, id: &str) -> Option<SessionLink> {
        self.lock().get(id).map(Session::link)
    }

    pub fn links(&self) -> Vec<SessionLink> {
        self.lock().values().map(Session::link).collect()
    }

    pub fn remove(&self, id: &str) -> bool {
        let removed = self.lock().remove(id);
        match removed {
            Some(s) => {
                s.close();
                tracing::info!(session = %id, "session deleted");
                true
            }
            None => false,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, Session>> {
        // a panic while holding the map leaves it usable
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", get(list).post(create))
        .route("/sessions/{id}", get(info).delete(delete))
        .route("/sessions/{id}/log", get(log))
        .route("/session/{id}", get(socket))
        .with_state(state)
}

fn not_found(id: &str) -> Response {
    (
        StatusCode::NOT_FOUND,
        Json(serde_json::json!({ "error": format!("no session `{id}`") })),
    )
        .into_response()
}

fn gone() -> Response {
    (
        StatusCode::GONE,
        Json(serde_json::json!({ "error": "session task stopped" })),
    )
        .into_response()
}

fn bad_request(message: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(serde_json::json!({ "error": message }))).into_response()
}

/// An empty body means all defaults.
async fn create(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let req = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        match serde_json::from_slice::<CreateSession>(&body) {
            Ok(req) => req,
            Err(e) => return bad_request(format!("bad request body: {e}")),
        }
    };
    match st.create(&req) {
        Ok(link) => match link.info().await {
            Ok(info) => (StatusCode::CREATED, Json(info)).into_response(),
            Err(_) => gone(),
        },
        Err(message) => bad_request(message),
    }
}

async fn list(State(st): State<Arc<AppState>>) -> Response {
    let mut out: Vec<SessionInfo> = Vec::new();
    for link in st.links() {
        if let Ok(info) = link.info().await {
            out.push(info);
        }
    }
    Json(out).into_response()
}

async fn info(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match st.link(&id) {
        Some(link) => match link.info().await {
            Ok(info) => Json(info).into_response(),
            Err(_) => gone(),
        },
        None => not_found(&id),
    }
}

async fn log(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match st.link(&id) {
        Some(link) => match link.log().await {
            Ok(log) => Json(log).into_response(),
            Err(_) => gone(),
        },
        None => not_found(&id),
    }
}

async fn delete(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    if st.remove(&id) {
        StatusCode::NO_CONTENT.into_response()
    } else {
        not_found(&id)
    }
}

async fn socket(State(st): State<Arc<AppState>>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    match st.link(&id) {
        Some(link) => ws.on_upgrade(move |socket| client(socket, link)),
        None => not_found(&id),
    }
}

/// Forwards frames to one client and its messages to the session.
async fn client(socket: WebSocket, link: SessionLink) {
    let (mut sink, mut stream) = socket.split();
    let mut frames = link.subscribe();
    loop {
        tokio::select! {
            frame = frames.next() => match frame {
                Some(f) => {
                    let text = ServerMessage::Telemetry(f).to_json();
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                None => {
                    let _ = sink.send(Message::Close(None)).await;
                    break;
                }
            },
            msg = stream.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let reply = match parse_client(&text) {
                        Ok(msg) => {
                            let seq = msg.seq();
                            link.send(msg)
                                .await
                                .unwrap_or_else(|e| ServerMessage::error(seq, "session_closed", e.to_string()))
                        }
                        Err(e) => e,
                    };
                    if sink.send(Message::Text(reply.to_json().into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}
