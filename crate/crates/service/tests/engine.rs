use ballbot_core::config::LabConfig;
use ballbot_service::engine::{replay, CommandLog, LogEntry, SessionEngine};
use ballbot_service::protocol::{
    ClientMessage, Command, Control, ControlAction, Push, ServerMessage, SessionStatus, TelemetryFrame,
};

const STEPS_PER_S: u64 = 8000;

fn miapure() -> LabConfig {
    LabConfig::preset("miapure").unwrap()
}

fn control(action: ControlAction) -> ClientMessage {
    ClientMessage::Control(Control::new(action))
}

fn command(v: f64, heading_deg: f64) -> ClientMessage {
    ClientMessage::Command(Command::new(v, heading_deg))
}

fn ack(reply: &ServerMessage) -> &ballbot_service::protocol::Ack {
    match reply {
        ServerMessage::Ack(a) => a,
        other => panic!("expected ack, got {other:?}"),
    }
}

fn error_code(reply: &ServerMessage) -> &str {
    match reply {
        ServerMessage::Error(e) => &e.code,
        other => panic!("expected error, got {other:?}"),
    }
}

fn started(cfg: &LabConfig, seed: u64) -> SessionEngine {
    let mut e = SessionEngine::new(cfg, seed).unwrap();
    ack(&e.apply(&control(ControlAction::Start)).0);
    e
}

#[test]
fn new_session_is_paused_at_upright_rest() {
    let mut e = SessionEngine::new(&miapure(), 0).unwrap();
    assert_eq!(e.status(), SessionStatus::Paused);
    assert!(e.advance(1000).is_empty(), "paused sessions do not step");
    assert_eq!(e.total_steps(), 0);
    let f = e.frame();
    for k in ["theta_x", "theta_y", "theta_dot_x", "theta_dot_y", "phi_dot_x", "phi_dot_y"] {
        assert_eq!(f.signals[k], 0.0, "{k}");
    }
}

#[test]
fn commands_need_a_running_session() {
    let mut e = SessionEngine::new(&miapure(), 0).unwrap();
    assert_eq!(error_code(&e.apply(&command(1.0, 0.0)).0), "not_running");
}

#[test]
fn zero_command_balances_in_place() {
    let mut e = started(&miapure(), 0);
    e.apply(&command(0.0, 0.0));
    e.advance(2 * STEPS_PER_S);
    assert_eq!(e.status(), SessionStatus::Running);
    assert_eq!(e.max_tilt(), 0.0);
    assert_eq!(e.effort(), 0.0);
}

#[test]
fn heading_180_drives_negative_y_plane() {
    let mut e = started(&miapure(), 0);
    ack(&e.apply(&command(1.0, 180.0)).0);
    // the slew reaches 1 m/s after 1/1.5 s
    let frames = e.advance(STEPS_PER_S);
    let last = frames.last().unwrap();
    let expected: f64 = -1.0 / 0.1145;
    assert!((expected + 8.7336).abs() < 1e-4);
    assert!((last.signals["phi_dot_c_y"] - expected).abs() < 1e-9, "{}", last.signals["phi_dot_c_y"]);
    assert!(last.signals["phi_dot_c_x"].abs() < 1e-12);
    assert_eq!(e.plane_commands().1, last.signals["phi_dot_c_y"]);
}

#[test]
fn command_slew_is_rate_limited() {
    let mut e = started(&miapure(), 0);
    e.apply(&command(1.5, 0.0));
    let frames = e.advance(STEPS_PER_S / 2);
    let speeds: Vec<f64> = frames.iter().map(|f| f.command.v).collect();
    // 1.5 m/s^2 for 0.5 s, give or take one outer tick
    let last = *speeds.last().unwrap();
    assert!((last - 0.75).abs() <= 1.5 / 400.0 + 1e-12, "{last}");
    for w in speeds.windows(2) {
        assert!(w[1] >= w[0]);
        assert!(w[1] - w[0] <= 1.5 / 50.0 + 1e-9);
    }
}

#[test]
fn over_limit_speed_is_clamped_and_reported() {
    let mut e = started(&miapure(), 0);
    let reply = e.apply(&command(3.0, 0.0)).0;
    let a = ack(&reply);
    assert!(a.clamped);
    assert!(a.note.as_deref().unwrap().contains("clamped to 2"));
    e.advance(2 * STEPS_PER_S);
    assert!((e.shaped_command().v - 2.0).abs() < 1e-12);

    let reply = e.apply(&ClientMessage::Command(Command {
        yaw_rate: 5.0,
        ..Command::new(0.5, 0.0)
    }));
    assert!(ack(&reply.0).clamped);
}

#[test]
fn non_finite_commands_are_rejected_without_effect() {
    let mut e = started(&miapure(), 0);
    assert_eq!(error_code(&e.apply(&command(f64::NAN, 0.0)).0), "bad_command");
    let bad_push = ClientMessage::Command(Command {
        push: Some(Push {
            force: 10.0,
            heading_deg: 0.0,
            duration: -1.0,
        }),
        ..Command::new(1.0, 0.0)
    });
    assert_eq!(error_code(&e.apply(&bad_push).0), "bad_command");
    e.advance(STEPS_PER_S / 10);
    assert_eq!(e.shaped_command().v, 0.0);
}

#[test]
fn frames_are_decimated_to_the_stream_rate() {
    let mut e = started(&miapure(), 0);
    e.apply(&command(0.5, 30.0));
    let frames = e.advance(2 * STEPS_PER_S);
    assert_eq!(e.decimation(), 160);
    assert_eq!(frames.len(), 100);
    for w in frames.windows(2) {
        assert!(w[1].t > w[0].t);
        assert_eq!(w[1].seq, w[0].seq + 1);
    }
    assert!((frames[0].t - 0.02).abs() < 1e-12);
}

#[test]
fn pause_resume_round_trip_preserves_state() {
    let cfg = miapure();
    let mut straight = started(&cfg, 7);
    straight.apply(&command(0.6, 45.0));
    let a: Vec<TelemetryFrame> = straight.advance(2 * STEPS_PER_S);

    let mut paused = started(&cfg, 7);
    paused.apply(&command(0.6, 45.0));
    let mut b = paused.advance(STEPS_PER_S);
    ack(&paused.apply(&control(ControlAction::Pause)).0);
    assert!(paused.advance(STEPS_PER_S).is_empty(), "gap while paused");
    ack(&paused.apply(&control(ControlAction::Start)).0);
    b.extend(paused.advance(STEPS_PER_S));

    assert_eq!(a, b);
    assert_eq!(straight.frame(), paused.frame());
}

#[test]
fn plant_parameters_cannot_be_changed_live() {
    let mut e = started(&miapure(), 0);
    let set = |name: &str, value: f64| control(ControlAction::SetParam { name: name.into(), value });
    assert_eq!(error_code(&e.apply(&set("plant.wip.m_b", 40.0)).0), "param_not_whitelisted");
    assert_eq!(error_code(&e.apply(&set("max_speed", -1.0)).0), "invalid_param");
    assert_eq!(error_code(&e.apply(&set("max_speed", f64::INFINITY)).0), "invalid_param");
    ack(&e.apply(&set("max_speed", 1.0)).0);
    assert_eq!(e.limits().max_speed, 1.0);
    ack(&e.apply(&set("tracking_pi.kp", 2.0)).0);
    ack(&e.apply(&set("real_time_factor", 2.0)).0);
    assert_eq!(e.limits().real_time_factor, 2.0);
    assert!(ack(&e.apply(&command(1.5, 0.0)).0).clamped);
}

#[test]
fn tracking_gains_are_only_for_lqr_pi() {
    let cfg = LabConfig::from_toml_str(LabConfig::preset_text("piptb").unwrap(), &["controller.kind=\"pi-pd\"".into()])
        .unwrap();
    let mut e = started(&cfg, 0);
    let reply = e.apply(&control(ControlAction::SetParam {
        name: "tracking_pi.ki".into(),
        value: 1.0,
    }));
    assert_eq!(error_code(&reply.0), "invalid_param");
}

#[test]
fn unknown_scenarios_list_the_available_ones() {
    let mut e = started(&miapure(), 0);
    let reply = e.apply(&control(ControlAction::Scenario { name: "loop-the-loop".into() }));
    match reply.0 {
        ServerMessage::Error(err) => {
            assert_eq!(err.code, "unknown_scenario");
            assert!(err.message.contains("brake-now") && err.message.contains("ramp-test"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn brake_now_at_rest_is_a_no_op() {
    let mut e = started(&miapure(), 0);
    let before = e.frame();
    let reply = e.apply(&control(ControlAction::Scenario { name: "brake-now".into() }));
    assert_eq!(ack(&reply.0).note.as_deref(), Some("already at rest"));
    let after = e.frame();
    assert_eq!(before.signals, after.signals);
    assert_eq!(after.scenario, None);
}

#[test]
fn brake_now_tilts_back_then_stops() {
    let mut e = started(&miapure(), 0);
    e.apply(&command(1.0, 0.0));
    let cruise = e.advance(3 * STEPS_PER_S);
    assert!((cruise.last().unwrap().signals["speed"] - 1.0).abs() < 0.05);
    ack(&e.apply(&control(ControlAction::Scenario { name: "brake-now".into() })).0);
    let frames = e.advance(3 * STEPS_PER_S);
    assert_eq!(e.status(), SessionStatus::Running);
    let braking: Vec<&TelemetryFrame> = frames.iter().filter(|f| f.scenario.is_some()).collect();
    assert!(!braking.is_empty());
    let min_tilt = braking.iter().map(|f| f.signals["theta_y"]).fold(f64::INFINITY, f64::min);
    assert!(min_tilt < -0.02, "leans back to brake: {min_tilt}");
    let events: Vec<&String> = frames.iter().flat_map(|f| &f.events).collect();
    assert!(events.iter().any(|e| *e == "scenario_end:brake-now"), "{events:?}");
    let last = frames.last().unwrap();
    assert!(last.signals["speed"].abs() < 0.05, "{}", last.signals["speed"]);
    assert!(last.signals["theta_y"].abs() < 0.01);
}

#[test]
fn a_new_command_cancels_a_maneuver() {
    let mut e = started(&miapure(), 0);
    e.apply(&command(0.5, 0.0));
    e.advance(STEPS_PER_S);
    e.apply(&control(ControlAction::Scenario { name: "ramp-test".into() }));
    let frames = e.advance(STEPS_PER_S);
    assert_eq!(frames.last().unwrap().scenario.as_deref(), Some("ramp-test"));
    let v = frames.last().unwrap().command.v;
    assert!((v - 0.6).abs() < 0.01, "ramps at 0.1 m/s^2: {v}");
    let reply = e.apply(&command(0.0, 0.0));
    assert!(ack(&reply.0).note.as_deref().unwrap().contains("ramp-test cancelled"));
}

#[test]
fn balance_failure_cuts_torque_in_the_same_tick() {
    let cfg = miapure();
    let limit = cfg.failure.tilt_limit;
    let mut e = started(&cfg, 0);
    e.apply(&ClientMessage::Command(Command {
        push: Some(Push {
            force: 2000.0,
            heading_deg: 90.0,
            duration: 0.5,
        }),
        ..Command::new(0.0, 0.0)
    }));
    let mut failed_frame = None;
    for _ in 0..5 * STEPS_PER_S {
        assert!(e.max_tilt() <= limit, "ran past the envelope");
        if let Some(f) = e.advance(1).into_iter().find(|f| f.status == SessionStatus::Failed) {
            failed_frame = Some(f);
            break;
        }
    }
    let f = failed_frame.expect("the shove topples the robot");
    assert_eq!(e.status(), SessionStatus::Failed);
    assert!(f.events.contains(&"balance_failure".to_string()));
    for k in ["u1", "u2", "u3"] {
        assert_eq!(f.signals[k], 0.0, "{k}");
    }
    assert_eq!(e.effort(), 0.0);
    let steps = e.total_steps();
    assert!(e.advance(100).is_empty());
    assert_eq!(e.total_steps(), steps);

    assert_eq!(error_code(&e.apply(&control(ControlAction::Start)).0), "illegal_transition");
    let (reply, frames) = e.apply(&control(ControlAction::Reset));
    assert_eq!(ack(&reply).status, SessionStatus::Reset);
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0].signals["theta_x"], 0.0);
    assert_eq!(frames[0].t, 0.0);
    ack(&e.apply(&control(ControlAction::Start)).0);
    e.advance(STEPS_PER_S);
    assert_eq!(e.status(), SessionStatus::Running);
    assert_eq!(e.max_tilt(), 0.0);
}

#[test]
fn planar_sessions_have_planar_fields_only() {
    let mut e = started(&LabConfig::preset("piptb").unwrap(), 0);
    e.apply(&command(0.5, 0.0));
    let f = e.advance(STEPS_PER_S).pop().unwrap();
    for k in ["theta", "phi_dot", "tau", "phi_dot_c"] {
        assert!(f.signals.contains_key(k), "{k}");
    }
    assert!(f.signals.keys().all(|k| !k.ends_with("_x") && !k.starts_with('u')));
    assert_eq!(f.command.heading_deg, 0.0);
}

#[test]
fn recorded_input_replays_to_identical_telemetry() {
    let cfg = miapure();
    let mut e = SessionEngine::new(&cfg, 3).unwrap();
    let mut entries = Vec::new();
    let mut frames = Vec::new();
    let script: Vec<(u64, ClientMessage)> = vec![
        (0, control(ControlAction::Start)),
        (800, command(1.2, 120.0)),
        (9000, control(ControlAction::Pause)),
        (9000, control(ControlAction::Start)),
        (
            12000,
            ClientMessage::Command(Command {
                push: Some(Push {
                    force: 20.0,
                    heading_deg: 10.0,
                    duration: 0.2,
                }),
                ..Command::new(1.2, 120.0)
            }),
        ),
        (16000, control(ControlAction::Scenario { name: "brake-now".into() })),
        (30000, control(ControlAction::Reset)),
        (30000, control(ControlAction::Start)),
        (31000, command(0.3, -60.0)),
    ];
    for (at, msg) in script {
        frames.extend(e.run_to(at));
        entries.push(LogEntry {
            at: e.total_steps(),
            message: msg.clone(),
        });
        frames.extend(e.apply(&msg).1);
    }
    frames.extend(e.run_to(40000));
    let log = CommandLog {
        seed: 3,
        entries,
        end: e.total_steps(),
    };
    let text = serde_json::to_string(&log).unwrap();
    let back: CommandLog = serde_json::from_str(&text).unwrap();
    assert_eq!(replay(&cfg, &back).unwrap(), frames);
}

#[test]
fn replay_rejects_a_log_that_outruns_the_session() {
    let log = CommandLog {
        seed: 0,
        entries: vec![LogEntry {
            at: 10,
            message: control(ControlAction::Start),
        }],
        end: 10,
    };
    assert!(replay(&miapure(), &log).is_err());
}
