//! Wire protocol, version 1.
//!
//! Every message is a JSON object with a `type` field and a
//! `proto_version`. Clients send `command` and `control`; the server answers
//! each with an `ack` or an `error` and streams `telemetry` frames.
//!
//! ```json
//! {"proto_version": 1, "type": "command", "seq": 4, "v": 1.0, "heading_deg": 180.0, "yaw_rate": 0.0}
//! {"proto_version": 1, "type": "control", "seq": 5, "action": "scenario", "name": "brake-now"}
//! {"proto_version": 1, "type": "ack", "seq": 4, "status": "running", "clamped": false}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const PROTO_VERSION: u32 = 1;

/// Named maneuvers accepted by the `scenario` control action.
pub const SCENARIOS: [&str; 2] = ["brake-now", "ramp-test"];

/// Parameters accepted by `set_param`. Plant physics is not among them.
pub const PARAM_WHITELIST: [&str; 6] = [
    "max_speed",
    "max_accel",
    "max_yaw_rate",
    "real_time_factor",
    "tracking_pi.kp",
    "tracking_pi.ki",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Paused,
    Running,
    Failed,
    /// Back at upright rest after a reset, not yet started.
    Reset,
}

/// External shove on the body. Magnitudes are not calibrated against the
/// real robot; this is for demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Push {
    /// Force, N.
    pub force: f64,
    /// Direction in the heading convention, degrees.
    pub heading_deg: f64,
    /// Seconds of sim time.
    pub duration: f64,
}

/// Teleoperation command: translation speed along a heading plus yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    /// Speed, m/s.
    pub v: f64,
    /// Heading, degrees; 0 points along the omniwheel-1 axis.
    #[serde(default)]
    pub heading_deg: f64,
    /// Yaw rate, rad/s.
    #[serde(default)]
    pub yaw_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub push: Option<Push>,
}

impl Command {
    pub fn new(v: f64, heading_deg: f64) -> Self {
        Self {
            seq: None,
            v,
            heading_deg,
            yaw_rate: 0.0,
            push: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ControlAction {
    Start,
    Pause,
    Reset,
    SetParam { name: String, value: f64 },
    Scenario { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(flatten)]
    pub action: ControlAction,
}

impl Control {
    pub fn new(action: ControlAction) -> Self {
        Self { seq: None, action }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command(Command),
    Control(Control),
}

impl ClientMessage {
    pub fn seq(&self) -> Option<u64> {
        match self {
            ClientMessage::Command(c) => c.seq,
            ClientMessage::Control(c) => c.seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEnvelope {
    pub proto_version: u32,
    #[serde(flatten)]
    pub message: ClientMessage,
}

impl ClientEnvelope {
    pub fn new(message: ClientMessage) -> Self {
        Self {
            proto_version: PROTO_VERSION,
            message,
        }
    }
}

/// Command after limits and slew shaping, as handed to the controller.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapedCommand {
    pub v: f64,
    pub heading_deg: f64,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    /// Frame counter within the session, reset never.
    pub seq: u64,
    /// Integration steps since the last reset.
    pub step: u64,
    /// Sim time, s.
    pub t: f64,
    pub status: SessionStatus,
    pub command: ShapedCommand,
    /// Active scenario trigger, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// Plant state, controller signals and friction margins by name.
    pub signals: BTreeMap<String, f64>,
    /// Events since the previous frame (`phase`, `slip:<k>`, `balance_failure`, ...).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<String>,
    /// Frames this subscriber missed since its previous frame.
    #[serde(default)]
    pub dropped: u64,
    /// Wall-clock lag of the sim behind its pacing target, s. Not part of
    /// the deterministic content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag: Option<f64>,
}

impl TelemetryFrame {
    /// The frame without wall-clock and per-subscriber fields.
    pub fn deterministic(&self) -> TelemetryFrame {
        TelemetryFrame {
            dropped: 0,
            lag: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub status: SessionStatus,
    /// A command exceeded a limit and was clamped.
    #[serde(default)]
    pub clamped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    /// Stable machine-readable reason.
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Telemetry(TelemetryFrame),
    Ack(Ack),
    Error(ErrorMessage),
}

impl ServerMessage {
    pub fn error(seq: Option<u64>, code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error(ErrorMessage {
            seq,
            code: code.into(),
            message: message.into(),
        })
    }

    /// JSON text with the protocol version attached.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("server messages serialize");
        if let Some(obj) = v.as_object_mut() {
            obj.insert("proto_version".into(), PROTO_VERSION.into());
        }
        v.to_string()
    }
}

/// Parses one client message, checking the protocol version.
#[allow(clippy::result_large_err)]
pub fn parse_client(text: &str) -> Result<ClientMessage, ServerMessage> {
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ServerMessage::error(None, "bad_json", e.to_string()))?;
    let seq = raw.get("seq").and_then(|s| s.as_u64());
    match raw.get("proto_version").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTO_VERSION as u64 => {}
        Some(v) => {
            return Err(ServerMessage::error(
                seq,
                "unsupported_version",
                format!("proto_version {v} is not supported; this server speaks {PROTO_VERSION}"),
            ))
        }
        None => return Err(ServerMessage::error(seq, "bad_message", "missing proto_version")),
    }
    serde_json::from_value::<ClientEnvelope>(raw)
        .map(|e| e.message)
        .map_err(|e| ServerMessage::error(seq, "bad_message", e.to_string()))
}
