//! The deterministic core of a session: plant, controller, command shaping
//! and frame decimation, advanced by explicit step counts. Nothing here
//! reads a clock, so a recorded input log replays to identical frames.

use std::collections::BTreeMap;

use ballbot_core::config::{LabConfig, ServiceSettings};
use ballbot_core::controllers::CommandState;
use ballbot_core::harness::{LiveSim, PlantMode, Platform, RunStatus, ScenarioSpec};
use ballbot_core::trajopt::{optimize_braking, BrakingTask, SolveOptions, Trajectory};
use serde::{Deserialize, Serialize};

use crate::protocol::{
    Ack, ClientMessage, Command, Control, ControlAction, ServerMessage, SessionStatus, ShapedCommand, TelemetryFrame,
    PARAM_WHITELIST, SCENARIOS,
};
use crate::ServiceError;

/// Knots used for the `brake-now` trajectory.
const BRAKE_KNOTS: usize = 50;

/// Speeds below this count as standing still, m/s.
const AT_REST: f64 = 1e-3;

/// A client message and the session step count at which it was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Steps advanced since the session was created, across resets.
    pub at: u64,
    pub message: ClientMessage,
}

/// Everything needed to rebuild a session's telemetry offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandLog {
    pub seed: u64,
    pub entries: Vec<LogEntry>,
    /// Total steps advanced when the log was taken.
    pub end: u64,
}

enum Maneuver {
    /// Optimal stop from `sign * v0` along `heading`.
    Brake { traj: Trajectory, t0: f64, sign: f64, heading: f64 },
    /// Slow acceleration from `from` along `heading`.
    Ramp { t0: f64, from: f64, heading: f64 },
}

impl Maneuver {
    fn name(&self) -> &'static str {
        match self {
            Maneuver::Brake { .. } => "brake-now",
            Maneuver::Ramp { .. } => "ramp-test",
        }
    }
}

pub struct SessionEngine {
    spec: ScenarioSpec,
    platform: Platform,
    seed: u64,
    limits: ServiceSettings,
    live: LiveSim,
    status: SessionStatus,
    /// Requested and shaped translation velocity in the `(x, y)` planes, m/s.
    target: (f64, f64),
    shaped: (f64, f64),
    yaw_rate: f64,
    /// Last heading with nonzero speed, rad.
    heading: f64,
    maneuver: Option<Maneuver>,
    decimation: u64,
    frame_seq: u64,
    total_steps: u64,
    events: Vec<String>,
    slipping: [bool; 3],
}

impl SessionEngine {
    /// Session at upright rest, paused.
    pub fn new(cfg: &LabConfig, seed: u64) -> Result<Self, ServiceError> {
        cfg.service.validate()?;
        let mut spec = cfg.base_spec();
        // interactive sessions keep running through slips and only stop at
        // the balance envelope
        spec.failure.abort_on_slip = false;
        let live = LiveSim::new(&spec, seed)?;
        let decimation = ((1.0 / (cfg.service.stream_hz * live.dt())).round() as u64).max(1);
        Ok(Self {
            platform: cfg.platform,
            seed,
            limits: cfg.service.clone(),
            live,
            status: SessionStatus::Paused,
            target: (0.0, 0.0),
            shaped: (0.0, 0.0),
            yaw_rate: 0.0,
            heading: 0.0,
            maneuver: None,
            decimation,
            frame_seq: 0,
            total_steps: 0,
            events: Vec::new(),
            slipping: [false; 3],
            spec,
        })
    }

    pub fn platform(&self) -> Platform {
        self.platform
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn limits(&self) -> &ServiceSettings {
        &self.limits
    }

    /// Sim time since the last reset, s.
    pub fn time(&self) -> f64 {
        self.live.time()
    }

    /// Integration step, s.
    pub fn dt(&self) -> f64 {
        self.live.dt()
    }

    /// Steps since creation, across resets.
    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Integration steps between telemetry frames.
    pub fn decimation(&self) -> u64 {
        self.decimation
    }

    pub fn shaped_command(&self) -> ShapedCommand {
        let (vx, vy) = self.shaped;
        match self.live.mode() {
            PlantMode::Planar => ShapedCommand {
                v: vy,
                heading_deg: 0.0,
                yaw_rate: 0.0,
            },
            PlantMode::Ballbot => ShapedCommand {
                v: vx.hypot(vy),
                heading_deg: self.heading.to_degrees(),
                yaw_rate: self.yaw_rate,
            },
        }
    }

    /// Shaped command as per-plane ball rates `(x, y)`, rad/s. The planar
    /// platform only has `y`.
    pub fn plane_commands(&self) -> (f64, f64) {
        let r = self.spec.plant.wip.wheel_radius;
        match self.live.mode() {
            PlantMode::Planar => (0.0, self.shaped.1 / r),
            PlantMode::Ballbot => (self.shaped.0 / r, self.shaped.1 / r),
        }
    }

    /// Applies one client message. Returns the reply and any frames the
    /// message produced (a reset emits the fresh state).
    pub fn apply(&mut self, msg: &ClientMessage) -> (ServerMessage, Vec<TelemetryFrame>) {
        let seq = msg.seq();
        match msg {
            ClientMessage::Command(c) => (self.command(c), Vec::new()),
            ClientMessage::Control(c) => self.control(c, seq),
        }
    }

    fn ack(&self, seq: Option<u64>, clamped: bool, note: Option<String>) -> ServerMessage {
        ServerMessage::Ack(Ack {
            seq,
            status: self.status,
            clamped,
            note,
        })
    }

    fn command(&mut self, c: &Command) -> ServerMessage {
        if self.status != SessionStatus::Running {
            return ServerMessage::error(c.seq, "not_running", format!("session is {:?}", self.status).to_lowercase());
        }
        if !(c.v.is_finite() && c.heading_deg.is_finite() && c.yaw_rate.is_finite()) {
            return ServerMessage::error(c.seq, "bad_command", "command values must be finite");
        }
        if let Some(p) = c.push {
            if !(p.force.is_finite() && p.heading_deg.is_finite() && p.duration >= 0.0) {
                return ServerMessage::error(c.seq, "bad_command", "push needs finite force and duration >= 0");
            }
        }
        let mut notes = Vec::new();
        let mut clamped = false;
        let v = c.v.clamp(-self.limits.max_speed, self.limits.max_speed);
        if v != c.v {
            clamped = true;
            notes.push(format!("speed clamped to {}", v));
        }
        let yaw = c.yaw_rate.clamp(-self.limits.max_yaw_rate, self.limits.max_yaw_rate);
        if yaw != c.yaw_rate {
            clamped = true;
            notes.push(format!("yaw rate clamped to {}", yaw));
        }
        if let Some(m) = self.maneuver.take() {
            notes.push(format!("{} cancelled", m.name()));
        }
        let h = c.heading_deg.to_radians();
        let (sin_h, cos_h) = h.sin_cos();
        self.target = (v * sin_h, v * cos_h);
        if v.abs() > AT_REST {
            self.heading = h;
        }
        self.yaw_rate = yaw;
        if let Some(p) = c.push {
            let (s, co) = p.heading_deg.to_radians().sin_cos();
            self.live.push((p.force * s, p.force * co), p.duration);
            self.events.push("push".into());
        }
        let note = (!notes.is_empty()).then(|| notes.join("; "));
        self.ack(c.seq, clamped, note)
    }

    fn control(&mut self, c: &Control, seq: Option<u64>) -> (ServerMessage, Vec<TelemetryFrame>) {
        use SessionStatus::*;
        let illegal = |from: SessionStatus, what: &str| {
            ServerMessage::error(seq, "illegal_transition", format!("cannot {what} a {from:?} session").to_lowercase())
        };
        match &c.action {
            ControlAction::Start => match self.status {
                Paused | Reset => {
                    self.status = Running;
                    (self.ack(seq, false, None), Vec::new())
                }
                Running => (self.ack(seq, false, Some("already running".into())), Vec::new()),
                Failed => (illegal(Failed, "start"), Vec::new()),
            },
            ControlAction::Pause => match self.status {
                Running => {
                    self.status = Paused;
                    (self.ack(seq, false, None), Vec::new())
                }
                Paused | Reset => (self.ack(seq, false, Some("already paused".into())), Vec::new()),
                Failed => (illegal(Failed, "pause"), Vec::new()),
            },
            ControlAction::Reset => match LiveSim::new(&self.spec, self.seed) {
                Ok(live) => {
                    self.live = live;
                    self.status = Reset;
                    self.target = (0.0, 0.0);
                    self.shaped = (0.0, 0.0);
                    self.yaw_rate = 0.0;
                    self.maneuver = None;
                    self.slipping = [false; 3];
                    self.events.push("reset".into());
                    let frame = self.frame();
                    (self.ack(seq, false, None), vec![frame])
                }
                Err(e) => (ServerMessage::error(seq, "internal", e.to_string()), Vec::new()),
            },
            ControlAction::SetParam { name, value } => (self.set_param(seq, name, *value), Vec::new()),
            ControlAction::Scenario { name } => (self.scenario(seq, name), Vec::new()),
        }
    }

    fn set_param(&mut self, seq: Option<u64>, name: &str, value: f64) -> ServerMessage {
        if !PARAM_WHITELIST.contains(&name) {
            return ServerMessage::error(
                seq,
                "param_not_whitelisted",
                format!("`{name}` cannot be changed on a live session; allowed: {}", PARAM_WHITELIST.join(", ")),
            );
        }
        if !value.is_finite() {
            return ServerMessage::error(seq, "invalid_param", "value must be finite");
        }
        let mut next = self.limits.clone();
        match name {
            "max_speed" => next.max_speed = value,
            "max_accel" => next.max_accel = value,
            "max_yaw_rate" => next.max_yaw_rate = value,
            "real_time_factor" => next.real_time_factor = value,
            "tracking_pi.kp" | "tracking_pi.ki" => {
                let mut pi = self.live.tracking_pi();
                if name.ends_with("kp") {
                    pi.kp = value;
                } else {
                    pi.ki = value;
                }
                return match self.live.set_tracking_pi(pi) {
                    Ok(()) => self.ack(seq, false, None),
                    Err(e) => ServerMessage::error(seq, "invalid_param", e.to_string()),
                };
            }
            _ => unreachable!("whitelist and match disagree"),
        }
        if let Err(e) = next.validate() {
            return ServerMessage::error(seq, "invalid_param", e.to_string());
        }
        self.limits = next;
        self.ack(seq, false, None)
    }

    fn scenario(&mut self, seq: Option<u64>, name: &str) -> ServerMessage {
        if !SCENARIOS.contains(&name) {
            return ServerMessage::error(
                seq,
                "unknown_scenario",
                format!("unknown scenario `{name}`; available: {}", SCENARIOS.join(", ")),
            );
        }
        if self.status != SessionStatus::Running {
            return ServerMessage::error(seq, "not_running", "scenarios need a running session");
        }
        let (vx, vy) = self.shaped;
        let (speed, sign) = match self.live.mode() {
            PlantMode::Planar => (vy.abs(), vy.signum()),
            PlantMode::Ballbot => (vx.hypot(vy), 1.0),
        };
        let t0 = self.live.time();
        let maneuver = match name {
            "brake-now" => {
                if speed < AT_REST {
                    return self.ack(seq, false, Some("already at rest".into()));
                }
                let task = BrakingTask::new(speed, self.limits.brake_duration);
                match optimize_braking(&self.spec.plant.wip, &task, BRAKE_KNOTS, &SolveOptions::default()) {
                    Ok((traj, _)) => Maneuver::Brake {
                        traj,
                        t0,
                        sign,
                        heading: self.heading,
                    },
                    Err(e) => return ServerMessage::error(seq, "trajopt_failed", e.to_string()),
                }
            }
            _ => Maneuver::Ramp {
                t0,
                from: sign * speed,
                heading: self.heading,
            },
        };
        self.events.push(format!("scenario:{name}"));
        self.maneuver = Some(maneuver);
        self.ack(seq, false, None)
    }

    /// Refreshes the controller command; called before each outer update.
    fn shape(&mut self) {
        let r = self.spec.plant.wip.wheel_radius;
        let t = self.live.time();
        let outer_dt = self.live.outer_dt();
        let mut finished = false;
        let mut reference = None;
        match &self.maneuver {
            Some(Maneuver::Brake { traj, t0, sign, heading }) => {
                let tau = t - t0;
                if tau >= traj.duration() {
                    finished = true;
                    self.target = (0.0, 0.0);
                    self.shaped = (0.0, 0.0);
                } else {
                    let (s, _) = traj.sample(traj.start() + tau);
                    let state = CommandState {
                        theta: sign * s.theta,
                        theta_dot: sign * s.theta_dot,
                        phi_dot: sign * s.phi_dot,
                    };
                    let v = state.phi_dot * r;
                    self.shaped = (v * heading.sin(), v * heading.cos());
                    self.target = self.shaped;
                    reference = Some((state, *heading));
                }
            }
            Some(Maneuver::Ramp { t0, from, heading }) => {
                let dir = if *from < 0.0 { -1.0 } else { 1.0 };
                let mag = from.abs() + self.limits.ramp_rate * (t - t0);
                if mag >= self.limits.max_speed {
                    finished = true;
                }
                let v = dir * mag.min(self.limits.max_speed);
                self.shaped = (v * heading.sin(), v * heading.cos());
                self.target = self.shaped;
            }
            None => {
                let step = self.limits.max_accel * outer_dt;
                let (dx, dy) = (self.target.0 - self.shaped.0, self.target.1 - self.shaped.1);
                let norm = dx.hypot(dy);
                let k = if norm > step { step / norm } else { 1.0 };
                self.shaped = (self.shaped.0 + k * dx, self.shaped.1 + k * dy);
            }
        }
        if finished {
            if let Some(m) = self.maneuver.take() {
                self.events.push(format!("scenario_end:{}", m.name()));
            }
        }
        match (self.live.mode(), reference) {
            (PlantMode::Planar, Some((state, _))) => self.live.set_command(state, None, 0.0),
            (PlantMode::Ballbot, Some((state, h))) => self.live.set_command(state, Some(h), self.yaw_rate),
            (PlantMode::Planar, None) => self.live.set_command(CommandState::speed(self.shaped.1 / r), None, 0.0),
            (PlantMode::Ballbot, None) => {
                let (vx, vy) = self.shaped;
                let v = vx.hypot(vy);
                let h = if v > AT_REST { vx.atan2(vy) } else { self.heading };
                self.live.set_command(CommandState::speed(v / r), Some(h), self.yaw_rate);
            }
        }
    }

    /// Advances up to `n` steps while running and returns the frames due.
    /// Stops early at a balance failure, which cuts the torques in the same
    /// step and emits a frame immediately.
    pub fn advance(&mut self, n: u64) -> Vec<TelemetryFrame> {
        let mut frames = Vec::new();
        for _ in 0..n {
            if self.status != SessionStatus::Running {
                break;
            }
            if self.live.outer_due() {
                self.shape();
            }
            match self.live.advance() {
                Ok(tick) => {
                    self.total_steps += 1;
                    if let Some(check) = tick.contacts {
                        for i in 0..3 {
                            let now = check.slipping[i] || check.separated.is_some();
                            if now && !self.slipping[i] {
                                self.events.push(format!("slip:{}", i + 1));
                            }
                            self.slipping[i] = now;
                        }
                    }
                    if self.live.steps().is_multiple_of(self.decimation) {
                        frames.push(self.frame());
                    }
                }
                Err(status) => {
                    self.total_steps += 1;
                    self.status = SessionStatus::Failed;
                    self.maneuver = None;
                    self.events.push(match status {
                        RunStatus::NonFinite => "non_finite".into(),
                        _ => "balance_failure".into(),
                    });
                    frames.push(self.frame());
                }
            }
        }
        frames
    }

    /// Runs until `total_steps` reaches `at`, or the session stops running.
    pub fn run_to(&mut self, at: u64) -> Vec<TelemetryFrame> {
        let n = at.saturating_sub(self.total_steps);
        self.advance(n)
    }

    /// Current state as a frame; pending events are attached and cleared.
    pub fn frame(&mut self) -> TelemetryFrame {
        let mut signals: BTreeMap<String, f64> = self
            .live
            .columns()
            .into_iter()
            .zip(self.live.row())
            .filter(|(k, v)| k != "t" && v.is_finite())
            .collect();
        let (cx, cy) = self.plane_commands();
        match self.live.mode() {
            PlantMode::Planar => {
                signals.insert("phi_dot_c".into(), cy);
            }
            PlantMode::Ballbot => {
                signals.insert("phi_dot_c_x".into(), cx);
                signals.insert("phi_dot_c_y".into(), cy);
            }
        }
        let frame = TelemetryFrame {
            seq: self.frame_seq,
            step: self.live.steps(),
            t: self.live.time(),
            status: self.status,
            command: self.shaped_command(),
            scenario: self.maneuver.as_ref().map(|m| m.name().to_string()),
            signals,
            events: std::mem::take(&mut self.events),
            dropped: 0,
            lag: None,
        };
        self.frame_seq += 1;
        frame
    }

    /// Largest absolute body tilt, rad.
    pub fn max_tilt(&self) -> f64 {
        self.live.max_tilt()
    }

    /// Squared torque (planar) or summed squared motor torques now applied.
    pub fn effort(&self) -> f64 {
        self.live.effort()
    }
}

/// Rebuilds the telemetry of a logged session.
pub fn replay(cfg: &LabConfig, log: &CommandLog) -> Result<Vec<TelemetryFrame>, ServiceError> {
    let mut engine = SessionEngine::new(cfg, log.seed)?;
    let mut frames = Vec::new();
    for entry in &log.entries {
        frames.extend(engine.run_to(entry.at));
        if engine.total_steps() != entry.at {
            return Err(ServiceError::Replay(format!(
                "log entry at step {} but the session stopped at {}",
                entry.at,
                engine.total_steps()
            )));
        }
        let (_, produced) = engine.apply(&entry.message);
        frames.extend(produced);
    }
    frames.extend(engine.run_to(log.end));
    Ok(frames)
}
