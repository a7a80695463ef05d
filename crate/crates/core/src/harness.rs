//! Closed-loop scenario execution, metrics and benchmark searches.
//!
//! A scenario is a list of phases, each with a duration and a command
//! source. The plant is integrated with RK4 at a fixed step; the controller
//! inner loop runs every inner period and the outer loop every
//! `inner_hz / outer_hz` inner ticks, both on the same timeline.
//!
//! Two plant models are available: a single planar WIP (the testbed) and the
//! three-plane ballbot (two WIP planes plus the spin model coupled through
//! the omniwheel conversions, with transmission friction on each motor).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::SVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{
    design_lqr, design_yaw, BallbotCommand, BallbotController, BallbotGains, BallbotMeasurement, CommandState, ControlError,
    ControllerKind, LqrGains, LqrWeights, PdGains, PiGains, PlanarController, Rates, YawWeights,
};
use crate::dynamics::{
    effective_torque, rk4_step, spin_accel, total_energy, wip_accel_pushed, DynamicsError, FrictionParams, PlanarState, SpinParams,
    WipParams,
};
use crate::kinematics::{ConversionMaps, DrivetrainGeometry, KinematicsError, MotorVector, PlanarRates};
use crate::trajopt::{optimize_braking, BrakingTask, SolveOptions, Trajectory, TrajoptError};

/// Default balance-failure tilt, rad.
pub const TILT_LIMIT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("command trajectory: {0}")]
    Trajopt(#[from] TrajoptError),
    #[error("controller design: {0}")]
    Control(#[from] ControlError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("window [{0}, {1}] is outside the run span")]
    Window(f64, f64),
    #[error("no feasible braking time in range: {0}")]
    NoFeasibleBraking(String),
    #[error("reading {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Miapure,
    Piptb,
}

/// Which plant model a scenario integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantMode {
    /// One WIP plane along the direction of travel.
    Planar,
    /// Sagittal, frontal and yaw planes driven through the three motors.
    Ballbot,
}

/// Physical plant parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub wip: WipParams,
    /// Wheel friction (planar) or per-motor friction (ballbot).
    pub friction: FrictionParams,
    pub spin: SpinParams,
    pub geometry: DrivetrainGeometry,
    /// Omniwheel/sphere friction coefficient.
    pub mu: f64,
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.wip.validate()?;
        self.friction.validate()?;
        self.spin.validate()?;
        self.geometry.validate()?;
        if !(self.mu > 0.0) {
            return Err(HarnessError::InvalidSpec(format!("mu must be > 0, got {}", self.mu)));
        }
        Ok(())
    }
}

/// PI gains as configured; the integrator limit defaults to the torque
/// ceiling divided by `ki`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiConfig {
    pub kp: f64,
    pub ki: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator_limit: Option<f64>,
}

impl PiConfig {
    pub fn resolve(&self, torque_ceiling: f64) -> PiGains {
        match self.integrator_limit {
            Some(integrator_limit) => PiGains {
                kp: self.kp,
                ki: self.ki,
                integrator_limit,
            },
            None => PiGains::with_torque_ceiling(self.kp, self.ki, torque_ceiling),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    pub weights: LqrWeights,
    /// Explicit gains replacing the LQR design.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<LqrGains>,
    pub yaw_weights: YawWeights,
    /// Inner PI on wheel speed (planar mode), wheel units.
    pub pi: PiConfig,
    /// Inner PI on motor speed (ballbot mode), motor units.
    pub motor_pi: PiConfig,
    pub pi_pd: PdGains,
    pub rates: Rates,
    /// Output saturation: wheel torque (planar) or motor torque (ballbot), N m.
    pub torque_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CommandSource {
    /// Zero speed.
    Rest,
    /// Constant speed, m/s.
    Constant { speed: f64 },
    /// Linear speed ramp across the phase, m/s.
    Ramp { from: f64, to: f64 },
    /// Minimum-torque braking from `v0` planned on the frictionless model
    /// for the phase duration.
    OptimalBrake {
        v0: f64,
        #[serde(default = "default_knots")]
        n_knots: usize,
    },
    /// Trajectory CSV file.
    Trajectory { file: PathBuf },
    #[serde(skip)]
    Inline(Arc<Trajectory>),
}

fn default_knots() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub name: String,
    pub duration: f64,
    pub command: CommandSource,
}

impl Phase {
    pub fn new(name: &str, duration: f64, command: CommandSource) -> Self {
        Self {
            name: name.to_string(),
            duration,
            command,
        }
    }
}

/// Measurement model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    /// IMU tilt noise standard deviation, rad.
    pub imu_angle_std: f64,
    /// IMU rate noise standard deviation, rad/s.
    pub imu_rate_std: f64,
    /// Encoder resolution; speeds are quantized to one count per outer period.
    pub encoder_counts_per_rev: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureEnvelope {
    pub tilt_limit: f64,
    /// Stop the run at the first slip or contact separation.
    pub abort_on_slip: bool,
    /// Evaluate contact forces every outer tick (ballbot mode).
    pub check_contacts: bool,
}

impl Default for FailureEnvelope {
    fn default() -> Self {
        Self {
            tilt_limit: TILT_LIMIT,
            abort_on_slip: false,
            check_contacts: true,
        }
    }
}

/// Body lean at t = 0 along the heading; the wheel starts at rest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialTilt {
    /// rad
    pub theta: f64,
    /// rad/s
    pub theta_dot: f64,
}

/// Tolerances for calling a braking phase successful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuccessCriteria {
    /// m/s
    pub speed_tol: f64,
    /// rad
    pub tilt_tol: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self {
            speed_tol: 0.05,
            tilt_tol: 1f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub platform: Platform,
    pub mode: PlantMode,
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    pub phases: Vec<Phase>,
    /// Direction of travel, degrees from the omniwheel 1 axis.
    #[serde(default)]
    pub heading_deg: f64,
    #[serde(default)]
    pub sensor: SensorModel,
    /// Integration step, s. Defaults to one inner period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub failure: FailureEnvelope,
    /// Log every n-th integration step.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Phase whose window defines the braking effort.
    #[serde(default = "default_effort_phase")]
    pub effort_phase: String,
    #[serde(default)]
    pub success: SuccessCriteria,
    #[serde(default)]
    pub initial: InitialTilt,
}

fn default_log_every() -> usize {
    8
}

fn default_effort_phase() -> String {
    "brake".into()
}

impl ScenarioSpec {
    pub fn integration_dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| self.controller.rates.inner_dt())
    }

    pub fn total_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Integration steps per inner tick.
    fn substeps(&self) -> Result<usize, HarnessError> {
        let ratio = self.controller.rates.inner_dt() / self.integration_dt();
        let rounded = ratio.round();
        if !(rounded >= 1.0 && (ratio - rounded).abs() < 1e-9) {
            return Err(HarnessError::InvalidSpec(format!(
                "integration step {} must divide the inner period {}",
                self.integration_dt(),
                self.controller.rates.inner_dt()
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.phases.is_empty() {
            return Err(HarnessError::InvalidSpec("phase list is empty".into()));
        }
        for p in &self.phases {
            if !(p.duration > 0.0 && p.duration.is_finite()) {
                return Err(HarnessError::InvalidSpec(format!("phase `{}` has non-positive duration", p.name)));
            }
        }
        self.validate_setup()
    }

    /// Checks everything except the phase list; enough for a [`LiveSim`].
    pub fn validate_setup(&self) -> Result<(), HarnessError> {
        self.plant.validate()?;
        self.controller.rates.ratio()?;
        self.substeps()?;
        if !self.heading_deg.is_finite() {
            return Err(HarnessError::InvalidSpec("heading must be finite".into()));
        }
        if self.log_every == 0 {
            return Err(HarnessError::InvalidSpec("log_every must be >= 1".into()));
        }
        if !(self.controller.torque_limit > 0.0) {
            return Err(HarnessError::InvalidSpec("torque_limit must be > 0".into()));
        }
        if self.mode == PlantMode::Ballbot && self.controller.kind == ControllerKind::PiPd {
            return Err(HarnessError::InvalidSpec(
                "pi-pd is a planar controller; use mode = \"planar\"".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    BalanceFailure,
    Slip,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    Phase { name: String },
    Slip { omniwheel: usize, margin: f64 },
    Separation { omniwheel: usize, normal: f64 },
    BalanceFailure { theta: f64 },
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseWindow {
    pub name: String,
    pub start: f64,
    pub end: f64,
}

/// Column-oriented time series on one time base.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub status: RunStatus,
    pub series: TimeSeries,
    pub events: Vec<Event>,
    pub metrics: BTreeMap<String, f64>,
    pub phases: Vec<PhaseWindow>,
}

#[derive(Serialize)]
struct MetricsDocument<'a> {
    status: RunStatus,
    metrics: &'a BTreeMap<String, f64>,
    events: &'a [Event],
    phases: &'a [PhaseWindow],
}

impl RunResult {
    /// Metrics, status, events and phase windows as pretty JSON. Key order
    /// is fixed, so equal runs give equal bytes.
    pub fn metrics_json(&self) -> String {
        let doc = MetricsDocument {
            status: self.status,
            metrics: &self.metrics,
            events: &self.events,
            phases: &self.phases,
        };
        serde_json::to_string_pretty(&doc).expect("metrics serialize")
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseWindow> {
        self.phases.iter().find(|p| p.name == name)
    }

    pub fn failed(&self) -> bool {
        self.status != RunStatus::Completed
    }

    pub fn slipped(&self) -> bool {
        self.events
            .iter()
            .any(|e| matches!(e.kind, EventKind::Slip { .. } | EventKind::Separation { .. }))
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }
}

/// Trapezoidal quadrature of the logged input effort (squared torque; sum of
/// squared motor torques in ballbot mode) over `[t2, t3]`.
pub fn braking_effort(result: &RunResult, t2: f64, t3: f64) -> Result<f64, HarnessError> {
    let t = result.series.column("t").unwrap_or_default();
    let effort = result
        .series
        .column("effort")
        .ok_or_else(|| HarnessError::InvalidSpec("series has no effort column".into()))?;
    let (first, last) = match (t.first(), t.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(HarnessError::Window(t2, t3)),
    };
    let slack = 1e-9 * (1.0 + last.abs());
    if !(t2 <= t3 && t2 >= first - slack && t3 <= last + slack) {
        return Err(HarnessError::Window(t2, t3));
    }
    let at = |x: f64| -> f64 {
        let k = t.partition_point(|&ti| ti <= x).clamp(1, t.len() - 1);
        let (ta, tb) = (t[k - 1], t[k]);
        if tb == ta {
            return effort[k];
        }
        let s = ((x - ta) / (tb - ta)).clamp(0.0, 1.0);
        effort[k - 1] + s * (effort[k] - effort[k - 1])
    };
    let mut knots = vec![(t2, at(t2))];
    knots.extend(t.iter().zip(&effort).filter(|(ti, _)| **ti > t2 && **ti < t3).map(|(a, b)| (*a, *b)));
    knots.push((t3, at(t3)));
    Ok(knots.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum())
}

/// Command along the direction of travel.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct TravelCommand {
    state: CommandState,
    speed: f64,
    /// `(sin h, cos h)` overriding the scenario heading.
    heading: Option<(f64, f64)>,
    yaw_rate: f64,
}

enum PreparedSource {
    Speed { from: f64, to: f64 },
    Trajectory(Arc<Trajectory>),
}

struct PreparedPhase {
    name: String,
    start: f64,
    end: f64,
    source: PreparedSource,
}

impl PreparedPhase {
    fn command(&self, t: f64, r: f64) -> TravelCommand {
        match &self.source {
            PreparedSource::Speed { from, to } => {
                let s = ((t - self.start) / (self.end - self.start)).clamp(0.0, 1.0);
                let speed = from + s * (to - from);
                TravelCommand {
                    state: CommandState::speed(speed / r),
                    speed,
                    ..Default::default()
                }
            }
            PreparedSource::Trajectory(traj) => {
                let (s, _) = traj.sample(t - self.start + traj.start());
                TravelCommand {
                    state: CommandState {
                        theta: s.theta,
                        theta_dot: s.theta_dot,
                        phi_dot: s.phi_dot,
                    },
                    speed: s.phi_dot * r,
                    ..Default::default()
                }
            }
        }
    }
}

fn prepare_phases(spec: &ScenarioSpec) -> Result<Vec<PreparedPhase>, HarnessError> {
    let mut start = 0.0;
    let mut out = Vec::with_capacity(spec.phases.len());
    for p in &spec.phases {
        let source = match &p.command {
            CommandSource::Rest => PreparedSource::Speed { from: 0.0, to: 0.0 },
            CommandSource::Constant { speed } => PreparedSource::Speed {
                from: *speed,
                to: *speed,
            },
            CommandSource::Ramp { from, to } => PreparedSource::Speed { from: *from, to: *to },
            CommandSource::OptimalBrake { v0, n_knots } => {
                let task = BrakingTask::new(*v0, p.duration);
                let (traj, _) = optimize_braking(&spec.plant.wip, &task, *n_knots, &SolveOptions::default())?;
                PreparedSource::Trajectory(Arc::new(traj))
            }
            CommandSource::Trajectory { file } => {
                let text = std::fs::read_to_string(file).map_err(|e| HarnessError::Io {
                    path: file.clone(),
                    message: e.to_string(),
                })?;
                PreparedSource::Trajectory(Arc::new(Trajectory::from_csv(&text)?))
            }
            CommandSource::Inline(traj) => PreparedSource::Trajectory(traj.clone()),
        };
        out.push(PreparedPhase {
            name: p.name.clone(),
            start,
            end: start + p.duration,
            source,
        });
        start += p.duration;
    }
    Ok(out)
}

/// Sensor noise and quantization.
struct Sensors {
    model: SensorModel,
    rng: ChaCha8Rng,
    angle: Option<Normal<f64>>,
    rate: Option<Normal<f64>>,
    speed_quantum: Option<f64>,
}

impl Sensors {
    fn new(model: SensorModel, seed: u64, outer_dt: f64) -> Result<Self, HarnessError> {
        let normal = |std: f64| -> Result<Option<Normal<f64>>, HarnessError> {
            if std > 0.0 {
                Normal::new(0.0, std)
                    .map(Some)
                    .map_err(|e| HarnessError::InvalidSpec(e.to_string()))
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            angle: normal(model.imu_angle_std)?,
            rate: normal(model.imu_rate_std)?,
            speed_quantum: model
                .encoder_counts_per_rev
                .map(|cpr| 2.0 * std::f64::consts::PI / (cpr.max(1) as f64 * outer_dt)),
        })
    }

    fn angle(&mut self, v: f64) -> f64 {
        match self.angle {
            Some(d) => v + d.sample(&mut self.rng),
            None => v,
        }
    }

    fn rate(&mut self, v: f64) -> f64 {
        match self.rate {
            Some(d) => v + d.sample(&mut self.rng),
            None => v,
        }
    }

    fn speed(&self, v: f64) -> f64 {
        match self.speed_quantum {
            Some(q) => (v / q).round() * q,
            None => v,
        }
    }

    fn noisy(&self) -> bool {
        self.model.imu_angle_std > 0.0 || self.model.imu_rate_std > 0.0
    }
}

/// Outcome of one outer tick's contact evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ContactCheck {
    /// Friction margins per omniwheel, `-inf` after separation.
    pub margins: [f64; 3],
    pub slipping: [bool; 3],
    /// Omniwheel index and normal force when a contact separated.
    pub separated: Option<(usize, f64)>,
}

impl ContactCheck {
    pub fn any_slip(&self) -> bool {
        self.separated.is_some() || self.slipping.iter().any(|&s| s)
    }
}

trait Simulation: Send {
    fn columns(&self) -> Vec<String>;
    fn outer(&mut self, cmd: &TravelCommand, sensors: &mut Sensors);
    fn inner(&mut self, sensors: &Sensors);
    fn integrate(&mut self, dt: f64) -> Result<(), DynamicsError>;
    fn contacts(&mut self) -> Option<ContactCheck>;
    fn speed(&self) -> f64;
    fn max_tilt(&self) -> f64;
    /// Squared input torque (planar) or summed squared motor torques.
    fn effort(&self) -> f64;
    fn energy(&self) -> f64;
    fn row(&self, t: f64, cmd: &TravelCommand, out: &mut Vec<f64>);
    /// Drops the applied torques to zero until the next inner tick.
    fn cut_torque(&mut self);
    /// External horizontal force on the body, `(x plane, y plane)` in N.
    fn set_push(&mut self, push: (f64, f64));
    /// Swaps the tracking PI gains (planar loop or per-motor loops).
    fn set_tracking_pi(&mut self, gains: PiGains) -> Result<(), ControlError>;
}

struct PlanarSim {
    p: WipParams,
    friction: FrictionParams,
    state: PlanarState,
    ctrl: PlanarController,
    tau: f64,
    measured_phi_dot: f64,
    /// Force along the travel direction.
    push: f64,
}

impl Simulation for PlanarSim {
    fn columns(&self) -> Vec<String> {
        [
            "t", "theta", "phi", "theta_dot", "phi_dot", "speed", "speed_cmd", "theta_cmd", "tau", "effort", "tau_ref",
            "phi_dot_ref", "tau_track", "theta_ref",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn outer(&mut self, cmd: &TravelCommand, sensors: &mut Sensors) {
        let s = self.state;
        let meas = PlanarState::new(
            sensors.angle(s.theta),
            s.phi,
            sensors.rate(s.theta_dot),
            sensors.speed(s.phi_dot),
        );
        self.measured_phi_dot = meas.phi_dot;
        self.ctrl.outer_update(&cmd.state, &meas);
    }

    fn inner(&mut self, sensors: &Sensors) {
        let w = sensors.speed(self.state.phi_dot);
        self.measured_phi_dot = w;
        self.tau = self.ctrl.inner_update(w);
    }

    fn integrate(&mut self, dt: f64) -> Result<(), DynamicsError> {
        let (p, f, tau, push) = (self.p, self.friction, self.tau, self.push);
        let next = rk4_step(
            |x: &SVector<f64, 4>| {
                let s = PlanarState::from_vector(x);
                let a = wip_accel_pushed(&p, &s, effective_torque(&f, s.phi_dot, tau), push);
                SVector::<f64, 4>::new(s.theta_dot, s.phi_dot, a.theta_ddot, a.phi_ddot)
            },
            &self.state.to_vector(),
            dt,
        )?;
        self.state = PlanarState::from_vector(&next);
        Ok(())
    }

    fn contacts(&mut self) -> Option<ContactCheck> {
        None
    }

    fn speed(&self) -> f64 {
        self.state.speed(self.p.wheel_radius)
    }

    fn max_tilt(&self) -> f64 {
        self.state.theta.abs()
    }

    fn effort(&self) -> f64 {
        self.tau * self.tau
    }

    fn energy(&self) -> f64 {
        total_energy(&self.p, &self.state)
    }

    fn row(&self, t: f64, cmd: &TravelCommand, out: &mut Vec<f64>) {
        let s = self.state;
        let i = self.ctrl.internals();
        out.extend_from_slice(&[
            t,
            s.theta,
            s.phi,
            s.theta_dot,
            s.phi_dot,
            self.speed(),
            cmd.speed,
            cmd.state.theta,
            self.tau,
            self.effort(),
            i.tau_ref,
            i.phi_dot_ref,
            i.tau_track,
            i.theta_ref,
        ]);
    }

    fn cut_torque(&mut self) {
        self.tau = 0.0;
    }

    fn set_push(&mut self, push: (f64, f64)) {
        // the testbed drives along the heading-0 axis, the y plane
        self.push = push.1;
    }

    fn set_tracking_pi(&mut self, gains: PiGains) -> Result<(), ControlError> {
        self.ctrl.set_pi(gains)
    }
}

/// Ballbot state: `[theta_x, phi_x, theta_dot_x, phi_dot_x, theta_y, phi_y,
/// theta_dot_y, phi_dot_y, theta_z, theta_dot_z]`.
type BallbotState = SVector<f64, 10>;

struct BallbotSim {
    p: WipParams,
    friction: FrictionParams,
    spin: SpinParams,
    maps: ConversionMaps,
    mu: f64,
    heading: (f64, f64),
    x: BallbotState,
    ctrl: BallbotController,
    u: MotorVector,
    last_margins: [f64; 3],
    push: (f64, f64),
}

fn planes(x: &BallbotState) -> (PlanarState, PlanarState) {
    (
        PlanarState::new(x[0], x[1], x[2], x[3]),
        PlanarState::new(x[4], x[5], x[6], x[7]),
    )
}

fn ballbot_rates(x: &BallbotState) -> PlanarRates {
    PlanarRates {
        phi_dot_x: x[3],
        phi_dot_y: x[7],
        theta_dot_x: x[2],
        theta_dot_y: x[6],
        theta_dot_z: x[9],
    }
}

impl BallbotSim {
    fn motor_speeds(&self) -> MotorVector {
        self.maps.motor_speeds(&ballbot_rates(&self.x))
    }
}

impl Simulation for BallbotSim {
    fn columns(&self) -> Vec<String> {
        [
            "t",
            "theta_x",
            "phi_x",
            "theta_dot_x",
            "phi_dot_x",
            "theta_y",
            "phi_y",
            "theta_dot_y",
            "phi_dot_y",
            "theta_z",
            "theta_dot_z",
            "speed",
            "speed_cmd",
            "theta_cmd",
            "u1",
            "u2",
            "u3",
            "psi_dot1",
            "psi_dot2",
            "psi_dot3",
            "effort",
            "tau_ref_x",
            "tau_ref_y",
            "tau_ref_z",
            "phi_dot_ref_x",
            "phi_dot_ref_y",
            "margin1",
            "margin2",
            "margin3",
            "pos_x",
            "pos_y",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn outer(&mut self, cmd: &TravelCommand, sensors: &mut Sensors) {
        if let Some(h) = cmd.heading {
            self.heading = h;
        }
        let (sin_h, cos_h) = self.heading;
        let scale = |c: &CommandState, k: f64| CommandState {
            theta: c.theta * k,
            theta_dot: c.theta_dot * k,
            phi_dot: c.phi_dot * k,
        };
        let command = BallbotCommand {
            x: scale(&cmd.state, sin_h),
            y: scale(&cmd.state, cos_h),
            yaw_rate: cmd.yaw_rate,
        };
        let psi = self.motor_speeds().map(|w| sensors.speed(w));
        let m = BallbotMeasurement {
            tilt: [sensors.angle(self.x[0]), sensors.angle(self.x[4]), sensors.angle(self.x[8])],
            tilt_rate: [sensors.rate(self.x[2]), sensors.rate(self.x[6]), sensors.rate(self.x[9])],
            motor_speeds: psi,
        };
        self.ctrl.outer_update(&command, &m);
    }

    fn inner(&mut self, sensors: &Sensors) {
        let psi = self.motor_speeds().map(|w| sensors.speed(w));
        self.u = self.ctrl.inner_update(&psi);
    }

    fn integrate(&mut self, dt: f64) -> Result<(), DynamicsError> {
        let (p, f, spin, maps, u, push) = (self.p, self.friction, self.spin, self.maps, self.u, self.push);
        self.x = rk4_step(
            |x: &BallbotState| {
                let psi = maps.motor_speeds(&ballbot_rates(x));
                let mut u_eff = MotorVector::default();
                for i in 0..3 {
                    u_eff[i] = effective_torque(&f, psi[i], u[i]);
                }
                let tau = maps.planar_torques(&u_eff);
                let (sx, sy) = planes(x);
                let ax = wip_accel_pushed(&p, &sx, tau.tau_x, push.0);
                let ay = wip_accel_pushed(&p, &sy, tau.tau_y, push.1);
                let az = spin_accel(&spin, x[9], tau.tau_z);
                BallbotState::from_column_slice(&[
                    x[2],
                    x[3],
                    ax.theta_ddot,
                    ax.phi_ddot,
                    x[6],
                    x[7],
                    ay.theta_ddot,
                    ay.phi_ddot,
                    x[9],
                    az,
                ])
            },
            &self.x,
            dt,
        )?;
        Ok(())
    }

    fn contacts(&mut self) -> Option<ContactCheck> {
        let mut check = ContactCheck::default();
        match self
            .maps
            .contact_forces(self.p.body_mass, (self.x[0], self.x[4]), &self.u, self.mu)
        {
            Ok(report) => {
                check.margins = report.margin;
                check.slipping = report.slip;
            }
            Err(KinematicsError::ContactSeparation { index, normal }) => {
                check.margins = [f64::NEG_INFINITY; 3];
                check.separated = Some((index, normal));
            }
            Err(_) => return None,
        }
        self.last_margins = check.margins;
        Some(check)
    }

    fn speed(&self) -> f64 {
        let (sin_h, cos_h) = self.heading;
        self.p.wheel_radius * (self.x[3] * sin_h + self.x[7] * cos_h)
    }

    fn max_tilt(&self) -> f64 {
        self.x[0].abs().max(self.x[4].abs())
    }

    fn effort(&self) -> f64 {
        self.u.iter().map(|u| u * u).sum()
    }

    fn energy(&self) -> f64 {
        let (sx, sy) = planes(&self.x);
        total_energy(&self.p, &sx) + total_energy(&self.p, &sy) + 0.5 * self.spin.inertia * self.x[9] * self.x[9]
    }

    fn row(&self, t: f64, cmd: &TravelCommand, out: &mut Vec<f64>) {
        let psi = self.motor_speeds();
        let i = self.ctrl.internals();
        let margin = self.last_margins.map(|m| if m.is_finite() { m } else { -1.0 });
        out.push(t);
        out.extend_from_slice(self.x.as_slice());
        out.extend_from_slice(&[
            self.speed(),
            cmd.speed,
            cmd.state.theta,
            self.u[0],
            self.u[1],
            self.u[2],
            psi[0],
            psi[1],
            psi[2],
            self.effort(),
            i.planar_tau_ref.tau_x,
            i.planar_tau_ref.tau_y,
            i.planar_tau_ref.tau_z,
            i.phi_dot_ref[0],
            i.phi_dot_ref[1],
            margin[0],
            margin[1],
            margin[2],
            self.p.wheel_radius * self.x[5],
            self.p.wheel_radius * self.x[1],
        ]);
    }

    fn cut_torque(&mut self) {
        self.u = MotorVector::default();
    }

    fn set_push(&mut self, push: (f64, f64)) {
        self.push = push;
    }

    fn set_tracking_pi(&mut self, gains: PiGains) -> Result<(), ControlError> {
        gains.validate()?;
        if self.ctrl.is_torque_only() {
            return Err(ControlError::InvalidGains("lqr has no tracking PI".into()));
        }
        self.ctrl.gains_mut().motor_pi = gains;
        Ok(())
    }
}

fn build_simulation(spec: &ScenarioSpec) -> Result<Box<dyn Simulation>, HarnessError> {
    let c = &spec.controller;
    let pl = &spec.plant;
    let gains = match c.gains {
        Some(g) => g,
        None => design_lqr(&pl.wip, &c.weights)?.gains,
    };
    match spec.mode {
        PlantMode::Planar => {
            let ctrl = match c.kind {
                ControllerKind::Lqr => PlanarController::lqr(gains, c.torque_limit),
                ControllerKind::PiPd => {
                    c.pi_pd.validate()?;
                    PlanarController::pi_pd(c.pi_pd, c.rates, c.torque_limit)
                }
                ControllerKind::LqrPi => {
                    let pi = c.pi.resolve(c.torque_limit);
                    pi.validate()?;
                    PlanarController::lqr_pi(pl.wip, gains, pi, c.rates, c.torque_limit)
                }
            };
            Ok(Box::new(PlanarSim {
                p: pl.wip,
                friction: pl.friction,
                state: PlanarState::new(spec.initial.theta, 0.0, spec.initial.theta_dot, 0.0),
                ctrl,
                tau: 0.0,
                measured_phi_dot: 0.0,
                push: 0.0,
            }))
        }
        PlantMode::Ballbot => {
            let maps = pl.geometry.maps()?;
            let (yaw, _) = design_yaw(&pl.spin, &c.yaw_weights)?;
            let motor_pi = c.motor_pi.resolve(c.torque_limit);
            motor_pi.validate()?;
            let mut ctrl = BallbotController::new(
                maps,
                pl.wip,
                pl.spin,
                BallbotGains {
                    planar: gains,
                    yaw,
                    motor_pi,
                    motor_torque_limit: c.torque_limit,
                },
                c.rates,
            );
            if c.kind == ControllerKind::Lqr {
                ctrl = ctrl.torque_only();
            }
            let h = spec.heading_deg.to_radians();
            let (sin_h, cos_h) = h.sin_cos();
            let mut x = BallbotState::zeros();
            x[0] = spec.initial.theta * sin_h;
            x[2] = spec.initial.theta_dot * sin_h;
            x[4] = spec.initial.theta * cos_h;
            x[6] = spec.initial.theta_dot * cos_h;
            Ok(Box::new(BallbotSim {
                p: pl.wip,
                friction: pl.friction,
                spin: pl.spin,
                maps,
                mu: pl.mu,
                heading: (sin_h, cos_h),
                x,
                ctrl,
                u: MotorVector::default(),
                last_margins: [f64::INFINITY; 3],
                push: (0.0, 0.0),
            }))
        }
    }
}

/// What happened during the controller part of one integration step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ControlTick {
    /// The outer loop ran this step.
    pub outer: bool,
    /// Contact evaluation at the outer tick, when enabled.
    pub contacts: Option<ContactCheck>,
}

/// A plant and controller advanced one fixed integration step at a time
/// under an externally supplied command. The benchmark runs and the
/// interactive service both drive the simulation through this type.
pub struct LiveSim {
    sim: Box<dyn Simulation>,
    sensors: Sensors,
    mode: PlantMode,
    dt: f64,
    substeps: u64,
    ratio: u64,
    outer_dt: f64,
    wheel_radius: f64,
    check_contacts: bool,
    tilt_limit: f64,
    step: u64,
    pending: TravelCommand,
    latched: TravelCommand,
    push_until: Option<f64>,
    halted: Option<RunStatus>,
    tracking_pi: PiConfig,
    torque_limit: f64,
}

impl LiveSim {
    /// Plant at the scenario's initial state, controller fresh, zero command.
    pub fn new(spec: &ScenarioSpec, seed: u64) -> Result<Self, HarnessError> {
        spec.validate_setup()?;
        let rates = spec.controller.rates;
        Ok(Self {
            sim: build_simulation(spec)?,
            sensors: Sensors::new(spec.sensor, seed, rates.outer_dt())?,
            mode: spec.mode,
            dt: spec.integration_dt(),
            substeps: spec.substeps()? as u64,
            ratio: rates.ratio()? as u64,
            outer_dt: rates.outer_dt(),
            wheel_radius: spec.plant.wip.wheel_radius,
            check_contacts: spec.mode == PlantMode::Ballbot && spec.failure.check_contacts,
            tilt_limit: spec.failure.tilt_limit,
            step: 0,
            pending: TravelCommand::default(),
            latched: TravelCommand::default(),
            push_until: None,
            halted: None,
            tracking_pi: match spec.mode {
                PlantMode::Planar => spec.controller.pi,
                PlantMode::Ballbot => spec.controller.motor_pi,
            },
            torque_limit: spec.controller.torque_limit,
        })
    }

    /// Gains of the loop that tracks the reference wheel (planar) or motor
    /// (ballbot) speeds.
    pub fn tracking_pi(&self) -> PiConfig {
        self.tracking_pi
    }

    /// Hot-swaps the tracking PI; integrator state is kept.
    pub fn set_tracking_pi(&mut self, pi: PiConfig) -> Result<(), HarnessError> {
        self.sim.set_tracking_pi(pi.resolve(self.torque_limit))?;
        self.tracking_pi = pi;
        Ok(())
    }

    pub fn mode(&self) -> PlantMode {
        self.mode
    }

    /// Integration step, s.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn outer_dt(&self) -> f64 {
        self.outer_dt
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Whether the next step starts with an outer-loop update.
    pub fn outer_due(&self) -> bool {
        self.step.is_multiple_of(self.substeps * self.ratio)
    }

    /// Travel command taken by the next outer update: reference state along
    /// the heading `heading_rad` (scenario heading when `None`) and a yaw
    /// rate for the ballbot.
    pub fn set_command(&mut self, state: CommandState, heading_rad: Option<f64>, yaw_rate: f64) {
        self.pending = TravelCommand {
            state,
            speed: state.phi_dot * self.wheel_radius,
            heading: heading_rad.map(f64::sin_cos),
            yaw_rate,
        };
    }

    fn set_travel(&mut self, cmd: TravelCommand) {
        self.pending = cmd;
    }

    /// Horizontal force on the body, world `(x, y)` planes, N, held for
    /// `duration` seconds.
    pub fn push(&mut self, force: (f64, f64), duration: f64) {
        self.sim.set_push(force);
        self.push_until = Some(self.time() + duration.max(0.0));
    }

    /// Runs the outer and inner controller updates due at this step.
    pub fn control(&mut self) -> ControlTick {
        let mut tick = ControlTick::default();
        if !self.step.is_multiple_of(self.substeps) {
            return tick;
        }
        if (self.step / self.substeps).is_multiple_of(self.ratio) {
            self.latched = self.pending;
            self.sim.outer(&self.latched, &mut self.sensors);
            tick.outer = true;
            if self.check_contacts {
                tick.contacts = self.sim.contacts();
            }
        }
        self.sim.inner(&self.sensors);
        tick
    }

    /// Integrates one step with the torques currently applied.
    pub fn integrate(&mut self) -> Result<(), DynamicsError> {
        self.sim.integrate(self.dt)?;
        self.step += 1;
        if self.push_until.is_some_and(|end| self.time() >= end - 0.5 * self.dt) {
            self.sim.set_push((0.0, 0.0));
            self.push_until = None;
        }
        Ok(())
    }

    /// One full step with the balance envelope enforced: once the tilt
    /// exceeds the limit (or the state blows up) the torques are cut and the
    /// simulation stops advancing.
    pub fn advance(&mut self) -> Result<ControlTick, RunStatus> {
        if let Some(status) = self.halted {
            return Err(status);
        }
        let tick = self.control();
        if self.integrate().is_err() {
            return Err(self.halt(RunStatus::NonFinite));
        }
        if self.max_tilt() > self.tilt_limit {
            return Err(self.halt(RunStatus::BalanceFailure));
        }
        Ok(tick)
    }

    fn halt(&mut self, status: RunStatus) -> RunStatus {
        self.sim.cut_torque();
        self.sim.set_push((0.0, 0.0));
        self.halted = Some(status);
        status
    }

    /// Why the simulation stopped, if it did.
    pub fn halted(&self) -> Option<RunStatus> {
        self.halted
    }

    /// Travel speed along the commanded heading, m/s.
    pub fn speed(&self) -> f64 {
        self.sim.speed()
    }

    /// Largest absolute body tilt, rad.
    pub fn max_tilt(&self) -> f64 {
        self.sim.max_tilt()
    }

    pub fn effort(&self) -> f64 {
        self.sim.effort()
    }

    pub fn energy(&self) -> f64 {
        self.sim.energy()
    }

    /// Names of the values returned by [`LiveSim::row`].
    pub fn columns(&self) -> Vec<String> {
        self.sim.columns()
    }

    /// Current state, command and controller signals, one value per column.
    pub fn row(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.sim.row(self.time(), &self.latched, &mut out);
        out
    }
}

/// Accumulates per-phase statistics during a run.
#[derive(Default, Clone)]
struct PhaseStats {
    effort: f64,
    /// Sum of |v - v_cmd| over the second half of the phase and its count.
    err_sum: f64,
    err_n: usize,
    max_tilt: f64,
    end_speed: f64,
    end_theta: f64,
    ended: bool,
}

/// Runs one scenario. Noise draws come from `seed`; noiseless runs do not
/// depend on it.
pub fn run_scenario(spec: &ScenarioSpec, seed: u64) -> Result<RunResult, HarnessError> {
    spec.validate()?;
    let phases = prepare_phases(spec)?;
    let mut live = LiveSim::new(spec, seed)?;
    let dt = live.dt();
    let total = spec.total_duration();
    let n_steps = (total / dt).round() as u64;
    let r = spec.plant.wip.wheel_radius;

    let mut series = TimeSeries {
        columns: live.columns(),
        rows: Vec::with_capacity((n_steps as usize) / spec.log_every + 2),
    };
    let mut events = Vec::new();
    let mut stats = vec![PhaseStats::default(); phases.len()];
    let mut status = RunStatus::Completed;
    let mut phase_idx = 0usize;
    let mut slipping = [false; 3];
    let mut slip_count = 0usize;
    let mut min_margin = f64::INFINITY;
    let mut outer_updates = 0u64;
    let mut max_tilt = 0.0f64;
    let mut max_speed = f64::NEG_INFINITY;
    let e0 = live.energy();
    let noisy = live.sensors.noisy();
    let mut max_energy_drift = 0.0f64;
    let mut first_failure: Option<f64> = None;
    let mut speed_at_failure = f64::NAN;

    events.push(Event {
        t: 0.0,
        kind: EventKind::Phase {
            name: phases[0].name.clone(),
        },
    });
    let mut cmd = phases[0].command(0.0, r);
    live.set_travel(cmd);
    live.latched = cmd;
    series.rows.push(live.row());
    while live.steps() < n_steps {
        let t = live.time();
        while phase_idx + 1 < phases.len() && t >= phases[phase_idx].end - 0.5 * dt {
            close_phase(&mut stats[phase_idx], &live);
            phase_idx += 1;
            events.push(Event {
                t,
                kind: EventKind::Phase {
                    name: phases[phase_idx].name.clone(),
                },
            });
        }
        let phase = &phases[phase_idx];
        if live.outer_due() {
            cmd = phase.command(t, r);
            live.set_travel(cmd);
        }
        let tick = live.control();
        if tick.outer {
            outer_updates += 1;
        }
        if let Some(check) = tick.contacts {
            min_margin = min_margin.min(check.margins.iter().copied().fold(f64::INFINITY, f64::min));
            if let Some((omniwheel, normal)) = check.separated {
                if !slipping.iter().any(|&s| s) {
                    events.push(Event {
                        t,
                        kind: EventKind::Separation { omniwheel, normal },
                    });
                    slip_count += 1;
                }
                slipping = [true; 3];
            } else {
                #[allow(clippy::needless_range_loop)]
                for i in 0..3 {
                    if check.slipping[i] && !slipping[i] {
                        events.push(Event {
                            t,
                            kind: EventKind::Slip {
                                omniwheel: i + 1,
                                margin: check.margins[i],
                            },
                        });
                        slip_count += 1;
                    }
                }
                slipping = check.slipping;
            }
            if check.any_slip() && first_failure.is_none() {
                first_failure = Some(t);
                speed_at_failure = live.speed();
            }
            if check.any_slip() && spec.failure.abort_on_slip {
                status = RunStatus::Slip;
                break;
            }
        }
        let st = &mut stats[phase_idx];
        st.effort += live.effort() * dt;
        if t >= 0.5 * (phase.start + phase.end) {
            st.err_sum += (live.speed() - cmd.speed).abs();
            st.err_n += 1;
        }
        if live.integrate().is_err() {
            status = RunStatus::NonFinite;
            events.push(Event {
                t,
                kind: EventKind::NonFinite,
            });
            break;
        }
        let step = live.steps();
        let t_next = live.time();
        let tilt = live.max_tilt();
        max_tilt = max_tilt.max(tilt);
        stats[phase_idx].max_tilt = stats[phase_idx].max_tilt.max(tilt);
        max_speed = max_speed.max(live.speed());
        if !noisy {
            max_energy_drift = max_energy_drift.max((live.energy() - e0).abs());
        }
        if step % spec.log_every as u64 == 0 || step == n_steps {
            series.rows.push(live.row());
        }
        if tilt > spec.failure.tilt_limit {
            status = RunStatus::BalanceFailure;
            events.push(Event {
                t: t_next,
                kind: EventKind::BalanceFailure { theta: tilt },
            });
            if first_failure.is_none() {
                first_failure = Some(t_next);
                speed_at_failure = live.speed();
            }
            if step % spec.log_every as u64 != 0 {
                series.rows.push(live.row());
            }
            break;
        }
    }
    let step = live.steps();
    let t_end = step as f64 * dt;
    if !stats[phase_idx].ended {
        close_phase(&mut stats[phase_idx], &live);
    }

    let mut metrics = BTreeMap::new();
    metrics.insert("duration".to_string(), t_end);
    metrics.insert("final_speed".to_string(), live.speed());
    metrics.insert("max_abs_theta".to_string(), max_tilt);
    metrics.insert("max_speed".to_string(), max_speed);
    metrics.insert("outer_updates".to_string(), outer_updates as f64);
    metrics.insert("slip_events".to_string(), slip_count as f64);
    metrics.insert("energy_drift".to_string(), max_energy_drift);
    if min_margin.is_finite() {
        metrics.insert("min_friction_margin".to_string(), min_margin);
    }
    if let Some(tf) = first_failure {
        metrics.insert("failure_time".to_string(), tf);
        metrics.insert("failure_speed".to_string(), speed_at_failure);
    }
    let mut windows = Vec::with_capacity(phases.len());
    for (ph, st) in phases.iter().zip(&stats) {
        let end = ph.end.min(t_end);
        windows.push(PhaseWindow {
            name: ph.name.clone(),
            start: ph.start,
            end,
        });
        if ph.start > t_end {
            continue;
        }
        let key = |m: &str| format!("{}.{m}", ph.name);
        metrics.insert(key("effort"), st.effort);
        metrics.insert(key("max_abs_theta"), st.max_tilt);
        metrics.insert(key("end_speed"), st.end_speed);
        metrics.insert(key("end_theta"), st.end_theta);
        if st.err_n > 0 {
            metrics.insert(key("speed_error"), st.err_sum / st.err_n as f64);
        }
    }
    windows.retain(|w| w.start <= t_end);
    Ok(RunResult {
        status,
        series,
        events,
        metrics,
        phases: windows,
    })
}

fn close_phase(st: &mut PhaseStats, sim: &LiveSim) {
    st.end_speed = sim.speed();
    st.end_theta = sim.max_tilt();
    st.ended = true;
}

/// Whether the effort phase ended stopped and upright with no failure or
/// slip during the run.
pub fn braking_succeeded(spec: &ScenarioSpec, result: &RunResult) -> bool {
    if result.failed() || result.slipped() {
        return false;
    }
    let key = |m: &str| format!("{}.{m}", spec.effort_phase);
    match (result.metric(&key("end_speed")), result.metric(&key("end_theta"))) {
        (Some(v), Some(th)) => v.abs() <= spec.success.speed_tol && th.abs() <= spec.success.tilt_tol,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxSpeedResult {
    pub heading_deg: f64,
    /// Translation speed at the first slip or balance failure, or the
    /// ramp ceiling when nothing failed.
    pub speed: f64,
    pub failed: bool,
    pub cause: Option<String>,
    pub time: f64,
}

/// Ramp parameters for [`max_speed_ramp`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RampSettings {
    /// m/s^2
    pub rate: f64,
    /// m/s
    pub ceiling: f64,
}

impl Default for RampSettings {
    fn default() -> Self {
        Self { rate: 0.1, ceiling: 4.0 }
    }
}

/// Slow speed ramp at the scenario's heading until the first slip or
/// balance failure.
pub fn max_speed_ramp(spec: &ScenarioSpec, ramp: &RampSettings, seed: u64) -> Result<MaxSpeedResult, HarnessError> {
    if !(ramp.rate > 0.0 && ramp.ceiling > 0.0) {
        return Err(HarnessError::InvalidSpec("ramp rate and ceiling must be > 0".into()));
    }
    let mut s = spec.clone();
    s.phases = vec![Phase::new(
        "ramp",
        ramp.ceiling / ramp.rate,
        CommandSource::Ramp {
            from: 0.0,
            to: ramp.ceiling,
        },
    )];
    s.failure.abort_on_slip = true;
    s.failure.check_contacts = true;
    s.log_every = s.log_every.max(80);
    let result = run_scenario(&s, seed)?;
    let cause = result.events.iter().find_map(|e| match &e.kind {
        EventKind::Slip { omniwheel, .. } => Some(format!("slip at omniwheel {omniwheel}")),
        EventKind::Separation { omniwheel, .. } => Some(format!("omniwheel {} lost contact", omniwheel + 1)),
        EventKind::BalanceFailure { .. } => Some("balance failure".to_string()),
        EventKind::NonFinite => Some("non-finite state".to_string()),
        EventKind::Phase { .. } => None,
    });
    Ok(match result.metric("failure_time") {
        Some(time) => MaxSpeedResult {
            heading_deg: spec.heading_deg,
            speed: result.metric("failure_speed").unwrap_or(f64::NAN),
            failed: true,
            cause,
            time,
        },
        None if result.status == RunStatus::NonFinite => MaxSpeedResult {
            heading_deg: spec.heading_deg,
            speed: result.metric("final_speed").unwrap_or(f64::NAN),
            failed: true,
            cause,
            time: result.metric("duration").unwrap_or(0.0),
        },
        None => MaxSpeedResult {
            heading_deg: spec.heading_deg,
            speed: ramp.ceiling,
            failed: false,
            cause: None,
            time: result.metric("duration").unwrap_or(0.0),
        },
    })
}

/// Protocol and step sizes for [`min_braking_search`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrakingSearch {
    /// Cruise speed before braking, m/s.
    pub speed: f64,
    /// Duration of the acceleration ramp, s.
    pub ramp_time: f64,
    /// Cruise duration, s.
    pub hold_time: f64,
    /// Rest after braking, s.
    pub settle_time: f64,
    pub start_duration: f64,
    pub step: f64,
    pub floor: f64,
    pub n_knots: usize,
}

impl Default for BrakingSearch {
    fn default() -> Self {
        Self {
            speed: 1.4,
            ramp_time: 4.0,
            hold_time: 2.0,
            settle_time: 0.5,
            start_duration: 5.0,
            step: 0.5,
            floor: 0.5,
            n_knots: 50,
        }
    }
}

impl BrakingSearch {
    /// Ramp, hold, optimal brake of `duration`, settle.
    pub fn phases(&self, duration: f64) -> Vec<Phase> {
        vec![
            Phase::new(
                "ramp",
                self.ramp_time,
                CommandSource::Ramp {
                    from: 0.0,
                    to: self.speed,
                },
            ),
            Phase::new("hold", self.hold_time, CommandSource::Constant { speed: self.speed }),
            Phase::new(
                "brake",
                duration,
                CommandSource::OptimalBrake {
                    v0: self.speed,
                    n_knots: self.n_knots,
                },
            ),
            Phase::new("settle", self.settle_time, CommandSource::Rest),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrakingProbe {
    pub duration: f64,
    pub success: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrakingSearchResult {
    pub min_duration: f64,
    pub probes: Vec<BrakingProbe>,
}

/// Shortens the braking duration by `step` from `start_duration` until a
/// run fails or the floor is reached; returns the last success.
pub fn min_braking_search(spec: &ScenarioSpec, search: &BrakingSearch, seed: u64) -> Result<BrakingSearchResult, HarnessError> {
    if !(search.step > 0.0 && search.start_duration >= search.floor && search.floor > 0.0) {
        return Err(HarnessError::InvalidSpec("search needs step > 0 and start >= floor > 0".into()));
    }
    let mut probes = Vec::new();
    let mut best = None;
    let mut k = 0;
    loop {
        let duration = search.start_duration - k as f64 * search.step;
        if duration < search.floor - 1e-9 {
            break;
        }
        let mut s = spec.clone();
        s.phases = search.phases(duration);
        s.effort_phase = "brake".into();
        s.log_every = s.log_every.max(80);
        let (success, detail) = match run_scenario(&s, seed) {
            Ok(r) => {
                let ok = braking_succeeded(&s, &r);
                let detail = format!(
                    "status {:?}, slip events {}, brake end speed {:.4} m/s, tilt {:.4} rad",
                    r.status,
                    r.metric("slip_events").unwrap_or(0.0),
                    r.metric("brake.end_speed").unwrap_or(f64::NAN),
                    r.metric("brake.end_theta").unwrap_or(f64::NAN)
                );
                (ok, detail)
            }
            Err(HarnessError::Trajopt(e)) => (false, format!("no braking trajectory: {e}")),
            Err(e) => return Err(e),
        };
        probes.push(BrakingProbe {
            duration,
            success,
            detail,
        });
        if !success {
            break;
        }
        best = Some(duration);
        k += 1;
    }
    match best {
        Some(min_duration) => Ok(BrakingSearchResult { min_duration, probes }),
        None => Err(HarnessError::NoFeasibleBraking(
            probes.first().map(|p| p.detail.clone()).unwrap_or_default(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub controller: ControllerKind,
    pub trials: usize,
    pub effort_mean: f64,
    pub effort_sd: f64,
    pub successes: usize,
    pub hold_speed_error: f64,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, kind: ControllerKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.controller == kind)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("controller,trials,effort_mean,effort_sd,successes,hold_speed_error,errors\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.controller,
                r.trials,
                r.effort_mean,
                r.effort_sd,
                r.successes,
                r.hold_speed_error,
                r.errors.len()
            );
        }
        out
    }
}

/// Runs every controller on the same plant and protocol. Trials differ only
/// by the sensor-noise seed `seed + trial`. Cells run concurrently.
pub fn compare_controllers(
    base: &ScenarioSpec,
    controllers: &[ControllerKind],
    trials: usize,
    seed: u64,
    hold_phase: &str,
) -> ComparisonTable {
    let trials = trials.max(1);
    let cells: Vec<(usize, usize)> = (0..controllers.len()).flat_map(|c| (0..trials).map(move |t| (c, t))).collect();
    let results: Vec<Result<RunResult, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .iter()
            .map(|&(c, t)| {
                let mut spec = base.clone();
                spec.controller.kind = controllers[c];
                scope.spawn(move || run_scenario(&spec, seed + t as u64))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(HarnessError::InvalidSpec("run panicked".into()))))
            .collect()
    });
    let mut rows = Vec::new();
    for (c, &kind) in controllers.iter().enumerate() {
        let mut efforts = Vec::new();
        let mut hold_errors = Vec::new();
        let mut successes = 0;
        let mut errors = Vec::new();
        for ((cell_c, _), res) in cells.iter().zip(&results) {
            if *cell_c != c {
                continue;
            }
            match res {
                Ok(r) => {
                    let mut spec = base.clone();
                    spec.controller.kind = kind;
                    let window = r.phase(&base.effort_phase).map(|w| (w.start, w.end));
                    match window.map(|(a, b)| braking_effort(r, a, b)) {
                        Some(Ok(e)) => efforts.push(e),
                        Some(Err(e)) => errors.push(e.to_string()),
                        None => errors.push(format!("run ended before phase `{}`", base.effort_phase)),
                    }
                    if let Some(e) = r.metric(&format!("{hold_phase}.speed_error")) {
                        hold_errors.push(e);
                    }
                    if braking_succeeded(&spec, r) {
                        successes += 1;
                    }
                }
                Err(e) => errors.push(e.to_string()),
            }
        }
        let (effort_mean, effort_sd) = mean_sd(&efforts);
        rows.push(ComparisonRow {
            controller: kind,
            trials,
            effort_mean,
            effort_sd,
            successes,
            hold_speed_error: mean_sd(&hold_errors).0,
            errors,
        });
    }
    ComparisonTable { rows }
}

/// Mean and sample standard deviation; the deviation is zero for fewer than
/// two values, and both are zero for none.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
