//! Balancing controllers: LQR torque control, cascaded PI-PD, and cascaded
//! LQR-PI, plus the three-plane ballbot pipeline.
//!
//! All controllers share a two-rate contract. `outer_update` runs at the
//! outer (state-feedback) rate with a full state measurement; `inner_update`
//! runs at the inner rate with only the wheel speed and returns the torque to
//! apply until the next inner tick. Controllers that have no inner loop hold
//! their outer-loop torque.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{linearize, spin_accel, wip_accel, LinearModel, PlanarState, SpinParams, WipParams};
use crate::kinematics::{ConversionMaps, MotorVector, PlanarRates, PlanarTorques};

/// Stop Newton-Kleinman once the relative Riccati residual drops below this.
pub const RICCATI_TOL: f64 = 1e-10;
/// Residual above which a design is rejected.
pub const RICCATI_ACCEPT: f64 = 1e-8;
const RICCATI_MAX_ITER: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("pair (A, B) is not stabilizable: controllability matrix is singular (rcond {0:.3e})")]
    NotStabilizable(f64),
    #[error("Riccati iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("inner/outer period ratio must be a positive integer, got {0}")]
    RateRatio(f64),
}

/// Solution of a single-input continuous algebraic Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    /// Optimal state feedback `u = -k x`.
    pub k: DVector<f64>,
    /// `||A'P + PA - P b b' P / r + Q||_F / ||Q||_F`
    pub residual: f64,
    pub iterations: usize,
}

/// Relative residual of the Riccati equation for a candidate `p`.
pub fn care_residual(a: &DMatrix<f64>, b: &DVector<f64>, q: &DMatrix<f64>, r: f64, p: &DMatrix<f64>) -> f64 {
    let pb = p * b;
    let res = a.transpose() * p + p * a - &pb * pb.transpose() / r + q;
    let scale = q.norm();
    if scale > 0.0 {
        res.norm() / scale
    } else {
        res.norm()
    }
}

/// Solves `A'X + XA = -C` through the Kronecker form.
fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, c.iter().map(|v| -v));
    let x = op.lu().solve(&rhs)?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Some((&x + x.transpose()) * 0.5)
}

/// Stabilizing single-input gain by Ackermann's formula, poles placed on the
/// negative real axis beyond the open-loop spectral radius.
pub fn place_poles(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, ControlError> {
    let n = a.nrows();
    let mut ctrb = DMatrix::<f64>::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        ctrb.set_column(j, &col);
        col = a * col;
    }
    let sv = ctrb.singular_values();
    let rcond = if sv.max() > 0.0 { sv.min() / sv.max() } else { 0.0 };
    if rcond < 1e-12 {
        return Err(ControlError::NotStabilizable(rcond));
    }
    let radius = a.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
    let base = 1.5 * radius.max(1.0);
    // desired characteristic polynomial evaluated at A
    let eye = DMatrix::<f64>::identity(n, n);
    let mut phi = eye.clone();
    for i in 0..n {
        phi *= a + &eye * (base * (1.0 + i as f64));
    }
    let mut en = DVector::<f64>::zeros(n);
    en[n - 1] = 1.0;
    let ctrb_inv = ctrb.try_inverse().ok_or(ControlError::NotStabilizable(rcond))?;
    Ok((en.transpose() * ctrb_inv * phi).transpose())
}

/// Newton-Kleinman iteration for the single-input CARE, seeded by pole
/// placement.
pub fn solve_care(a: &DMatrix<f64>, b: &DVector<f64>, q: &DMatrix<f64>, r: f64) -> Result<CareSolution, ControlError> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(ControlError::InvalidWeights(format!("r must be > 0, got {r}")));
    }
    let n = a.nrows();
    let min_eig = q.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-12 * q.norm().max(1.0) {
        return Err(ControlError::InvalidWeights("Q must be positive semidefinite".into()));
    }
    let mut k = place_poles(a, b)?;
    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < RICCATI_MAX_ITER {
        iterations += 1;
        let closed = a - b * k.transpose();
        let c = q + &k * k.transpose() * r;
        let next = match solve_lyapunov(&closed, &c) {
            Some(next) => next,
            None => break,
        };
        p = next;
        k = p.transpose() * b / r;
        residual = care_residual(a, b, q, r, &p);
        if residual < RICCATI_TOL {
            break;
        }
    }
    if !(residual <= RICCATI_ACCEPT) {
        return Err(ControlError::NoConvergence { residual, iterations });
    }
    Ok(CareSolution {
        p,
        k,
        residual,
        iterations,
    })
}

/// Diagonal LQR weights in `[theta, phi, theta_dot, phi_dot]` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrWeights {
    pub q_diag: [f64; 4],
    pub r: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self {
            q_diag: [100.0, 0.0, 10.0, 1.0],
            r: 1.0,
        }
    }
}

/// Gains on tilt error, tilt-rate error and wheel-speed error. The wheel
/// position gain is structurally zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LqrGains {
    pub k_theta: f64,
    pub k_theta_dot: f64,
    pub k_phi_dot: f64,
}

impl LqrGains {
    pub fn new(k_theta: f64, k_theta_dot: f64, k_phi_dot: f64) -> Self {
        Self {
            k_theta,
            k_theta_dot,
            k_phi_dot,
        }
    }

    /// Full state-feedback row `[k1, 0, k2, k3]`.
    pub fn full(&self) -> [f64; 4] {
        [self.k_theta, 0.0, self.k_theta_dot, self.k_phi_dot]
    }
}

/// LQR design on the three-state model with the wheel position removed.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrDesign {
    pub gains: LqrGains,
    pub care: CareSolution,
    /// Reduced `[theta, theta_dot, phi_dot]` system used for the design.
    pub a_reduced: Matrix3<f64>,
    pub b_reduced: Vector3<f64>,
}

impl LqrDesign {
    pub fn closed_loop_reduced(&self) -> Matrix3<f64> {
        let k = Vector3::new(self.gains.k_theta, self.gains.k_theta_dot, self.gains.k_phi_dot);
        self.a_reduced - self.b_reduced * k.transpose()
    }
}

const REDUCED: [usize; 3] = [0, 2, 3];

pub fn solve_lqr(model: &LinearModel, w: &LqrWeights) -> Result<LqrDesign, ControlError> {
    if w.q_diag.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
        return Err(ControlError::InvalidWeights("Q diagonal must be >= 0".into()));
    }
    let a_reduced = Matrix3::from_fn(|i, j| model.a[(REDUCED[i], REDUCED[j])]);
    let b_reduced = Vector3::from_fn(|i, _| model.b[REDUCED[i]]);
    let q = DMatrix::from_diagonal(&DVector::from_iterator(3, REDUCED.iter().map(|&i| w.q_diag[i])));
    let care = solve_care(
        &DMatrix::from_column_slice(3, 3, a_reduced.as_slice()),
        &DVector::from_column_slice(b_reduced.as_slice()),
        &q,
        w.r,
    )?;
    Ok(LqrDesign {
        gains: LqrGains::new(care.k[0], care.k[1], care.k[2]),
        care,
        a_reduced,
        b_reduced,
    })
}

/// Convenience: linearize and design in one go.
pub fn design_lqr(p: &WipParams, w: &LqrWeights) -> Result<LqrDesign, ControlError> {
    solve_lqr(&linearize(p), w)
}

/// Commanded tilt, tilt rate and wheel speed of one plane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandState {
    pub theta: f64,
    pub theta_dot: f64,
    pub phi_dot: f64,
}

impl CommandState {
    pub fn speed(phi_dot: f64) -> Self {
        Self {
            phi_dot,
            ..Default::default()
        }
    }
}

/// `k1 (theta_c - theta) + k2 (theta_dot_c - theta_dot) + k3 (phi_dot_c - phi_dot)`
pub fn lqr_torque(k: &LqrGains, c: &CommandState, s: &PlanarState) -> f64 {
    k.k_theta * (c.theta - s.theta) + k.k_theta_dot * (c.theta_dot - s.theta_dot) + k.k_phi_dot * (c.phi_dot - s.phi_dot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
    /// Bound on the integrator state (rad).
    pub integrator_limit: f64,
}

impl PiGains {
    /// Integrator limit chosen so `ki * limit` equals `torque_ceiling`.
    pub fn with_torque_ceiling(kp: f64, ki: f64, torque_ceiling: f64) -> Self {
        let integrator_limit = if ki > 0.0 { torque_ceiling / ki } else { f64::INFINITY };
        Self { kp, ki, integrator_limit }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.kp >= 0.0 && self.ki >= 0.0) {
            return Err(ControlError::InvalidGains("PI gains must be >= 0".into()));
        }
        if !(self.integrator_limit > 0.0) {
            return Err(ControlError::InvalidGains("integrator limit must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdGains {
    pub kp_outer: f64,
    pub ki_outer: f64,
    pub kp_tilt: f64,
    pub kd_tilt: f64,
    /// Bound on the reference tilt, rad.
    pub tilt_limit: f64,
}

impl PdGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        if [self.kp_outer, self.ki_outer, self.kp_tilt, self.kd_tilt].iter().any(|g| !(*g >= 0.0)) {
            return Err(ControlError::InvalidGains("PI-PD gains must be >= 0".into()));
        }
        if !(self.tilt_limit > 0.0) {
            return Err(ControlError::InvalidGains("tilt limit must be > 0".into()));
        }
        Ok(())
    }
}

/// Mutable state of the cascaded LQR-PI loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub integrator: f64,
    /// Reference wheel speed integrated from the reference model.
    pub phi_dot_ref: f64,
    /// Feedforward torque held between outer ticks.
    pub tau_ref: f64,
    /// Last tracking torque.
    pub tau_track: f64,
    pub initialized: bool,
}

/// Integrates the frictionless reference model one outer period forward
/// from the measured state. On the first call the reference speed starts
/// from the measured wheel speed.
pub fn reference_model_step(p: &WipParams, s: &PlanarState, tau_ref: f64, dt: f64, cs: &mut ControllerState) -> f64 {
    if !cs.initialized {
        cs.phi_dot_ref = s.phi_dot;
        cs.initialized = true;
    }
    let acc = wip_accel(p, s, tau_ref);
    cs.phi_dot_ref += acc.phi_ddot * dt;
    cs.phi_dot_ref
}

/// One inner PI tick on the wheel-speed error, with a clamped integrator.
pub fn pi_step(cs: &mut ControllerState, g: &PiGains, phi_dot_ref: f64, phi_dot_meas: f64, dt: f64) -> f64 {
    let e = phi_dot_ref - phi_dot_meas;
    cs.integrator = (cs.integrator + e * dt).clamp(-g.integrator_limit, g.integrator_limit);
    cs.tau_track = g.kp * e + g.ki * cs.integrator;
    cs.tau_track
}

/// State of the PI-PD cascade.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PiPdState {
    pub integrator: f64,
    pub theta_ref: f64,
}

/// Outer speed PI producing a reference tilt, inner tilt PD producing torque.
///
/// Positive torque pushes the body backward, so leaning the body toward
/// `theta_ref` takes `tau = kp_tilt (theta - theta_ref) + kd_tilt theta_dot`.
pub fn pi_pd_step(st: &mut PiPdState, g: &PdGains, phi_dot_cmd: f64, s: &PlanarState, dt: f64) -> f64 {
    let e = phi_dot_cmd - s.phi_dot;
    let candidate = st.integrator + e * dt;
    let unclamped = g.kp_outer * e + g.ki_outer * candidate;
    // conditional integration: freeze the integrator while saturated outward
    if unclamped.abs() <= g.tilt_limit || unclamped.signum() != e.signum() {
        st.integrator = candidate;
    }
    st.theta_ref = (g.kp_outer * e + g.ki_outer * st.integrator).clamp(-g.tilt_limit, g.tilt_limit);
    g.kp_tilt * (s.theta - st.theta_ref) + g.kd_tilt * s.theta_dot
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum ControllerKind {
    #[serde(rename = "lqr")]
    Lqr,
    #[serde(rename = "pi-pd")]
    PiPd,
    #[serde(rename = "lqr-pi")]
    LqrPi,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Lqr, ControllerKind::PiPd, ControllerKind::LqrPi];

    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Lqr => "lqr",
            ControllerKind::PiPd => "pi-pd",
            ControllerKind::LqrPi => "lqr-pi",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown controller `{s}` (expected lqr, pi-pd or lqr-pi)"))
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Multi-rate timing. The inner period must divide the outer period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub outer_hz: f64,
    pub inner_hz: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            outer_hz: 400.0,
            inner_hz: 8000.0,
        }
    }
}

impl Rates {
    /// Inner ticks per outer tick.
    pub fn ratio(&self) -> Result<usize, ControlError> {
        let ratio = self.inner_hz / self.outer_hz;
        let rounded = ratio.round();
        if !(rounded >= 1.0 && (ratio - rounded).abs() < 1e-9) {
            return Err(ControlError::RateRatio(ratio));
        }
        Ok(rounded as usize)
    }

    pub fn outer_dt(&self) -> f64 {
        1.0 / self.outer_hz
    }

    pub fn inner_dt(&self) -> f64 {
        1.0 / self.inner_hz
    }
}

/// Signals exposed for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Internals {
    pub tau_ref: f64,
    pub phi_dot_ref: f64,
    pub tau_track: f64,
    pub theta_ref: f64,
}

/// One planar controller of any of the three architectures.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanarController {
    Lqr {
        gains: LqrGains,
        torque_limit: f64,
        held: f64,
    },
    PiPd {
        gains: PdGains,
        state: PiPdState,
        outer_dt: f64,
        torque_limit: f64,
        held: f64,
    },
    LqrPi {
        model: WipParams,
        gains: LqrGains,
        pi: PiGains,
        state: ControllerState,
        outer_dt: f64,
        inner_dt: f64,
        torque_limit: f64,
    },
}

impl PlanarController {
    pub fn lqr(gains: LqrGains, torque_limit: f64) -> Self {
        PlanarController::Lqr {
            gains,
            torque_limit,
            held: 0.0,
        }
    }

    pub fn pi_pd(gains: PdGains, rates: Rates, torque_limit: f64) -> Self {
        PlanarController::PiPd {
            gains,
            state: PiPdState::default(),
            outer_dt: rates.outer_dt(),
            torque_limit,
            held: 0.0,
        }
    }

    pub fn lqr_pi(model: WipParams, gains: LqrGains, pi: PiGains, rates: Rates, torque_limit: f64) -> Self {
        PlanarController::LqrPi {
            model,
            gains,
            pi,
            state: ControllerState::default(),
            outer_dt: rates.outer_dt(),
            inner_dt: rates.inner_dt(),
            torque_limit,
        }
    }

    pub fn kind(&self) -> ControllerKind {
        match self {
            PlanarController::Lqr { .. } => ControllerKind::Lqr,
            PlanarController::PiPd { .. } => ControllerKind::PiPd,
            PlanarController::LqrPi { .. } => ControllerKind::LqrPi,
        }
    }

    /// Outer tick with a full state measurement.
    pub fn outer_update(&mut self, cmd: &CommandState, s: &PlanarState) {
        match self {
            PlanarController::Lqr { gains, held, .. } => *held = lqr_torque(gains, cmd, s),
            PlanarController::PiPd {
                gains,
                state,
                outer_dt,
                held,
                ..
            } => *held = pi_pd_step(state, gains, cmd.phi_dot, s, *outer_dt),
            PlanarController::LqrPi {
                model,
                gains,
                state,
                outer_dt,
                ..
            } => {
                state.tau_ref = lqr_torque(gains, cmd, s);
                reference_model_step(model, s, state.tau_ref, *outer_dt, state);
            }
        }
    }

    /// Inner tick; returns the saturated torque command.
    pub fn inner_update(&mut self, phi_dot_meas: f64) -> f64 {
        let (tau, limit) = match self {
            PlanarController::Lqr { held, torque_limit, .. } => (*held, *torque_limit),
            PlanarController::PiPd { held, torque_limit, .. } => (*held, *torque_limit),
            PlanarController::LqrPi {
                pi,
                state,
                inner_dt,
                torque_limit,
                ..
            } => {
                let reference = state.phi_dot_ref;
                let tau_e = pi_step(state, pi, reference, phi_dot_meas, *inner_dt);
                (state.tau_ref + tau_e, *torque_limit)
            }
        };
        tau.clamp(-limit, limit)
    }

    pub fn internals(&self) -> Internals {
        match self {
            PlanarController::Lqr { held, .. } => Internals {
                tau_ref: *held,
                ..Default::default()
            },
            PlanarController::PiPd { state, held, .. } => Internals {
                tau_ref: *held,
                theta_ref: state.theta_ref,
                ..Default::default()
            },
            PlanarController::LqrPi { state, .. } => Internals {
                tau_ref: state.tau_ref,
                phi_dot_ref: state.phi_dot_ref,
                tau_track: state.tau_track,
                theta_ref: 0.0,
            },
        }
    }

    /// Replaces the tracking PI of an LQR-PI controller, keeping its state.
    pub fn set_pi(&mut self, gains: PiGains) -> Result<(), ControlError> {
        gains.validate()?;
        match self {
            PlanarController::LqrPi { pi, .. } => {
                *pi = gains;
                Ok(())
            }
            other => Err(ControlError::InvalidGains(format!("{} has no tracking PI", other.kind()))),
        }
    }

    /// Drops all integrator and reference state.
    pub fn reset(&mut self) {
        match self {
            PlanarController::Lqr { held, .. } => *held = 0.0,
            PlanarController::PiPd { state, held, .. } => {
                *state = PiPdState::default();
                *held = 0.0;
            }
            PlanarController::LqrPi { state, .. } => *state = ControllerState::default(),
        }
    }
}

/// Yaw regulator gains `[k_angle, k_rate]` from LQR on the spin model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct YawGains {
    pub k_angle: f64,
    pub k_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YawWeights {
    pub q_angle: f64,
    pub q_rate: f64,
    pub r: f64,
}

impl Default for YawWeights {
    fn default() -> Self {
        Self {
            q_angle: 10.0,
            q_rate: 1.0,
            r: 1.0,
        }
    }
}

pub fn design_yaw(sp: &SpinParams, w: &YawWeights) -> Result<(YawGains, CareSolution), ControlError> {
    let a = Matrix2::new(0.0, 1.0, 0.0, -sp.viscous / sp.inertia);
    let b = Vector2::new(0.0, 1.0 / sp.inertia);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![w.q_angle, w.q_rate]));
    let care = solve_care(
        &DMatrix::from_column_slice(2, 2, a.as_slice()),
        &DVector::from_column_slice(b.as_slice()),
        &q,
        w.r,
    )?;
    Ok((
        YawGains {
            k_angle: care.k[0],
            k_rate: care.k[1],
        },
        care,
    ))
}

/// Per-plane commands for the three-plane pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BallbotCommand {
    pub x: CommandState,
    pub y: CommandState,
    /// Commanded yaw rate, rad/s.
    pub yaw_rate: f64,
}

/// Sensor readings consumed by the pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BallbotMeasurement {
    /// IMU body angles `(theta_x, theta_y, theta_z)`.
    pub tilt: [f64; 3],
    /// IMU body rates.
    pub tilt_rate: [f64; 3],
    /// Encoder motor speeds.
    pub motor_speeds: MotorVector,
}

/// Configuration of the three-plane LQR-PI pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct BallbotGains {
    pub planar: LqrGains,
    pub yaw: YawGains,
    /// Inner PI in motor units (N m per rad/s of motor speed error).
    pub motor_pi: PiGains,
    pub motor_torque_limit: f64,
}

/// Signals of the three-plane pipeline, planar and per-motor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BallbotInternals {
    pub planar_tau_ref: PlanarTorques,
    pub phi_dot_ref: [f64; 2],
    pub yaw_rate_ref: f64,
    pub motor_tau_ref: MotorVector,
    pub motor_speed_ref: MotorVector,
    pub motor_tau_track: MotorVector,
    pub planar_rates: PlanarRates,
    pub conversion_residual: f64,
}

/// Cascaded LQR-PI over the sagittal, frontal and yaw planes with per-motor
/// inner loops.
#[derive(Debug, Clone, PartialEq)]
pub struct BallbotController {
    maps: ConversionMaps,
    model: WipParams,
    spin: SpinParams,
    gains: BallbotGains,
    rates: Rates,
    /// Disables the inner PI and the reference models (plain LQR torque).
    torque_only: bool,
    yaw_angle_cmd: f64,
    phi_dot_ref: [f64; 2],
    yaw_rate_ref: f64,
    integrators: [f64; 3],
    initialized: bool,
    internals: BallbotInternals,
}

impl BallbotController {
    pub fn new(maps: ConversionMaps, model: WipParams, spin: SpinParams, gains: BallbotGains, rates: Rates) -> Self {
        Self {
            maps,
            model,
            spin,
            gains,
            rates,
            torque_only: false,
            yaw_angle_cmd: 0.0,
            phi_dot_ref: [0.0; 2],
            yaw_rate_ref: 0.0,
            integrators: [0.0; 3],
            initialized: false,
            internals: BallbotInternals::default(),
        }
    }

    /// LQR torque control through the same conversions, no inner loop.
    pub fn torque_only(mut self) -> Self {
        self.torque_only = true;
        self
    }

    pub fn is_torque_only(&self) -> bool {
        self.torque_only
    }

    pub fn gains(&self) -> &BallbotGains {
        &self.gains
    }

    pub fn gains_mut(&mut self) -> &mut BallbotGains {
        &mut self.gains
    }

    pub fn internals(&self) -> &BallbotInternals {
        &self.internals
    }

    pub fn maps(&self) -> &ConversionMaps {
        &self.maps
    }

    pub fn reset(&mut self) {
        self.yaw_angle_cmd = 0.0;
        self.phi_dot_ref = [0.0; 2];
        self.yaw_rate_ref = 0.0;
        self.integrators = [0.0; 3];
        self.initialized = false;
        self.internals = BallbotInternals::default();
    }

    /// Outer tick: planar states from the sensors, per-plane LQR and
    /// reference models, then conversion back to per-motor feedforward
    /// torque and speed references.
    pub fn outer_update(&mut self, cmd: &BallbotCommand, m: &BallbotMeasurement) {
        let dt = self.rates.outer_dt();
        let est = self
            .maps
            .planar_rates(&m.motor_speeds, (m.tilt_rate[0], m.tilt_rate[1]), Some(m.tilt_rate[2]));
        let sx = PlanarState::new(m.tilt[0], 0.0, m.tilt_rate[0], est.rates.phi_dot_x);
        let sy = PlanarState::new(m.tilt[1], 0.0, m.tilt_rate[1], est.rates.phi_dot_y);
        if !self.initialized {
            self.phi_dot_ref = [sx.phi_dot, sy.phi_dot];
            self.yaw_rate_ref = m.tilt_rate[2];
            self.yaw_angle_cmd = m.tilt[2];
            self.initialized = true;
        }
        self.yaw_angle_cmd += cmd.yaw_rate * dt;
        let k = &self.gains.planar;
        let tau_x = lqr_torque(k, &cmd.x, &sx);
        let tau_y = lqr_torque(k, &cmd.y, &sy);
        let yaw = &self.gains.yaw;
        let tau_z = yaw.k_angle * (self.yaw_angle_cmd - m.tilt[2]) + yaw.k_rate * (cmd.yaw_rate - m.tilt_rate[2]);
        let planar_tau = PlanarTorques::new(tau_x, tau_y, tau_z);

        self.phi_dot_ref[0] += wip_accel(&self.model, &sx, tau_x).phi_ddot * dt;
        self.phi_dot_ref[1] += wip_accel(&self.model, &sy, tau_y).phi_ddot * dt;
        self.yaw_rate_ref += spin_accel(&self.spin.viscous_only(), m.tilt_rate[2], tau_z) * dt;

        let motor_tau_ref = self.maps.motor_torques(&planar_tau);
        let motor_speed_ref = self.maps.motor_speeds(&PlanarRates {
            phi_dot_x: self.phi_dot_ref[0],
            phi_dot_y: self.phi_dot_ref[1],
            theta_dot_x: m.tilt_rate[0],
            theta_dot_y: m.tilt_rate[1],
            theta_dot_z: self.yaw_rate_ref,
        });
        self.internals = BallbotInternals {
            planar_tau_ref: planar_tau,
            phi_dot_ref: self.phi_dot_ref,
            yaw_rate_ref: self.yaw_rate_ref,
            motor_tau_ref,
            motor_speed_ref,
            motor_tau_track: self.internals.motor_tau_track,
            planar_rates: est.rates,
            conversion_residual: est.residual,
        };
    }

    /// Inner tick: per-motor PI on the speed error plus the feedforward
    /// torque, saturated at the motor limit.
    pub fn inner_update(&mut self, motor_speeds: &MotorVector) -> MotorVector {
        let limit = self.gains.motor_torque_limit;
        let mut out = MotorVector::default();
        for i in 0..3 {
            let track = if self.torque_only {
                0.0
            } else {
                let pi = &self.gains.motor_pi;
                let e = self.internals.motor_speed_ref[i] - motor_speeds[i];
                self.integrators[i] = (self.integrators[i] + e * self.rates.inner_dt())
                    .clamp(-pi.integrator_limit, pi.integrator_limit);
                pi.kp * e + pi.ki * self.integrators[i]
            };
            self.internals.motor_tau_track[i] = track;
            out[i] = (self.internals.motor_tau_ref[i] + track).clamp(-limit, limit);
        }
        out
    }

    /// One inner tick of the full pipeline; runs the outer update first when
    /// `tick` falls on an outer period.
    pub fn step(&mut self, tick: u64, cmd: &BallbotCommand, m: &BallbotMeasurement) -> Result<MotorVector, ControlError> {
        let ratio = self.rates.ratio()? as u64;
        if tick.is_multiple_of(ratio) {
            self.outer_update(cmd, m);
        }
        Ok(self.inner_update(&m.motor_speeds))
    }
}

/// Single call form of the three-plane pipeline.
pub fn ballbot_controller_step(
    ctrl: &mut BallbotController,
    tick: u64,
    cmd: &BallbotCommand,
    m: &BallbotMeasurement,
) -> Result<MotorVector, ControlError> {
    ctrl.step(tick, cmd, m)
}
