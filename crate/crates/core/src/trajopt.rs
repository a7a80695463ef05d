//! Minimum-torque braking trajectories by direct collocation.
//!
//! The braking problem minimizes `J = integral tau^2 dt` subject to the
//! frictionless planar dynamics, boundary states and box bounds on tilt,
//! wheel speed and (optionally) torque. It is transcribed with trapezoidal
//! collocation on a uniform grid and solved with an augmented Lagrangian
//! whose inner problems are minimized by a damped Newton method.
//!
//! Decision vector layout, knot-interleaved:
//!
//! ```text
//! z = [theta_0, phi_0, theta_dot_0, phi_dot_0, tau_0, theta_1, ...]
//! ```
//!
//! so knot `k` occupies `z[5k .. 5k + 5]`. Equality constraints are the
//! `4 (N - 1)` defects, interval-major, followed by the seven boundary
//! conditions.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{wip_accel, wip_accel_jacobian, PlanarState, WipParams};

/// Variables per knot.
pub const KNOT_DIM: usize = 5;
/// State dimension.
pub const STATE_DIM: usize = 4;
/// Half bandwidth of the Newton matrix under the interleaved layout.
const BAND: usize = 2 * KNOT_DIM - 1;
const CSV_HEADER: &str = "t,theta,phi,theta_dot,phi_dot,tau";

#[derive(Debug, Error, Clone)]
pub enum TrajoptError {
    #[error("invalid braking task: {0}")]
    InvalidTask(String),
    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),
    #[error("at least 10 knots are required, got {0}")]
    TooFewKnots(usize),
    #[error("solver did not converge: violation {:.3e}, stationarity {:.3e} after {} outer iterations", .report.max_violation, .report.stationarity, .report.outer_iterations)]
    NoConvergence { best: Box<Trajectory>, report: SolveReport },
    #[error("trajectory file: {0}")]
    Format(String),
}

/// Braking task with boundary states and path bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrakingTask {
    /// Initial translation speed, m/s.
    pub v0: f64,
    /// Braking duration, s.
    pub duration: f64,
    pub initial_theta: f64,
    pub initial_theta_dot: f64,
    pub final_theta: f64,
    pub final_theta_dot: f64,
    /// Tilt bound, rad.
    pub theta_max: f64,
    /// Translation speed bound, m/s.
    pub speed_max: f64,
    /// Optional torque bound, N m.
    pub torque_max: Option<f64>,
}

impl Default for BrakingTask {
    fn default() -> Self {
        Self {
            v0: 1.4,
            duration: 2.0,
            initial_theta: 0.0,
            initial_theta_dot: 0.0,
            final_theta: 0.0,
            final_theta_dot: 0.0,
            theta_max: 0.35,
            speed_max: 3.0,
            torque_max: None,
        }
    }
}

impl BrakingTask {
    pub fn new(v0: f64, duration: f64) -> Self {
        Self {
            v0,
            duration,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrajoptError> {
        if !(self.v0 >= 0.0 && self.v0.is_finite()) {
            return Err(TrajoptError::InvalidTask(format!("v0 must be >= 0, got {}", self.v0)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(TrajoptError::InvalidTask(format!("duration must be > 0, got {}", self.duration)));
        }
        if !(self.theta_max > 0.0 && self.speed_max > 0.0) {
            return Err(TrajoptError::InvalidTask("bounds must be positive".into()));
        }
        if matches!(self.torque_max, Some(t) if !(t > 0.0)) {
            return Err(TrajoptError::InvalidTask("torque bound must be positive".into()));
        }
        for (name, theta) in [("initial", self.initial_theta), ("final", self.final_theta)] {
            if theta.abs() > self.theta_max {
                return Err(TrajoptError::InfeasibleBounds(format!(
                    "{name} tilt {theta} outside |theta| <= {}",
                    self.theta_max
                )));
            }
        }
        if self.v0 > self.speed_max {
            return Err(TrajoptError::InfeasibleBounds(format!(
                "initial speed {} exceeds bound {}",
                self.v0, self.speed_max
            )));
        }
        Ok(())
    }
}

/// How a trajectory is evaluated between knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    /// Cubic Hermite positions with their derivative as rates; linear torque.
    CubicStateLinearInput,
}

/// Time-stamped state and torque knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PlanarState>,
    pub torques: Vec<f64>,
    pub interpolation: Interpolation,
}

fn hermite(p0: f64, p1: f64, v0: f64, v1: f64, h: f64, s: f64) -> (f64, f64) {
    let (s2, s3) = (s * s, s * s * s);
    let pos = (2.0 * s3 - 3.0 * s2 + 1.0) * p0
        + (s3 - 2.0 * s2 + s) * h * v0
        + (-2.0 * s3 + 3.0 * s2) * p1
        + (s3 - s2) * h * v1;
    let vel = ((6.0 * s2 - 6.0 * s) * p0 + (-6.0 * s2 + 6.0 * s) * p1) / h + (3.0 * s2 - 4.0 * s + 1.0) * v0 + (3.0 * s2 - 2.0 * s) * v1;
    (pos, vel)
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<PlanarState>, torques: Vec<f64>) -> Result<Self, TrajoptError> {
        let t = Self {
            times,
            states,
            torques,
            interpolation: Interpolation::CubicStateLinearInput,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TrajoptError> {
        if self.times.len() < 2 {
            return Err(TrajoptError::Format("need at least two knots".into()));
        }
        if self.states.len() != self.times.len() || self.torques.len() != self.times.len() {
            return Err(TrajoptError::Format("column lengths differ".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TrajoptError::Format("times must be strictly increasing".into()));
        }
        if self.times.iter().chain(&self.torques).any(|v| !v.is_finite()) || self.states.iter().any(|s| !s.is_finite()) {
            return Err(TrajoptError::Format("non-finite value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    /// State and torque at `t`; held at the end knots outside the span.
    pub fn sample(&self, t: f64) -> (PlanarState, f64) {
        let n = self.times.len();
        if t <= self.times[0] {
            return (self.states[0], self.torques[0]);
        }
        if t >= self.times[n - 1] {
            return (self.states[n - 1], self.torques[n - 1]);
        }
        let k = self.times.partition_point(|&tk| tk <= t) - 1;
        let h = self.times[k + 1] - self.times[k];
        let s = (t - self.times[k]) / h;
        let (a, b) = (&self.states[k], &self.states[k + 1]);
        let (theta, theta_dot) = hermite(a.theta, b.theta, a.theta_dot, b.theta_dot, h, s);
        let (phi, phi_dot) = hermite(a.phi, b.phi, a.phi_dot, b.phi_dot, h, s);
        let tau = self.torques[k] + s * (self.torques[k + 1] - self.torques[k]);
        (PlanarState::new(theta, phi, theta_dot, phi_dot), tau)
    }

    pub fn min_theta(&self) -> f64 {
        self.states.iter().map(|s| s.theta).fold(f64::INFINITY, f64::min)
    }

    pub fn max_speed(&self, wheel_radius: f64) -> f64 {
        self.states.iter().map(|s| s.speed(wheel_radius)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for ((t, s), tau) in self.times.iter().zip(&self.states).zip(&self.torques) {
            let _ = writeln!(out, "{t},{},{},{},{},{tau}", s.theta, s.phi, s.theta_dot, s.phi_dot);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TrajoptError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| TrajoptError::Format("empty file".into()))?;
        if header.trim().replace(' ', "") != CSV_HEADER {
            return Err(TrajoptError::Format(format!("expected header `{CSV_HEADER}`")));
        }
        let (mut times, mut states, mut torques) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| TrajoptError::Format(format!("row {}: {e}", i + 1)))?;
            if row.len() != 6 {
                return Err(TrajoptError::Format(format!("row {}: expected 6 columns, got {}", i + 1, row.len())));
            }
            times.push(row[0]);
            states.push(PlanarState::new(row[1], row[2], row[3], row[4]));
            torques.push(row[5]);
        }
        Trajectory::new(times, states, torques)
    }
}

/// Trapezoidal quadrature of the squared torque.
pub fn objective_value(traj: &Trajectory) -> f64 {
    traj.times
        .windows(2)
        .zip(traj.torques.windows(2))
        .map(|(t, u)| 0.5 * (t[1] - t[0]) * (u[0] * u[0] + u[1] * u[1]))
        .sum()
}

/// Intervals where torque and wheel speed have opposite signs, using linear
/// interpolation of the mechanical power between knots.
pub fn negative_power_span(traj: &Trajectory) -> Vec<(f64, f64)> {
    let power: Vec<f64> = traj.torques.iter().zip(&traj.states).map(|(u, s)| u * s.phi_dot).collect();
    let mut spans: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<f64> = if power[0] < 0.0 { Some(traj.times[0]) } else { None };
    for k in 0..power.len() - 1 {
        let (p0, p1) = (power[k], power[k + 1]);
        let (t0, t1) = (traj.times[k], traj.times[k + 1]);
        let crossing = || if p1 != p0 { t0 + (t1 - t0) * p0 / (p0 - p1) } else { t0 };
        match (open, p1 < 0.0) {
            (None, true) => open = Some(if p0 < 0.0 { t0 } else { crossing() }),
            (Some(start), false) => {
                spans.push((start, crossing()));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        spans.push((start, traj.end()));
    }
    spans.retain(|(a, b)| b > a);
    spans
}

/// Linear box bound on one decision variable: `sign * z[index] <= bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct BoxBound {
    index: usize,
    sign: f64,
    bound: f64,
}

/// Transcribed collocation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct NlpProblem {
    pub params: WipParams,
    pub task: BrakingTask,
    pub n_knots: usize,
    /// Uniform knot spacing.
    pub h: f64,
    boundary: Vec<(usize, f64)>,
    bounds: Vec<BoxBound>,
}

/// Per-knot dynamics and their first derivatives with respect to the knot
/// variables `[theta, phi, theta_dot, phi_dot, tau]`.
struct KnotEval {
    f: [f64; STATE_DIM],
    df: [[f64; KNOT_DIM]; STATE_DIM],
}

/// Sparse constraint row.
type Row = Vec<(usize, f64)>;

pub fn transcribe(p: &WipParams, task: &BrakingTask, n_knots: usize) -> Result<NlpProblem, TrajoptError> {
    if n_knots < 10 {
        return Err(TrajoptError::TooFewKnots(n_knots));
    }
    task.validate()?;
    p.validate().map_err(|e| TrajoptError::InvalidTask(e.to_string()))?;
    let last = KNOT_DIM * (n_knots - 1);
    let boundary = vec![
        (0, task.initial_theta),
        (1, 0.0),
        (2, task.initial_theta_dot),
        (3, task.v0 / p.wheel_radius),
        (last, task.final_theta),
        (last + 2, task.final_theta_dot),
        (last + 3, 0.0),
    ];
    let omega_max = task.speed_max / p.wheel_radius;
    let mut bounds = Vec::new();
    for k in 0..n_knots {
        let base = KNOT_DIM * k;
        let mut limits = vec![(base, task.theta_max), (base + 3, omega_max)];
        if let Some(tmax) = task.torque_max {
            limits.push((base + 4, tmax));
        }
        for (index, bound) in limits {
            for sign in [1.0, -1.0] {
                bounds.push(BoxBound { index, sign, bound });
            }
        }
    }
    Ok(NlpProblem {
        params: *p,
        task: *task,
        n_knots,
        h: task.duration / (n_knots - 1) as f64,
        boundary,
        bounds,
    })
}

impl NlpProblem {
    pub fn n_vars(&self) -> usize {
        KNOT_DIM * self.n_knots
    }

    pub fn n_defects(&self) -> usize {
        STATE_DIM * (self.n_knots - 1)
    }

    pub fn n_equalities(&self) -> usize {
        self.n_defects() + self.boundary.len()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_knots).map(|k| k as f64 * self.h).collect()
    }

    fn knot_state(z: &DVector<f64>, k: usize) -> PlanarState {
        let b = KNOT_DIM * k;
        PlanarState::new(z[b], z[b + 1], z[b + 2], z[b + 3])
    }

    fn knot_eval(&self, z: &DVector<f64>, k: usize) -> KnotEval {
        let s = Self::knot_state(z, k);
        let tau = z[KNOT_DIM * k + 4];
        let acc = wip_accel(&self.params, &s, tau);
        let jac = wip_accel_jacobian(&self.params, &s, tau);
        let mut df = [[0.0; KNOT_DIM]; STATE_DIM];
        df[0][2] = 1.0;
        df[1][3] = 1.0;
        for j in 0..2 {
            df[2 + j][0] = jac.d_theta[j];
            df[2 + j][2] = jac.d_theta_dot[j];
            df[2 + j][4] = jac.d_tau[j];
        }
        KnotEval {
            f: [s.theta_dot, s.phi_dot, acc.theta_ddot, acc.phi_ddot],
            df,
        }
    }

    /// Curvature of `w_theta * theta_ddot + w_phi * phi_ddot` at knot `k`
    /// by central differences of the analytic Jacobian.
    fn knot_curvature(&self, z: &DVector<f64>, k: usize, w: [f64; 2]) -> [[f64; KNOT_DIM]; KNOT_DIM] {
        let s = Self::knot_state(z, k);
        let tau = z[KNOT_DIM * k + 4];
        let weighted = |st: &PlanarState| {
            let j = wip_accel_jacobian(&self.params, st, tau);
            let dot = |v: nalgebra::Vector2<f64>| w[0] * v[0] + w[1] * v[1];
            [dot(j.d_theta), dot(j.d_theta_dot), dot(j.d_tau)]
        };
        let eps_theta = 1e-6 * (1.0 + s.theta.abs());
        let eps_rate = 1e-6 * (1.0 + s.theta_dot.abs());
        let plus = weighted(&PlanarState { theta: s.theta + eps_theta, ..s });
        let minus = weighted(&PlanarState { theta: s.theta - eps_theta, ..s });
        let d_theta: Vec<f64> = (0..3).map(|i| (plus[i] - minus[i]) / (2.0 * eps_theta)).collect();
        let plus = weighted(&PlanarState {
            theta_dot: s.theta_dot + eps_rate,
            ..s
        });
        let minus = weighted(&PlanarState {
            theta_dot: s.theta_dot - eps_rate,
            ..s
        });
        let d_rate: Vec<f64> = (0..3).map(|i| (plus[i] - minus[i]) / (2.0 * eps_rate)).collect();
        let mut hess = [[0.0; KNOT_DIM]; KNOT_DIM];
        // variables theta (0), theta_dot (2), tau (4)
        hess[0][0] = d_theta[0];
        hess[2][2] = d_rate[1];
        let cross = 0.5 * (d_theta[1] + d_rate[0]);
        hess[0][2] = cross;
        hess[2][0] = cross;
        hess[0][4] = d_theta[2];
        hess[4][0] = d_theta[2];
        hess[2][4] = d_rate[2];
        hess[4][2] = d_rate[2];
        hess
    }

    /// Trapezoidal quadrature weights on `tau^2`.
    fn quad_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.n_knots - 1 {
            0.5 * self.h
        } else {
            self.h
        }
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        (0..self.n_knots)
            .map(|k| {
                let tau = z[KNOT_DIM * k + 4];
                self.quad_weight(k) * tau * tau
            })
            .sum()
    }

    /// Collocation defects, interval-major.
    pub fn defects(&self, z: &DVector<f64>) -> DVector<f64> {
        self.equalities(z, false).0.rows(0, self.n_defects()).into_owned()
    }

    /// Defects followed by boundary residuals, optionally with sparse rows.
    fn equalities(&self, z: &DVector<f64>, with_rows: bool) -> (DVector<f64>, Vec<Row>) {
        let evals: Vec<KnotEval> = (0..self.n_knots).map(|k| self.knot_eval(z, k)).collect();
        let mut c = DVector::zeros(self.n_equalities());
        let mut rows = Vec::new();
        let half = 0.5 * self.h;
        for k in 0..self.n_knots - 1 {
            let (a, b) = (KNOT_DIM * k, KNOT_DIM * (k + 1));
            for j in 0..STATE_DIM {
                c[STATE_DIM * k + j] = z[b + j] - z[a + j] - half * (evals[k].f[j] + evals[k + 1].f[j]);
                if with_rows {
                    let mut row: Row = Vec::with_capacity(2 * KNOT_DIM);
                    for v in 0..KNOT_DIM {
                        let own = if v == j { 1.0 } else { 0.0 };
                        let da = -own - half * evals[k].df[j][v];
                        let db = own - half * evals[k + 1].df[j][v];
                        if da != 0.0 {
                            row.push((a + v, da));
                        }
                        if db != 0.0 {
                            row.push((b + v, db));
                        }
                    }
                    rows.push(row);
                }
            }
        }
        let offset = self.n_defects();
        for (i, &(index, target)) in self.boundary.iter().enumerate() {
            c[offset + i] = z[index] - target;
            if with_rows {
                rows.push(vec![(index, 1.0)]);
            }
        }
        (c, rows)
    }

    /// Dense equality Jacobian, rows in constraint order.
    pub fn equality_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let (_, rows) = self.equalities(z, true);
        let mut jac = DMatrix::zeros(rows.len(), self.n_vars());
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                jac[(i, j)] += v;
            }
        }
        jac
    }

    fn inequalities(&self, z: &DVector<f64>) -> Vec<f64> {
        self.bounds.iter().map(|b| b.sign * z[b.index] - b.bound).collect()
    }

    /// Largest equality residual or bound excess.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let (c, _) = self.equalities(z, false);
        let eq = c.amax();
        self.inequalities(z).into_iter().fold(eq, |acc, g| acc.max(g))
    }

    pub fn pack(&self, traj: &Trajectory) -> Result<DVector<f64>, TrajoptError> {
        if traj.len() != self.n_knots {
            return Err(TrajoptError::Format(format!(
                "trajectory has {} knots, problem has {}",
                traj.len(),
                self.n_knots
            )));
        }
        let mut z = DVector::zeros(self.n_vars());
        for (k, (s, tau)) in traj.states.iter().zip(&traj.torques).enumerate() {
            let b = KNOT_DIM * k;
            z[b] = s.theta;
            z[b + 1] = s.phi;
            z[b + 2] = s.theta_dot;
            z[b + 3] = s.phi_dot;
            z[b + 4] = *tau;
        }
        Ok(z)
    }

    pub fn unpack(&self, z: &DVector<f64>) -> Trajectory {
        Trajectory {
            times: self.times(),
            states: (0..self.n_knots).map(|k| Self::knot_state(z, k)).collect(),
            torques: (0..self.n_knots).map(|k| z[KNOT_DIM * k + 4]).collect(),
            interpolation: Interpolation::CubicStateLinearInput,
        }
    }

    /// Linear interpolation between the boundary states with zero torque.
    pub fn initial_guess(&self) -> Trajectory {
        let r = self.params.wheel_radius;
        let t = &self.task;
        let w0 = t.v0 / r;
        let phi_end = 0.5 * w0 * t.duration;
        let last = (self.n_knots - 1) as f64;
        let states = (0..self.n_knots)
            .map(|k| {
                let s = k as f64 / last;
                PlanarState::new(
                    t.initial_theta + s * (t.final_theta - t.initial_theta),
                    s * phi_end,
                    t.initial_theta_dot + s * (t.final_theta_dot - t.initial_theta_dot),
                    (1.0 - s) * w0,
                )
            })
            .collect();
        Trajectory {
            times: self.times(),
            states,
            torques: vec![0.0; self.n_knots],
            interpolation: Interpolation::CubicStateLinearInput,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Constraint violation tolerance.
    pub tol: f64,
    /// Relative first-order stationarity tolerance.
    pub stationarity_tol: f64,
    /// Outer (multiplier update) iterations.
    pub max_iter: usize,
    /// Newton iterations per inner minimization.
    pub max_inner: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            stationarity_tol: 1e-4,
            max_iter: 60,
            max_inner: 80,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub max_violation: f64,
    pub stationarity: f64,
    pub objective: f64,
    pub penalty: f64,
    pub converged: bool,
}

/// Augmented Lagrangian state for one problem.
struct Lagrangian<'a> {
    nlp: &'a NlpProblem,
    lambda: DVector<f64>,
    mu: Vec<f64>,
    rho: f64,
}

impl Lagrangian<'_> {
    fn value(&self, z: &DVector<f64>) -> f64 {
        let (c, _) = self.nlp.equalities(z, false);
        let ineq: f64 = self
            .nlp
            .inequalities(z)
            .iter()
            .zip(&self.mu)
            .map(|(g, mu)| {
                let shifted = (mu + self.rho * g).max(0.0);
                (shifted * shifted - mu * mu) / (2.0 * self.rho)
            })
            .sum();
        self.nlp.objective(z) + self.lambda.dot(&c) + 0.5 * self.rho * c.norm_squared() + ineq
    }

    /// Gradient of the objective alone.
    fn objective_gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(z.len());
        for k in 0..self.nlp.n_knots {
            let i = KNOT_DIM * k + 4;
            g[i] = 2.0 * self.nlp.quad_weight(k) * z[i];
        }
        g
    }

    /// Gradient and (optionally) the banded Newton matrix.
    fn derivatives(&self, z: &DVector<f64>, hessian: bool) -> (DVector<f64>, DVector<f64>, Option<DMatrix<f64>>) {
        let nlp = self.nlp;
        let n = nlp.n_vars();
        let (c, rows) = nlp.equalities(z, true);
        let y = &self.lambda + &c * self.rho;
        let grad_obj = self.objective_gradient(z);
        let mut grad = grad_obj.clone();
        for (row, yi) in rows.iter().zip(y.iter()) {
            for &(j, v) in row {
                grad[j] += v * yi;
            }
        }
        let g = nlp.inequalities(z);
        let mut active = Vec::new();
        for ((b, gi), mu) in nlp.bounds.iter().zip(&g).zip(&self.mu) {
            let shifted = mu + self.rho * gi;
            if shifted > 0.0 {
                grad[b.index] += shifted * b.sign;
                active.push(b.index);
            }
        }
        let hess = hessian.then(|| {
            let mut h = DMatrix::zeros(n, n);
            for k in 0..nlp.n_knots {
                let i = KNOT_DIM * k + 4;
                h[(i, i)] += 2.0 * nlp.quad_weight(k);
            }
            for row in &rows {
                for &(a, va) in row {
                    for &(b, vb) in row {
                        h[(a, b)] += self.rho * va * vb;
                    }
                }
            }
            for i in active {
                h[(i, i)] += self.rho;
            }
            // curvature of the dynamics weighted by the defect multipliers
            let half = 0.5 * nlp.h;
            for k in 0..nlp.n_knots {
                let mut w = [0.0; 2];
                for (j, wj) in w.iter_mut().enumerate() {
                    let comp = 2 + j;
                    if k > 0 {
                        *wj += y[STATE_DIM * (k - 1) + comp];
                    }
                    if k + 1 < nlp.n_knots {
                        *wj += y[STATE_DIM * k + comp];
                    }
                    *wj *= -half;
                }
                let block = nlp.knot_curvature(z, k, w);
                let base = KNOT_DIM * k;
                for (a, row) in block.iter().enumerate() {
                    for (b, v) in row.iter().enumerate() {
                        h[(base + a, base + b)] += v;
                    }
                }
            }
            h
        });
        (grad, grad_obj, hess)
    }
}

/// Cholesky factorization restricted to a band; `None` if not positive
/// definite.
fn band_cholesky(a: &DMatrix<f64>, band: usize) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let lo = j.saturating_sub(band);
        let mut d = a[(j, j)];
        for k in lo..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..(j + band + 1).min(n) {
            let lo = i.saturating_sub(band);
            let mut v = a[(i, j)];
            for k in lo..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    Some(l)
}

fn band_solve(l: &DMatrix<f64>, band: usize, rhs: &DVector<f64>) -> DVector<f64> {
    let n = rhs.len();
    let mut y = rhs.clone();
    for i in 0..n {
        for k in i.saturating_sub(band)..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..(i + band + 1).min(n) {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Newton direction with diagonal shifts until the matrix is definite.
fn newton_direction(h: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let scale = h.diagonal().amax().max(1.0);
    let mut shift = 0.0;
    loop {
        let shifted = if shift > 0.0 {
            h + DMatrix::identity(h.nrows(), h.ncols()) * shift
        } else {
            h.clone()
        };
        if let Some(l) = band_cholesky(&shifted, BAND) {
            return -band_solve(&l, BAND, grad);
        }
        shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
        if shift > 1e12 * scale {
            return -grad.clone();
        }
    }
}

fn stationarity(grad: &DVector<f64>, grad_obj: &DVector<f64>) -> f64 {
    grad.amax() / grad_obj.amax().max(1.0)
}

/// Solves the collocation problem from `init`.
pub fn solve(nlp: &NlpProblem, init: &Trajectory, opts: &SolveOptions) -> Result<(Trajectory, SolveReport), TrajoptError> {
    let mut z = nlp.pack(init)?;
    let mut al = Lagrangian {
        nlp,
        lambda: DVector::zeros(nlp.n_equalities()),
        mu: vec![0.0; nlp.bounds.len()],
        rho: 100.0,
    };
    let mut report = SolveReport::default();
    let mut last_violation = f64::INFINITY;
    for outer in 1..=opts.max_iter.max(1) {
        report.outer_iterations = outer;
        for _ in 0..opts.max_inner {
            let (grad, grad_obj, hess) = al.derivatives(&z, true);
            if stationarity(&grad, &grad_obj) <= 1e-3 * opts.stationarity_tol {
                break;
            }
            report.inner_iterations += 1;
            let hess = hess.expect("requested");
            let dir = newton_direction(&hess, &grad);
            let slope = grad.dot(&dir);
            let dir = if slope < 0.0 { dir } else { -grad.clone() };
            let slope = grad.dot(&dir);
            let f0 = al.value(&z);
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-12 {
                let trial = &z + &dir * step;
                let f1 = al.value(&trial);
                if f1.is_finite() && f1 <= f0 + 1e-4 * step * slope {
                    z = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let (c, _) = nlp.equalities(&z, false);
        let g = nlp.inequalities(&z);
        al.lambda += &c * al.rho;
        for (mu, gi) in al.mu.iter_mut().zip(&g) {
            *mu = (*mu + al.rho * gi).max(0.0);
        }
        let violation = nlp.max_violation(&z);
        // with updated multipliers the Lagrangian gradient is the inner one
        let (grad, grad_obj, _) = {
            let frozen = Lagrangian {
                nlp,
                lambda: al.lambda.clone(),
                mu: al.mu.clone(),
                rho: 0.0,
            };
            frozen.derivatives(&z, false)
        };
        report.max_violation = violation;
        report.stationarity = stationarity(&grad, &grad_obj);
        report.objective = nlp.objective(&z);
        report.penalty = al.rho;
        if violation <= opts.tol && report.stationarity <= opts.stationarity_tol {
            report.converged = true;
            return Ok((nlp.unpack(&z), report));
        }
        if violation > 0.25 * last_violation {
            al.rho = (al.rho * 10.0).min(1e10);
        }
        last_violation = violation;
    }
    Err(TrajoptError::NoConvergence {
        best: Box::new(nlp.unpack(&z)),
        report,
    })
}

/// Transcribes and solves a braking task from the default initial guess.
pub fn optimize_braking(
    p: &WipParams,
    task: &BrakingTask,
    n_knots: usize,
    opts: &SolveOptions,
) -> Result<(Trajectory, SolveReport), TrajoptError> {
    let nlp = transcribe(p, task, n_knots)?;
    solve(&nlp, &nlp.initial_guess(), opts)
}
