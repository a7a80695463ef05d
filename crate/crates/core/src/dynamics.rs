//! Planar equations of motion.
//!
//! Each translation plane of the ballbot is a wheeled inverted pendulum
//! (WIP): a body pivoting about the center of a wheel that rolls without
//! slip. Coordinates follow one convention throughout the crate:
//!
//! * `theta` is the absolute body tilt from vertical, positive toward the
//!   direction of travel;
//! * `phi` is the absolute wheel rotation, so the wheel center sits at
//!   `x = r * phi`;
//! * the actuator applies `+tau` to the wheel and `-tau` to the body.
//!
//! With `M(theta)` the configuration-dependent mass matrix the dynamics read
//!
//! ```text
//! [I_b + m_b l^2       m_b r l cos(theta)      ] [theta_ddot]   [-tau + m_b g l sin(theta)             ]
//! [m_b r l cos(theta)  (m_b + m_w) r^2 + I_w   ] [phi_ddot  ] = [ tau + m_b r l sin(theta) theta_dot^2 ]
//! ```
//!
//! The yaw axis is a single rigid body with viscous and Coulomb friction.

use nalgebra::{Matrix2, Matrix4, SVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the zero-speed band used by the yaw Coulomb term, rad/s.
pub const SPIN_SIGN_BAND: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("integration step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("state became non-finite during integration")]
    NonFinite,
}

fn require(cond: bool, name: &'static str, reason: impl Into<String>) -> Result<(), DynamicsError> {
    if cond {
        Ok(())
    } else {
        Err(DynamicsError::InvalidParameter {
            name,
            reason: reason.into(),
        })
    }
}

/// Physical parameters of one planar wheeled inverted pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WipParams {
    /// Upper body plus payload, kg.
    pub body_mass: f64,
    /// Spherical wheel mass, kg.
    pub wheel_mass: f64,
    /// Body inertia about its center of mass, kg m^2.
    pub body_inertia: f64,
    /// Wheel inertia about its center, kg m^2.
    pub wheel_inertia: f64,
    /// Wheel center to body center of mass, m.
    pub com_height: f64,
    /// Wheel radius, m.
    pub wheel_radius: f64,
    /// m/s^2
    pub gravity: f64,
}

impl WipParams {
    /// Full-scale drivetrain carrying a seated-height 60 kg payload.
    ///
    /// The wheel inertia is the thin-shell estimate `2/3 m r^2`.
    pub fn miapure() -> Self {
        let wheel_mass = 3.6;
        let wheel_radius = 0.229 / 2.0;
        let body_mass = 60.0 + 17.9 - wheel_mass;
        let com_height = 0.5;
        Self {
            body_mass,
            wheel_mass,
            body_inertia: body_mass * com_height * com_height / 3.0,
            wheel_inertia: 2.0 / 3.0 * wheel_mass * wheel_radius * wheel_radius,
            com_height,
            wheel_radius,
            gravity: 9.81,
        }
    }

    /// Bench-top planar testbed: half the size, a fifth of the loaded weight.
    pub fn piptb() -> Self {
        let wheel_mass = 1.0;
        let wheel_radius = 0.0573;
        let body_mass = 14.6;
        let com_height = 0.25;
        Self {
            body_mass,
            wheel_mass,
            body_inertia: body_mass * com_height * com_height / 3.0,
            wheel_inertia: 2.0 / 3.0 * wheel_mass * wheel_radius * wheel_radius,
            com_height,
            wheel_radius,
            gravity: 9.81,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        require(positive(self.body_mass), "body_mass", "must be > 0")?;
        require(positive(self.wheel_mass), "wheel_mass", "must be > 0")?;
        require(non_negative(self.body_inertia), "body_inertia", "must be >= 0")?;
        require(non_negative(self.wheel_inertia), "wheel_inertia", "must be >= 0")?;
        require(positive(self.com_height), "com_height", "must be > 0")?;
        require(positive(self.wheel_radius), "wheel_radius", "must be > 0")?;
        require(positive(self.gravity), "gravity", "must be > 0")?;
        Ok(())
    }

    /// Rotational inertia seen by the wheel coordinate, `(m_b + m_w) r^2 + I_w`.
    pub fn wheel_channel_inertia(&self) -> f64 {
        (self.body_mass + self.wheel_mass) * self.wheel_radius.powi(2) + self.wheel_inertia
    }

    /// Body inertia about the wheel center, `I_b + m_b l^2`.
    pub fn body_pivot_inertia(&self) -> f64 {
        self.body_inertia + self.body_mass * self.com_height.powi(2)
    }

    /// `m_b r l`
    pub fn coupling(&self) -> f64 {
        self.body_mass * self.wheel_radius * self.com_height
    }

    /// `m_b g l`, the gravity torque scale of the body.
    pub fn gravity_torque(&self) -> f64 {
        self.body_mass * self.gravity * self.com_height
    }

    /// Mass matrix in `(theta, phi)` order.
    pub fn mass_matrix(&self, theta: f64) -> Matrix2<f64> {
        let c = self.coupling() * theta.cos();
        Matrix2::new(self.body_pivot_inertia(), c, c, self.wheel_channel_inertia())
    }
}

/// State of one translation plane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanarState {
    pub theta: f64,
    pub phi: f64,
    pub theta_dot: f64,
    pub phi_dot: f64,
}

impl PlanarState {
    pub const REST: PlanarState = PlanarState {
        theta: 0.0,
        phi: 0.0,
        theta_dot: 0.0,
        phi_dot: 0.0,
    };

    pub fn new(theta: f64, phi: f64, theta_dot: f64, phi_dot: f64) -> Self {
        Self {
            theta,
            phi,
            theta_dot,
            phi_dot,
        }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.theta, self.phi, self.theta_dot, self.phi_dot)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Translation speed of the wheel center, m/s.
    pub fn speed(&self, wheel_radius: f64) -> f64 {
        wheel_radius * self.phi_dot
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

impl std::ops::Neg for PlanarState {
    type Output = PlanarState;

    fn neg(self) -> PlanarState {
        PlanarState::new(-self.theta, -self.phi, -self.theta_dot, -self.phi_dot)
    }
}

/// Generalized accelerations of one plane.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WipAccel {
    pub theta_ddot: f64,
    pub phi_ddot: f64,
}

impl std::ops::Neg for WipAccel {
    type Output = WipAccel;

    fn neg(self) -> WipAccel {
        WipAccel {
            theta_ddot: -self.theta_ddot,
            phi_ddot: -self.phi_ddot,
        }
    }
}

/// Solves the 2x2 system by Cramer's rule. The determinant is
/// `(I_b + m_b l^2)((m_b + m_w) r^2 + I_w) - (m_b r l cos)^2`, strictly positive
/// for valid parameters.
fn solve_mass(p: &WipParams, theta: f64, rhs_theta: f64, rhs_phi: f64) -> WipAccel {
    let m11 = p.body_pivot_inertia();
    let m22 = p.wheel_channel_inertia();
    let m12 = p.coupling() * theta.cos();
    let det = m11 * m22 - m12 * m12;
    debug_assert!(det > 0.0, "mass matrix must be positive definite");
    WipAccel {
        theta_ddot: (m22 * rhs_theta - m12 * rhs_phi) / det,
        phi_ddot: (m11 * rhs_phi - m12 * rhs_theta) / det,
    }
}

/// Frictionless WIP accelerations under wheel torque `tau`.
pub fn wip_accel(p: &WipParams, s: &PlanarState, tau: f64) -> WipAccel {
    wip_accel_pushed(p, s, tau, 0.0)
}

/// Like [`wip_accel`] with an extra horizontal force (N) acting at the body
/// center of mass, positive along the direction of travel.
pub fn wip_accel_pushed(p: &WipParams, s: &PlanarState, tau: f64, push: f64) -> WipAccel {
    let (sin, cos) = s.theta.sin_cos();
    let rhs_theta = -tau + p.gravity_torque() * sin + push * p.com_height * cos;
    let rhs_phi = tau + p.coupling() * sin * s.theta_dot * s.theta_dot + push * p.wheel_radius;
    solve_mass(p, s.theta, rhs_theta, rhs_phi)
}

/// Partial derivatives of the frictionless accelerations with respect to
/// `theta`, `theta_dot` and `tau` (the accelerations do not depend on `phi`
/// or `phi_dot`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WipAccelJacobian {
    pub d_theta: Vector2<f64>,
    pub d_theta_dot: Vector2<f64>,
    pub d_tau: Vector2<f64>,
}

pub fn wip_accel_jacobian(p: &WipParams, s: &PlanarState, tau: f64) -> WipAccelJacobian {
    let (sin, cos) = s.theta.sin_cos();
    let acc = wip_accel(p, s, tau);
    let qdd = Vector2::new(acc.theta_ddot, acc.phi_ddot);
    let m = p.mass_matrix(s.theta);
    let m_inv = m.try_inverse().expect("mass matrix is positive definite");
    // d(M q'') = d(rhs)  =>  dq'' = M^-1 (d rhs - dM q'')
    let dm = Matrix2::new(0.0, -p.coupling() * sin, -p.coupling() * sin, 0.0);
    let drhs_theta = Vector2::new(
        p.gravity_torque() * cos,
        p.coupling() * cos * s.theta_dot * s.theta_dot,
    );
    let drhs_theta_dot = Vector2::new(0.0, 2.0 * p.coupling() * sin * s.theta_dot);
    let drhs_tau = Vector2::new(-1.0, 1.0);
    WipAccelJacobian {
        d_theta: m_inv * (drhs_theta - dm * qdd),
        d_theta_dot: m_inv * drhs_theta_dot,
        d_tau: m_inv * drhs_tau,
    }
}

/// State derivative `[theta_dot, phi_dot, theta_ddot, phi_ddot]`.
pub fn wip_derivative(p: &WipParams, s: &PlanarState, tau: f64) -> Vector4<f64> {
    let a = wip_accel(p, s, tau);
    Vector4::new(s.theta_dot, s.phi_dot, a.theta_ddot, a.phi_ddot)
}

/// Transmission friction between wheel and body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionParams {
    /// Breakaway torque, N m.
    pub tau_stiction: f64,
    /// Sliding Coulomb torque, N m.
    pub tau_coulomb: f64,
    /// Viscous coefficient, N m s/rad.
    pub viscous: f64,
    /// Stribeck decay speed, rad/s.
    pub omega_stribeck: f64,
    /// Zero-speed detection band, rad/s.
    #[serde(default = "default_omega_eps")]
    pub omega_eps: f64,
}

fn default_omega_eps() -> f64 {
    1e-3
}

impl FrictionParams {
    pub fn none() -> Self {
        Self {
            tau_stiction: 0.0,
            tau_coulomb: 0.0,
            viscous: 0.0,
            omega_stribeck: 1.0,
            omega_eps: default_omega_eps(),
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        require(
            self.tau_coulomb.is_finite() && self.tau_coulomb >= 0.0,
            "tau_coulomb",
            "must be >= 0",
        )?;
        require(
            self.tau_stiction.is_finite() && self.tau_stiction >= self.tau_coulomb,
            "tau_stiction",
            "must be >= tau_coulomb",
        )?;
        require(self.viscous.is_finite() && self.viscous >= 0.0, "viscous", "must be >= 0")?;
        require(
            self.omega_stribeck.is_finite() && self.omega_stribeck > 0.0,
            "omega_stribeck",
            "must be > 0",
        )?;
        require(self.omega_eps.is_finite() && self.omega_eps > 0.0, "omega_eps", "must be > 0")?;
        Ok(())
    }

    /// Sliding branch: Coulomb level plus a Stribeck bump decaying with speed,
    /// plus viscous drag.
    pub fn sliding_torque(&self, omega: f64) -> f64 {
        let stribeck = (self.tau_stiction - self.tau_coulomb) * (-omega.abs() / self.omega_stribeck).exp();
        sign(omega) * (self.tau_coulomb + stribeck) + self.viscous * omega
    }

    /// Friction torque opposing wheel motion given the applied torque.
    ///
    /// Inside the zero-speed band the joint sticks and absorbs any applied
    /// torque up to the breakaway level. Past breakaway at (near) zero speed
    /// the friction takes the breakaway value against the applied torque.
    pub fn torque(&self, omega: f64, applied: f64) -> f64 {
        if omega.abs() < self.omega_eps {
            if applied.abs() <= self.tau_stiction {
                return applied;
            }
            return sign(applied) * self.tau_stiction + self.viscous * omega;
        }
        self.sliding_torque(omega)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// WIP accelerations with transmission friction on the wheel channel.
pub fn wip_accel_frictional(p: &WipParams, f: &FrictionParams, s: &PlanarState, tau: f64) -> WipAccel {
    wip_accel(p, s, effective_torque(f, s.phi_dot, tau))
}

/// Torque left after friction, `tau - tau_fric(phi_dot, tau)`.
pub fn effective_torque(f: &FrictionParams, phi_dot: f64, tau: f64) -> f64 {
    tau - f.torque(phi_dot, tau)
}

/// Yaw model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinParams {
    /// Lumped yaw inertia, kg m^2.
    pub inertia: f64,
    /// Viscous yaw friction, N m s/rad.
    pub viscous: f64,
    /// Coulomb yaw friction, N m.
    pub coulomb: f64,
}

impl SpinParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        require(self.inertia.is_finite() && self.inertia > 0.0, "inertia", "must be > 0")?;
        require(self.viscous.is_finite() && self.viscous >= 0.0, "viscous", "must be >= 0")?;
        require(self.coulomb.is_finite() && self.coulomb >= 0.0, "coulomb", "must be >= 0")?;
        Ok(())
    }

    /// The same inertia and viscous drag, no Coulomb term.
    pub fn viscous_only(&self) -> Self {
        Self { coulomb: 0.0, ..*self }
    }
}

/// Banded sign: linear inside `[-band, band]`, saturating at +-1 outside.
pub fn sign_band(omega: f64, band: f64) -> f64 {
    (omega / band).clamp(-1.0, 1.0)
}

/// Yaw acceleration `(tau_z - c_v w - c_c sgn(w)) / I_z`.
pub fn spin_accel(sp: &SpinParams, omega_z: f64, tau_z: f64) -> f64 {
    (tau_z - sp.viscous * omega_z - sp.coulomb * sign_band(omega_z, SPIN_SIGN_BAND)) / sp.inertia
}

/// Jacobians of the frictionless dynamics at the upright rest point,
/// state order `[theta, phi, theta_dot, phi_dot]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
}

pub fn linearize(p: &WipParams) -> LinearModel {
    let m = p.mass_matrix(0.0);
    let m_inv = m.try_inverse().expect("mass matrix is positive definite");
    let gravity_col = m_inv * Vector2::new(p.gravity_torque(), 0.0);
    let input_col = m_inv * Vector2::new(-1.0, 1.0);
    let mut a = Matrix4::zeros();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    a[(2, 0)] = gravity_col[0];
    a[(3, 0)] = gravity_col[1];
    let b = Vector4::new(0.0, 0.0, input_col[0], input_col[1]);
    LinearModel { a, b }
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<const N: usize, F>(deriv: F, s: &SVector<f64, N>, dt: f64) -> Result<SVector<f64, N>, DynamicsError>
where
    F: Fn(&SVector<f64, N>) -> SVector<f64, N>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let k1 = deriv(s);
    let k2 = deriv(&(s + k1 * (dt / 2.0)));
    let k3 = deriv(&(s + k2 * (dt / 2.0)));
    let k4 = deriv(&(s + k3 * dt));
    let next = s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(DynamicsError::NonFinite)
    }
}

/// Kinetic plus potential energy; the potential is zero at upright.
pub fn total_energy(p: &WipParams, s: &PlanarState) -> f64 {
    let kinetic = 0.5 * p.wheel_channel_inertia() * s.phi_dot * s.phi_dot
        + p.coupling() * s.theta.cos() * s.phi_dot * s.theta_dot
        + 0.5 * p.body_pivot_inertia() * s.theta_dot * s.theta_dot;
    kinetic + p.gravity_torque() * (s.theta.cos() - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn point_mass() -> WipParams {
        WipParams {
            body_mass: 1.0,
            wheel_mass: 1e-9,
            body_inertia: 0.0,
            wheel_inertia: 0.0,
            com_height: 1.0,
            wheel_radius: 1.0,
            gravity: 9.81,
        }
    }

    #[test]
    fn upright_rest_is_equilibrium() {
        for p in [WipParams::miapure(), WipParams::piptb()] {
            let a = wip_accel(&p, &PlanarState::REST, 0.0);
            assert_eq!(a, WipAccel::default());
        }
    }

    #[test]
    fn small_tilt_falls_away() {
        let a = wip_accel(&point_mass(), &PlanarState::new(0.01, 0.0, 0.0, 0.0), 0.0);
        assert!(a.theta_ddot > 0.0);
    }

    #[test]
    fn defaults_match_documented_values() {
        let p = WipParams::miapure();
        assert_relative_eq!(p.body_mass, 74.3, epsilon = 1e-12);
        assert_relative_eq!(p.wheel_radius, 0.1145, epsilon = 1e-12);
        assert_relative_eq!(p.wheel_inertia, 0.0315, epsilon = 1e-4);
        let q = WipParams::piptb();
        assert_relative_eq!(q.body_mass + q.wheel_mass, 15.6, epsilon = 1e-12);
        p.validate().unwrap();
        q.validate().unwrap();
    }

    #[test]
    fn rejects_non_positive_mass() {
        let p = WipParams {
            body_mass: 0.0,
            ..WipParams::miapure()
        };
        assert!(matches!(
            p.validate(),
            Err(DynamicsError::InvalidParameter { name: "body_mass", .. })
        ));
    }

    #[test]
    fn friction_absorbs_torque_below_breakaway() {
        let f = FrictionParams {
            tau_stiction: 3.0,
            tau_coulomb: 1.0,
            viscous: 0.1,
            omega_stribeck: 0.5,
            omega_eps: 1e-3,
        };
        let p = WipParams::piptb();
        let s = PlanarState::REST;
        assert_eq!(wip_accel_frictional(&p, &f, &s, 2.0), wip_accel(&p, &s, 0.0));
        // tilted body still falls while the wheel torque is absorbed
        let tilted = PlanarState::new(0.05, 0.0, 0.0, 0.0);
        let a = wip_accel_frictional(&p, &f, &tilted, 2.0);
        assert_eq!(a, wip_accel(&p, &tilted, 0.0));
        assert!(a.theta_ddot > 0.0);
    }

    #[test]
    fn breakaway_passes_the_excess() {
        let f = FrictionParams {
            tau_stiction: 3.0,
            tau_coulomb: 1.0,
            viscous: 0.0,
            omega_stribeck: 0.5,
            omega_eps: 1e-3,
        };
        assert_relative_eq!(effective_torque(&f, 0.0, 5.0), 2.0);
        assert_relative_eq!(effective_torque(&f, 0.0, -5.0), -2.0);
    }

    #[test]
    fn friction_off_matches_frictionless() {
        let f = FrictionParams::none();
        let p = WipParams::miapure();
        for (s, tau) in [
            (PlanarState::new(0.1, 0.3, -0.2, 1.5), 7.0),
            (PlanarState::REST, -3.0),
            (PlanarState::new(-0.2, 0.0, 0.4, 0.0), 0.0),
        ] {
            assert_eq!(wip_accel_frictional(&p, &f, &s, tau), wip_accel(&p, &s, tau));
        }
    }

    #[test]
    fn sliding_friction_law() {
        let f = FrictionParams {
            tau_stiction: 1.0,
            tau_coulomb: 1.0,
            viscous: 0.1,
            omega_stribeck: 0.1,
            omega_eps: 1e-3,
        };
        let s = PlanarState::new(0.0, 0.0, 0.0, 2.0);
        assert_relative_eq!(effective_torque(&f, s.phi_dot, 5.0), 3.8, epsilon = 1e-12);
        let p = WipParams::miapure();
        assert_eq!(wip_accel_frictional(&p, &f, &s, 5.0), wip_accel(&p, &s, 5.0 - 1.2));
    }

    #[test]
    fn spin_examples() {
        let free = SpinParams {
            inertia: 2.0,
            viscous: 0.0,
            coulomb: 0.0,
        };
        assert_eq!(spin_accel(&free, 0.0, 0.0), 0.0);
        assert_relative_eq!(spin_accel(&free, 1.0, 4.0), 2.0);
        let damped = SpinParams {
            inertia: 1.0,
            viscous: 0.5,
            coulomb: 0.2,
        };
        assert_relative_eq!(spin_accel(&damped, 2.0, 3.0), 1.8, epsilon = 1e-12);
        assert_eq!(spin_accel(&damped, 0.0, 0.0), 0.0);
    }

    #[test]
    fn linear_model_structure() {
        let lin = linearize(&WipParams::miapure());
        assert_eq!(lin.a.column(1).norm(), 0.0);
        let eig = lin.a.complex_eigenvalues();
        assert!(eig.iter().any(|e| e.re > 1e-3 && e.im.abs() < 1e-9));
    }

    #[test]
    fn rk4_rejects_bad_step_and_nan() {
        let s = SVector::<f64, 1>::new(1.0);
        assert_eq!(rk4_step(|x| -x, &s, 0.0), Err(DynamicsError::InvalidStep(0.0)));
        assert_eq!(rk4_step(|_| SVector::<f64, 1>::new(f64::NAN), &s, 0.1), Err(DynamicsError::NonFinite));
        assert_eq!(rk4_step(|_| SVector::<f64, 1>::zeros(), &s, 0.1).unwrap(), s);
    }

    #[test]
    fn rk4_exponential_decay() {
        let s = SVector::<f64, 1>::new(1.0);
        let next = rk4_step(|x| -x, &s, 0.1).unwrap();
        assert!((next[0] - (-0.1f64).exp()).abs() <= 1e-7);
        assert_relative_eq!(next[0], 0.9048375, epsilon = 1e-7);
    }

    #[test]
    fn energy_reference_points() {
        let p = WipParams::miapure();
        assert_eq!(total_energy(&p, &PlanarState::REST), 0.0);
        let hanging = WipParams {
            body_mass: 1.0,
            com_height: 1.0,
            gravity: 9.81,
            ..point_mass()
        };
        let e = total_energy(&hanging, &PlanarState::new(std::f64::consts::PI, 0.0, 0.0, 0.0));
        assert_relative_eq!(e, -19.62, epsilon = 1e-12);
    }
}
