//! Conversions between the planar models and the three omniwheel motors,
//! and quasi-static contact analysis at the omniwheel/sphere contacts.
//!
//! Body frame: `z` up along the body axis, `x` pointing at omniwheel 1.
//! Omniwheel `i` touches the sphere at colatitude `alpha` and azimuth
//! `gamma_i`; its drive direction at the contact is horizontal and tangent to
//! the latitude circle. The sagittal (`y`) plane model translates along `+x`,
//! the frontal (`x`) plane model along `+y`, so heading `h` (measured from the
//! omniwheel 1 axis toward omniwheel 2) decomposes as
//! `phi_dot_y = v cos(h) / r_s` and `phi_dot_x = v sin(h) / r_s`.
//!
//! Motors see the sphere's rotation relative to the body, so the speed map
//! acts on the relative planar rates `(phi_dot_x - theta_dot_x,
//! phi_dot_y - theta_dot_y, theta_dot_z)`. The torque map is its transpose
//! inverse, which makes planar power equal motor power.

use nalgebra::{Matrix3, Matrix4x3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Largest accepted condition number of the speed map.
pub const MAX_CONDITION: f64 = 1e6;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("speed map is singular (condition number {0:.3e})")]
    Singular(f64),
    #[error("contact separation at omniwheel {index}: normal force {normal:.3} N")]
    ContactSeparation { index: usize, normal: f64 },
    #[error("supported mass must be positive, got {0}")]
    InvalidLoad(f64),
}

/// Omniwheel and sphere geometry. Angles in radians; the config layer also
/// accepts `*_deg` keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryConfig")]
pub struct DrivetrainGeometry {
    pub sphere_radius: f64,
    pub omniwheel_radius: f64,
    pub contact_angle: f64,
    pub azimuths: [f64; 3],
    pub gear_ratio: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryConfig {
    sphere_radius: f64,
    omniwheel_radius: f64,
    contact_angle: Option<f64>,
    contact_angle_deg: Option<f64>,
    azimuths: Option<[f64; 3]>,
    azimuths_deg: Option<[f64; 3]>,
    gear_ratio: f64,
}

impl TryFrom<GeometryConfig> for DrivetrainGeometry {
    type Error = String;

    fn try_from(c: GeometryConfig) -> Result<Self, String> {
        let contact_angle = match (c.contact_angle, c.contact_angle_deg) {
            (Some(r), None) => r,
            (None, Some(d)) => d.to_radians(),
            (None, None) => return Err("missing contact_angle (or contact_angle_deg)".into()),
            (Some(_), Some(_)) => return Err("give contact_angle or contact_angle_deg, not both".into()),
        };
        let azimuths = match (c.azimuths, c.azimuths_deg) {
            (Some(r), None) => r,
            (None, Some(d)) => d.map(f64::to_radians),
            (None, None) => DrivetrainGeometry::default().azimuths,
            (Some(_), Some(_)) => return Err("give azimuths or azimuths_deg, not both".into()),
        };
        let g = DrivetrainGeometry {
            sphere_radius: c.sphere_radius,
            omniwheel_radius: c.omniwheel_radius,
            contact_angle,
            azimuths,
            gear_ratio: c.gear_ratio,
        };
        g.validate().map_err(|e| e.to_string())?;
        Ok(g)
    }
}

impl Default for DrivetrainGeometry {
    fn default() -> Self {
        Self {
            sphere_radius: 0.229 / 2.0,
            omniwheel_radius: 0.125 / 2.0,
            contact_angle: PI / 4.0,
            azimuths: [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0],
            gear_ratio: 7.5,
        }
    }
}

impl DrivetrainGeometry {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let bad = |m: &str| Err(KinematicsError::InvalidGeometry(m.to_string()));
        if !(self.sphere_radius > 0.0 && self.sphere_radius.is_finite()) {
            return bad("sphere_radius must be > 0");
        }
        if !(self.omniwheel_radius > 0.0 && self.omniwheel_radius.is_finite()) {
            return bad("omniwheel_radius must be > 0");
        }
        if !(self.gear_ratio > 0.0 && self.gear_ratio.is_finite()) {
            return bad("gear_ratio must be > 0");
        }
        if !(self.contact_angle > 0.0 && self.contact_angle < PI / 2.0) {
            return bad("contact_angle must lie in (0, pi/2)");
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                let d = (self.azimuths[i] - self.azimuths[j]).rem_euclid(2.0 * PI);
                if d < 1e-9 || 2.0 * PI - d < 1e-9 {
                    return bad("omniwheel azimuths must be pairwise distinct");
                }
            }
        }
        let cond = condition_number(&self.raw_speed_map());
        if !(cond <= MAX_CONDITION) {
            return Err(KinematicsError::Singular(cond));
        }
        Ok(())
    }

    /// Contact point of omniwheel `i` on the sphere, body frame, m.
    pub fn contact_point(&self, i: usize) -> Vector3<f64> {
        let (sa, ca) = self.contact_angle.sin_cos();
        let (sg, cg) = self.azimuths[i].sin_cos();
        self.sphere_radius * Vector3::new(sa * cg, sa * sg, ca)
    }

    /// Outward unit normal of the sphere at contact `i`.
    pub fn contact_normal(&self, i: usize) -> Vector3<f64> {
        self.contact_point(i) / self.sphere_radius
    }

    /// Horizontal drive direction of omniwheel `i` at its contact.
    pub fn drive_direction(&self, i: usize) -> Vector3<f64> {
        let (sg, cg) = self.azimuths[i].sin_cos();
        Vector3::new(-sg, cg, 0.0)
    }

    fn raw_speed_map(&self) -> Matrix3<f64> {
        // Sphere angular velocity relative to the body, from relative planar
        // rates: sagittal rolling turns the sphere about +y, frontal rolling
        // about -x, and a body yaw rate is a sphere yaw of the opposite sign.
        let planar_to_omega = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0));
        let mut jac = Matrix3::zeros();
        for i in 0..3 {
            // Surface speed along the drive direction is d . (w x c) = w . (c x d);
            // motor speed is positive when the omniwheel turns the body in +yaw.
            let row = -self.contact_point(i).cross(&self.drive_direction(i)) * (self.gear_ratio / self.omniwheel_radius);
            jac.set_row(i, &row.transpose());
        }
        jac * planar_to_omega
    }

    /// Precomputed forward and inverse maps; fails for singular geometry.
    pub fn maps(&self) -> Result<ConversionMaps, KinematicsError> {
        self.validate()?;
        let speed = self.raw_speed_map();
        let speed_inv = speed.try_inverse().ok_or(KinematicsError::Singular(f64::INFINITY))?;
        Ok(ConversionMaps {
            geometry: *self,
            speed,
            speed_inv,
        })
    }
}

fn condition_number(m: &Matrix3<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Arguments of the speed map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanarRates {
    pub phi_dot_x: f64,
    pub phi_dot_y: f64,
    pub theta_dot_x: f64,
    pub theta_dot_y: f64,
    pub theta_dot_z: f64,
}

impl PlanarRates {
    fn relative(&self) -> Vector3<f64> {
        Vector3::new(
            self.phi_dot_x - self.theta_dot_x,
            self.phi_dot_y - self.theta_dot_y,
            self.theta_dot_z,
        )
    }
}

/// Planar torques on the sphere: frontal, sagittal and yaw, N m.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanarTorques {
    pub tau_x: f64,
    pub tau_y: f64,
    pub tau_z: f64,
}

impl PlanarTorques {
    pub fn new(tau_x: f64, tau_y: f64, tau_z: f64) -> Self {
        Self { tau_x, tau_y, tau_z }
    }

    fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.tau_x, self.tau_y, self.tau_z)
    }
}

/// One value per motor, omniwheel 1 first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MotorVector(pub [f64; 3]);

impl MotorVector {
    pub fn splat(v: f64) -> Self {
        Self([v; 3])
    }

    fn to_vector(self) -> Vector3<f64> {
        Vector3::from(self.0)
    }

    fn from_vector(v: Vector3<f64>) -> Self {
        Self([v[0], v[1], v[2]])
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.map(f))
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }
}

impl std::ops::Index<usize> for MotorVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for MotorVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Planar rates recovered from motor speeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatesEstimate {
    pub rates: PlanarRates,
    /// Norm of the least-squares misfit; zero when the measurements are
    /// mutually consistent.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversionMaps {
    geometry: DrivetrainGeometry,
    speed: Matrix3<f64>,
    speed_inv: Matrix3<f64>,
}

impl ConversionMaps {
    pub fn geometry(&self) -> &DrivetrainGeometry {
        &self.geometry
    }

    /// Matrix from relative planar rates to motor speeds.
    pub fn speed_matrix(&self) -> &Matrix3<f64> {
        &self.speed
    }

    pub fn motor_speeds(&self, pr: &PlanarRates) -> MotorVector {
        MotorVector::from_vector(self.speed * pr.relative())
    }

    pub fn motor_torques(&self, t: &PlanarTorques) -> MotorVector {
        // u = V^-T tau
        MotorVector::from_vector(self.speed_inv.transpose() * t.to_vector())
    }

    pub fn planar_torques(&self, u: &MotorVector) -> PlanarTorques {
        let t = self.speed.transpose() * u.to_vector();
        PlanarTorques::new(t[0], t[1], t[2])
    }

    /// Inverts the speed map given the body tilt rates `(theta_dot_x,
    /// theta_dot_y)`. With a yaw-rate measurement the system is
    /// overdetermined and solved in the least-squares sense.
    pub fn planar_rates(&self, psi_dot: &MotorVector, tilt_rates: (f64, f64), yaw_rate: Option<f64>) -> RatesEstimate {
        let rel = match yaw_rate {
            None => self.speed_inv * psi_dot.to_vector(),
            Some(wz) => {
                let mut a = Matrix4x3::zeros();
                a.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.speed);
                // weight the yaw row like one motor row so units stay comparable
                let w = self.speed.row(0).norm();
                a[(3, 2)] = w;
                let b = Vector4::new(psi_dot[0], psi_dot[1], psi_dot[2], w * wz);
                let ata = a.transpose() * a;
                let atb = a.transpose() * b;
                ata.cholesky().expect("normal matrix is positive definite").solve(&atb)
            }
        };
        let rates = PlanarRates {
            phi_dot_x: rel[0] + tilt_rates.0,
            phi_dot_y: rel[1] + tilt_rates.1,
            theta_dot_x: tilt_rates.0,
            theta_dot_y: tilt_rates.1,
            theta_dot_z: rel[2],
        };
        let mut residual = (self.speed * rel - psi_dot.to_vector()).norm_squared();
        if let Some(wz) = yaw_rate {
            let w = self.speed.row(0).norm();
            residual += (w * (rel[2] - wz)).powi(2);
        }
        RatesEstimate {
            rates,
            residual: residual.sqrt(),
        }
    }

    /// Tangential force each omniwheel exerts at its contact for the given
    /// motor torques, N.
    pub fn tangential_forces(&self, u: &MotorVector) -> [f64; 3] {
        let g = &self.geometry;
        u.0.map(|ui| ui * g.gear_ratio / g.omniwheel_radius)
    }

    /// Quasi-static contact analysis; see [`contact_forces`].
    pub fn contact_forces(
        &self,
        supported_mass: f64,
        tilt: (f64, f64),
        motor_torques: &MotorVector,
        mu: f64,
    ) -> Result<ContactReport, KinematicsError> {
        if !(supported_mass > 0.0 && supported_mass.is_finite()) {
            return Err(KinematicsError::InvalidLoad(supported_mass));
        }
        let g = &self.geometry;
        let weight = supported_mass * STANDARD_GRAVITY;
        let (sa, ca) = g.contact_angle.sin_cos();
        // The load line runs along the leaning body axis through the sphere
        // center and pierces the contact plane at this offset.
        let height = g.sphere_radius * ca;
        let offset = (height * tilt.1.tan(), height * tilt.0.tan());
        let ring = g.sphere_radius * sa;
        let mut a = Matrix3::zeros();
        for i in 0..3 {
            let (sg, cg) = g.azimuths[i].sin_cos();
            a[(0, i)] = 1.0;
            a[(1, i)] = ring * cg;
            a[(2, i)] = ring * sg;
        }
        let rhs = Vector3::new(weight, weight * offset.0, weight * offset.1);
        let vertical = a
            .lu()
            .solve(&rhs)
            .ok_or(KinematicsError::Singular(f64::INFINITY))?;
        let normal = [vertical[0] / ca, vertical[1] / ca, vertical[2] / ca];
        for (index, &n) in normal.iter().enumerate() {
            if n < 0.0 {
                return Err(KinematicsError::ContactSeparation { index, normal: n });
            }
        }
        let tangential = self.tangential_forces(motor_torques);
        let mut margin = [0.0; 3];
        let mut slip = [false; 3];
        for i in 0..3 {
            margin[i] = if mu.is_infinite() {
                f64::INFINITY
            } else {
                mu * normal[i] - tangential[i].abs()
            };
            slip[i] = margin[i] < 0.0;
        }
        Ok(ContactReport {
            normal,
            tangential,
            margin,
            slip,
        })
    }
}

/// Per-omniwheel contact loads and friction-cone margins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub normal: [f64; 3],
    pub tangential: [f64; 3],
    pub margin: [f64; 3],
    pub slip: [bool; 3],
}

impl ContactReport {
    pub fn any_slip(&self) -> bool {
        self.slip.iter().any(|&s| s)
    }

    pub fn min_margin(&self) -> f64 {
        self.margin.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn motor_speeds_from_planar(g: &DrivetrainGeometry, pr: &PlanarRates) -> Result<MotorVector, KinematicsError> {
    Ok(g.maps()?.motor_speeds(pr))
}

pub fn motor_torques_from_planar(g: &DrivetrainGeometry, t: &PlanarTorques) -> Result<MotorVector, KinematicsError> {
    Ok(g.maps()?.motor_torques(t))
}

pub fn planar_rates_from_motor(
    g: &DrivetrainGeometry,
    psi_dot: &MotorVector,
    tilt_rates: (f64, f64),
    yaw_rate: Option<f64>,
) -> Result<RatesEstimate, KinematicsError> {
    Ok(g.maps()?.planar_rates(psi_dot, tilt_rates, yaw_rate))
}

pub fn planar_torques_from_motor(g: &DrivetrainGeometry, u: &MotorVector) -> Result<PlanarTorques, KinematicsError> {
    Ok(g.maps()?.planar_torques(u))
}

/// Rigid three-contact load sharing: the supported weight splits over the
/// contacts like a tripod, with the load line following the body lean
/// `(theta_x, theta_y)`. Drive reactions enter as tangential loads
/// `gear_ratio * u_i / r_o` only.
pub fn contact_forces(
    g: &DrivetrainGeometry,
    supported_mass: f64,
    tilt: (f64, f64),
    motor_torques: &MotorVector,
    mu: f64,
) -> Result<ContactReport, KinematicsError> {
    g.maps()?.contact_forces(supported_mass, tilt, motor_torques, mu)
}

/// Heading decomposition of a translation speed into planar wheel rates
/// `(phi_dot_x, phi_dot_y)`.
pub fn heading_rates(speed: f64, heading: f64, sphere_radius: f64) -> (f64, f64) {
    let (s, c) = heading.sin_cos();
    (speed * s / sphere_radius, speed * c / sphere_radius)
}
