//! Planar accelerations from a Lagrangian written in Cartesian positions and
//! differentiated exactly with hyper-dual numbers. Shares nothing with the
//! closed-form equations in `ballbot_core::dynamics`.

use ballbot_core::dynamics::{PlanarState, WipParams};
use nalgebra::{Matrix2, Vector2};
use std::ops::{Add, Mul, Sub};

/// `a + b e1 + c e2 + d e1 e2` with `e1^2 = e2^2 = 0`.
#[derive(Debug, Clone, Copy)]
struct HyperDual {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl HyperDual {
    fn constant(a: f64) -> Self {
        Self { a, b: 0.0, c: 0.0, d: 0.0 }
    }

    fn apply(self, f: f64, df: f64, ddf: f64) -> Self {
        Self {
            a: f,
            b: df * self.b,
            c: df * self.c,
            d: df * self.d + ddf * self.b * self.c,
        }
    }

    fn sin(self) -> Self {
        self.apply(self.a.sin(), self.a.cos(), -self.a.sin())
    }

    fn cos(self) -> Self {
        self.apply(self.a.cos(), -self.a.sin(), -self.a.cos())
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            a: self.a + o.a,
            b: self.b + o.b,
            c: self.c + o.c,
            d: self.d + o.d,
        }
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            a: self.a - o.a,
            b: self.b - o.b,
            c: self.c - o.c,
            d: self.d - o.d,
        }
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            a: self.a * o.a,
            b: self.a * o.b + self.b * o.a,
            c: self.a * o.c + self.c * o.a,
            d: self.a * o.d + self.b * o.c + self.c * o.b + self.d * o.a,
        }
    }
}

impl Mul<HyperDual> for f64 {
    type Output = HyperDual;
    fn mul(self, o: HyperDual) -> HyperDual {
        HyperDual::constant(self) * o
    }
}

/// Wheel center at `r phi`, body center of mass at
/// `(r phi + l sin theta, l cos theta)` above the axle.
fn lagrangian(p: &WipParams, x: [HyperDual; 4]) -> HyperDual {
    let [theta, _phi, theta_dot, phi_dot] = x;
    let (r, l) = (p.wheel_radius, p.com_height);
    let wheel_v = r * phi_dot;
    let body_vx = wheel_v + l * theta.cos() * theta_dot;
    let body_vz = -l * theta.sin() * theta_dot;
    let kinetic = 0.5 * p.wheel_mass * wheel_v * wheel_v
        + 0.5 * p.wheel_inertia * phi_dot * phi_dot
        + 0.5 * p.body_mass * (body_vx * body_vx + body_vz * body_vz)
        + 0.5 * p.body_inertia * theta_dot * theta_dot;
    let potential = (p.body_mass * p.gravity * l) * theta.cos();
    kinetic - potential
}

fn second_partial(p: &WipParams, at: [f64; 4], i: usize, j: usize) -> f64 {
    let mut x = at.map(HyperDual::constant);
    x[i].b = 1.0;
    x[j].c = 1.0;
    lagrangian(p, x).d
}

fn first_partial(p: &WipParams, at: [f64; 4], i: usize) -> f64 {
    let mut x = at.map(HyperDual::constant);
    x[i].b = 1.0;
    lagrangian(p, x).b
}

/// `[theta_ddot, phi_ddot]` from `H qdd + C qd - dL/dq = (-tau, tau)`.
pub fn accel(p: &WipParams, s: &PlanarState, tau: f64) -> Vector2<f64> {
    let at = [s.theta, s.phi, s.theta_dot, s.phi_dot];
    let qd = Vector2::new(s.theta_dot, s.phi_dot);
    let h = Matrix2::from_fn(|i, j| second_partial(p, at, i + 2, j + 2));
    let c = Matrix2::from_fn(|i, j| second_partial(p, at, i + 2, j));
    let dl = Vector2::new(first_partial(p, at, 0), first_partial(p, at, 1));
    let q = Vector2::new(-tau, tau);
    h.lu().solve(&(q + dl - c * qd)).unwrap_or_else(|| Vector2::repeat(f64::NAN))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hanging_still_pendulum_does_not_move() {
        let p = WipParams::piptb();
        let a = accel(&p, &PlanarState::new(0.0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(a, Vector2::zeros());
    }
}
