//! Conversion-map properties: round trips, power conservation, the 120 degree
//! cyclic symmetry of the omniwheel layout and contact-load trends.

use ballbot_core::kinematics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn maps() -> ConversionMaps {
    DrivetrainGeometry::default().maps().unwrap()
}

fn random_rates(rng: &mut ChaCha8Rng) -> PlanarRates {
    PlanarRates {
        phi_dot_x: rng.random_range(-30.0..30.0),
        phi_dot_y: rng.random_range(-30.0..30.0),
        theta_dot_x: rng.random_range(-3.0..3.0),
        theta_dot_y: rng.random_range(-3.0..3.0),
        theta_dot_z: rng.random_range(-5.0..5.0),
    }
}

fn rel_close(a: f64, b: f64, scale: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * scale.max(1.0)
}

#[test]
fn speed_round_trip_is_identity() {
    let m = maps();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let r = random_rates(&mut rng);
        let psi = m.motor_speeds(&r);
        let back = m.planar_rates(&psi, (r.theta_dot_x, r.theta_dot_y), None);
        let scale = [r.phi_dot_x, r.phi_dot_y, r.theta_dot_z].map(f64::abs).into_iter().fold(1.0, f64::max);
        assert!(rel_close(back.rates.phi_dot_x, r.phi_dot_x, scale, 1e-12));
        assert!(rel_close(back.rates.phi_dot_y, r.phi_dot_y, scale, 1e-12));
        assert!(rel_close(back.rates.theta_dot_z, r.theta_dot_z, scale, 1e-12));
        assert!(back.residual <= 1e-9 * psi.iter().fold(1.0f64, |a, v| a.max(v.abs())));
    }
}

#[test]
fn torque_round_trip_is_identity() {
    let m = maps();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let t = PlanarTorques::new(
            rng.random_range(-60.0..60.0),
            rng.random_range(-60.0..60.0),
            rng.random_range(-10.0..10.0),
        );
        let back = m.planar_torques(&m.motor_torques(&t));
        let scale = t.tau_x.abs().max(t.tau_y.abs()).max(t.tau_z.abs());
        assert!(rel_close(back.tau_x, t.tau_x, scale, 1e-12));
        assert!(rel_close(back.tau_y, t.tau_y, scale, 1e-12));
        assert!(rel_close(back.tau_z, t.tau_z, scale, 1e-12));
    }
}

#[test]
fn planar_and_motor_power_agree() {
    let m = maps();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let r = random_rates(&mut rng);
        let t = PlanarTorques::new(
            rng.random_range(-60.0..60.0),
            rng.random_range(-60.0..60.0),
            rng.random_range(-10.0..10.0),
        );
        let planar = t.tau_x * (r.phi_dot_x - r.theta_dot_x)
            + t.tau_y * (r.phi_dot_y - r.theta_dot_y)
            + t.tau_z * r.theta_dot_z;
        let u = m.motor_torques(&t);
        let psi = m.motor_speeds(&r);
        let motor: f64 = u.iter().zip(psi.iter()).map(|(a, b)| a * b).sum();
        let scale = u.iter().zip(psi.iter()).map(|(a, b)| (a * b).abs()).sum::<f64>();
        assert!((planar - motor).abs() <= 1e-9 * scale, "{planar} vs {motor}");
    }
}

/// Rotating a translation by the omniwheel spacing hands each omniwheel's
/// job to its neighbour.
#[test]
fn translations_have_cyclic_symmetry() {
    let m = maps();
    let (s, c) = (2.0 * PI / 3.0).sin_cos();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..1000 {
        let r = random_rates(&mut rng);
        // relative rolling rates as a translation direction in the body plane
        let (vx, vy) = (r.phi_dot_y - r.theta_dot_y, r.phi_dot_x - r.theta_dot_x);
        let rotated = PlanarRates {
            phi_dot_y: c * vx - s * vy,
            phi_dot_x: s * vx + c * vy,
            theta_dot_x: 0.0,
            theta_dot_y: 0.0,
            theta_dot_z: r.theta_dot_z,
        };
        let a = m.motor_speeds(&r);
        let b = m.motor_speeds(&rotated);
        let scale = a.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        for i in 0..3 {
            assert!(
                (b[(i + 1) % 3] - a[i]).abs() <= 1e-12 * scale,
                "motor {i}: {} vs {}",
                b[(i + 1) % 3],
                a[i]
            );
        }
    }
}

#[test]
fn heading_decomposition_matches_body_axes() {
    let r_s = DrivetrainGeometry::default().sphere_radius;
    let (px, py) = heading_rates(1.0, 0.0, r_s);
    assert_eq!(px, 0.0);
    assert!((py - 1.0 / r_s).abs() < 1e-15);
    let (px, py) = heading_rates(1.0, PI / 2.0, r_s);
    assert!((px - 1.0 / r_s).abs() < 1e-15 && py.abs() < 1e-12);
}

#[test]
fn margin_shrinks_with_forward_lean_toward_omniwheel_one() {
    let m = maps();
    // sagittal drive torque as used when accelerating at heading 0
    let u = m.motor_torques(&PlanarTorques::new(0.0, 20.0, 0.0));
    let mut last = f64::INFINITY;
    let mut checked = 0;
    for k in 0..=30 {
        let lean = 0.01 * k as f64;
        let report = match m.contact_forces(74.3, (0.0, lean), &u, 0.8) {
            Ok(r) => r,
            Err(KinematicsError::ContactSeparation { .. }) => break,
            Err(e) => panic!("{e}"),
        };
        let margin = report.min_margin();
        assert!(margin < last, "lean {lean}: {margin} !< {last}");
        last = margin;
        checked += 1;
    }
    assert!(checked >= 10, "separated after {checked} samples");
}

fn geometry() -> impl Strategy<Value = DrivetrainGeometry> {
    (0.08..0.3f64, 0.02..0.08f64, 0.3..1.2f64, 1.0..20.0f64).prop_map(|(rs, ro, alpha, gear)| DrivetrainGeometry {
        sphere_radius: rs,
        omniwheel_radius: ro,
        contact_angle: alpha,
        azimuths: [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0],
        gear_ratio: gear,
    })
}

proptest! {
    #[test]
    fn power_is_conserved_for_any_valid_geometry(
        g in geometry(),
        rx in -20.0..20.0f64, ry in -20.0..20.0f64, rz in -5.0..5.0f64,
        tx in -50.0..50.0f64, ty in -50.0..50.0f64, tz in -5.0..5.0f64,
    ) {
        let m = g.maps().unwrap();
        let r = PlanarRates { phi_dot_x: rx, phi_dot_y: ry, theta_dot_z: rz, ..Default::default() };
        let t = PlanarTorques::new(tx, ty, tz);
        let planar = tx * rx + ty * ry + tz * rz;
        let u = m.motor_torques(&t);
        let psi = m.motor_speeds(&r);
        let motor: f64 = u.iter().zip(psi.iter()).map(|(a, b)| a * b).sum();
        let scale: f64 = u.iter().zip(psi.iter()).map(|(a, b)| (a * b).abs()).sum::<f64>().max(1e-9);
        prop_assert!((planar - motor).abs() <= 1e-9 * scale);
    }

    #[test]
    fn upright_loads_sum_to_the_weight(mass in 1.0..200.0f64) {
        let m = maps();
        let report = m.contact_forces(mass, (0.0, 0.0), &MotorVector::default(), 0.8).unwrap();
        let alpha = DrivetrainGeometry::default().contact_angle;
        let vertical: f64 = report.normal.iter().map(|n| n * alpha.cos()).sum();
        prop_assert!((vertical - mass * STANDARD_GRAVITY).abs() <= 1e-9 * mass * STANDARD_GRAVITY);
        prop_assert!(!report.any_slip());
    }

    #[test]
    fn infinite_friction_never_slips(lx in -0.2..0.2f64, ly in -0.2..0.2f64, t in -100.0..100.0f64) {
        let m = maps();
        let u = m.motor_torques(&PlanarTorques::new(t, -t, 0.5 * t));
        if let Ok(report) = m.contact_forces(74.3, (lx, ly), &u, f64::INFINITY) {
            prop_assert!(!report.any_slip());
        }
    }
}
