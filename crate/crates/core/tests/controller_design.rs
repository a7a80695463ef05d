//! LQR design checks on the full four-state embedding and a few closed-loop
//! properties of the controller objects.

use ballbot_core::controllers::*;
use ballbot_core::dynamics::*;
use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use proptest::prelude::*;

fn full_residual(p: &WipParams, w: &LqrWeights, d: &LqrDesign) -> f64 {
    let lin = linearize(p);
    let a = DMatrix::from_column_slice(4, 4, lin.a.as_slice());
    let b = DVector::from_column_slice(lin.b.as_slice());
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&w.q_diag));
    // embed the reduced solution with a zero row and column for wheel position
    let idx = [0usize, 2, 3];
    let mut p4 = DMatrix::zeros(4, 4);
    for (i, &ri) in idx.iter().enumerate() {
        for (j, &rj) in idx.iter().enumerate() {
            p4[(ri, rj)] = d.care.p[(i, j)];
        }
    }
    care_residual(&a, &b, &q, w.r, &p4)
}

fn closed_loop_full(p: &WipParams, g: &LqrGains) -> Matrix4<f64> {
    let lin = linearize(p);
    lin.a - lin.b * Vector4::from(g.full()).transpose()
}

#[test]
fn riccati_residual_on_full_state() {
    for (p, w) in [
        (WipParams::miapure(), LqrWeights::default()),
        (
            WipParams::piptb(),
            LqrWeights {
                q_diag: [100.0, 0.0, 10.0, 10.0],
                r: 1.0,
            },
        ),
        (
            WipParams::miapure(),
            LqrWeights {
                q_diag: [100.0, 0.0, 10.0, 3000.0],
                r: 1.0,
            },
        ),
    ] {
        let d = design_lqr(&p, &w).unwrap();
        assert!(d.care.residual <= 1e-8, "reduced residual {:e}", d.care.residual);
        let r = full_residual(&p, &w, &d);
        assert!(r <= 1e-8, "full residual {r:e}");
    }
}

#[test]
fn closed_loop_is_stable_with_one_free_wheel_angle() {
    let p = WipParams::miapure();
    let d = design_lqr(&p, &LqrWeights::default()).unwrap();
    let eig = d.closed_loop_reduced().complex_eigenvalues();
    assert!(eig.iter().all(|e| e.re < 0.0), "{eig:?}");
    let eig4 = closed_loop_full(&p, &d.gains).complex_eigenvalues();
    let zeros = eig4.iter().filter(|e| e.norm() < 1e-9).count();
    assert_eq!(zeros, 1, "{eig4:?}");
    assert!(eig4.iter().filter(|e| e.norm() >= 1e-9).all(|e| e.re < 0.0));
}

#[test]
fn gains_resist_a_forward_fall() {
    // positive torque pushes the body back, so a forward lean must produce
    // positive torque: k_theta (0 - theta) > 0 for theta > 0
    let d = design_lqr(&WipParams::piptb(), &LqrWeights::default()).unwrap();
    let tau = lqr_torque(&d.gains, &CommandState::default(), &PlanarState::new(0.1, 0.0, 0.0, 0.0));
    assert!(tau > 0.0);
}

#[test]
fn lqr_pi_holds_outer_output_between_outer_ticks() {
    let p = WipParams::piptb();
    let g = design_lqr(&p, &LqrWeights::default()).unwrap().gains;
    let rates = Rates::default();
    assert_eq!(rates.ratio().unwrap(), 20);
    let mut c = PlanarController::lqr_pi(p, g, PiGains::with_torque_ceiling(0.0, 0.0, 10.0), rates, 10.0);
    c.outer_update(&CommandState::speed(2.0), &PlanarState::REST);
    let first = c.inner_update(0.0);
    for _ in 1..20 {
        assert_eq!(c.inner_update(0.0), first);
    }
}

#[test]
fn saturation_is_enforced() {
    let p = WipParams::piptb();
    let g = design_lqr(&p, &LqrWeights::default()).unwrap().gains;
    let mut c = PlanarController::lqr(g, 1.5);
    c.outer_update(&CommandState::default(), &PlanarState::new(0.3, 0.0, 1.0, 0.0));
    assert_eq!(c.inner_update(0.0), 1.5);
}

#[test]
fn yaw_design_is_stable() {
    let sp = SpinParams {
        inertia: 2.5,
        viscous: 0.5,
        coulomb: 0.2,
    };
    let (g, care) = design_yaw(&sp, &YawWeights::default()).unwrap();
    assert!(care.residual <= 1e-8);
    // closed loop of [angle, rate] under u = -k x
    let a = nalgebra::Matrix2::new(0.0, 1.0, -g.k_angle / sp.inertia, -(sp.viscous + g.k_rate) / sp.inertia);
    assert!(a.complex_eigenvalues().iter().all(|e| e.re < 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_positive_weights_stabilize(
        qt in 1.0..1e4f64, qr in 0.0..1e3f64, qw in 0.01..1e4f64, r in 0.01..100.0f64, piptb in any::<bool>(),
    ) {
        let p = if piptb { WipParams::piptb() } else { WipParams::miapure() };
        let w = LqrWeights { q_diag: [qt, 0.0, qr, qw], r };
        let d = design_lqr(&p, &w).unwrap();
        prop_assert!(d.care.residual <= 1e-8);
        prop_assert!(full_residual(&p, &w, &d) <= 1e-8);
        prop_assert!(d.closed_loop_reduced().complex_eigenvalues().iter().all(|e| e.re < 0.0));
    }
}
