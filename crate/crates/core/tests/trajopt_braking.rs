//! Braking optimization on the full-scale plant: feasibility, the
//! non-minimum-phase signatures, mesh refinement and open-loop rollouts.

use ballbot_core::dynamics::*;
use ballbot_core::trajopt::*;
use nalgebra::{DVector, Vector4};
use proptest::prelude::*;
use std::sync::OnceLock;

fn task() -> BrakingTask {
    BrakingTask::new(1.4, 2.0)
}

fn solved(n: usize) -> &'static (Trajectory, SolveReport) {
    static N50: OnceLock<(Trajectory, SolveReport)> = OnceLock::new();
    static N100: OnceLock<(Trajectory, SolveReport)> = OnceLock::new();
    static N200: OnceLock<(Trajectory, SolveReport)> = OnceLock::new();
    let cell = match n {
        50 => &N50,
        100 => &N100,
        200 => &N200,
        _ => unreachable!(),
    };
    cell.get_or_init(|| optimize_braking(&WipParams::miapure(), &task(), n, &SolveOptions::default()).unwrap())
}

#[test]
fn solution_is_feasible() {
    let p = WipParams::miapure();
    for n in [50, 100] {
        let (traj, report) = solved(n);
        assert!(report.converged);
        let nlp = transcribe(&p, &task(), n).unwrap();
        let z = nlp.pack(traj).unwrap();
        assert!(nlp.defects(&z).amax() <= 1e-6);
        let first = traj.states[0];
        let last = traj.states[n - 1];
        let v0 = 1.4 / p.wheel_radius;
        for (got, want) in [
            (first.theta, 0.0),
            (first.theta_dot, 0.0),
            (first.phi_dot, v0),
            (last.theta, 0.0),
            (last.theta_dot, 0.0),
            (last.phi_dot, 0.0),
        ] {
            assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
        }
    }
}

#[test]
fn solution_shows_braking_signatures() {
    let p = WipParams::miapure();
    let (traj, _) = solved(50);
    assert!(traj.min_theta() < -0.005, "no backward lean: {}", traj.min_theta());
    assert!(traj.max_speed(p.wheel_radius) > 1.4, "no overshoot: {}", traj.max_speed(p.wheel_radius));
    let spans = negative_power_span(traj);
    assert!(!spans.is_empty());
    assert!(spans.iter().all(|(a, b)| b > a));
}

#[test]
fn cost_is_stable_under_knot_doubling() {
    let j50 = solved(50).1.objective;
    let j100 = solved(100).1.objective;
    assert!((j50 - j100).abs() / j100 <= 0.01, "{j50} vs {j100}");
    assert!((objective_value(&solved(100).0) - j100).abs() <= 1e-9 * j100);
}

/// Largest state deviation of an RK4 rollout of the frictionless plant
/// driven open loop by the interpolated torque. The upright plant is
/// unstable, so the rollout restarts from the knot state every `window`
/// seconds; within a window the error accumulates like a global error.
fn rollout_error(traj: &Trajectory, p: &WipParams, window: f64) -> f64 {
    let sub = 50;
    let mut x = traj.states[0].to_vector();
    let mut worst = 0.0f64;
    let mut restart = traj.times[0];
    for k in 0..traj.len() - 1 {
        if traj.times[k] - restart >= window - 1e-9 {
            x = traj.states[k].to_vector();
            restart = traj.times[k];
        }
        let (t0, t1) = (traj.times[k], traj.times[k + 1]);
        let dt = (t1 - t0) / sub as f64;
        for i in 0..sub {
            let t = t0 + i as f64 * dt;
            // linear torque over each RK4 stage
            let tau = |s: f64| traj.sample(s).1;
            let f = |x: &Vector4<f64>, tau: f64| wip_derivative(p, &PlanarState::from_vector(x), tau);
            let k1 = f(&x, tau(t));
            let k2 = f(&(x + k1 * (dt / 2.0)), tau(t + dt / 2.0));
            let k3 = f(&(x + k2 * (dt / 2.0)), tau(t + dt / 2.0));
            let k4 = f(&(x + k3 * dt), tau(t + dt));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        let knot = traj.states[k + 1];
        worst = worst
            .max((x[0] - knot.theta).abs())
            .max((x[2] - knot.theta_dot).abs())
            .max((x[3] - knot.phi_dot).abs() * p.wheel_radius);
    }
    worst
}

#[test]
fn open_loop_rollout_converges_at_second_order() {
    let p = WipParams::miapure();
    let e50 = rollout_error(&solved(50).0, &p, 0.5);
    let e100 = rollout_error(&solved(100).0, &p, 0.5);
    let e200 = rollout_error(&solved(200).0, &p, 0.5);
    // halving h should cut the error about fourfold
    assert!(e50 / e100 > 3.0, "{e50:e} / {e100:e}");
    assert!(e100 / e200 > 3.0, "{e100:e} / {e200:e}");
}

#[test]
fn perturbed_restart_finds_the_same_minimum() {
    let p = WipParams::miapure();
    let (traj, report) = solved(50);
    let nlp = transcribe(&p, &task(), 50).unwrap();
    let mut z = nlp.pack(traj).unwrap();
    // deterministic wiggle on the interior torques and rates
    for (i, v) in z.iter_mut().enumerate() {
        *v += 0.02 * ((i as f64) * 0.7).sin();
    }
    let start = nlp.unpack(&z);
    let (_, again) = solve(&nlp, &start, &SolveOptions::default()).unwrap();
    assert!((again.objective - report.objective).abs() <= 1e-4 * report.objective);
}

#[test]
fn no_nearby_feasible_point_is_cheaper() {
    // Directions in the null space of the constraint Jacobian stay feasible
    // to first order; along them the cost must not drop.
    let p = WipParams::miapure();
    let (traj, _) = solved(50);
    let nlp = transcribe(&p, &task(), 50).unwrap();
    let z = nlp.pack(traj).unwrap();
    let jac = nlp.equality_jacobian(&z);
    let gram = (&jac * jac.transpose()).cholesky().unwrap();
    let j0 = nlp.objective(&z);
    for seed in 0..20 {
        let raw = DVector::from_fn(nlp.n_vars(), |i, _| ((i * 31 + seed * 17) as f64 * 0.37).sin());
        let dir = &raw - jac.transpose() * gram.solve(&(&jac * &raw));
        let dir = dir.normalize();
        for eps in [1e-3, -1e-3] {
            let zz = &z + &dir * eps;
            assert!(nlp.objective(&zz) >= j0 - 1e-6 * j0, "seed {seed} eps {eps}");
        }
    }
}

#[test]
fn one_iteration_budget_reports_no_convergence() {
    let opts = SolveOptions {
        max_iter: 1,
        ..Default::default()
    };
    match optimize_braking(&WipParams::miapure(), &task(), 50, &opts) {
        Err(TrajoptError::NoConvergence { best, report }) => {
            assert!(!report.converged);
            assert_eq!(best.len(), 50);
        }
        other => panic!("expected NoConvergence, got {other:?}"),
    }
}

#[test]
fn rest_task_costs_nothing() {
    let (traj, report) = optimize_braking(&WipParams::piptb(), &BrakingTask::new(0.0, 1.0), 20, &SolveOptions::default()).unwrap();
    assert!(report.objective <= 1e-12);
    assert!(traj.torques.iter().all(|t| t.abs() <= 1e-9));
}

#[test]
fn shorter_brakes_cost_more() {
    let p = WipParams::piptb();
    let cost = |d: f64| optimize_braking(&p, &BrakingTask::new(1.0, d), 40, &SolveOptions::default()).unwrap().1.objective;
    let (a, b, c) = (cost(2.0), cost(1.4), cost(1.0));
    assert!(a < b && b < c, "{a} {b} {c}");
}

#[test]
fn defect_jacobian_matches_finite_differences() {
    let p = WipParams::piptb();
    let nlp = transcribe(&p, &BrakingTask::new(1.0, 1.4), 12).unwrap();
    let mut z = nlp.pack(&nlp.initial_guess()).unwrap();
    for (i, v) in z.iter_mut().enumerate() {
        *v += 0.05 * ((i as f64) * 1.3).cos();
    }
    let jac = nlp.equality_jacobian(&z);
    let h = 1e-6;
    for j in 0..nlp.n_vars() {
        let mut hi = z.clone();
        let mut lo = z.clone();
        hi[j] += h;
        lo[j] -= h;
        let col = (nlp.defects(&hi) - nlp.defects(&lo)) / (2.0 * h);
        for i in 0..nlp.n_defects() {
            assert!((jac[(i, j)] - col[i]).abs() <= 1e-6 * col[i].abs().max(1.0), "({i},{j})");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trip_is_lossless(
        n in 2usize..30,
        seed in proptest::collection::vec(-10.0..10.0f64, 150),
    ) {
        let times: Vec<f64> = (0..n).map(|k| 0.1 * k as f64).collect();
        let states = (0..n).map(|k| PlanarState::new(seed[5 * k], seed[5 * k + 1], seed[5 * k + 2], seed[5 * k + 3])).collect();
        let torques = (0..n).map(|k| seed[5 * k + 4]).collect();
        let traj = Trajectory::new(times, states, torques).unwrap();
        let back = Trajectory::from_csv(&traj.to_csv()).unwrap();
        prop_assert_eq!(back, traj);
    }
}
