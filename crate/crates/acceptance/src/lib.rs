//! One check per acceptance criterion. Each returns a [`Verdict`] with the
//! measured numbers in `detail`, so a failing line says by how much.

pub mod oracle;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ballbot_core::config::LabConfig;
use ballbot_core::controllers::{care_residual, design_lqr, ControllerKind, LqrWeights};
use ballbot_core::dynamics::{linearize, rk4_step, total_energy, wip_accel, wip_derivative, PlanarState, WipParams};
use ballbot_core::harness::{
    braking_succeeded, compare_controllers, max_speed_ramp, min_braking_search, run_scenario, RampSettings, RunStatus,
};
use ballbot_core::kinematics::{DrivetrainGeometry, KinematicsError, PlanarRates, PlanarTorques};
use ballbot_core::trajopt::{negative_power_span, optimize_braking, transcribe, BrakingTask, SolveOptions};
use ballbot_service::clock::TokioClock;
use ballbot_service::engine::{replay, SessionEngine};
use ballbot_service::protocol::{ClientMessage, Command, Control, ControlAction, Push, SessionStatus};
use ballbot_service::session::Session;
use nalgebra::{DMatrix, DVector, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Verdict {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        Self { name, pass, detail }
    }

    fn error(name: &'static str, e: impl fmt::Display) -> Self {
        Self::new(name, false, format!("error: {e}"))
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn preset(name: &str) -> Result<LabConfig, String> {
    LabConfig::preset(name).map_err(|e| e.to_string())
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(1e-12)
}

/// Energy drift of an unforced RK4 swing and agreement with the
/// independent Lagrangian oracle.
pub fn dynamics_fidelity() -> Verdict {
    const NAME: &str = "dynamics fidelity";
    let p = WipParams::miapure();
    let dt = 1e-4;
    let mut x = PlanarState::new(0.1, 0.0, 0.0, 0.0).to_vector();
    let e0 = total_energy(&p, &PlanarState::from_vector(&x));
    let mut drift = 0.0f64;
    for _ in 0..10_000 {
        x = match rk4_step(|v: &Vector4<f64>| wip_derivative(&p, &PlanarState::from_vector(v), 0.0), &x, dt) {
            Ok(x) => x,
            Err(e) => return Verdict::error(NAME, e),
        };
        let e = total_energy(&p, &PlanarState::from_vector(&x));
        drift = drift.max((e - e0).abs() / e0.abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let p = if k % 2 == 0 { WipParams::miapure() } else { WipParams::piptb() };
        let s = PlanarState::new(
            rng.random_range(-1.2..1.2),
            rng.random_range(-50.0..50.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-40.0..40.0),
        );
        let tau = rng.random_range(-50.0..50.0);
        let got = wip_accel(&p, &s, tau);
        let want = oracle::accel(&p, &s, tau);
        let scale = want.amax().max(1.0);
        worst = worst
            .max(rel(got.theta_ddot, want[0], scale))
            .max(rel(got.phi_ddot, want[1], scale));
    }
    Verdict::new(
        NAME,
        drift <= 1e-6 && worst <= 1e-8,
        format!("energy drift {drift:.2e} (<= 1e-6), oracle error {worst:.2e} over 1000 states (<= 1e-8)"),
    )
}

/// Jacobians against central differences, the Riccati residual on the full
/// four-state model and closed-loop stability.
pub fn linearization_and_lqr() -> Verdict {
    const NAME: &str = "linearization and LQR";
    let mut jac_err = 0.0f64;
    let mut are = 0.0f64;
    let mut max_re = f64::NEG_INFINITY;
    for p in [WipParams::miapure(), WipParams::piptb()] {
        let lin = linearize(&p);
        let f = |x: &Vector4<f64>, tau: f64| wip_derivative(&p, &PlanarState::from_vector(x), tau);
        let h = 1e-6;
        for j in 0..4 {
            let mut hi = Vector4::zeros();
            let mut lo = Vector4::zeros();
            hi[j] = h;
            lo[j] = -h;
            let col = (f(&hi, 0.0) - f(&lo, 0.0)) / (2.0 * h);
            for i in 0..4 {
                jac_err = jac_err.max(rel(lin.a[(i, j)], col[i], lin.a.amax()));
            }
        }
        let zero = Vector4::zeros();
        let col = (f(&zero, h) - f(&zero, -h)) / (2.0 * h);
        for i in 0..4 {
            jac_err = jac_err.max(rel(lin.b[i], col[i], lin.b.amax()));
        }

        let w = LqrWeights::default();
        let d = match design_lqr(&p, &w) {
            Ok(d) => d,
            Err(e) => return Verdict::error(NAME, e),
        };
        // the wheel angle has no cost, so the reduced solution embeds with a
        // zero row and column
        let a = DMatrix::from_column_slice(4, 4, lin.a.as_slice());
        let b = DVector::from_column_slice(lin.b.as_slice());
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&w.q_diag));
        let idx = [0usize, 2, 3];
        let mut p4 = DMatrix::zeros(4, 4);
        for (i, &ri) in idx.iter().enumerate() {
            for (j, &rj) in idx.iter().enumerate() {
                p4[(ri, rj)] = d.care.p[(i, j)];
            }
        }
        are = are.max(care_residual(&a, &b, &q, w.r, &p4));
        let re = d
            .closed_loop_reduced()
            .complex_eigenvalues()
            .iter()
            .map(|e| e.re)
            .fold(f64::NEG_INFINITY, f64::max);
        max_re = max_re.max(re);
    }
    Verdict::new(
        NAME,
        jac_err <= 1e-6 && are <= 1e-8 && max_re < 0.0,
        format!("A,B error {jac_err:.2e} (<= 1e-6), ARE residual {are:.2e} (<= 1e-8), max Re(eig) {max_re:.3}"),
    )
}

/// Round trips, power balance and the 120 degree symmetry of the omniwheel
/// maps on 1000 random samples each.
pub fn conversion_correctness() -> Verdict {
    const NAME: &str = "conversion correctness";
    let m = match DrivetrainGeometry::default().maps() {
        Ok(m) => m,
        Err(e) => return Verdict::error(NAME, e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rates = |rng: &mut ChaCha8Rng| PlanarRates {
        phi_dot_x: rng.random_range(-30.0..30.0),
        phi_dot_y: rng.random_range(-30.0..30.0),
        theta_dot_x: rng.random_range(-3.0..3.0),
        theta_dot_y: rng.random_range(-3.0..3.0),
        theta_dot_z: rng.random_range(-5.0..5.0),
    };
    let torques = |rng: &mut ChaCha8Rng| {
        PlanarTorques::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-10.0..10.0))
    };
    let (mut trip, mut power, mut sym) = (0.0f64, 0.0f64, 0.0f64);
    let (s, c) = (2.0 * PI / 3.0).sin_cos();
    for _ in 0..1000 {
        let r = rates(&mut rng);
        let t = torques(&mut rng);

        let psi = m.motor_speeds(&r);
        let back = m.planar_rates(&psi, (r.theta_dot_x, r.theta_dot_y), None).rates;
        let scale = [r.phi_dot_x, r.phi_dot_y, r.theta_dot_z].map(f64::abs).into_iter().fold(1.0, f64::max);
        for (a, b) in [
            (back.phi_dot_x, r.phi_dot_x),
            (back.phi_dot_y, r.phi_dot_y),
            (back.theta_dot_z, r.theta_dot_z),
        ] {
            trip = trip.max((a - b).abs() / scale);
        }
        let tb = m.planar_torques(&m.motor_torques(&t));
        let tscale = t.tau_x.abs().max(t.tau_y.abs()).max(t.tau_z.abs()).max(1.0);
        for (a, b) in [(tb.tau_x, t.tau_x), (tb.tau_y, t.tau_y), (tb.tau_z, t.tau_z)] {
            trip = trip.max((a - b).abs() / tscale);
        }

        let planar = t.tau_x * (r.phi_dot_x - r.theta_dot_x)
            + t.tau_y * (r.phi_dot_y - r.theta_dot_y)
            + t.tau_z * r.theta_dot_z;
        let u = m.motor_torques(&t);
        let motor: f64 = u.iter().zip(psi.iter()).map(|(a, b)| a * b).sum();
        let pscale: f64 = u.iter().zip(psi.iter()).map(|(a, b)| (a * b).abs()).sum();
        power = power.max((planar - motor).abs() / pscale.max(1e-12));

        // rotating a translation by one omniwheel spacing hands each
        // omniwheel's speed to its neighbour
        let (vx, vy) = (r.phi_dot_y - r.theta_dot_y, r.phi_dot_x - r.theta_dot_x);
        let rotated = PlanarRates {
            phi_dot_y: c * vx - s * vy,
            phi_dot_x: s * vx + c * vy,
            theta_dot_x: 0.0,
            theta_dot_y: 0.0,
            theta_dot_z: r.theta_dot_z,
        };
        let b = m.motor_speeds(&rotated);
        let sscale = psi.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        for i in 0..3 {
            sym = sym.max((b[(i + 1) % 3] - psi[i]).abs() / sscale);
        }
    }
    Verdict::new(
        NAME,
        trip <= 1e-12 && power <= 1e-9 && sym <= 1e-12,
        format!("round trip {trip:.2e} (<= 1e-12), power {power:.2e} (<= 1e-9), 120 deg symmetry {sym:.2e} (<= 1e-12)"),
    )
}

/// Braking from 1.4 m/s in 2 s on the full-scale plant.
pub fn trajectory_optimization() -> Verdict {
    const NAME: &str = "trajectory optimization";
    let p = WipParams::miapure();
    let task = BrakingTask::new(1.4, 2.0);
    let opts = SolveOptions::default();
    let solve = |n: usize| optimize_braking(&p, &task, n, &opts).map_err(|e| e.to_string());
    let ((t50, r50), (t100, r100)) = match (solve(50), solve(100)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Verdict::error(NAME, e),
    };
    let mut defects = 0.0f64;
    let mut boundary = 0.0f64;
    for (traj, n) in [(&t50, 50), (&t100, 100)] {
        match transcribe(&p, &task, n).and_then(|nlp| Ok(nlp.defects(&nlp.pack(traj)?).amax())) {
            Ok(d) => defects = defects.max(d),
            Err(e) => return Verdict::error(NAME, e),
        }
        let (first, last) = (traj.states[0], traj.states[n - 1]);
        let v0 = task.v0 / p.wheel_radius;
        for (got, want) in [
            (first.theta, 0.0),
            (first.theta_dot, 0.0),
            (first.phi_dot, v0),
            (last.theta, 0.0),
            (last.theta_dot, 0.0),
            (last.phi_dot, 0.0),
        ] {
            boundary = boundary.max((got - want).abs());
        }
    }
    let min_theta = t100.min_theta();
    let max_v = t100.max_speed(p.wheel_radius);
    let spans = negative_power_span(&t100);
    let j_change = (r50.objective - r100.objective).abs() / r100.objective;
    let pass = r50.converged
        && r100.converged
        && defects <= 1e-6
        && boundary <= 1e-6
        && min_theta < -0.005
        && max_v > 1.4
        && !spans.is_empty()
        && j_change <= 0.01;
    Verdict::new(
        NAME,
        pass,
        format!(
            "defects {defects:.1e}, boundary {boundary:.1e}, min theta {min_theta:.4} rad, max v {max_v:.3} m/s, \
             {} negative-power span(s), J* {:.3} -> {:.3} ({:.2}%)",
            spans.len(),
            r50.objective,
            r100.objective,
            100.0 * j_change
        ),
    )
}

/// Accelerate, hold and brake on the frictional testbed under the three
/// controllers.
pub fn testbed_comparison() -> Verdict {
    const NAME: &str = "testbed controller comparison";
    let cfg = match preset("piptb") {
        Ok(c) => c,
        Err(e) => return Verdict::error(NAME, e),
    };
    let mut spec = match cfg.scenario("piptb-braking") {
        Ok(s) => s,
        Err(e) => return Verdict::error(NAME, e),
    };
    if spec.plant.friction.tau_stiction <= 0.0 {
        return Verdict::error(NAME, "testbed preset has no stiction");
    }
    spec.controller.kind = ControllerKind::LqrPi;
    let run = match run_scenario(&spec, 0) {
        Ok(r) => r,
        Err(e) => return Verdict::error(NAME, e),
    };
    let end_v = run.metric("brake.end_speed").unwrap_or(f64::NAN);
    let end_theta = run.metric("brake.end_theta").unwrap_or(f64::NAN);
    let braked = run.status == RunStatus::Completed && end_v.abs() <= 0.05 && end_theta.abs() <= 1f64.to_radians();

    let kinds = [ControllerKind::Lqr, ControllerKind::PiPd, ControllerKind::LqrPi];
    let table = compare_controllers(&spec, &kinds, 3, 0, "hold");
    let (Some(lqr), Some(pi_pd), Some(lqr_pi)) = (
        table.row(ControllerKind::Lqr),
        table.row(ControllerKind::PiPd),
        table.row(ControllerKind::LqrPi),
    ) else {
        return Verdict::error(NAME, "missing comparison row");
    };
    let clean = lqr_pi.errors.is_empty() && pi_pd.errors.is_empty() && lqr.errors.is_empty();
    let ratio = lqr.hold_speed_error / lqr_pi.hold_speed_error;
    Verdict::new(
        NAME,
        braked && clean && lqr_pi.effort_mean < pi_pd.effort_mean && ratio >= 5.0,
        format!(
            "LQR-PI brake end |v| {:.4} m/s, |theta| {:.3} deg; J LQR-PI {:.4} < PI-PD {:.4}; \
             hold error LQR {:.2e} = {ratio:.1}x LQR-PI {:.2e}",
            end_v.abs(),
            end_theta.abs().to_degrees(),
            lqr_pi.effort_mean,
            pi_pd.effort_mean,
            lqr.hold_speed_error,
            lqr_pi.hold_speed_error
        ),
    )
}

/// Shortest successful optimal brake from 1.4 m/s at heading 180 degrees.
pub fn full_scale_braking() -> Verdict {
    const NAME: &str = "full-scale braking at 180 deg";
    let cfg = match preset("miapure") {
        Ok(c) => c,
        Err(e) => return Verdict::error(NAME, e),
    };
    let Some(bench) = cfg.benchmarks.min_braking.clone() else {
        return Verdict::error(NAME, "preset has no min-braking benchmark");
    };
    let mut spec = cfg.base_spec();
    spec.heading_deg = 180.0;
    let found = match min_braking_search(&spec, &bench.search, 0) {
        Ok(r) => r,
        Err(e) => return Verdict::error(NAME, e),
    };
    // rerun the winning duration to report what it looked like
    let mut s = spec.clone();
    s.phases = bench.search.phases(found.min_duration);
    s.effort_phase = "brake".into();
    let run = match run_scenario(&s, 0) {
        Ok(r) => r,
        Err(e) => return Verdict::error(NAME, e),
    };
    let final_tilt = run.metric("settle.end_theta").unwrap_or(f64::NAN);
    let pass = found.min_duration <= 2.0
        && braking_succeeded(&s, &run)
        && !run.slipped()
        && run.status == RunStatus::Completed
        && final_tilt <= s.success.tilt_tol;
    Verdict::new(
        NAME,
        pass,
        format!(
            "min braking {:.2} s (<= 2.0), status {:?}, slips {}, final tilt {:.3} deg",
            found.min_duration,
            run.status,
            run.metric("slip_events").unwrap_or(0.0),
            final_tilt.to_degrees()
        ),
    )
}

/// Forward driving toward omniwheel 1 gives out first, and its friction
/// margin shrinks with lean.
pub fn heading_asymmetry() -> Verdict {
    const NAME: &str = "heading asymmetry";
    let cfg = match preset("miapure") {
        Ok(c) => c,
        Err(e) => return Verdict::error(NAME, e),
    };
    let at = |h: f64| {
        let mut s = cfg.base_spec();
        s.heading_deg = h;
        max_speed_ramp(&s, &RampSettings::default(), 0)
    };
    let (front, back) = match (at(0.0), at(180.0)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Verdict::error(NAME, e),
    };

    let m = match DrivetrainGeometry::default().maps() {
        Ok(m) => m,
        Err(e) => return Verdict::error(NAME, e),
    };
    // sagittal drive torque as when accelerating at heading 0
    let u = m.motor_torques(&PlanarTorques::new(0.0, 20.0, 0.0));
    let mass = cfg.plant.wip.body_mass + cfg.plant.wip.wheel_mass;
    let mut margins = Vec::new();
    for k in 0..=30 {
        match m.contact_forces(mass, (0.0, 0.01 * k as f64), &u, cfg.plant.mu) {
            Ok(r) => margins.push(r.min_margin()),
            Err(KinematicsError::ContactSeparation { .. }) => break,
            Err(e) => return Verdict::error(NAME, e),
        }
    }
    let monotone = margins.len() >= 10 && margins.windows(2).all(|w| w[1] < w[0]);
    Verdict::new(
        NAME,
        front.speed < back.speed && monotone,
        format!(
            "failure speed 0 deg {:.3} m/s < 180 deg {:.3} m/s; margin falls {:.3} -> {:.3} over {} lean steps",
            front.speed,
            back.speed,
            margins.first().copied().unwrap_or(f64::NAN),
            margins.last().copied().unwrap_or(f64::NAN),
            margins.len()
        ),
    )
}

/// Every preset scenario, noisy sensors included, twice with one seed.
pub fn determinism() -> Verdict {
    const NAME: &str = "determinism";
    let mut checked = 0;
    let mut mismatched = Vec::new();
    for name in ["piptb", "miapure"] {
        let cfg = match preset(name) {
            Ok(c) => c,
            Err(e) => return Verdict::error(NAME, e),
        };
        for scenario in cfg.scenarios.keys() {
            let mut spec = match cfg.scenario(scenario) {
                Ok(s) => s,
                Err(e) => return Verdict::error(NAME, e),
            };
            spec.sensor.imu_angle_std = 0.001;
            spec.sensor.imu_rate_std = 0.005;
            match (run_scenario(&spec, 42), run_scenario(&spec, 42)) {
                (Ok(a), Ok(b)) => {
                    if a.metrics_json() != b.metrics_json() {
                        mismatched.push(format!("{name}/{scenario}"));
                    }
                    checked += 1;
                }
                (Err(e), _) | (_, Err(e)) => return Verdict::error(NAME, e),
            }
        }
    }
    Verdict::new(
        NAME,
        checked > 0 && mismatched.is_empty(),
        format!("{checked} noisy scenario reruns, byte-different: {mismatched:?}"),
    )
}

/// A minute of paced driving on the wall clock, a toppling shove and a
/// replay of the recorded command log.
pub fn service(pacing: Duration) -> Verdict {
    const NAME: &str = "service";
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => return Verdict::error(NAME, e),
    };
    let paced = match rt.block_on(paced_session(pacing)) {
        Ok(p) => p,
        Err(e) => return Verdict::error(NAME, e),
    };
    let cut = match torque_cut() {
        Ok(c) => c,
        Err(e) => return Verdict::error(NAME, e),
    };
    Verdict::new(
        NAME,
        paced.drift <= 0.01 && paced.replay_equal && cut.within_outer_tick,
        format!(
            "sim {:.3} s over wall {:.3} s (drift {:.3}%), {} frames replayed {}; torque zero {} inner steps \
             after failure (outer tick {} steps)",
            paced.sim,
            paced.wall,
            100.0 * paced.drift,
            paced.frames,
            if paced.replay_equal { "identically" } else { "with differences" },
            cut.latency_steps,
            cut.outer_ratio
        ),
    )
}

struct Paced {
    sim: f64,
    wall: f64,
    drift: f64,
    frames: usize,
    replay_equal: bool,
}

async fn paced_session(duration: Duration) -> Result<Paced, String> {
    let cfg = preset("miapure")?;
    let engine = SessionEngine::new(&cfg, 5).map_err(|e| e.to_string())?;
    let session = Session::spawn("acceptance".into(), engine, Arc::new(TokioClock::new()));
    let link = session.link();
    let mut feed = link.subscribe();
    let collector = tokio::spawn(async move {
        let mut frames = Vec::new();
        let mut dropped = 0;
        while let Some(f) = feed.next().await {
            dropped += f.dropped;
            frames.push(f.deterministic());
        }
        (frames, dropped)
    });
    let send = |msg: ClientMessage| {
        let link = link.clone();
        async move { link.send(msg).await.map_err(|e| e.to_string()) }
    };
    let control = |a: ControlAction| ClientMessage::Control(Control::new(a));

    let start = Instant::now();
    send(control(ControlAction::Start)).await?;
    let script = [
        (0.0, ClientMessage::Command(Command::new(0.8, 0.0))),
        (0.3, ClientMessage::Command(Command::new(1.0, 90.0))),
        (0.55, control(ControlAction::Scenario { name: "brake-now".into() })),
        (0.75, ClientMessage::Command(Command::new(0.5, 200.0))),
    ];
    for (frac, msg) in script {
        tokio::time::sleep_until((start + duration.mul_f64(frac)).into()).await;
        send(msg).await?;
    }
    tokio::time::sleep_until((start + duration).into()).await;
    let info = link.info().await.map_err(|e| e.to_string())?;
    let wall = start.elapsed().as_secs_f64();
    if info.status != SessionStatus::Running {
        return Err(format!("session ended {:?} at t = {}", info.status, info.t));
    }
    send(control(ControlAction::Pause)).await?;
    let log = link.log().await.map_err(|e| e.to_string())?;
    // let the last frames reach the collector, then close the stream
    tokio::time::sleep(Duration::from_millis(50)).await;
    session.close();
    let (streamed, dropped) = collector.await.map_err(|e| e.to_string())?;
    if dropped > 0 {
        return Err(format!("{dropped} frames dropped by the collector"));
    }
    let replayed = replay(&cfg, &log).map_err(|e| e.to_string())?;
    Ok(Paced {
        sim: info.t,
        wall,
        drift: (info.t - wall).abs() / wall,
        frames: streamed.len(),
        replay_equal: !streamed.is_empty() && replayed == streamed,
    })
}

struct TorqueCut {
    latency_steps: u64,
    outer_ratio: u64,
    within_outer_tick: bool,
}

/// Steps the engine one inner tick at a time under a shove and counts the
/// ticks between the failing step and the first all-zero motor torque.
fn torque_cut() -> Result<TorqueCut, String> {
    let cfg = preset("miapure")?;
    let mut e = SessionEngine::new(&cfg, 0).map_err(|e| e.to_string())?;
    e.apply(&ClientMessage::Control(Control::new(ControlAction::Start)));
    e.apply(&ClientMessage::Command(Command {
        push: Some(Push {
            force: 2000.0,
            heading_deg: 90.0,
            duration: 0.5,
        }),
        ..Command::new(0.0, 0.0)
    }));
    let outer_ratio = (cfg.controller.rates.inner_hz / cfg.controller.rates.outer_hz).round() as u64;
    let max_steps = 5 * (1.0 / e.dt()) as u64;
    let failed_at = (0..max_steps).find(|_| {
        e.advance(1);
        e.status() == SessionStatus::Failed
    });
    failed_at.ok_or("the shove did not topple the robot")?;
    let mut latency = 0;
    loop {
        let f = e.frame();
        let zero = ["u1", "u2", "u3"].iter().all(|k| f.signals.get(*k) == Some(&0.0));
        if zero || latency > outer_ratio {
            break;
        }
        // a failed engine does not step, so waiting cannot help
        e.advance(1);
        latency += 1;
    }
    Ok(TorqueCut {
        latency_steps: latency,
        outer_ratio,
        within_outer_tick: latency <= outer_ratio && e.effort() == 0.0,
    })
}
