//! Prints one PASS or FAIL line per acceptance criterion and exits nonzero
//! if any failed. The service check paces a session against the wall clock
//! for a full minute, so it starts first and runs beside the others.

use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use ballbot_acceptance as acc;

fn main() -> ExitCode {
    let started = Instant::now();
    let service = thread::spawn(|| acc::service(Duration::from_secs(60)));
    let checks: [fn() -> acc::Verdict; 8] = [
        acc::dynamics_fidelity,
        acc::linearization_and_lqr,
        acc::conversion_correctness,
        acc::trajectory_optimization,
        acc::testbed_comparison,
        acc::full_scale_braking,
        acc::heading_asymmetry,
        acc::determinism,
    ];
    let mut verdicts: Vec<acc::Verdict> = checks
        .iter()
        .map(|check| {
            let v = check();
            println!("{v}");
            v
        })
        .collect();
    let v = service.join().unwrap_or_else(|_| acc::Verdict {
        name: "service",
        pass: false,
        detail: "check panicked".into(),
    });
    println!("{v}");
    verdicts.push(v);

    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        verdicts.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
