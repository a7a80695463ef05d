use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use ballbot_core::config::LabConfig;
use serde_json::Value;
use tempfile::TempDir;

fn ballbot(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ballbot"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn rest_simulation_is_flat_and_succeeds() {
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["simulate", "--scenario", "rest"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = out.path().join("simulate/rest/fixed");
    for f in ["series.csv", "metrics.json", "plot.svg", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(dir.join("series.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let cols: Vec<usize> = ["theta_x", "theta_y", "speed", "u1"]
        .iter()
        .map(|c| header.iter().position(|h| h == c).unwrap())
        .collect();
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(cols.iter().all(|&k| v[k] == 0.0), "{line}");
    }
    let manifest = json(&dir.join("manifest.json"));
    assert_eq!(manifest["subcommand"], "simulate");
    assert_eq!(manifest["config"]["platform"], "miapure");
    let resolved = LabConfig::from_toml_str(manifest["config_toml"].as_str().unwrap(), &[]).unwrap();
    assert_eq!(resolved, LabConfig::preset("miapure").unwrap());
}

#[test]
fn unknown_scenario_is_a_usage_error_listing_the_choices() {
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["simulate", "--scenario", "moonwalk"]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("braking-180") && msg.contains("cruise-0") && msg.contains("rest"), "{msg}");
    assert!(!out.path().join("simulate").exists());
}

#[test]
fn balance_failure_has_its_own_exit_code() {
    let out = TempDir::new().unwrap();
    let o = ballbot(
        out.path(),
        &["simulate", "--scenario", "cruise-0", "--set", "failure.tilt_limit=0.001"],
    );
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    let metrics = json(&out.path().join("simulate/cruise-0/fixed/metrics.json"));
    assert_eq!(metrics["status"], "balance-failure");
}

#[test]
fn testbed_protocol_run_writes_artifacts() {
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["--platform", "piptb", "simulate", "--scenario", "piptb-braking"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = json(&out.path().join("simulate/piptb-braking/fixed/metrics.json"));
    assert_eq!(metrics["status"], "completed");
    assert!(metrics["metrics"]["brake.effort"].as_f64().unwrap() > 0.0);
}

#[test]
fn same_inputs_give_identical_bytes() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["--platform", "piptb", "--seed", "9", "--set", "sensor.imu_angle_std=0.001", "simulate", "--scenario", "piptb-braking"];
    assert_eq!(code(&ballbot(a.path(), &args)), 0);
    assert_eq!(code(&ballbot(b.path(), &args)), 0);
    let rel = "simulate/piptb-braking/fixed";
    for f in ["series.csv", "metrics.json", "plot.svg", "manifest.json"] {
        assert_eq!(
            fs::read(a.path().join(rel).join(f)).unwrap(),
            fs::read(b.path().join(rel).join(f)).unwrap(),
            "{f}"
        );
    }
    let c = TempDir::new().unwrap();
    let mut other = args;
    other[3] = "10";
    assert_eq!(code(&ballbot(c.path(), &other)), 0);
    assert_ne!(
        fs::read(a.path().join(rel).join("series.csv")).unwrap(),
        fs::read(c.path().join(rel).join("series.csv")).unwrap()
    );
}

#[test]
fn tags_name_the_leaf_directory() {
    let out = TempDir::new().unwrap();
    assert_eq!(code(&ballbot(out.path(), &["--tag", "trial-a", "simulate", "--scenario", "rest"])), 0);
    assert!(out.path().join("simulate/rest/trial-a/manifest.json").is_file());
    assert_eq!(code(&ballbot(out.path(), &["--tag", "../x", "simulate", "--scenario", "rest"])), 2);
}

#[test]
fn braking_optimization_shows_tilt_back_and_overshoot() {
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["optimize", "--task", "braking"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = out.path().join("optimize/braking/fixed");
    let report = json(&dir.join("report.json"));
    assert_eq!(report["converged"], true);
    assert_eq!(report["tilt_back"], true);
    assert_eq!(report["overshoot"], true);
    assert!(report["solver"]["max_violation"].as_f64().unwrap() <= 1e-6);
    assert!(!report["negative_power_spans"].as_array().unwrap().is_empty());
    let csv = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,theta,phi,theta_dot,phi_dot,tau");
    assert_eq!(csv.lines().count(), 101);
}

#[test]
fn standing_task_costs_nothing() {
    let out = TempDir::new().unwrap();
    assert_eq!(code(&ballbot(out.path(), &["optimize", "--task", "rest"])), 0);
    let report = json(&out.path().join("optimize/rest/fixed/report.json"));
    assert_eq!(report["objective"], 0.0);
}

#[test]
fn forced_non_convergence_exits_3_with_the_best_iterate() {
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["optimize", "--task", "braking", "--max-iter", "1"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let dir = out.path().join("optimize/braking/fixed");
    let report = json(&dir.join("report.json"));
    assert_eq!(report["converged"], false);
    assert!(report["solver"]["max_violation"].as_f64().unwrap() > 1e-6);
    assert!(dir.join("trajectory.csv").is_file());
}

#[test]
fn unknown_task_is_a_usage_error() {
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["optimize", "--task", "cartwheel"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("braking"));
}

#[test]
fn max_speed_sweep_orders_front_below_back() {
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["benchmark", "max-speed"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = out.path().join("benchmark/max-speed/fixed");
    let rows = json(&dir.join("table.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let speed = |h: f64| {
        rows.iter()
            .find(|r| r["heading_deg"] == h)
            .and_then(|r| r["speed"].as_f64())
            .unwrap()
    };
    assert!(speed(0.0) < speed(180.0));
    assert_eq!(fs::read_to_string(dir.join("table.csv")).unwrap().lines().count(), 4);
}

#[test]
fn heading_list_must_not_be_empty() {
    let out = TempDir::new().unwrap();
    assert_eq!(code(&ballbot(out.path(), &["benchmark", "max-speed", "--headings"])), 2);
    assert_eq!(code(&ballbot(out.path(), &["benchmark", "max-speed", "--headings", "abc"])), 2);
}

#[test]
fn custom_headings_are_swept() {
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["benchmark", "max-speed", "--headings", "120,240"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = json(&out.path().join("benchmark/max-speed/fixed/table.json"));
    let s: Vec<f64> = rows.as_array().unwrap().iter().map(|r| r["speed"].as_f64().unwrap()).collect();
    assert!((s[0] - s[1]).abs() <= 1e-6 * s[0]);
}

#[test]
fn controller_comparison_table() {
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["--platform", "piptb", "benchmark", "compare-controllers"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = json(&out.path().join("benchmark/compare-controllers/fixed/table.json"));
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let effort = |k: &str| rows.iter().find(|r| r["controller"] == k).unwrap()["effort_mean"].as_f64().unwrap();
    assert!(effort("lqr-pi") < effort("pi-pd"));
}

#[test]
fn unconfigured_benchmarks_are_usage_errors() {
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["benchmark", "compare-controllers"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("max-speed, min-braking"));
}

#[test]
fn minimum_braking_search() {
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["benchmark", "min-braking"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let res = json(&out.path().join("benchmark/min-braking/fixed/table.json"));
    assert!(res["min_duration"].as_f64().unwrap() <= 2.0);
}

#[test]
fn bad_configuration_is_a_usage_error() {
    let out = TempDir::new().unwrap();
    for args in [
        vec!["--set", "plant.nothing=1", "simulate", "--scenario", "rest"],
        vec!["--set", "novalue", "simulate", "--scenario", "rest"],
        vec!["--config", "/no/such/file.toml", "simulate", "--scenario", "rest"],
        vec!["--config", "piptb.default", "--platform", "miapure", "simulate", "--scenario", "rest"],
        vec!["simulate"],
        vec!["fly"],
    ] {
        let o = ballbot(out.path(), &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn config_files_and_presets_load() {
    let out = TempDir::new().unwrap();
    let file = out.path().join("lab.toml");
    fs::write(&file, LabConfig::preset_text("piptb").unwrap()).unwrap();
    let o = ballbot(out.path(), &["--config", file.to_str().unwrap(), "simulate", "--scenario", "rest"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = ballbot(out.path(), &["--config", "piptb.default", "--tag", "p", "simulate", "--scenario", "rest"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = json(&out.path().join("simulate/rest/p/manifest.json"));
    assert_eq!(m["config"]["platform"], "piptb");
}

#[test]
fn occupied_port_exits_4() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = TempDir::new().unwrap();
    let o = ballbot(out.path(), &["serve", "--bind", &addr]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

fn http(addr: &str, request: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    s.write_all(request.as_bytes()).ok()?;
    let mut text = String::new();
    s.read_to_string(&mut text).ok()?;
    Some(text)
}

#[test]
fn serves_the_chosen_platform() {
    let addr = {
        let probe = TcpListener::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap().to_string()
    };
    let out = TempDir::new().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_ballbot"))
        .args(["--out", out.path().to_str().unwrap(), "--platform", "piptb", "serve", "--bind", &addr])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let request = "POST /sessions HTTP/1.1\r\nHost: test\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
    let deadline = Instant::now() + Duration::from_secs(10);
    let reply = loop {
        if let Some(r) = http(&addr, request) {
            break r;
        }
        assert!(Instant::now() < deadline, "server never came up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 201"), "{reply}");
    assert!(reply.contains(r#""platform":"piptb""#), "{reply}");
}
