//! The `ballbot` command line.
//!
//! Every run resolves one configuration document (a file or a shipped
//! preset, plus `--set` overrides) and writes its artifacts under
//! `<out>/<subcommand>/<name>/<tag>/` next to a `manifest.json` holding the
//! resolved document. Nothing in an artifact depends on the wall clock, so
//! the same inputs give the same bytes.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |---|---|
//! | 0 | success |
//! | 1 | internal or I/O error, or a benchmark cell failed |
//! | 2 | usage: bad flags, bad config, unknown scenario/task/benchmark |
//! | 3 | trajectory solver did not converge (best iterate written) |
//! | 4 | the server could not bind its address |
//! | 5 | the simulated robot fell, slipped or diverged; no feasible braking time |

pub mod svg;

// The guide's code blocks run as doctests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/kinematics.md")]
    mod kinematics {}
    #[doc = include_str!("../../../book/src/controllers.md")]
    mod controllers {}
    #[doc = include_str!("../../../book/src/trajopt.md")]
    mod trajopt {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}

use std::fs;
use std::path::{Path, PathBuf};

use ballbot_core::config::{ConfigError, LabConfig};
use ballbot_core::harness::{
    compare_controllers, max_speed_ramp, min_braking_search, run_scenario, HarnessError, MaxSpeedResult, RunStatus,
    TimeSeries,
};
use ballbot_core::trajopt::{negative_power_span, optimize_braking, SolveReport, Trajectory, TrajoptError};
use ballbot_service::ServiceError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::svg::Panel;

#[derive(Debug, Parser)]
#[command(name = "ballbot", version, about = "Ballbot simulation and control laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Configuration file, or a preset name (miapure.default, piptb.default).
    #[arg(long, global = true, conflicts_with = "platform")]
    pub config: Option<PathBuf>,
    /// Use the default preset of this platform (without --config).
    #[arg(long, global = true, value_enum)]
    pub platform: Option<PlatformArg>,
    /// Artifact root directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Seed for sensor noise.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Override a configuration value, e.g. `--set plant.mu=0.6`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Last path component of the artifact directory.
    #[arg(long, global = true, default_value = "fixed")]
    pub tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlatformArg {
    Miapure,
    Piptb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchmarkName {
    MaxSpeed,
    MinBraking,
    CompareControllers,
}

impl BenchmarkName {
    fn name(self) -> &'static str {
        match self {
            BenchmarkName::MaxSpeed => "max-speed",
            BenchmarkName::MinBraking => "min-braking",
            BenchmarkName::CompareControllers => "compare-controllers",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run a named scenario in closed loop.
    Simulate {
        #[arg(long)]
        scenario: String,
    },
    /// Solve a named braking task.
    Optimize {
        #[arg(long)]
        task: String,
        /// Cap on solver outer iterations.
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Run a configured benchmark.
    Benchmark {
        #[arg(value_enum)]
        name: BenchmarkName,
        /// Headings for max-speed, degrees, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        headings: Option<Vec<f64>>,
        /// Trials per controller for compare-controllers.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Serve interactive sessions until Ctrl-C.
    Serve {
        /// Address to bind; defaults to `service.bind` of the config.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Internal(String),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("solver did not converge; best iterate written to {dir}")]
    NoConvergence { dir: PathBuf },
    #[error(transparent)]
    Service(ServiceError),
    #[error("{0}")]
    RunFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Internal(_) | CliError::Io { .. } => 1,
            CliError::NoConvergence { .. } => 3,
            CliError::Service(ServiceError::Bind { .. }) => 4,
            CliError::Service(_) => 1,
            CliError::RunFailed(_) => 5,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidSpec(_) | HarnessError::Control(_) => CliError::Usage(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

/// What a finished command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Artifact directory, if any.
    pub dir: Option<PathBuf>,
    pub summary: String,
}

pub fn resolve_config(common: &Common) -> Result<LabConfig, CliError> {
    Ok(match (&common.config, common.platform) {
        (Some(path), _) => LabConfig::load(path, &common.overrides)?,
        (None, Some(PlatformArg::Piptb)) => LabConfig::from_toml_str(LabConfig::preset_text("piptb")?, &common.overrides)?,
        (None, _) => LabConfig::from_toml_str(LabConfig::preset_text("miapure")?, &common.overrides)?,
    })
}

fn toml_text(cfg: &LabConfig) -> Result<String, CliError> {
    cfg.to_toml().map_err(|e| CliError::Internal(e.to_string()))
}

struct ArtifactDir {
    path: PathBuf,
    files: Vec<String>,
}

impl ArtifactDir {
    fn create(common: &Common, subcommand: &str, name: &str) -> Result<Self, CliError> {
        if common.tag.is_empty() || common.tag.contains(['/', '\\']) || common.tag == ".." {
            return Err(CliError::Usage(format!("--tag `{}` is not a plain directory name", common.tag)));
        }
        let path = common.out.join(subcommand).join(name).join(&common.tag);
        fs::create_dir_all(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(Self { path, files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io { path, source })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    /// Writes `manifest.json` listing everything written so far.
    fn finish(mut self, common: &Common, subcommand: &str, name: &str, cfg: &LabConfig) -> Result<PathBuf, CliError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            tool: &'static str,
            version: &'static str,
            subcommand: &'a str,
            name: &'a str,
            seed: u64,
            config_source: String,
            overrides: &'a [String],
            artifacts: &'a [String],
            config: &'a LabConfig,
            config_toml: String,
        }
        let files = std::mem::take(&mut self.files);
        let manifest = Manifest {
            tool: "ballbot",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            name,
            seed: common.seed,
            config_source: match (&common.config, common.platform) {
                (Some(p), _) => p.display().to_string(),
                (None, Some(PlatformArg::Piptb)) => "piptb.default".into(),
                (None, _) => "miapure.default".into(),
            },
            overrides: &common.overrides,
            artifacts: &files,
            config: cfg,
            config_toml: toml_text(cfg)?,
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(self.path)
    }
}

fn column(series: &TimeSeries, name: &str) -> Option<Vec<(f64, f64)>> {
    let t = series.columns.iter().position(|c| c == "t")?;
    let k = series.columns.iter().position(|c| c == name)?;
    Some(series.rows.iter().map(|r| (r[t], r[k])).collect())
}

pub fn simulate(common: &Common, cfg: &LabConfig, scenario: &str) -> Result<Outcome, CliError> {
    let spec = cfg.scenario(scenario)?;
    let result = run_scenario(&spec, common.seed)?;
    let mut dir = ArtifactDir::create(common, "simulate", scenario)?;
    dir.write("series.csv", &result.series.to_csv())?;
    dir.write("metrics.json", &(result.metrics_json() + "\n"))?;
    let panels: Vec<Panel> = ["theta", "theta_x", "theta_y", "speed", "tau", "u1", "u2", "u3"]
        .into_iter()
        .filter_map(|c| column(&result.series, c).map(|pts| Panel::new(c, pts)))
        .collect();
    dir.write(
        "plot.svg",
        &svg::render(&format!("simulate {scenario} ({:?})", result.status), "t, s", &panels),
    )?;
    let path = dir.finish(common, "simulate", scenario, cfg)?;
    let summary = format!("scenario {scenario}: {:?}, artifacts in {}", result.status, path.display());
    match result.status {
        RunStatus::Completed => Ok(Outcome {
            dir: Some(path),
            summary,
        }),
        _ => Err(CliError::RunFailed(summary)),
    }
}

#[derive(Serialize)]
struct OptimizeReport {
    task: String,
    v0: f64,
    duration: f64,
    n_knots: usize,
    converged: bool,
    objective: f64,
    solver: SolveReport,
    negative_power_spans: Vec<(f64, f64)>,
    /// Body leans against the direction of travel at some point.
    tilt_back: bool,
    /// Translation speed exceeds the initial speed before stopping.
    overshoot: bool,
    min_theta: f64,
    max_speed: f64,
}

pub fn optimize(common: &Common, cfg: &LabConfig, task_name: &str, max_iter: Option<usize>) -> Result<Outcome, CliError> {
    let entry = cfg.task(task_name)?;
    let mut opts = entry.solver;
    if let Some(n) = max_iter {
        if n == 0 {
            return Err(CliError::Usage("--max-iter must be >= 1".into()));
        }
        opts.max_iter = n;
    }
    let p = &cfg.plant.wip;
    let (traj, report, converged) = match optimize_braking(p, &entry.task, entry.n_knots, &opts) {
        Ok((t, r)) => (t, r, true),
        Err(TrajoptError::NoConvergence { best, report }) => (*best, report, false),
        Err(e @ (TrajoptError::InvalidTask(_) | TrajoptError::InfeasibleBounds(_) | TrajoptError::TooFewKnots(_))) => {
            return Err(CliError::Usage(e.to_string()))
        }
        Err(e) => return Err(CliError::Internal(e.to_string())),
    };
    let mut dir = ArtifactDir::create(common, "optimize", task_name)?;
    write_trajectory(&mut dir, task_name, &traj, p.wheel_radius)?;
    let r = p.wheel_radius;
    let out = OptimizeReport {
        task: task_name.into(),
        v0: entry.task.v0,
        duration: entry.task.duration,
        n_knots: entry.n_knots,
        converged,
        objective: report.objective,
        solver: report,
        negative_power_spans: negative_power_span(&traj),
        tilt_back: traj.min_theta() < 0.0,
        overshoot: traj.max_speed(r) > entry.task.v0 + 1e-9,
        min_theta: traj.min_theta(),
        max_speed: traj.max_speed(r),
    };
    dir.write_json("report.json", &out)?;
    let path = dir.finish(common, "optimize", task_name, cfg)?;
    if !converged {
        return Err(CliError::NoConvergence { dir: path });
    }
    Ok(Outcome {
        summary: format!(
            "task {task_name}: J* = {:.6}, violation {:.2e}, {} outer iterations; artifacts in {}",
            report.objective,
            report.max_violation,
            report.outer_iterations,
            path.display()
        ),
        dir: Some(path),
    })
}

fn write_trajectory(dir: &mut ArtifactDir, name: &str, traj: &Trajectory, r: f64) -> Result<(), CliError> {
    dir.write("trajectory.csv", &traj.to_csv())?;
    let pick = |f: &dyn Fn(usize) -> f64| -> Vec<(f64, f64)> { (0..traj.len()).map(|k| (traj.times[k], f(k))).collect() };
    let panels = [
        Panel::new("theta, rad", pick(&|k| traj.states[k].theta)),
        Panel::new("speed, m/s", pick(&|k| traj.states[k].phi_dot * r)),
        Panel::new("tau, N m", pick(&|k| traj.torques[k])),
    ];
    dir.write("plot.svg", &svg::render(&format!("optimize {name}"), "t, s", &panels))
}

#[derive(Serialize)]
struct MaxSpeedRow {
    heading_deg: f64,
    #[serde(flatten)]
    result: Option<MaxSpeedResult>,
    error: Option<String>,
}

pub fn benchmark(
    common: &Common,
    cfg: &LabConfig,
    which: BenchmarkName,
    headings: Option<Vec<f64>>,
    trials: Option<usize>,
) -> Result<Outcome, CliError> {
    let name = which.name();
    let missing = || {
        let available: Vec<&str> = [
            cfg.benchmarks.max_speed.as_ref().map(|_| "max-speed"),
            cfg.benchmarks.min_braking.as_ref().map(|_| "min-braking"),
            cfg.benchmarks.compare_controllers.as_ref().map(|_| "compare-controllers"),
        ]
        .into_iter()
        .flatten()
        .collect();
        CliError::Usage(format!(
            "benchmark `{name}` is not configured; available: {}",
            if available.is_empty() { "(none)".into() } else { available.join(", ") }
        ))
    };
    if headings.is_some() && which != BenchmarkName::MaxSpeed {
        return Err(CliError::Usage("--headings only applies to max-speed".into()));
    }
    if trials.is_some() && which != BenchmarkName::CompareControllers {
        return Err(CliError::Usage("--trials only applies to compare-controllers".into()));
    }
    match which {
        BenchmarkName::MaxSpeed => {
            let bench = cfg.benchmarks.max_speed.clone().ok_or_else(missing)?;
            let headings = headings.unwrap_or(bench.headings_deg);
            if headings.is_empty() {
                return Err(CliError::Usage("max-speed needs at least one heading".into()));
            }
            if headings.iter().any(|h| !h.is_finite()) {
                return Err(CliError::Usage("headings must be finite".into()));
            }
            let rows: Vec<MaxSpeedRow> = std::thread::scope(|scope| {
                let handles: Vec<_> = headings
                    .iter()
                    .map(|&h| {
                        let mut spec = cfg.base_spec();
                        spec.heading_deg = h;
                        let ramp = bench.ramp;
                        scope.spawn(move || max_speed_ramp(&spec, &ramp, common.seed))
                    })
                    .collect();
                headings
                    .iter()
                    .zip(handles)
                    .map(|(&h, handle)| {
                        let res = handle
                            .join()
                            .unwrap_or_else(|_| Err(HarnessError::InvalidSpec("run panicked".into())));
                        match res {
                            Ok(r) => MaxSpeedRow {
                                heading_deg: h,
                                result: Some(r),
                                error: None,
                            },
                            Err(e) => MaxSpeedRow {
                                heading_deg: h,
                                result: None,
                                error: Some(e.to_string()),
                            },
                        }
                    })
                    .collect()
            });
            let mut csv = String::from("heading_deg,speed,failed,cause,time,error\n");
            for r in &rows {
                match &r.result {
                    Some(m) => csv.push_str(&format!(
                        "{},{},{},{},{},\n",
                        r.heading_deg,
                        m.speed,
                        m.failed,
                        m.cause.as_deref().unwrap_or(""),
                        m.time
                    )),
                    None => csv.push_str(&format!(
                        "{},,,,,{}\n",
                        r.heading_deg,
                        r.error.as_deref().unwrap_or("").replace(',', ";")
                    )),
                }
            }
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| r.result.as_ref().map(|m| (r.heading_deg, m.speed)))
                .collect();
            let mut dir = ArtifactDir::create(common, "benchmark", name)?;
            dir.write("table.csv", &csv)?;
            dir.write_json("table.json", &rows)?;
            dir.write(
                "plot.svg",
                &svg::render("max-speed", "heading, deg", &[Panel::new("speed at first failure, m/s", pts)]),
            )?;
            let path = dir.finish(common, "benchmark", name, cfg)?;
            let failed: Vec<String> = rows
                .iter()
                .filter_map(|r| r.error.as_ref().map(|e| format!("{} deg: {e}", r.heading_deg)))
                .collect();
            let summary = rows
                .iter()
                .filter_map(|r| r.result.as_ref().map(|m| format!("{} deg -> {:.4} m/s", r.heading_deg, m.speed)))
                .collect::<Vec<_>>()
                .join(", ");
            cell_outcome(path, summary, failed)
        }
        BenchmarkName::MinBraking => {
            let bench = cfg.benchmarks.min_braking.clone().ok_or_else(missing)?;
            let mut spec = cfg.base_spec();
            spec.heading_deg = bench.heading_deg;
            let mut dir = ArtifactDir::create(common, "benchmark", name)?;
            match min_braking_search(&spec, &bench.search, common.seed) {
                Ok(res) => {
                    let mut csv = String::from("duration,success,detail\n");
                    for p in &res.probes {
                        csv.push_str(&format!("{},{},{}\n", p.duration, p.success, p.detail.replace(',', ";")));
                    }
                    dir.write("table.csv", &csv)?;
                    dir.write_json("table.json", &res)?;
                    let pts = res
                        .probes
                        .iter()
                        .map(|p| (p.duration, if p.success { 1.0 } else { 0.0 }))
                        .collect();
                    dir.write(
                        "plot.svg",
                        &svg::render("min-braking", "braking duration, s", &[Panel::new("success", pts)]),
                    )?;
                    let path = dir.finish(common, "benchmark", name, cfg)?;
                    Ok(Outcome {
                        summary: format!("minimum braking time {} s at {} deg", res.min_duration, bench.heading_deg),
                        dir: Some(path),
                    })
                }
                Err(HarnessError::NoFeasibleBraking(detail)) => {
                    dir.write("table.csv", &format!("duration,success,detail\n,false,{}\n", detail.replace(',', ";")))?;
                    dir.write_json("table.json", &serde_json::json!({ "min_duration": null, "detail": detail }))?;
                    let path = dir.finish(common, "benchmark", name, cfg)?;
                    Err(CliError::RunFailed(format!(
                        "no braking duration succeeded ({detail}); table in {}",
                        path.display()
                    )))
                }
                Err(e) => Err(e.into()),
            }
        }
        BenchmarkName::CompareControllers => {
            let bench = cfg.benchmarks.compare_controllers.clone().ok_or_else(missing)?;
            let trials = trials.unwrap_or(bench.trials);
            if trials == 0 {
                return Err(CliError::Usage("--trials must be >= 1".into()));
            }
            let spec = cfg.scenario(&bench.scenario)?;
            let table = compare_controllers(&spec, &bench.controllers, trials, common.seed, &bench.hold_phase);
            let mut dir = ArtifactDir::create(common, "benchmark", name)?;
            dir.write("table.csv", &table.to_csv())?;
            dir.write_json("table.json", &table)?;
            let pts = table
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| (i as f64, r.effort_mean))
                .collect();
            let order: Vec<String> = table.rows.iter().map(|r| r.controller.to_string()).collect();
            dir.write(
                "plot.svg",
                &svg::render(
                    &format!("compare-controllers ({})", order.join(", ")),
                    "controller",
                    &[Panel::new("braking effort", pts)],
                ),
            )?;
            let path = dir.finish(common, "benchmark", name, cfg)?;
            let failed: Vec<String> = table
                .rows
                .iter()
                .filter(|r| !r.errors.is_empty())
                .map(|r| format!("{}: {}", r.controller, r.errors.join("; ")))
                .collect();
            let summary = table
                .rows
                .iter()
                .map(|r| format!("{} J = {:.4} (sd {:.4})", r.controller, r.effort_mean, r.effort_sd))
                .collect::<Vec<_>>()
                .join(", ");
            cell_outcome(path, summary, failed)
        }
    }
}

fn cell_outcome(path: PathBuf, summary: String, failed: Vec<String>) -> Result<Outcome, CliError> {
    if failed.is_empty() {
        Ok(Outcome {
            summary: format!("{summary}; artifacts in {}", path.display()),
            dir: Some(path),
        })
    } else {
        Err(CliError::Internal(format!(
            "{} cell(s) failed: {}; table in {}",
            failed.len(),
            failed.join(" | "),
            path.display()
        )))
    }
}

pub fn serve(cfg: &LabConfig, bind: Option<String>) -> Result<Outcome, CliError> {
    let addr = bind.unwrap_or_else(|| cfg.service.bind.clone());
    // sessions start from the resolved document, overrides included
    let defaults = toml_text(cfg)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    runtime
        .block_on(ballbot_service::serve(defaults, &addr))
        .map_err(CliError::Service)?;
    Ok(Outcome {
        dir: None,
        summary: "server stopped".into(),
    })
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let cfg = resolve_config(&cli.common)?;
    let common = &cli.common;
    match cli.command {
        Cmd::Simulate { scenario } => simulate(common, &cfg, &scenario),
        Cmd::Optimize { task, max_iter } => optimize(common, &cfg, &task, max_iter),
        Cmd::Benchmark { name, headings, trials } => benchmark(common, &cfg, name, headings, trials),
        Cmd::Serve { bind } => serve(&cfg, bind),
    }
}

/// Path helper for tests and docs: where a command writes its artifacts.
pub fn artifact_dir(out: &Path, subcommand: &str, name: &str, tag: &str) -> PathBuf {
    out.join(subcommand).join(name).join(tag)
}
