//! Lab configuration documents.
//!
//! One TOML document holds the plant, controller, sensor and failure
//! settings plus named scenarios, optimization tasks and benchmarks. Two
//! presets ship with the crate: `miapure.default` (full-size ballbot, three
//! planes) and `piptb.default` (planar testbed).
//!
//! Overrides use dotted paths into the document (`controller.pi.kp=4`,
//! `controller.weights.q_diag.0=50`); the path must already exist.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

use crate::controllers::ControllerKind;
use crate::harness::{
    BrakingSearch, ControllerConfig, FailureEnvelope, InitialTilt, HarnessError, Phase, PlantConfig, PlantMode, Platform, RampSettings,
    ScenarioSpec, SensorModel, SuccessCriteria,
};
use crate::trajopt::{BrakingTask, SolveOptions};

const MIAPURE: &str = include_str!("../presets/miapure.default.toml");
const PIPTB: &str = include_str!("../presets/piptb.default.toml");

/// Names accepted by [`LabConfig::preset`].
pub const PRESETS: [&str; 2] = ["miapure.default", "piptb.default"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("override `{0}`: expected key=value")]
    OverrideSyntax(String),
    #[error("override `{0}`: no such key in the configuration")]
    UnknownKey(String),
    #[error("unknown preset `{0}` (available: miapure.default, piptb.default)")]
    UnknownPreset(String),
    #[error("unknown {kind} `{name}`; available: {available}")]
    UnknownEntry {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<PlantMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effort_phase: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialTilt>,
    pub phases: Vec<Phase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    #[serde(flatten)]
    pub task: BrakingTask,
    #[serde(default = "default_knots")]
    pub n_knots: usize,
    #[serde(default)]
    pub solver: SolveOptions,
}

fn default_knots() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxSpeedBenchmark {
    pub headings_deg: Vec<f64>,
    #[serde(default)]
    pub ramp: RampSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinBrakingBenchmark {
    pub heading_deg: f64,
    #[serde(default)]
    pub search: BrakingSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareBenchmark {
    /// Scenario providing the plant and protocol.
    pub scenario: String,
    pub controllers: Vec<ControllerKind>,
    pub trials: usize,
    /// Phase whose mean speed error is reported.
    #[serde(default = "default_hold")]
    pub hold_phase: String,
}

fn default_hold() -> String {
    "hold".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Benchmarks {
    #[serde(rename = "max-speed", default, skip_serializing_if = "Option::is_none")]
    pub max_speed: Option<MaxSpeedBenchmark>,
    #[serde(rename = "min-braking", default, skip_serializing_if = "Option::is_none")]
    pub min_braking: Option<MinBrakingBenchmark>,
    #[serde(rename = "compare-controllers", default, skip_serializing_if = "Option::is_none")]
    pub compare_controllers: Option<CompareBenchmark>,
}

/// Interactive session defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    pub bind: String,
    /// Telemetry rate, Hz (at most 200).
    pub stream_hz: f64,
    /// Translation command limit, m/s.
    pub max_speed: f64,
    /// Command slew limit, m/s^2.
    pub max_accel: f64,
    /// Yaw-rate command limit, rad/s.
    pub max_yaw_rate: f64,
    /// Wall-clock pacing factor.
    pub real_time_factor: f64,
    /// Largest number of integration steps run per pacing tick.
    pub max_batch: usize,
    /// Length of the optimal stop used by the `brake-now` trigger, s.
    pub brake_duration: f64,
    /// Acceleration of the `ramp-test` trigger, m/s^2.
    pub ramp_rate: f64,
}

impl ServiceSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Parse(format!("service.{m}")));
        if !(self.stream_hz > 0.0 && self.stream_hz <= 200.0) {
            return bad("stream_hz must lie in (0, 200]");
        }
        if !(self.max_speed > 0.0 && self.max_accel > 0.0 && self.max_yaw_rate >= 0.0) {
            return bad("command limits must be positive");
        }
        if !(self.real_time_factor > 0.0 && self.real_time_factor.is_finite()) {
            return bad("real_time_factor must be > 0");
        }
        if self.max_batch == 0 {
            return bad("max_batch must be >= 1");
        }
        if !(self.brake_duration > 0.0 && self.ramp_rate > 0.0) {
            return bad("brake_duration and ramp_rate must be > 0");
        }
        Ok(())
    }
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            stream_hz: 50.0,
            max_speed: 2.0,
            max_accel: 1.5,
            max_yaw_rate: 1.0,
            real_time_factor: 1.0,
            max_batch: 4000,
            brake_duration: 2.0,
            ramp_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    pub platform: Platform,
    pub mode: PlantMode,
    #[serde(default)]
    pub heading_deg: f64,
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub sensor: SensorModel,
    #[serde(default)]
    pub failure: FailureEnvelope,
    #[serde(default)]
    pub success: SuccessCriteria,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub scenarios: BTreeMap<String, ScenarioEntry>,
    #[serde(default)]
    pub tasks: BTreeMap<String, TaskEntry>,
    #[serde(default)]
    pub benchmarks: Benchmarks,
    #[serde(default)]
    pub service: ServiceSettings,
}

fn default_log_every() -> usize {
    8
}

/// Applies `key=value` overrides to a parsed document. Values are read as
/// TOML literals, falling back to bare strings.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), ConfigError> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::OverrideSyntax(item.clone()))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::OverrideSyntax(item.clone()));
        }
        let value = parse_literal(raw.trim());
        let mut node = &mut *doc;
        for segment in key.split('.') {
            node = match node {
                Value::Table(t) => t.get_mut(segment),
                Value::Array(a) => segment.parse::<usize>().ok().and_then(move |i| a.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        }
        *node = coerce(node, value);
    }
    Ok(())
}

fn parse_literal(raw: &str) -> Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: Value,
    }
    toml::from_str::<Wrap>(&format!("v = {raw}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Keeps floats floats when an integer literal replaces one.
fn coerce(old: &Value, new: Value) -> Value {
    match (old, new) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    }
}

impl LabConfig {
    /// The resolved document as TOML; parses back to an equal config.
    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        Self::from_toml_str(Self::preset_text(name)?, &[])
    }

    pub fn preset_text(name: &str) -> Result<&'static str, ConfigError> {
        match name {
            "miapure.default" | "miapure" => Ok(MIAPURE),
            "piptb.default" | "piptb" => Ok(PIPTB),
            _ => Err(ConfigError::UnknownPreset(name.to_string())),
        }
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: Value = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        apply_overrides(&mut doc, overrides)?;
        let cfg: LabConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.plant.validate()?;
        cfg.service.validate()?;
        Ok(cfg)
    }

    /// Loads a file, or a preset when `path` names one.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        if let Some(name) = path.to_str().filter(|p| PRESETS.contains(p)) {
            return Self::from_toml_str(Self::preset_text(name)?, overrides);
        }
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text, overrides)
    }

    /// A scenario with the document-wide settings and no phases.
    pub fn base_spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            platform: self.platform,
            mode: self.mode,
            plant: self.plant,
            controller: self.controller,
            phases: Vec::new(),
            heading_deg: self.heading_deg,
            sensor: self.sensor,
            dt: None,
            failure: self.failure,
            log_every: self.log_every,
            effort_phase: "brake".into(),
            success: self.success,
            initial: Default::default(),
        }
    }

    pub fn scenario(&self, name: &str) -> Result<ScenarioSpec, ConfigError> {
        let entry = self.scenarios.get(name).ok_or_else(|| ConfigError::UnknownEntry {
            kind: "scenario",
            name: name.to_string(),
            available: join_keys(&self.scenarios),
        })?;
        let mut spec = self.base_spec();
        spec.phases = entry.phases.clone();
        if let Some(h) = entry.heading_deg {
            spec.heading_deg = h;
        }
        if let Some(m) = entry.mode {
            spec.mode = m;
        }
        if let Some(k) = entry.controller {
            spec.controller.kind = k;
        }
        if let Some(p) = &entry.effort_phase {
            spec.effort_phase = p.clone();
        }
        if let Some(init) = entry.initial {
            spec.initial = init;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn task(&self, name: &str) -> Result<&TaskEntry, ConfigError> {
        self.tasks.get(name).ok_or_else(|| ConfigError::UnknownEntry {
            kind: "task",
            name: name.to_string(),
            available: join_keys(&self.tasks),
        })
    }
}

fn join_keys<V>(m: &BTreeMap<String, V>) -> String {
    if m.is_empty() {
        "(none)".into()
    } else {
        m.keys().cloned().collect::<Vec<_>>().join(", ")
    }
}
