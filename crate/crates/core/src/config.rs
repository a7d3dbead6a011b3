//! Scenario configuration: TOML schema, defaults, flag overrides and presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netem::{schedule_from_table, ScheduleStep, ShapingKind, ShapingSchedule};
use crate::rate_control::{EncodingLadder, Level, Thresholds};
use crate::rtcp::{EstimatorState, EstimatorStrategy};
use crate::scalar::Scalar;
use crate::sim::{ShapedPath, TopologyKind};

/// Output directory used when neither `--out`, `QOSLAB_OUT` nor `[output] dir` is set.
pub const DEFAULT_OUT_DIR: &str = "qoslab-out";
pub const OUT_ENV: &str = "QOSLAB_OUT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: key `{key}`{location}: {message}")]
    Parse {
        origin: String,
        key: String,
        location: String,
        message: String,
    },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid<T>(key: &str, message: impl ToString) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid {
        key: key.to_string(),
        message: message.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelayConfig {
    /// Re-encode at the relay. Off, the relay only forwards and downlink feedback is unused.
    pub transcoding: bool,
    /// Signaling time before media starts in relay topologies.
    pub setup_delay_ms: f64,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            transcoding: true,
            setup_delay_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub strategy: EstimatorStrategy,
    pub initial_kbps: f64,
    pub oracle_lag_ms: f64,
    pub increase_factor: f64,
    pub decrease_factor: f64,
    pub queue_delay_threshold_ms: f64,
    pub loss_threshold: f64,
    pub cap_kbps: f64,
    /// Report intervals over which the base (minimum) transit is tracked.
    pub delay_window_reports: u32,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        let e = EstimatorState::<f64>::new(EstimatorStrategy::Oracle, 10_000.0);
        Self {
            strategy: e.strategy,
            initial_kbps: e.est_kbps,
            oracle_lag_ms: e.oracle_lag_ms,
            increase_factor: e.increase_factor,
            decrease_factor: e.decrease_factor,
            queue_delay_threshold_ms: e.queue_delay_threshold_ms,
            loss_threshold: e.loss_threshold,
            cap_kbps: e.est_cap_kbps,
            delay_window_reports: 20,
        }
    }
}

impl EstimatorConfig {
    pub fn state<S: Scalar>(&self) -> EstimatorState<S> {
        let mut e = EstimatorState::new(self.strategy, S::lit(self.initial_kbps));
        e.oracle_lag_ms = S::lit(self.oracle_lag_ms);
        e.increase_factor = S::lit(self.increase_factor);
        e.decrease_factor = S::lit(self.decrease_factor);
        e.queue_delay_threshold_ms = S::lit(self.queue_delay_threshold_ms);
        e.loss_threshold = S::lit(self.loss_threshold);
        e.est_cap_kbps = S::lit(self.cap_kbps);
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingConfig {
    pub kind: ShapingKind,
    /// Which access link(s) the schedule drives. Unset: downlink for relays, uplink for Direct.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<ShapedPath>,
    /// `[start_s, value]` pairs, value in kbps or ms. Unset: the built-in 20 s table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<[f64; 2]>>,
    /// Cycle length for custom steps. Unset: the run duration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle_s: Option<f64>,
    pub repeat: bool,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            kind: ShapingKind::Bandwidth,
            path: None,
            steps: None,
            cycle_s: None,
            repeat: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Unset: uncapped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity_kbps: Option<f64>,
    pub latency_ms: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            capacity_kbps: None,
            latency_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinksConfig {
    pub uplink: LinkConfig,
    pub downlink: LinkConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub topology: TopologyKind,
    pub duration_s: f64,
    pub seed: u64,
    pub report_period_ms: f64,
    pub hold_down_ms: f64,
    pub initial_level: Level,
    /// Pins every controller at this level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_level: Option<Level>,
    pub keyframe_weight: f64,
    pub mtu_payload_bytes: u32,
    pub queue_limit_bytes: u64,
    pub report_bytes: u32,
    /// Relative amplitude of seeded frame-size noise, 0 for exact sizes.
    pub size_jitter: f64,
    pub relay: RelayConfig,
    pub estimator: EstimatorConfig,
    pub thresholds: Thresholds<f64>,
    pub ladder: EncodingLadder,
    pub shaping: ShapingConfig,
    pub links: LinksConfig,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: "default".to_string(),
            topology: TopologyKind::Direct,
            duration_s: 100.0,
            seed: 1,
            report_period_ms: 500.0,
            hold_down_ms: 0.0,
            initial_level: Level::Good,
            fixed_level: None,
            keyframe_weight: 4.0,
            mtu_payload_bytes: 1200,
            queue_limit_bytes: 2_000_000,
            report_bytes: 128,
            size_jitter: 0.0,
            relay: RelayConfig::default(),
            estimator: EstimatorConfig::default(),
            thresholds: Thresholds::default(),
            ladder: EncodingLadder::default(),
            shaping: ShapingConfig::default(),
            links: LinksConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, col)
}

impl ScenarioConfig {
    /// Parses TOML; every key is optional and unknown keys are rejected.
    pub fn from_toml_str(src: &str, origin: &str) -> Result<Self, ConfigError> {
        let parse_err = |key: String, e: toml::de::Error| ConfigError::Parse {
            origin: origin.to_string(),
            key,
            location: e
                .span()
                .map(|s| {
                    let (l, c) = line_col(src, s.start);
                    format!(" at line {l}, column {c}")
                })
                .unwrap_or_default(),
            message: e.message().trim().to_string(),
        };
        let de = toml::Deserializer::parse(src).map_err(|e| parse_err("<document>".to_string(), e))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            parse_err(key, e.into_inner())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let src = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                ConfigError::NotFound(path.to_path_buf())
            } else {
                ConfigError::Io {
                    path: path.to_path_buf(),
                    source: e,
                }
            }
        })?;
        Self::from_toml_str(&src, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn shaped_path(&self) -> ShapedPath {
        self.shaping.path.unwrap_or(self.topology.default_shaped_path())
    }

    pub fn duration_ms(&self) -> f64 {
        self.duration_s * 1000.0
    }

    pub fn transcoding(&self) -> bool {
        self.topology == TopologyKind::TranscodingRelay && self.relay.transcoding
    }

    /// Directory name of this run inside the output directory.
    pub fn run_name(&self) -> String {
        format!(
            "{}-{}-{}-{}-p{}-s{}",
            self.scenario,
            self.topology,
            self.shaping.kind,
            self.shaped_path().as_str(),
            self.report_period_ms,
            self.seed
        )
    }

    pub fn schedule<S: Scalar>(&self) -> Result<ShapingSchedule<S>, ConfigError> {
        let Some(steps) = &self.shaping.steps else {
            return Ok(schedule_from_table(self.shaping.kind));
        };
        let steps: Vec<ScheduleStep<S>> = steps
            .iter()
            .map(|[start_s, value]| ScheduleStep {
                start_ms: S::lit(start_s * 1000.0),
                value: S::lit(*value),
            })
            .collect();
        let cycle_ms = S::lit(self.shaping.cycle_s.unwrap_or(self.duration_s) * 1000.0);
        ShapingSchedule::new(self.shaping.kind, steps, cycle_ms, self.shaping.repeat)
            .or_else(|e| invalid("shaping.steps", e))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scenario.is_empty() || self.scenario.contains(['/', '\\']) {
            return invalid("scenario", "must be a non-empty name without path separators");
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return invalid("duration_s", "must be positive");
        }
        if !(self.report_period_ms.is_finite() && self.report_period_ms > 0.0) {
            return invalid("report_period_ms", "must be positive");
        }
        if !(self.hold_down_ms.is_finite() && self.hold_down_ms >= 0.0) {
            return invalid("hold_down_ms", "must be non-negative");
        }
        if !(self.keyframe_weight.is_finite() && self.keyframe_weight >= 1.0) {
            return invalid("keyframe_weight", "must be at least 1");
        }
        if self.mtu_payload_bytes == 0 {
            return invalid("mtu_payload_bytes", "must be positive");
        }
        if self.queue_limit_bytes < self.mtu_payload_bytes as u64 {
            return invalid("queue_limit_bytes", "must hold at least one full packet");
        }
        if self.report_bytes == 0 || self.report_bytes > self.mtu_payload_bytes {
            return invalid("report_bytes", "must lie in 1..=mtu_payload_bytes");
        }
        if !(0.0..1.0).contains(&self.size_jitter) {
            return invalid("size_jitter", "must lie in [0, 1)");
        }
        if !(self.relay.setup_delay_ms.is_finite() && self.relay.setup_delay_ms >= 0.0) {
            return invalid("relay.setup_delay_ms", "must be non-negative");
        }
        self.thresholds.validate().or_else(|e| invalid("thresholds", e))?;
        self.ladder.validate().or_else(|e| invalid("ladder", e))?;
        self.estimator
            .state::<f64>()
            .validate()
            .or_else(|e| invalid("estimator", e))?;
        if !(0.0..=1.0).contains(&self.estimator.loss_threshold) {
            return invalid("estimator.loss_threshold", "must lie in [0, 1]");
        }
        if self.estimator.delay_window_reports == 0 {
            return invalid("estimator.delay_window_reports", "must be at least 1");
        }
        for (key, link) in [
            ("links.uplink", &self.links.uplink),
            ("links.downlink", &self.links.downlink),
        ] {
            if let Some(c) = link.capacity_kbps {
                if !(c.is_finite() && c > 0.0) {
                    return invalid(&format!("{key}.capacity_kbps"), "must be positive");
                }
            }
            if !(link.latency_ms.is_finite() && link.latency_ms >= 0.0) {
                return invalid(&format!("{key}.latency_ms"), "must be non-negative");
            }
        }
        if let Some(c) = self.shaping.cycle_s {
            if !(c.is_finite() && c > 0.0) {
                return invalid("shaping.cycle_s", "must be positive");
            }
        }
        self.schedule::<f64>()?;
        Ok(())
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub topology: Option<TopologyKind>,
    pub shaping: Option<ShapingKind>,
    pub shaped_path: Option<ShapedPath>,
    pub estimator: Option<EstimatorStrategy>,
    pub report_period_ms: Option<f64>,
    pub duration_s: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(t) = self.topology {
            cfg.topology = t;
        }
        if let Some(k) = self.shaping {
            if cfg.shaping.kind != k {
                // Custom steps are in the old kind's unit.
                cfg.shaping.steps = None;
                cfg.shaping.cycle_s = None;
            }
            cfg.shaping.kind = k;
        }
        if let Some(p) = self.shaped_path {
            cfg.shaping.path = Some(p);
        }
        if let Some(e) = self.estimator {
            cfg.estimator.strategy = e;
        }
        if let Some(p) = self.report_period_ms {
            cfg.report_period_ms = p;
        }
        if let Some(d) = self.duration_s {
            cfg.duration_s = d;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = Some(o.clone());
        }
    }
}

/// Output directory: flag (already in the config), then `QOSLAB_OUT`, then the file, then the default.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, file: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|e| !e.is_empty()).map(PathBuf::from))
        .or_else(|| file.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub const PRESETS: [&str; 5] = [
    "default",
    "paper-bandwidth",
    "paper-latency",
    "paper-table6",
    "paper-table4",
];

/// Built-in scenario sets. `None` for an unknown name.
pub fn preset(name: &str) -> Option<Vec<ScenarioConfig>> {
    let base = |kind: ShapingKind| ScenarioConfig {
        scenario: name.to_string(),
        shaping: ShapingConfig {
            kind,
            ..ShapingConfig::default()
        },
        ..ScenarioConfig::default()
    };
    let set = match name {
        "default" => vec![ScenarioConfig::default()],
        "paper-bandwidth" => vec![base(ShapingKind::Bandwidth)],
        "paper-latency" => vec![base(ShapingKind::Latency)],
        "paper-table6" => {
            let mut v = Vec::new();
            for kind in [ShapingKind::Bandwidth, ShapingKind::Latency] {
                for topology in TopologyKind::ALL {
                    let mut c = base(kind);
                    c.topology = topology;
                    c.shaping.path = Some(ShapedPath::Downlink);
                    v.push(c);
                }
            }
            v
        }
        "paper-table4" => {
            let mut v = Vec::new();
            for kind in [ShapingKind::Bandwidth, ShapingKind::Latency] {
                for period in [500.0, 1000.0] {
                    let mut c = base(kind);
                    c.report_period_ms = period;
                    v.push(c);
                }
            }
            v
        }
        _ => return None,
    };
    Some(set)
}

/// Resolves `--scenario`: a preset name or a TOML file path.
pub fn load_scenarios(scenario: Option<&str>) -> Result<Vec<ScenarioConfig>, ConfigError> {
    let name = scenario.unwrap_or("default");
    if let Some(set) = preset(name) {
        return Ok(set);
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(ConfigError::NotFound(path.to_path_buf()));
    }
    let mut cfg = ScenarioConfig::from_file(path)?;
    if cfg.scenario == "default" {
        if let Some(stem) = path.file_stem() {
            cfg.scenario = stem.to_string_lossy().into_owned();
        }
    }
    Ok(vec![cfg])
}
