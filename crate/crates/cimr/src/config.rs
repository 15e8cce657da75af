//! Experiment configuration: a plain key-value text file plus CLI overrides.
//!
//! Recognized keys (one `key = value` pair per line, `#` starts a comment):
//!
//! ```text
//! base_seed      = 42
//! episodes       = 10000
//! task_mix       = 0.34, 0.33, 0.33        # place, identify_all, count
//! variants       = full, no_dynamic_context, no_self_correction
//! targets        = 78.5, 88.0, 91.0, 91.5  # oracle calibration accuracies
//! context_factor = 0.42                    # no_dynamic_context correction damping
//! t_max          = 4
//! backend_url    = http://127.0.0.1:8000   # switches to the remote backend
//! timeout_secs   = 30
//! out            = results.csv
//! traces         = traces.jsonl
//! triplets       = triplets.jsonl
//! format         = csv                     # or markdown
//! ```

use std::path::{Path, PathBuf};

use cimr_core::backends::{calibrate_oracle, DEFAULT_REMOTE_TIMEOUT_SECS};
use cimr_core::engine::{Variant, DEFAULT_T_MAX};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("unknown variant `{0}`")]
    BadVariant(String),
    #[error("bad calibration targets: {0}")]
    BadCalibration(String),
    #[error("experiment needs at least one episode")]
    NoEpisodes,
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("missing output path: pass --{0} or set `{0}` in the config")]
    MissingOutput(&'static str),
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    /// Scripted oracle calibrated to per-round accuracy targets.
    Oracle { targets: Vec<f64> },
    /// Remote service speaking the `/v1/respond` protocol.
    Remote { url: String, timeout_secs: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Markdown,
}

impl OutputFormat {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "csv" => Some(OutputFormat::Csv),
            "markdown" => Some(OutputFormat::Markdown),
            _ => None,
        }
    }
}

/// Default calibration targets (per-round cumulative accuracy, percent).
pub const DEFAULT_TARGETS: [f64; 4] = [78.5, 88.0, 91.0, 91.5];
/// Default final-accuracy level used to derive the static-context damping
/// factor when `context_factor` is not set explicitly.
pub const DEFAULT_STATIC_CONTEXT_LEVEL: f64 = 84.7;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub base_seed: u64,
    pub episodes: usize,
    /// Proportions for (place, identify_all, count); must sum to 1.
    pub task_mix: [f64; 3],
    pub variants: Vec<Variant>,
    pub backend: BackendChoice,
    /// Correction damping for the static-context variant. `None` derives it
    /// from the calibration targets and the default ablation level.
    pub context_factor: Option<f64>,
    pub t_max: usize,
    pub out: Option<PathBuf>,
    pub traces: Option<PathBuf>,
    pub triplets: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base_seed: 42,
            episodes: 10_000,
            task_mix: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            variants: vec![Variant::Full],
            backend: BackendChoice::Oracle { targets: DEFAULT_TARGETS.to_vec() },
            context_factor: None,
            t_max: DEFAULT_T_MAX,
            out: None,
            traces: None,
            triplets: None,
            format: OutputFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    /// Checks the cross-field invariants.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.episodes == 0 {
            return Err(ConfigError::NoEpisodes);
        }
        let sum: f64 = self.task_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.task_mix.iter().any(|&p| p < 0.0) {
            return Err(ConfigError::BadValue {
                key: "task_mix".into(),
                reason: format!("proportions must be non-negative and sum to 1, got {sum}"),
            });
        }
        if self.t_max < 1 {
            return Err(ConfigError::BadValue {
                key: "t_max".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self.variants.is_empty() {
            return Err(ConfigError::BadValue {
                key: "variants".into(),
                reason: "at least one variant required".into(),
            });
        }
        if let Some(f) = self.context_factor {
            if !(0.0..=1.0).contains(&f) {
                return Err(ConfigError::BadValue {
                    key: "context_factor".into(),
                    reason: format!("must lie in [0, 1], got {f}"),
                });
            }
        }
        if let BackendChoice::Oracle { targets } = &self.backend {
            calibrate_oracle(targets)
                .map_err(|e| ConfigError::BadCalibration(e.to_string()))?;
        }
        Ok(())
    }
}

fn parse_list(value: &str) -> Vec<&str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        reason: format!("cannot parse `{value}`"),
    })
}

/// Parses a config file and applies defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    let mut cfg = ExperimentConfig::default();
    let mut remote_url: Option<String> = None;
    let mut timeout_secs = DEFAULT_REMOTE_TIMEOUT_SECS;

    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::BadValue {
                key: line.into(),
                reason: "expected `key = value`".into(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "base_seed" => cfg.base_seed = parse_num(key, value)?,
            "episodes" => cfg.episodes = parse_num(key, value)?,
            "task_mix" => {
                let parts = parse_list(value);
                if parts.len() != 3 {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        reason: "expected three comma-separated proportions".into(),
                    });
                }
                for (slot, part) in cfg.task_mix.iter_mut().zip(parts) {
                    *slot = parse_num(key, part)?;
                }
            }
            "variants" => {
                let mut variants = Vec::new();
                for name in parse_list(value) {
                    let variant = Variant::from_name(name)
                        .ok_or_else(|| ConfigError::BadVariant(name.to_string()))?;
                    variants.push(variant);
                }
                cfg.variants = variants;
            }
            "targets" => {
                let mut targets = Vec::new();
                for part in parse_list(value) {
                    targets.push(parse_num(key, part)?);
                }
                cfg.backend = BackendChoice::Oracle { targets };
            }
            "context_factor" => cfg.context_factor = Some(parse_num(key, value)?),
            "t_max" => cfg.t_max = parse_num(key, value)?,
            "backend_url" => remote_url = Some(value.to_string()),
            "timeout_secs" => timeout_secs = parse_num(key, value)?,
            "out" => cfg.out = Some(PathBuf::from(value)),
            "traces" => cfg.traces = Some(PathBuf::from(value)),
            "triplets" => cfg.triplets = Some(PathBuf::from(value)),
            "format" => {
                cfg.format = OutputFormat::from_name(value).ok_or_else(|| {
                    ConfigError::BadValue {
                        key: key.into(),
                        reason: format!("expected csv or markdown, got `{value}`"),
                    }
                })?;
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
    }

    if let Some(url) = remote_url {
        cfg.backend = BackendChoice::Remote { url, timeout_secs };
    }
    cfg.validate()?;
    Ok(cfg)
}
