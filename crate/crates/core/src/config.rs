//! Plain-text `key = value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are errors.
//! Relative paths resolve against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::features::{FeatureConfig, DEFAULT_HOP, DEFAULT_MELS, DEFAULT_WIDTH, DEFAULT_WINDOW};
use crate::nn::{NetworkConfig, NnError};
use crate::quantize::DEFAULT_LIMIT_KB;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Line {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every accepted key, in the order `to_text` writes them.
pub const KEYS: &[&str] = &[
    "network",
    "input_height",
    "input_width",
    "window",
    "hop",
    "batch_size",
    "epochs",
    "lr_max",
    "lr_min",
    "beta1",
    "beta2",
    "epsilon",
    "seeds",
    "mixup",
    "alpha",
    "n_pairs",
    "pitch_factors",
    "audiomix_low",
    "audiomix_high",
    "seed",
    "limit_kb",
    "manifest",
    "plan",
    "train_manifest",
    "val_manifest",
    "eval_manifest",
    "feature_dir",
    "model_dir",
    "report_dir",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelinePaths {
    pub manifest: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub feature_dir: PathBuf,
    pub model_dir: PathBuf,
    pub report_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Network preset, `paper` or `tiny`.
    pub network: String,
    pub input_height: usize,
    pub input_width: usize,
    pub window: usize,
    pub hop: usize,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    /// Seed for augmentation randomness.
    pub seed: u64,
    pub limit_kb: f64,
    pub paths: PipelinePaths,
}

impl PipelineConfig {
    /// Defaults with relative paths resolved against `base`.
    pub fn with_base(base: &Path) -> Self {
        Self {
            network: "paper".to_string(),
            input_height: DEFAULT_MELS,
            input_width: DEFAULT_WIDTH,
            window: DEFAULT_WINDOW,
            hop: DEFAULT_HOP,
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
            limit_kb: DEFAULT_LIMIT_KB,
            paths: PipelinePaths {
                feature_dir: base.join("features"),
                model_dir: base.join("models"),
                report_dir: base.join("reports"),
                ..Default::default()
            },
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| Path::new("."));
        Self::parse(&text, path, base)
    }

    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::with_base(base);
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| ConfigError::Line {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key {key:?}")));
            }
            if seen.contains(&key) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            seen.push(key);
            cfg.set(key, value, base).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse()
                .map_err(|_| format!("{key}: cannot parse {v:?}"))
        }
        let path = || Some(base.join(value));
        match key {
            "network" => self.network = value.to_string(),
            "input_height" => self.input_height = num(key, value)?,
            "input_width" => self.input_width = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "hop" => self.hop = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "lr_max" => self.train.lr_max = num(key, value)?,
            "lr_min" => self.train.lr_min = num(key, value)?,
            "beta1" => self.train.beta1 = num(key, value)?,
            "beta2" => self.train.beta2 = num(key, value)?,
            "epsilon" => self.train.epsilon = num(key, value)?,
            "seeds" => {
                self.train.seeds = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "mixup" => {
                self.train.mixup_alpha = match value {
                    "off" | "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "alpha" => self.augment.alpha = num(key, value)?,
            "n_pairs" => self.augment.n_pairs = num(key, value)?,
            "pitch_factors" => {
                self.augment.pitch_factors = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "audiomix_low" => self.augment.audiomix_range.0 = num(key, value)?,
            "audiomix_high" => self.augment.audiomix_range.1 = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "limit_kb" => self.limit_kb = num(key, value)?,
            "manifest" => self.paths.manifest = path(),
            "plan" => self.paths.plan = path(),
            "train_manifest" => self.paths.train_manifest = path(),
            "val_manifest" => self.paths.val_manifest = path(),
            "eval_manifest" => self.paths.eval_manifest = path(),
            "feature_dir" => self.paths.feature_dir = base.join(value),
            "model_dir" => self.paths.model_dir = base.join(value),
            "report_dir" => self.paths.report_dir = base.join(value),
            _ => unreachable!("key list and setter disagree on {key}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.network_config().map_err(|e| invalid(e.to_string()))?;
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        self.augment.validate().map_err(|e| invalid(e.to_string()))?;
        if self.window == 0 || self.hop == 0 {
            return Err(invalid("window and hop must be at least 1".into()));
        }
        if !(self.limit_kb > 0.0) {
            return Err(invalid(format!("limit_kb must be positive, got {}", self.limit_kb)));
        }
        Ok(())
    }

    pub fn network_config(&self) -> Result<NetworkConfig, NnError> {
        NetworkConfig::preset(&self.network, self.input_height, self.input_width)
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            window: self.window,
            hop: self.hop,
            n_mels: self.input_height,
            target_width: self.input_width,
        }
    }

    /// Render as config text that parses back to the same values.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let a = &self.augment;
        let join = |v: Vec<String>| v.join(",");
        let mut lines = vec![
            format!("network = {}", self.network),
            format!("input_height = {}", self.input_height),
            format!("input_width = {}", self.input_width),
            format!("window = {}", self.window),
            format!("hop = {}", self.hop),
            format!("batch_size = {}", t.batch_size),
            format!("epochs = {}", t.epochs),
            format!("lr_max = {:e}", t.lr_max),
            format!("lr_min = {:e}", t.lr_min),
            format!("beta1 = {}", t.beta1),
            format!("beta2 = {}", t.beta2),
            format!("epsilon = {:e}", t.epsilon),
            format!("seeds = {}", join(t.seeds.iter().map(u64::to_string).collect())),
            format!(
                "mixup = {}",
                t.mixup_alpha.map_or("off".to_string(), |a| a.to_string())
            ),
            format!("alpha = {}", a.alpha),
            format!("n_pairs = {}", a.n_pairs),
            format!(
                "pitch_factors = {}",
                join(a.pitch_factors.iter().map(f64::to_string).collect())
            ),
            format!("audiomix_low = {}", a.audiomix_range.0),
            format!("audiomix_high = {}", a.audiomix_range.1),
            format!("seed = {}", self.seed),
            format!("limit_kb = {}", self.limit_kb),
        ];
        let p = &self.paths;
        for (key, value) in [
            ("manifest", &p.manifest),
            ("plan", &p.plan),
            ("train_manifest", &p.train_manifest),
            ("val_manifest", &p.val_manifest),
            ("eval_manifest", &p.eval_manifest),
        ] {
            if let Some(v) = value {
                lines.push(format!("{key} = {}", v.display()));
            }
        }
        lines.push(format!("feature_dir = {}", p.feature_dir.display()));
        lines.push(format!("model_dir = {}", p.model_dir.display()));
        lines.push(format!("report_dir = {}", p.report_dir.display()));
        lines.join("\n") + "\n"
    }
}
