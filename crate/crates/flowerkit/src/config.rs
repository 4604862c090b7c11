//! Run configuration: a flat `key = value` text file.
//!
//! Blank lines and everything after `#` are ignored. Relative paths are
//! resolved against the directory holding the file. Unknown keys,
//! duplicates, malformed values and out-of-range numbers are errors.
//!
//! ```text
//! dataset = data/advection.flw
//! out_dir = runs/adv
//! levels = 2        # U-Net depth
//! c_lift = 32
//! heads = 4
//! epochs = 30
//! ```

use std::path::{Path, PathBuf};

use flowerkit_core::flower::FlowerConfig;
use flowerkit_core::grid::Boundary;
use flowerkit_core::train::{AdamW, TrainConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("`{key} = {value}`: expected {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("`{key} = {value}` is outside {range}")]
    OutOfRange {
        key: String,
        value: String,
        range: &'static str,
    },
    #[error("required key `{0}` missing")]
    Missing(&'static str),
    #[error("`{key}`: path {path} does not exist")]
    PathMissing { key: &'static str, path: PathBuf },
}

/// Every knob of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub levels: usize,
    pub c_lift: usize,
    pub heads: usize,
    pub groups: usize,
    pub residual: bool,
    pub bc: Boundary,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// `0` uses every window.
    pub windows_per_traj: usize,
    pub valid_windows_per_traj: usize,
    pub normalize: bool,
    pub seed: u64,
}

pub const KEYS: [&str; 21] = [
    "dataset",
    "out_dir",
    "levels",
    "c_lift",
    "heads",
    "groups",
    "residual",
    "bc",
    "epochs",
    "batch_size",
    "lr",
    "warmup_epochs",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "clip_norm",
    "windows_per_traj",
    "valid_windows_per_traj",
    "normalize",
    "seed",
];

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dataset: PathBuf::new(),
            out_dir: PathBuf::new(),
            levels: 2,
            c_lift: 32,
            heads: 4,
            groups: 4,
            residual: false,
            bc: Boundary::Periodic,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr_peak,
            warmup_epochs: t.warmup_epochs,
            beta1: t.adamw.beta1,
            beta2: t.adamw.beta2,
            eps: t.adamw.eps,
            weight_decay: t.adamw.weight_decay,
            clip_norm: t.clip_norm,
            windows_per_traj: 0,
            valid_windows_per_traj: 0,
            normalize: t.normalize,
            seed: t.seed,
        }
    }
}

fn bad(key: &str, value: &str, expected: &'static str) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        expected,
    }
}

fn range(key: &str, value: impl ToString, range: &'static str) -> ConfigError {
    ConfigError::OutOfRange {
        key: key.into(),
        value: value.to_string(),
        range,
    }
}

fn int(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn real(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad(key, v, "a finite number"))
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v, "`true` or `false`")),
    }
}

impl RunConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            let Some(&key) = KEYS.iter().find(|&&key| key == k) else {
                return Err(ConfigError::UnknownKey { line, key: k.into() });
            };
            if seen.contains(&key) {
                return Err(ConfigError::DuplicateKey { line, key: k.into() });
            }
            seen.push(key);
            c.set(key, v, base)?;
        }
        for req in ["dataset", "out_dir"] {
            if !seen.contains(&req) {
                return Err(ConfigError::Missing(req));
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self::parse(&text, base)?)
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), ConfigError> {
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        match key {
            "dataset" => self.dataset = path(v),
            "out_dir" => self.out_dir = path(v),
            "levels" => self.levels = int(key, v)?,
            "c_lift" => self.c_lift = int(key, v)?,
            "heads" => self.heads = int(key, v)?,
            "groups" => self.groups = int(key, v)?,
            "residual" => self.residual = boolean(key, v)?,
            "bc" => self.bc = Boundary::parse(v).ok_or_else(|| bad(key, v, "periodic, clamp or reflect"))?,
            "epochs" => self.epochs = int(key, v)?,
            "batch_size" => self.batch_size = int(key, v)?,
            "lr" => self.lr = real(key, v)?,
            "warmup_epochs" => self.warmup_epochs = int(key, v)?,
            "beta1" => self.beta1 = real(key, v)?,
            "beta2" => self.beta2 = real(key, v)?,
            "eps" => self.eps = real(key, v)?,
            "weight_decay" => self.weight_decay = real(key, v)?,
            "clip_norm" => self.clip_norm = real(key, v)?,
            "windows_per_traj" => self.windows_per_traj = int(key, v)?,
            "valid_windows_per_traj" => self.valid_windows_per_traj = int(key, v)?,
            "normalize" => self.normalize = boolean(key, v)?,
            "seed" => self.seed = v.parse().map_err(|_| bad(key, v, "a non-negative integer"))?,
            _ => unreachable!("key list and setter disagree"),
        }
        Ok(())
    }

    /// Range checks and path existence.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=8).contains(&self.levels) {
            return Err(range("levels", self.levels, "1..=8"));
        }
        for (k, v) in [
            ("c_lift", self.c_lift),
            ("heads", self.heads),
            ("groups", self.groups),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(range(k, v, "1.."));
            }
        }
        if !self.c_lift.is_multiple_of(self.heads) {
            return Err(range("heads", self.heads, "divisors of c_lift"));
        }
        if !self.c_lift.is_multiple_of(self.groups) {
            return Err(range("groups", self.groups, "divisors of c_lift"));
        }
        if !(self.lr > 0.0) {
            return Err(range("lr", self.lr, "(0, inf)"));
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(range(k, v, "[0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(range("eps", self.eps, "(0, inf)"));
        }
        if self.weight_decay < 0.0 {
            return Err(range("weight_decay", self.weight_decay, "[0, inf)"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(range("clip_norm", self.clip_norm, "(0, inf)"));
        }
        if !self.dataset.is_file() {
            return Err(ConfigError::PathMissing {
                key: "dataset",
                path: self.dataset.clone(),
            });
        }
        let out_parent = self.out_dir.parent().filter(|p| !p.as_os_str().is_empty());
        if !self.out_dir.is_dir() && out_parent.is_some_and(|p| !p.is_dir()) {
            return Err(ConfigError::PathMissing {
                key: "out_dir",
                path: self.out_dir.clone(),
            });
        }
        Ok(())
    }

    /// Model architecture for a dataset with `dim` axes and `channels` fields.
    pub fn flower_config(&self, dim: usize, channels: usize) -> FlowerConfig {
        FlowerConfig {
            bc: self.bc,
            residual: self.residual,
            ..FlowerConfig::next_step(dim, channels, self.levels, self.c_lift, self.heads, self.groups)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let opt = |n: usize| (n > 0).then_some(n);
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_peak: self.lr,
            warmup_epochs: self.warmup_epochs,
            adamw: AdamW {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
            },
            clip_norm: self.clip_norm,
            windows_per_traj: opt(self.windows_per_traj),
            valid_windows_per_traj: opt(self.valid_windows_per_traj),
            normalize: self.normalize,
            seed: self.seed,
        }
    }

    /// Canonical text form with absolute paths (parses back to `self`).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("dataset", self.dataset.display().to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("levels", self.levels.to_string());
        kv("c_lift", self.c_lift.to_string());
        kv("heads", self.heads.to_string());
        kv("groups", self.groups.to_string());
        kv("residual", self.residual.to_string());
        kv("bc", self.bc.name().to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("eps", self.eps.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("clip_norm", self.clip_norm.to_string());
        kv("windows_per_traj", self.windows_per_traj.to_string());
        kv("valid_windows_per_traj", self.valid_windows_per_traj.to_string());
        kv("normalize", self.normalize.to_string());
        kv("seed", self.seed.to_string());
        s
    }
}
