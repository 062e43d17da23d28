//! Run configuration: reference default values, key-value config
//! files, command-line overrides, and the hash that keys resumable
//! result rows.

use std::fmt;
use std::path::{Path, PathBuf};

use rdis_core::ensemble::TrainConfig;
use rdis_core::models::ModelKind;

use crate::CliError;

/// The four training settings: plain reconstruction, random drop
/// without and with an ensemble, and random drop plus self-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    None,
    RdiNoEnsemble,
    Rdi,
    Rdis,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::RdiNoEnsemble => "rdi_no_ensemble",
            Method::Rdi => "rdi",
            Method::Rdis => "rdis",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Method::None),
            "rdi_no_ensemble" => Some(Method::RdiNoEnsemble),
            "rdi" => Some(Method::Rdi),
            "rdis" => Some(Method::Rdis),
            _ => None,
        }
    }

    /// Members actually trained: single-model methods ignore `n`.
    pub fn effective_n(self, n: usize) -> usize {
        match self {
            Method::None | Method::RdiNoEnsemble => 1,
            Method::Rdi | Method::Rdis => n,
        }
    }
}

/// Training arithmetic width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    F32,
    F64,
}

impl ScalarKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalarKind::F32 => "f32",
            ScalarKind::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(ScalarKind::F32),
            "f64" => Some(ScalarKind::F64),
            _ => None,
        }
    }
}

/// Where windows come from: a CSV on disk or the built-in generator.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic { rows: usize, d: usize },
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Csv(path) => write!(f, "{}", path.display()),
            DataSource::Synthetic { rows, d } => write!(f, "synthetic:{rows}x{d}"),
        }
    }
}

fn parse_source(value: &str) -> Result<DataSource, String> {
    if value == "synthetic" {
        return Ok(DataSource::Synthetic { rows: 2600, d: 4 });
    }
    if let Some(dims) = value.strip_prefix("synthetic:") {
        let parsed = dims
            .split_once('x')
            .and_then(|(r, d)| Some((r.parse().ok()?, d.parse().ok()?)));
        let (rows, d) =
            parsed.ok_or_else(|| format!("dataset: synthetic wants ROWSxD, got {value:?}"))?;
        return Ok(DataSource::Synthetic { rows, d });
    }
    Ok(DataSource::Csv(PathBuf::from(value)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DataSource,
    /// Columns to keep, in order; empty keeps the file's own columns.
    pub schema: Vec<String>,
    pub model: ModelKind,
    pub method: Method,
    /// Ensemble size for methods that use one.
    pub n: usize,
    pub drop_rate: f64,
    pub sigma_threshold: f64,
    pub update_epoch: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
    /// Time steps per window.
    pub window: usize,
    /// Number of windows sampled from the table.
    pub windows: usize,
    pub missing_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub scalar: ScalarKind,
    /// Keep the best-validation parameters instead of the final epoch.
    pub keep_best: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DataSource::Synthetic { rows: 2600, d: 4 },
            schema: Vec::new(),
            model: ModelKind::BiGru,
            method: Method::Rdis,
            n: 8,
            drop_rate: 0.3,
            sigma_threshold: 0.03,
            update_epoch: 400,
            epochs: 2000,
            batch: 128,
            lr: 5e-4,
            hidden: 100,
            window: 48,
            windows: 2000,
            missing_rates: vec![50.0],
            seeds: vec![1, 2, 3, 4, 5],
            scalar: ScalarKind::F32,
            keep_best: false,
        }
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment. Errors name the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.trim().parse::<T>().map_err(|_| format!("{key}: cannot parse {value:?}"))
        }
        fn nums<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
            value.split(',').map(|v| num(key, v)).collect()
        }
        let value = value.trim();
        match key {
            "dataset" => self.dataset = parse_source(value)?,
            "schema" => {
                self.schema = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|c| c.trim().to_string()).collect()
                }
            }
            "model" => {
                self.model = ModelKind::parse(value).ok_or_else(|| {
                    format!("model: must be gru, bigru, or linear, got {value:?}")
                })?
            }
            "method" => {
                self.method = Method::parse(value).ok_or_else(|| {
                    format!("method: must be none, rdi_no_ensemble, rdi, or rdis, got {value:?}")
                })?
            }
            "n" => self.n = num(key, value)?,
            "drop_rate" => self.drop_rate = num(key, value)?,
            "sigma_threshold" => self.sigma_threshold = num(key, value)?,
            "update_epoch" => self.update_epoch = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "windows" => self.windows = num(key, value)?,
            "missing_rates" => self.missing_rates = nums(key, value)?,
            "seeds" => self.seeds = nums(key, value)?,
            "scalar" => {
                self.scalar = ScalarKind::parse(value)
                    .ok_or_else(|| format!("scalar: must be f32 or f64, got {value:?}"))?
            }
            "keep_best" => self.keep_best = num(key, value)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Parses a key-value config file: one `key = value` per line, `#`
    /// starts a comment. Errors carry the file and line number.
    pub fn from_file(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected key = value, got {raw:?}",
                    path.display(),
                    i + 1
                ))
            })?;
            cfg.set(key.trim(), value).map_err(|msg| {
                CliError::Config(format!("{}:{}: {msg}", path.display(), i + 1))
            })?;
        }
        Ok(cfg)
    }

    /// Full range check; the message names the offending field.
    pub fn validate(&self) -> Result<(), String> {
        match &self.dataset {
            DataSource::Csv(path) => {
                // The path becomes a comma-separated results field.
                if path.to_string_lossy().contains(',') {
                    return Err("dataset: path must not contain a comma".into());
                }
            }
            DataSource::Synthetic { rows, d } => {
                if *rows == 0 || *d == 0 {
                    return Err("dataset: synthetic dimensions must be positive".into());
                }
            }
        }
        if self.n < 1 {
            return Err("n: must be at least 1".into());
        }
        if self.method == Method::Rdis && self.n < 2 {
            return Err(format!("n: method rdis needs an ensemble of at least 2, got {}", self.n));
        }
        if !(self.drop_rate > 0.0 && self.drop_rate < 1.0) {
            return Err(format!("drop_rate: must be in (0, 1), got {}", self.drop_rate));
        }
        if self.sigma_threshold.is_nan() {
            return Err("sigma_threshold: must not be NaN".into());
        }
        if self.update_epoch < 1 {
            return Err("update_epoch: must be at least 1".into());
        }
        if self.epochs < 1 {
            return Err("epochs: must be at least 1".into());
        }
        if self.batch < 1 {
            return Err("batch: must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(format!("lr: must be positive and finite, got {}", self.lr));
        }
        if self.model != ModelKind::Linear && self.hidden < 1 {
            return Err("hidden: must be at least 1 for recurrent models".into());
        }
        if self.window < 1 {
            return Err("window: must be at least 1".into());
        }
        if self.windows < 4 {
            return Err(format!("windows: need at least 4 to split, got {}", self.windows));
        }
        if self.missing_rates.is_empty() {
            return Err("missing_rates: must list at least one rate".into());
        }
        for &p in &self.missing_rates {
            if !(p > 0.0 && p < 100.0) {
                return Err(format!("missing_rates: rates must be in (0, 100), got {p}"));
            }
        }
        if self.seeds.is_empty() {
            return Err("seeds: must list at least one seed".into());
        }
        Ok(())
    }

    /// Desk-size preset: 2 members, 200 epochs, 200 windows.
    pub fn desk_scale(&mut self) {
        self.n = 2;
        self.epochs = 200;
        self.windows = 200;
    }

    /// FNV-1a over every field that changes what a single run computes.
    ///
    /// Missing rates and seeds are row axes in the results file, so
    /// they stay out and resumption keys on (hash, rate, seed). Fields
    /// the method never reads are canonicalized away: `n` hashes as the
    /// effective member count, the drop rate vanishes under plain
    /// reconstruction, and the self-training knobs vanish unless the
    /// method is rdis.
    pub fn hash(&self) -> String {
        let drop_rate = match self.method {
            Method::None => "-".to_string(),
            _ => self.drop_rate.to_string(),
        };
        let (sigma, update) = match self.method {
            Method::Rdis => (self.sigma_threshold.to_string(), self.update_epoch.to_string()),
            _ => ("-".to_string(), "-".to_string()),
        };
        let text = format!(
            "dataset={}\nschema={}\nmodel={}\nmethod={}\nn={}\ndrop_rate={drop_rate}\n\
             sigma_threshold={sigma}\nupdate_epoch={update}\nepochs={}\nbatch={}\nlr={}\n\
             hidden={}\nwindow={}\nwindows={}\nscalar={}\nkeep_best={}\n",
            self.dataset,
            self.schema.join(","),
            self.model.as_str(),
            self.method.as_str(),
            self.method.effective_n(self.n),
            self.epochs,
            self.batch,
            self.lr,
            self.hidden,
            self.window,
            self.windows,
            self.scalar.as_str(),
            self.keep_best,
        );
        format!("{:016x}", fnv1a(text.as_bytes()))
    }

    /// Core training config for one run seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            model: self.model,
            hidden: self.hidden,
            n_members: self.method.effective_n(self.n),
            drop_rate: self.drop_rate,
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            seed,
            resample_plans: false,
            val_every: if self.keep_best { 10 } else { 0 },
            keep_best: self.keep_best,
            sigma_threshold: self.sigma_threshold,
            update_epoch: self.update_epoch,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
