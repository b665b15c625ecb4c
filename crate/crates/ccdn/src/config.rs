//! Plain `key = value` run configuration. One flat file drives data
//! generation, model construction, and training; unknown keys and type
//! mismatches are errors naming the key and line. Missing keys take the
//! documented defaults. When a key repeats, the last value wins, so sweep
//! scripts can append overrides.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{AugmentConfig, SynthSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// The shared evaluation set's generation seed. Fixed by default so runs
/// with different training seeds stay comparable on identical eval data.
pub const DEFAULT_EVAL_SEED: u64 = 9000;

/// Offset separating the training-data stream from the master seed.
pub const TRAIN_DATA_SEED_OFFSET: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_count: usize,
    pub eval_count: usize,
    pub pose_sigma: f64,
    pub occlusion_prob: f64,
    pub occlusion_max_frac: f64,
    pub noise_sigma: f64,
    pub eval_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_count: 2000,
            eval_count: 500,
            pose_sigma: 0.3,
            occlusion_prob: 0.5,
            occlusion_max_frac: 0.3,
            noise_sigma: 0.02,
            eval_seed: DEFAULT_EVAL_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub eval_batch: usize,
    pub gammas: (f64, f64, f64),
    pub augment_enabled: bool,
    pub augment: AugmentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: 0,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            momentum: t.momentum,
            eval_batch: t.eval_batch,
            gammas: t.gammas,
            augment_enabled: false,
            augment: AugmentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn train_spec(&self) -> SynthSpec {
        SynthSpec {
            count: self.data.train_count,
            landmarks: self.model.landmarks,
            size: self.model.input_size,
            pose_sigma: self.data.pose_sigma,
            occlusion_prob: self.data.occlusion_prob,
            occlusion_max_frac: self.data.occlusion_max_frac,
            noise_sigma: self.data.noise_sigma,
            seed: self.seed.wrapping_add(TRAIN_DATA_SEED_OFFSET),
        }
    }

    pub fn eval_spec(&self) -> SynthSpec {
        SynthSpec {
            count: self.data.eval_count,
            seed: self.data.eval_seed,
            ..self.train_spec()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr0,
            momentum: self.momentum,
            gammas: self.gammas,
            seed: self.seed,
            eval_batch: self.eval_batch,
            augment: self.augment_enabled.then(|| self.augment.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_spec().validate()?;
        self.eval_spec().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("train.lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "train.momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }

    /// The full key set with current values, parseable by [`parse_config`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "model.stacks = {}", self.model.stacks);
        let _ = writeln!(s, "model.channels = {}", self.model.channels);
        let _ = writeln!(s, "model.excitations = {}", self.model.excitations);
        let _ = writeln!(s, "model.input_size = {}", self.model.input_size);
        let _ = writeln!(s, "model.landmarks = {}", self.model.landmarks);
        let _ = writeln!(s, "model.variant = {}", self.model.variant);
        let _ = writeln!(s, "model.ns_iters = {}", self.model.ns_iters);
        let _ = writeln!(s, "model.deconv_k = {}", self.model.deconv_k);
        let _ = writeln!(s, "data.train_count = {}", self.data.train_count);
        let _ = writeln!(s, "data.eval_count = {}", self.data.eval_count);
        let _ = writeln!(s, "data.pose_sigma = {}", self.data.pose_sigma);
        let _ = writeln!(s, "data.occlusion_prob = {}", self.data.occlusion_prob);
        let _ = writeln!(s, "data.occlusion_max_frac = {}", self.data.occlusion_max_frac);
        let _ = writeln!(s, "data.noise_sigma = {}", self.data.noise_sigma);
        let _ = writeln!(s, "data.eval_seed = {}", self.data.eval_seed);
        let _ = writeln!(s, "train.epochs = {}", self.epochs);
        let _ = writeln!(s, "train.batch_size = {}", self.batch_size);
        let _ = writeln!(s, "train.lr0 = {}", self.lr0);
        let _ = writeln!(s, "train.momentum = {}", self.momentum);
        let _ = writeln!(s, "train.eval_batch = {}", self.eval_batch);
        let _ = writeln!(s, "loss.gamma1 = {}", self.gammas.0);
        let _ = writeln!(s, "loss.gamma2 = {}", self.gammas.1);
        let _ = writeln!(s, "loss.gamma3 = {}", self.gammas.2);
        let _ = writeln!(s, "augment.enabled = {}", self.augment_enabled);
        let _ = writeln!(s, "augment.rotation_sigma = {}", self.augment.rotation_sigma);
        let _ = writeln!(s, "augment.scale_sigma = {}", self.augment.scale_sigma);
        s
    }
}

fn key_err(origin: &str, line: usize, detail: impl Into<String>) -> Error {
    Error::Config(format!("{origin} line {line}: {}", detail.into()))
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// ignored. `origin` names the source (a path) in error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| key_err(origin, ln, format!("expected 'key = value', got '{raw}'")))?;
        set_key(&mut c, key, value).map_err(|e| key_err(origin, ln, e))?;
    }
    Ok(c)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        detail: format!("cannot read config: {e}"),
    })?;
    let cfg = parse_config(&text, &path.display().to_string())?;
    cfg.validate()?;
    Ok(cfg)
}

fn set_key(c: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> std::result::Result<T, String> {
        value
            .parse()
            .map_err(|_| format!("key '{key}' expects {kind}, got '{value}'"))
    }
    match key {
        "seed" => c.seed = parse(key, value, "an unsigned integer")?,
        "model.stacks" => c.model.stacks = parse(key, value, "a count")?,
        "model.channels" => c.model.channels = parse(key, value, "a count")?,
        "model.excitations" => c.model.excitations = parse(key, value, "a count")?,
        "model.input_size" => c.model.input_size = parse(key, value, "a count")?,
        "model.landmarks" => c.model.landmarks = parse(key, value, "a count")?,
        "model.variant" => {
            c.model.variant = value.parse().map_err(|e: Error| e.to_string())?
        }
        "model.ns_iters" => c.model.ns_iters = parse(key, value, "a count")?,
        "model.deconv_k" => c.model.deconv_k = parse(key, value, "a count")?,
        "data.train_count" => c.data.train_count = parse(key, value, "a count")?,
        "data.eval_count" => c.data.eval_count = parse(key, value, "a count")?,
        "data.pose_sigma" => c.data.pose_sigma = parse(key, value, "a number")?,
        "data.occlusion_prob" => c.data.occlusion_prob = parse(key, value, "a number")?,
        "data.occlusion_max_frac" => {
            c.data.occlusion_max_frac = parse(key, value, "a number")?
        }
        "data.noise_sigma" => c.data.noise_sigma = parse(key, value, "a number")?,
        "data.eval_seed" => c.data.eval_seed = parse(key, value, "an unsigned integer")?,
        "train.epochs" => c.epochs = parse(key, value, "a count")?,
        "train.batch_size" => c.batch_size = parse(key, value, "a count")?,
        "train.lr0" => c.lr0 = parse(key, value, "a number")?,
        "train.momentum" => c.momentum = parse(key, value, "a number")?,
        "train.eval_batch" => c.eval_batch = parse(key, value, "a count")?,
        "loss.gamma1" => c.gammas.0 = parse(key, value, "a number")?,
        "loss.gamma2" => c.gammas.1 = parse(key, value, "a number")?,
        "loss.gamma3" => c.gammas.2 = parse(key, value, "a number")?,
        "augment.enabled" => c.augment_enabled = parse(key, value, "true or false")?,
        "augment.rotation_sigma" => {
            c.augment.rotation_sigma = parse(key, value, "a number")?
        }
        "augment.scale_sigma" => c.augment.scale_sigma = parse(key, value, "a number")?,
        other => return Err(format!("unknown key '{other}'")),
    }
    Ok(())
}
