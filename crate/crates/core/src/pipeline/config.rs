//! Flat `key = value` configuration covering the model and training run.

use std::path::{Path, PathBuf};

use crate::attention::Variant;
use crate::codec::SecondPeak;
use crate::error::{Error, Result};
use crate::network::ModelConfig;

/// Epoch count the default decay boundaries are stated against.
pub const REFERENCE_EPOCHS: usize = 140;
const REFERENCE_DECAY: [f64; 2] = [90.0, 120.0];

/// Per-keypoint OKS constants to evaluate with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OksPreset {
    Uniform(f64),
    Coco,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub decay_factor: f64,
    /// Explicit decay boundaries in epochs. When unset the boundaries are
    /// 90/140 and 120/140 of `total_epochs`.
    pub decay_epochs: Option<Vec<f64>>,
    pub total_epochs: usize,
    /// Optional hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    pub rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Training set: read from disk when set, else synthesized.
    pub data_dir: Option<PathBuf>,
    pub dataset_size: usize,
    /// Evaluation set, synthesized from its own seed when no directory is given.
    pub eval_dir: Option<PathBuf>,
    pub eval_size: usize,
    pub eval_seed: u64,
    pub flip_test: bool,
    pub second_peak: SecondPeak,
    pub oks: OksPreset,
    pub oks_area_scale: f64,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 5e-4,
            decay_factor: 0.1,
            decay_epochs: None,
            total_epochs: REFERENCE_EPOCHS,
            max_steps: None,
            batch_size: 2,
            seed: 0,
            augment: true,
            rotation_deg: 40.0,
            scale_min: 0.7,
            scale_max: 1.3,
            data_dir: None,
            dataset_size: 64,
            eval_dir: None,
            eval_size: 16,
            eval_seed: 1_000_003,
            flip_test: true,
            second_peak: SecondPeak::Global,
            oks: OksPreset::Uniform(0.1),
            oks_area_scale: 1.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Decay boundaries in (possibly fractional) epochs.
    pub fn decay_boundaries(&self) -> Vec<f64> {
        match &self.decay_epochs {
            Some(e) => e.clone(),
            None if self.total_epochs == REFERENCE_EPOCHS => REFERENCE_DECAY.to_vec(),
            None => REFERENCE_DECAY
                .iter()
                .map(|b| b * self.total_epochs as f64 / REFERENCE_EPOCHS as f64)
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("base_lr", "must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("decay_factor", "must lie in (0, 1]"));
        }
        if self.total_epochs == 0 {
            return Err(Error::config("total_epochs", "must be positive"));
        }
        let b = self.decay_boundaries();
        if b.windows(2).any(|w| w[0] >= w[1]) || b.iter().any(|e| !(*e > 0.0) || *e >= self.total_epochs as f64) {
            return Err(Error::config(
                "decay_epochs",
                format!(
                    "{b:?} must be strictly increasing and below total_epochs {}",
                    self.total_epochs
                ),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(Error::config("scale_min", "scale range must be positive and ordered"));
        }
        if !(self.rotation_deg >= 0.0 && self.rotation_deg <= 180.0) {
            return Err(Error::config("rotation_deg", "must lie in [0, 180]"));
        }
        if self.data_dir.is_none() && self.dataset_size == 0 {
            return Err(Error::config("dataset_size", "must be positive"));
        }
        if let OksPreset::Uniform(k) = self.oks {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::config("oks_k", "must be positive"));
            }
        }
        if !(self.oks_area_scale > 0.0 && self.oks_area_scale.is_finite()) {
            return Err(Error::config("oks_area_scale", "must be positive"));
        }
        Ok(())
    }
}

/// Model and training settings of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::config(key, format!("`{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "base_channels" => m.base_channels = parse_num(key, value)?,
            "blocks_per_stage" => m.blocks_per_stage = parse_num(key, value)?,
            "num_keypoints" => m.num_keypoints = parse_num(key, value)?,
            "groups" => m.groups = parse_num(key, value)?,
            "use_csm" => m.use_csm = parse_bool(key, value)?,
            "csm_reduce" => m.csm_reduce = parse_bool(key, value)?,
            "variant" => m.variant = value.parse::<Variant>()?,
            "ohkm_k" => m.ohkm_k = parse_num(key, value)?,
            "input_h" => m.input_h = parse_num(key, value)?,
            "input_w" => m.input_w = parse_num(key, value)?,
            "sigma" => m.sigma = parse_num(key, value)?,
            "base_lr" => t.base_lr = parse_num(key, value)?,
            "decay_factor" => t.decay_factor = parse_num(key, value)?,
            "decay_epochs" => {
                let list: Result<Vec<f64>> = value.split(',').map(|v| parse_num(key, v.trim())).collect();
                t.decay_epochs = Some(list?);
            }
            "total_epochs" => t.total_epochs = parse_num(key, value)?,
            "max_steps" => t.max_steps = Some(parse_num(key, value)?),
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "augment" => t.augment = parse_bool(key, value)?,
            "rotation_deg" => t.rotation_deg = parse_num(key, value)?,
            "scale_min" => t.scale_min = parse_num(key, value)?,
            "scale_max" => t.scale_max = parse_num(key, value)?,
            "data_dir" => t.data_dir = Some(PathBuf::from(value)),
            "dataset_size" => t.dataset_size = parse_num(key, value)?,
            "eval_dir" => t.eval_dir = Some(PathBuf::from(value)),
            "eval_size" => t.eval_size = parse_num(key, value)?,
            "eval_seed" => t.eval_seed = parse_num(key, value)?,
            "flip_test" => t.flip_test = parse_bool(key, value)?,
            "second_peak" => {
                t.second_peak = match value {
                    "global" => SecondPeak::Global,
                    "neighborhood" => SecondPeak::Neighborhood,
                    _ => return Err(Error::config(key, format!("expected global or neighborhood, got `{value}`"))),
                }
            }
            "oks_k" => {
                t.oks = match value {
                    "coco" => OksPreset::Coco,
                    v => OksPreset::Uniform(parse_num(key, v)?),
                }
            }
            "oks_area_scale" => t.oks_area_scale = parse_num(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse_num(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = std::collections::HashSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", no + 1),
                    format!("expected key = value, got `{line}`"),
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "given more than once"));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for dir in [&mut cfg.train.data_dir, &mut cfg.train.eval_dir].into_iter().flatten() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }
}
