//! Training configuration and its `key = value` file form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{ModelConfig, Variant, MODEL_KEYS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// One model over all pairs.
    #[default]
    Pooled,
    /// One model per pair, each on its own 3×4 split.
    SelfTrain,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Self::Pooled),
            "self" => Ok(Self::SelfTrain),
            other => Err(Error::config(format!("unknown strategy {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pooled => "pooled",
            Self::SelfTrain => "self",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub batch_size: usize,
    /// Total optimizer steps (a resumed run continues up to this count).
    pub steps: u64,
    pub lr: f64,
    /// Side of the square training crops; divisible by 4.
    pub crop: usize,
    pub seed: u64,
    /// Validation period in steps; 0 disables periodic validation.
    pub val_every: u64,
    /// Size of the fixed held-out validation subset.
    pub val_images: usize,
    /// Permit `batch_size = 1` with the `aea` variant.
    pub allow_single: bool,
    /// Capacity of the batch prefetch queue.
    pub prefetch: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Pooled,
            batch_size: 8,
            steps: 2000,
            lr: 1e-4,
            crop: 96,
            seed: 0,
            val_every: 100,
            val_images: 4,
            allow_single: false,
            prefetch: 4,
            model: ModelConfig::default(),
        }
    }
}

const TRAIN_KEYS: [&str; 10] = [
    "strategy",
    "batch_size",
    "steps",
    "lr",
    "crop",
    "seed",
    "val_every",
    "val_images",
    "allow_single",
    "prefetch",
];

impl TrainConfig {
    /// Checks invariants and fills `model.query_size` for the learned-query
    /// variant from the crop size.
    pub fn validate(&mut self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.batch_size == 1 && self.model.variant == Variant::Aea && !self.allow_single {
            return Err(Error::config(
                "the aea variant trains both branches and needs batch_size ≥ 2 (set allow_single = true to override)",
            ));
        }
        if self.crop == 0 || self.crop % 4 != 0 {
            return Err(Error::config(format!("crop must be a positive multiple of 4, got {}", self.crop)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and ≥ 0, got {}", self.lr)));
        }
        if self.prefetch == 0 {
            return Err(Error::config("prefetch capacity must be positive"));
        }
        if self.model.variant == Variant::LearnedQuery && self.model.query_size == 0 {
            self.model.query_size = (self.crop / 4) * (self.crop / 4);
        }
        self.model.validate()
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut allowed: Vec<&str> = TRAIN_KEYS.to_vec();
        allowed.extend(MODEL_KEYS);
        kv.ensure_known(&allowed)?;
        let d = Self::default();
        let mut cfg = Self {
            strategy: kv.parse_opt("strategy")?.unwrap_or(d.strategy),
            batch_size: kv.parse_opt("batch_size")?.unwrap_or(d.batch_size),
            steps: kv.parse_opt("steps")?.unwrap_or(d.steps),
            lr: kv.parse_opt("lr")?.unwrap_or(d.lr),
            crop: kv.parse_opt("crop")?.unwrap_or(d.crop),
            seed: kv.parse_opt("seed")?.unwrap_or(d.seed),
            val_every: kv.parse_opt("val_every")?.unwrap_or(d.val_every),
            val_images: kv.parse_opt("val_images")?.unwrap_or(d.val_images),
            allow_single: kv.parse_opt("allow_single")?.unwrap_or(d.allow_single),
            prefetch: kv.parse_opt("prefetch")?.unwrap_or(d.prefetch),
            model: ModelConfig::from_kv(kv)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.model.to_kv();
        kv.set("strategy", self.strategy);
        kv.set("batch_size", self.batch_size);
        kv.set("steps", self.steps);
        kv.set("lr", self.lr);
        kv.set("crop", self.crop);
        kv.set("seed", self.seed);
        kv.set("val_every", self.val_every);
        kv.set("val_images", self.val_images);
        kv.set("allow_single", self.allow_single);
        kv.set("prefetch", self.prefetch);
        kv
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&KeyValues::parse(&text)?)
    }
}
