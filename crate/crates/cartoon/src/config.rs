//! Training configuration, read from TOML. Every key is optional; missing
//! keys take the defaults below.
//!
//! ```toml
//! batch_size = 11
//! init_epochs = 10
//! gan_epochs = 60
//! base_lr = 1e-3
//! max_lr = 1e-2
//! half_cycle = 2000        # steps from base_lr to max_lr
//! weight_decay = 1e-4
//! omega = 10.0
//! seed = 42
//! image_size = 224
//! checkpoint_every = 1000  # steps; 0 = only at the end
//! photo_dir = "data/photos"
//! cartoon_dir = "data/cartoons"
//! smoothed_dir = "data/smoothed"
//!
//! [generator]              # optional width overrides
//! flat_channels = 64
//! ```

use std::path::{Path, PathBuf};

use cartoon_core::losses::{AdversarialWeights, ExtractorConfig, LossWeights};
use cartoon_core::models::{DiscriminatorConfig, GeneratorConfig};
use cartoon_core::nn::{AdamW, LrSchedule};
use cartoon_core::train::StepConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub init_epochs: u64,
    pub gan_epochs: u64,
    pub base_lr: f64,
    pub max_lr: f64,
    pub half_cycle: u64,
    pub weight_decay: f64,
    pub omega: f64,
    pub seed: u64,
    pub image_size: usize,
    pub checkpoint_every: u64,
    pub flip: bool,
    pub photo_dir: PathBuf,
    pub cartoon_dir: PathBuf,
    pub smoothed_dir: PathBuf,
    pub adversarial: AdversarialWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub extractor: ExtractorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 11,
            init_epochs: 10,
            gan_epochs: 60,
            base_lr: 1e-3,
            max_lr: 1e-2,
            half_cycle: 2000,
            weight_decay: 1e-4,
            omega: 10.0,
            seed: 42,
            image_size: 224,
            checkpoint_every: 1000,
            flip: true,
            photo_dir: "photos".into(),
            cartoon_dir: "cartoons".into(),
            smoothed_dir: "smoothed".into(),
            adversarial: AdversarialWeights::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            extractor: ExtractorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative data directories resolve against the file's
    /// own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for dir in [&mut cfg.photo_dir, &mut cfg.cartoon_dir, &mut cfg.smoothed_dir] {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.image_size < 4 || !self.image_size.is_multiple_of(4) {
            return bad(format!("image_size must be a positive multiple of 4, got {}", self.image_size));
        }
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return bad(format!("omega must be finite and non-negative, got {}", self.omega));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be finite and non-negative, got {}", self.weight_decay));
        }
        self.schedule()?;
        Ok(())
    }

    pub fn validate_dirs(&self) -> Result<()> {
        let mut dirs = vec![&self.photo_dir];
        if self.gan_epochs > 0 {
            dirs.extend([&self.cartoon_dir, &self.smoothed_dir]);
        }
        match dirs.into_iter().find(|d| !d.is_dir()) {
            Some(d) => Err(Error::Config(format!("{} is not a directory", d.display()))),
            None => Ok(()),
        }
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.base_lr, self.max_lr, self.half_cycle).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn step_config(&self) -> Result<StepConfig> {
        Ok(StepConfig {
            schedule: self.schedule()?,
            optimizer: AdamW {
                weight_decay: self.weight_decay,
                ..AdamW::default()
            },
            loss: LossWeights { omega: self.omega },
            adversarial: self.adversarial,
        })
    }
}
