use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{DiscriminatorConfig, GeneratorConfig, ModelConfig};

/// Every training hyperparameter. Serialized as TOML (top-level keys, then
/// `[loss]`, `[generator]` and `[discriminator]` tables).
///
/// The top-level `scale` and `use_instance_norm` are authoritative: they
/// overwrite `generator.scale_factor` and `discriminator.use_instance_norm`
/// whenever a config is parsed or built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scale: usize,
    /// Side of the HR training crops.
    pub hr_size: usize,
    pub batch_size: usize,
    pub iterations: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_idwt: f64,
    /// Evaluate on the validation split every this many steps (0 = never).
    pub eval_every: u64,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
    pub seed: u64,
    pub use_attention: bool,
    pub use_instance_norm: bool,
    pub use_wavelet_loss: bool,
    pub learnable_idwt: bool,
    /// Dataset manifest; relative paths resolve against the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub loss: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mut config = Self {
            scale: 4,
            hr_size: 64,
            batch_size: 16,
            iterations: 1000,
            lr_g: 1e-4,
            lr_d: 5e-4,
            lr_idwt: 1e-4,
            eval_every: 100,
            checkpoint_every: 500,
            seed: 0,
            use_attention: true,
            use_instance_norm: true,
            use_wavelet_loss: true,
            learnable_idwt: true,
            manifest: None,
            loss: LossWeights::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        };
        config.normalize();
        config
    }
}

impl TrainConfig {
    /// Copies the top-level switches into the network configs.
    pub fn normalize(&mut self) {
        self.generator.scale_factor = self.scale;
        self.discriminator.use_instance_norm = self.use_instance_norm;
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("lr_idwt", self.lr_idwt)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.hr_size == 0 || self.hr_size % (2 * self.scale) != 0 {
            return Err(Error::Config(format!(
                "hr_size {} must be a positive multiple of 2 × scale ({})",
                self.hr_size,
                2 * self.scale
            )));
        }
        if (self.hr_size / self.scale) % 2 != 0 {
            return Err(Error::Config("low-resolution side must be even".into()));
        }
        self.loss.validate()?;
        self.model_config().generator.validate()?;
        self.discriminator.validate()?;
        let needed = self.discriminator.downsampling();
        if self.hr_size / 2 < needed {
            return Err(Error::Config(format!(
                "discriminator downsamples by {needed}, but HR bands are only {} pixels",
                self.hr_size / 2
            )));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut c = self.clone();
        c.normalize();
        ModelConfig {
            generator: c.generator,
            discriminator: c.discriminator,
            hr_size: self.hr_size,
            use_attention: self.use_attention,
            learnable_idwt: self.learnable_idwt,
            init_seed: self.seed,
        }
    }

    /// Parses, normalizes and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.normalize();
        config.validate()?;
        Ok(config)
    }

    /// Canonical TOML form; the same config always yields the same text.
    pub fn to_toml(&self) -> String {
        let mut c = self.clone();
        c.normalize();
        toml::to_string(&c).expect("config is serializable")
    }

    /// Reads a config file, resolving a relative manifest path against the
    /// file's directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let (Some(m), Some(dir)) = (config.manifest.as_mut(), path.parent()) {
            if m.is_relative() {
                *m = dir.join(&*m);
            }
        }
        Ok(config)
    }
}
