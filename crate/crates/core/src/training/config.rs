//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//! total_steps = 300
//! pretrain_steps = 0
//! batch_size = 4
//! patch_size = 32
//! lr = 1e-4
//! checkpoint_interval = 100
//! output_dir = "run"
//! adversarial_form = "non_saturating"   # or "literal"
//!
//! [data]
//! corpus_dir = "corpus"
//!
//! [degradation]      # mode, blur_sigma, noise_sigma, seed
//! [generator]        # num_blocks, num_features, scale, growth_channels
//! [encoder]          # base_channels, embed_dim, pyramid_strides, weights_source, tap_layers
//! [text]             # kind = "none" | "hashed" | "file"
//! [feat_d]           # fusion_channels, num_upsampling_stages, norm
//! [lpp]              # init, parameterization, positive_prompt, negative_prompt, seed
//! [loss_weights]     # pixel, perceptual, feat_adv, text_adv
//! [perceptual]       # source, tap_layers
//! ```
//!
//! Every key is optional except `data.corpus_dir`; unknown keys are errors.
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::sha256_hex;
use crate::degrade::DegradationParams;
use crate::encoders::{EncoderConfig, TextEmbedderConfig, WeightsSource};
use crate::error::{Result, SfdError};
use crate::feat_disc::FeatDConfig;
use crate::generator::GeneratorConfig;
use crate::text_disc::LppConfig;

use super::loss::{AdversarialForm, LossWeights};
use super::perceptual::{PerceptualConfig, PerceptualSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub corpus_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::total_steps")]
    pub total_steps: u64,
    /// Leading L1-only steps, counted within `total_steps`.
    #[serde(default)]
    pub pretrain_steps: u64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::patch_size")]
    pub patch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    /// Steps between checkpoints; 0 writes only the final one.
    #[serde(default = "defaults::checkpoint_interval")]
    pub checkpoint_interval: u64,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    /// Adds wall-clock `elapsed_ms` to log records (breaks bitwise log
    /// reproducibility).
    #[serde(default)]
    pub log_timestamps: bool,
    #[serde(default)]
    pub adversarial_form: AdversarialForm,
    pub data: DataConfig,
    #[serde(default)]
    pub degradation: DegradationParams,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub text: TextEmbedderConfig,
    #[serde(default)]
    pub feat_d: FeatDConfig,
    #[serde(default)]
    pub lpp: LppConfig,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub perceptual: PerceptualConfig,
}

mod defaults {
    use std::path::PathBuf;

    pub fn total_steps() -> u64 {
        300
    }
    pub fn batch_size() -> usize {
        4
    }
    pub fn patch_size() -> usize {
        32
    }
    pub fn lr() -> f64 {
        1e-4
    }
    pub fn checkpoint_interval() -> u64 {
        100
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("run")
    }
}

impl RunConfig {
    /// Defaults around a corpus directory.
    pub fn with_corpus(corpus_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed: 0,
            total_steps: defaults::total_steps(),
            pretrain_steps: 0,
            batch_size: defaults::batch_size(),
            patch_size: defaults::patch_size(),
            lr: defaults::lr(),
            checkpoint_interval: defaults::checkpoint_interval(),
            output_dir: defaults::output_dir(),
            log_timestamps: false,
            adversarial_form: AdversarialForm::default(),
            data: DataConfig {
                corpus_dir: corpus_dir.into(),
            },
            degradation: DegradationParams::default(),
            generator: GeneratorConfig::default(),
            encoder: EncoderConfig::default(),
            text: TextEmbedderConfig::default(),
            feat_d: FeatDConfig::default(),
            lpp: LppConfig::default(),
            loss_weights: LossWeights::default(),
            perceptual: PerceptualConfig::default(),
        }
    }

    /// Parses TOML; errors name the offending key path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| SfdError::Config(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            SfdError::Config(format!("at `{path}`: {}", e.inner().message().trim()))
        })
    }

    /// Reads, resolves relative paths against the file's directory, and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SfdError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.corpus_dir);
        fix(&mut self.output_dir);
        if let WeightsSource::File { path } = &mut self.encoder.weights_source {
            fix(path);
        }
        if let TextEmbedderConfig::File { path } = &mut self.text {
            fix(path);
        }
        if let PerceptualSource::ExternalVgg { path } = &mut self.perceptual.source {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.encoder.validate()?;
        self.feat_d.validate()?;
        self.degradation.validate()?;
        self.loss_weights.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SfdError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(SfdError::Config("batch_size must be >= 1".into()));
        }
        if self.total_steps == 0 {
            return Err(SfdError::Config("total_steps must be >= 1".into()));
        }
        if self.pretrain_steps > self.total_steps {
            return Err(SfdError::Config(format!(
                "pretrain_steps ({}) exceeds total_steps ({})",
                self.pretrain_steps, self.total_steps
            )));
        }
        let scale = self.generator.scale;
        if !self.patch_size.is_multiple_of(scale) || self.patch_size / scale < 8 {
            return Err(SfdError::Config(format!(
                "patch_size {} must be divisible by scale {scale} with an LR side of at least 8",
                self.patch_size
            )));
        }
        let stride = self.encoder.pyramid_strides[2];
        if !self.patch_size.is_multiple_of(stride) {
            return Err(SfdError::Config(format!(
                "patch_size {} must be divisible by the coarsest encoder stride {stride}",
                self.patch_size
            )));
        }
        Ok(())
    }

    /// Hash of every setting that shapes the optimization trajectory; runs
    /// with equal hashes can resume each other's checkpoints.
    pub fn config_hash(&self) -> String {
        let relevant = serde_json::json!({
            "seed": self.seed,
            "pretrain_steps": self.pretrain_steps,
            "batch_size": self.batch_size,
            "patch_size": self.patch_size,
            "lr": self.lr,
            "degradation": self.degradation,
            "generator": self.generator,
            "encoder": self.encoder,
            "text": self.text,
            "feat_d": self.feat_d,
            "lpp": self.lpp,
            "loss_weights": self.loss_weights,
            "perceptual": self.perceptual,
            "adversarial_form": self.adversarial_form,
        });
        sha256_hex(relevant.to_string().as_bytes())
    }
}
