//! Flat TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use texgen::dataset::DatasetConfig;
use texgen::gan::GanConfig;
use texgen::optim::OptimizerKind;
use texgen::perceptual::{PerceptualArch, PerceptualConfig};

/// Every tunable of a run in one flat table. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,

    pub sources: usize,
    pub side: usize,
    pub crop: usize,
    pub step: usize,
    pub image_size: usize,
    pub channels: usize,
    pub validation_fraction: f64,

    pub h_conv_channels: Vec<usize>,
    pub h_iterations: usize,
    pub h_batch_size: usize,
    pub h_eval_every: usize,
    pub h_patience: usize,
    pub h_lr: f64,
    pub h_lr_decay: f64,
    pub h_lr_decay_every: usize,
    pub h_flips: bool,

    pub noise_dim: usize,
    pub stretch_dim: usize,
    pub alpha: f64,
    pub gan_batch_size: usize,
    pub g_steps_per_d_step: usize,
    pub g_channels: Vec<usize>,
    pub d_channels: Vec<usize>,
    pub d_hidden: usize,
    pub gan_iterations: usize,
    pub gan_lr: f64,
    pub gan_beta1: f64,
    pub gan_beta2: f64,
    pub checkpoint_every: usize,
    pub label_smoothing: f64,
    pub grad_clip: Option<f64>,
    pub allow_weak_stretch: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ds = DatasetConfig::default();
        let arch = PerceptualArch::default();
        let h = PerceptualConfig::default();
        let gan = GanConfig::default();
        let OptimizerKind::Rmsprop { lr: h_lr, .. } = h.optimizer else {
            unreachable!("perceptual default is RMSProp")
        };
        let OptimizerKind::Adam { lr, beta1, beta2, .. } = gan.optimizer else {
            unreachable!("GAN default is Adam")
        };
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            sources: ds.sources,
            side: ds.side,
            crop: ds.crop,
            step: ds.step,
            image_size: ds.image_size,
            channels: ds.channels,
            validation_fraction: ds.validation_fraction,
            h_conv_channels: arch.conv_channels,
            h_iterations: h.iterations,
            h_batch_size: h.batch_size,
            h_eval_every: h.eval_every,
            h_patience: h.patience,
            h_lr,
            h_lr_decay: h.lr_decay,
            h_lr_decay_every: h.lr_decay_every,
            h_flips: h.flips,
            noise_dim: gan.noise_dim,
            stretch_dim: gan.stretch_dim,
            alpha: gan.alpha,
            gan_batch_size: gan.batch_size,
            g_steps_per_d_step: gan.g_steps_per_d_step,
            g_channels: gan.g_channels,
            d_channels: gan.d_channels,
            d_hidden: gan.d_hidden,
            gan_iterations: gan.iterations,
            gan_lr: lr,
            gan_beta1: beta1,
            gan_beta2: beta2,
            checkpoint_every: gan.checkpoint_every,
            label_smoothing: gan.label_smoothing,
            grad_clip: gan.grad_clip,
            allow_weak_stretch: gan.allow_weak_stretch,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            sources: self.sources,
            side: self.side,
            crop: self.crop,
            step: self.step,
            image_size: self.image_size,
            channels: self.channels,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
        }
    }

    pub fn perceptual_arch(&self) -> PerceptualArch {
        PerceptualArch {
            image_size: self.image_size,
            channels: self.channels,
            conv_channels: self.h_conv_channels.clone(),
            ..PerceptualArch::default()
        }
    }

    pub fn perceptual(&self) -> PerceptualConfig {
        let OptimizerKind::Rmsprop { rho, eps, .. } = OptimizerKind::rmsprop_default() else {
            unreachable!()
        };
        PerceptualConfig {
            iterations: self.h_iterations,
            batch_size: self.h_batch_size,
            eval_every: self.h_eval_every,
            patience: self.h_patience,
            optimizer: OptimizerKind::Rmsprop { lr: self.h_lr, rho, eps },
            lr_decay: self.h_lr_decay,
            lr_decay_every: self.h_lr_decay_every,
            flips: self.h_flips,
            seed: self.seed,
        }
    }

    pub fn gan(&self) -> GanConfig {
        let OptimizerKind::Adam { eps, .. } = OptimizerKind::adam_default() else {
            unreachable!()
        };
        GanConfig {
            noise_dim: self.noise_dim,
            stretch_dim: self.stretch_dim,
            alpha: self.alpha,
            batch_size: self.gan_batch_size,
            g_steps_per_d_step: self.g_steps_per_d_step,
            image_size: self.image_size,
            channels: self.channels,
            g_channels: self.g_channels.clone(),
            d_channels: self.d_channels.clone(),
            d_hidden: self.d_hidden,
            optimizer: OptimizerKind::Adam {
                lr: self.gan_lr,
                beta1: self.gan_beta1,
                beta2: self.gan_beta2,
                eps,
            },
            iterations: self.gan_iterations,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            label_smoothing: self.label_smoothing,
            grad_clip: self.grad_clip,
            allow_weak_stretch: self.allow_weak_stretch,
            ..GanConfig::default()
        }
    }
}
