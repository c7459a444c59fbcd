//! Flat run configuration shared by every subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{format_chain, parse_chain, AugmentConfig, RrcConfig};
use crate::byol::{ByolConfig, PretrainConfig};
use crate::encoder::{EncoderConfig, ReshapingMode, TemporalPooling};
use crate::error::{Error, Result};
use crate::eval::{ProbeConfig, TaskKind};
use crate::frontend::FrontendConfig;
use crate::tensor::AdamConfig;

/// Every tunable in one flat TOML table. Zero means "unset" for
/// `max_steps` (no step limit) and `probe_lr` (sweep the built-in grid).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic: bool,

    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,

    pub chain: String,
    pub mixup_alpha: f64,
    pub queue_capacity: usize,
    pub rrc_freq_min: f64,
    pub rrc_freq_max: f64,
    pub rrc_time_min: f64,
    pub rrc_time_max: f64,
    pub virtual_time_scale: f64,
    pub noise_std: f64,
    pub noise_alpha: f64,

    pub reshaping_mode: ReshapingMode,
    pub use_mlp: bool,
    pub use_concat: bool,
    pub temporal_pooling: TemporalPooling,
    pub conv_blocks: usize,
    pub channels: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,

    pub head_hidden: usize,
    pub projection_dim: usize,
    pub tau: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub frames: usize,
    pub batch_size: usize,
    pub epochs: u64,
    pub max_steps: u64,

    pub probe_task: TaskKind,
    pub probe_max_epochs: usize,
    pub probe_patience: usize,
    pub probe_lr: f64,
    pub probe_runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_parts(&PretrainConfig::default(), &ProbeConfig::default(), false)
    }
}

impl RunConfig {
    pub fn from_parts(p: &PretrainConfig, probe: &ProbeConfig, deterministic: bool) -> Self {
        let (f, a, m) = (&p.frontend, &p.augment, &p.model);
        let e = &m.encoder;
        Self {
            seed: p.seed,
            deterministic,
            sample_rate: f.sample_rate,
            window: f.window,
            hop: f.hop,
            n_mels: f.n_mels,
            f_min: f.f_min,
            f_max: f.f_max,
            chain: format_chain(&a.blocks),
            mixup_alpha: a.mixup_alpha,
            queue_capacity: a.queue_capacity,
            rrc_freq_min: a.rrc.freq_range.0,
            rrc_freq_max: a.rrc.freq_range.1,
            rrc_time_min: a.rrc.time_range.0,
            rrc_time_max: a.rrc.time_range.1,
            virtual_time_scale: a.rrc.virtual_time_scale,
            noise_std: a.noise_std,
            noise_alpha: a.noise_alpha,
            reshaping_mode: e.reshaping_mode,
            use_mlp: e.use_mlp,
            use_concat: e.use_concat,
            temporal_pooling: e.temporal_pooling,
            conv_blocks: e.conv_blocks,
            channels: e.channels,
            mlp_hidden: e.mlp_hidden,
            dropout: e.dropout_p,
            head_hidden: m.head_hidden,
            projection_dim: m.projection_dim,
            tau: m.tau,
            lr: m.adam.lr,
            adam_beta1: m.adam.beta1,
            adam_beta2: m.adam.beta2,
            adam_eps: m.adam.eps,
            frames: p.frames,
            batch_size: p.batch_size,
            epochs: p.epochs,
            max_steps: p.max_steps.unwrap_or(0),
            probe_task: probe.task,
            probe_max_epochs: probe.max_epochs,
            probe_patience: probe.patience,
            probe_lr: probe.learning_rate.unwrap_or(0.0),
            probe_runs: probe.runs,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn frontend(&self) -> FrontendConfig {
        FrontendConfig {
            sample_rate: self.sample_rate,
            window: self.window,
            hop: self.hop,
            n_mels: self.n_mels,
            f_min: self.f_min,
            f_max: self.f_max,
        }
    }

    pub fn augment(&self) -> Result<AugmentConfig> {
        let cfg = AugmentConfig {
            blocks: parse_chain(&self.chain)?,
            mixup_alpha: self.mixup_alpha,
            queue_capacity: self.queue_capacity,
            rrc: RrcConfig {
                freq_range: (self.rrc_freq_min, self.rrc_freq_max),
                time_range: (self.rrc_time_min, self.rrc_time_max),
                virtual_time_scale: self.virtual_time_scale,
            },
            noise_std: self.noise_std,
            noise_alpha: self.noise_alpha,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            n_mels: self.n_mels,
            reshaping_mode: self.reshaping_mode,
            use_mlp: self.use_mlp,
            use_concat: self.use_concat,
            temporal_pooling: self.temporal_pooling,
            conv_blocks: self.conv_blocks,
            channels: self.channels,
            mlp_hidden: self.mlp_hidden,
            dropout_p: self.dropout,
        }
    }

    pub fn pretrain(&self) -> Result<PretrainConfig> {
        Ok(PretrainConfig {
            model: ByolConfig {
                encoder: self.encoder(),
                head_hidden: self.head_hidden,
                projection_dim: self.projection_dim,
                tau: self.tau,
                adam: AdamConfig {
                    lr: self.lr,
                    beta1: self.adam_beta1,
                    beta2: self.adam_beta2,
                    eps: self.adam_eps,
                },
            },
            augment: self.augment()?,
            frontend: self.frontend(),
            frames: self.frames,
            batch_size: self.batch_size,
            epochs: self.epochs,
            max_steps: (self.max_steps > 0).then_some(self.max_steps),
            seed: self.seed,
        })
    }

    pub fn probe(&self) -> ProbeConfig {
        ProbeConfig {
            max_epochs: self.probe_max_epochs,
            patience: self.probe_patience,
            learning_rate: (self.probe_lr > 0.0).then_some(self.probe_lr),
            runs: self.probe_runs,
            task: self.probe_task,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.window == 0 || self.hop == 0 || self.sample_rate == 0 {
            return Err(Error::Config("frontend sizes must be positive".into()));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Config(format!(
                "need 0 <= f_min ({}) < f_max ({}) <= Nyquist",
                self.f_min, self.f_max
            )));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if !(self.lr > 0.0) || self.probe_lr < 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.frames == 0 {
            return Err(Error::Config("frames must be positive".into()));
        }
        self.augment()?;
        self.encoder().validate()?;
        self.probe().validate()
    }
}
