use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
use super::{train_step, ByolConfig, ModelState};
use crate::augment::{make_view_batch, AugmentConfig, NormStats};
use crate::encoder::batch_tensor;
use crate::error::{Error, Result};
use crate::frontend::{crop_or_pad_frames, FrontendConfig, Spectrogram};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub model: ByolConfig,
    pub augment: AugmentConfig,
    pub frontend: FrontendConfig,
    /// Frames per random training crop.
    pub frames: usize,
    pub batch_size: usize,
    pub epochs: u64,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<u64>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            model: ByolConfig::default(),
            augment: AugmentConfig::default(),
            frontend: FrontendConfig::default(),
            frames: 96,
            batch_size: 256,
            epochs: 100,
            max_steps: None,
            seed: 42,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub tau: f64,
}

pub struct PretrainOutput<T: Real> {
    pub state: ModelState<T>,
    pub log: Vec<LogRow>,
    pub meta: CheckpointMeta,
}

fn meta<T: Real>(cfg: &PretrainConfig, norm: NormStats, state: &ModelState<T>) -> CheckpointMeta {
    CheckpointMeta {
        version: CHECKPOINT_VERSION,
        model: cfg.model.clone(),
        frontend: cfg.frontend.clone(),
        augment: cfg.augment.clone(),
        norm,
        frames: cfg.frames,
        step: state.step,
        epoch: state.epoch,
        seed: cfg.seed,
    }
}

fn write_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["step", "loss", "lr", "tau"])?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Paths written by [`pretrain`] into its output directory.
pub fn output_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("checkpoint.tnsr"), dir.join("train_log.csv"))
}

/// BYOL pretraining over pre-computed log-mel clips. Each epoch visits the
/// corpus in a fresh random order, in batches of `batch_size` (a trailing
/// batch of one is dropped since batch norm needs two rows). When `out_dir`
/// is given, the checkpoint and CSV log are rewritten after every epoch, and
/// once before training so zero epochs still leaves the initialization.
pub fn pretrain<T: Real>(
    corpus: &[Spectrogram<T>],
    norm: NormStats,
    cfg: &PretrainConfig,
    out_dir: Option<&Path>,
) -> Result<PretrainOutput<T>> {
    cfg.augment.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data("pretraining corpus is empty".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("batch_size must be at least 2".into()));
    }
    if let Some(bad) = corpus.iter().find(|s| s.n_freq() != cfg.model.encoder.n_mels) {
        return Err(Error::contract(format!(
            "corpus has {} mel bins, encoder expects {}",
            bad.n_freq(),
            cfg.model.encoder.n_mels
        )));
    }
    let mut state = ModelState::<T>::new(cfg.model.clone(), cfg.seed)?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut model_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut queue = cfg.augment.new_queue::<T>();
    let mut log = Vec::new();
    let paths = out_dir.map(output_paths);
    let save = |state: &ModelState<T>, log: &[LogRow]| -> Result<()> {
        if let Some((ckpt, log_path)) = &paths {
            save_checkpoint(ckpt, state, &meta(cfg, norm, state))?;
            write_log(log_path, log)?;
        }
        Ok(())
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save(&state, &log)?;

    let limit = cfg.max_steps.unwrap_or(u64::MAX);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    'epochs: for _ in 0..cfg.epochs {
        if state.step >= limit {
            break;
        }
        order.shuffle(&mut data_rng);
        for chunk in order.chunks(cfg.batch_size) {
            if state.step >= limit {
                break;
            }
            if chunk.len() < 2 {
                continue;
            }
            let crops: Vec<Spectrogram<T>> = chunk
                .iter()
                .map(|&i| crop_or_pad_frames(&corpus[i], cfg.frames, &mut data_rng))
                .collect();
            let (v1, v2) = make_view_batch(&crops, &norm, &cfg.augment, &mut queue, &mut data_rng)?;
            let loss = train_step(&mut state, &batch_tensor(&v1)?, &batch_tensor(&v2)?, &mut model_rng)?;
            log::debug!("step {} loss {loss:.6}", state.step);
            log.push(LogRow {
                step: state.step,
                loss,
                lr: cfg.model.adam.lr,
                tau: cfg.model.tau,
            });
        }
        state.epoch += 1;
        save(&state, &log)?;
        if state.step >= limit {
            break 'epochs;
        }
    }
    let meta = meta(cfg, norm, &state);
    Ok(PretrainOutput { state, log, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::byol::load_checkpoint;
    use crate::byol::tests::tiny_config;
    use crate::tensor::Module;
    use rand::Rng;

    fn corpus(n: usize) -> Vec<Spectrogram<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (0..n)
            .map(|_| Spectrogram::new(8, 12, (0..96).map(|_| rng.random_range(-8.0..0.0)).collect()).unwrap())
            .collect()
    }

    fn cfg() -> PretrainConfig {
        PretrainConfig {
            model: tiny_config(),
            frames: 8,
            batch_size: 4,
            epochs: 2,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_saves_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let c = PretrainConfig { epochs: 0, ..cfg() };
        let out = pretrain(&corpus(6), NormStats::new(-4.0, 2.0).unwrap(), &c, Some(dir.path())).unwrap();
        let init = ModelState::<f32>::new(c.model.clone(), c.seed).unwrap();
        let (back, _) = load_checkpoint::<f32>(&dir.path().join("checkpoint.tnsr")).unwrap();
        assert_eq!(back.online.named_state(), init.online.named_state());
        assert!(out.log.is_empty());
    }

    #[test]
    fn runs_are_byte_identical() {
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            pretrain(&corpus(9), NormStats::new(-4.0, 2.0).unwrap(), &cfg(), Some(dir.path())).unwrap();
            let (ck, log) = output_paths(dir.path());
            (
                std::fs::read(&ck).unwrap(),
                std::fs::read(ck.with_extension("json")).unwrap(),
                std::fs::read_to_string(log).unwrap(),
            )
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.2.starts_with("step,loss,lr,tau\n"));
        // 9 clips in batches of 4: two full batches per epoch, the last clip dropped
        assert_eq!(a.2.lines().count(), 1 + 4);
    }

    #[test]
    fn max_steps_caps_training() {
        let c = PretrainConfig { max_steps: Some(3), epochs: 10, ..cfg() };
        let out = pretrain(&corpus(8), NormStats::new(-4.0, 2.0).unwrap(), &c, None).unwrap();
        assert_eq!(out.state.step, 3);
        assert_eq!(out.log.len(), 3);
    }
}
