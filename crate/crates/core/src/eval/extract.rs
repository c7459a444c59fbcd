use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::table::{EmbeddingTable, Partition};
use crate::augment::{pre_norm, NormStats};
use crate::byol::load_checkpoint;
use crate::data::{Manifest, Reject};
use crate::encoder::{Encoder, TemporalPooling};
use crate::error::{Error, Result};
use crate::frontend::{load_wav, logmel, resample, AudioClip, FrontendConfig, Spectrogram};
use crate::tensor::{ForwardCtx, Mode, Real, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExtractOptions {
    /// Overrides the encoder's temporal pooling.
    pub pooling: Option<TemporalPooling>,
    pub batch_size: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            pooling: None,
            batch_size: 32,
        }
    }
}

/// Centre crop or end zero-pad to exactly `target` samples.
pub fn fit_length(samples: &[f32], target: usize) -> Vec<f32> {
    if samples.len() >= target {
        let start = (samples.len() - target) / 2;
        samples[start..start + target].to_vec()
    } else {
        let mut out = samples.to_vec();
        out.resize(target, 0.0);
        out
    }
}

fn partition_of(manifest: &Manifest, i: usize) -> Result<Partition> {
    let row = &manifest.rows[i];
    match (row.split, row.fold) {
        (Some(s), _) => Ok(Partition::Split(s)),
        (None, Some(f)) => Ok(Partition::Fold(f)),
        (None, None) => Err(Error::Data(format!("row `{}` has neither split nor fold", row.path))),
    }
}

/// Loads every readable clip at the frontend rate and fits it to the mean
/// clip length (at least `min_frames` frames). Returns log-mels in manifest
/// order with their row indices.
pub fn load_task_logmels<T: Real>(
    manifest: &Manifest,
    frontend: &FrontendConfig,
    min_frames: usize,
) -> Result<(Vec<(usize, Spectrogram<T>)>, Vec<Reject>)> {
    let mut clips: Vec<(usize, AudioClip)> = Vec::new();
    let mut rejects = Vec::new();
    for (i, row) in manifest.rows.iter().enumerate() {
        match load_wav(manifest.resolve(row)) {
            Ok(c) => clips.push((i, resample(&c, frontend.sample_rate))),
            Err(e) => {
                log::warn!("skipping {}: {e}", row.path);
                rejects.push(Reject {
                    path: row.path.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    if clips.is_empty() {
        return Err(Error::Data("no readable clips in the manifest".into()));
    }
    let mean_len = clips.iter().map(|(_, c)| c.samples.len() as f64).sum::<f64>() / clips.len() as f64;
    let target = (mean_len.round() as usize).max(frontend.samples_for_frames(min_frames.max(1)));
    let specs = clips
        .into_iter()
        .map(|(i, c)| {
            let fitted = AudioClip::new(fit_length(&c.samples, target), c.sample_rate)?;
            Ok((i, logmel(&fitted, frontend)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((specs, rejects))
}

/// Embeds pre-normalized log-mels with the encoder in eval mode.
pub fn embed<T: Real>(
    encoder: &mut Encoder<T>,
    specs: &[Spectrogram<T>],
    norm: &NormStats,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::new();
    for chunk in specs.chunks(batch_size.max(1)) {
        let batch = chunk.iter().map(|s| pre_norm(s, norm)).collect::<Result<Vec<_>>>()?;
        let mut ctx = ForwardCtx::eval(&mut rng);
        let e = encoder.encode(&batch, &mut ctx)?;
        out.extend(e.data().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

/// Fills batch-norm running statistics of a fresh encoder with the
/// cumulative average over `specs`, leaving parameters untouched.
pub fn calibrate_bn<T: Real>(
    encoder: &mut Encoder<T>,
    specs: &[Spectrogram<T>],
    norm: &NormStats,
    batch_size: usize,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in specs.chunks(batch_size.max(2)) {
        if chunk.len() < 2 {
            continue;
        }
        let batch = chunk.iter().map(|s| pre_norm(s, norm)).collect::<Result<Vec<_>>>()?;
        let x = crate::encoder::batch_tensor(&batch)?;
        let mut tape = Tape::new();
        tape.set_freeze_params(true);
        let xv = tape.leaf(&x);
        let mut ctx = ForwardCtx {
            mode: Mode::Train,
            update_stats: true,
            cumulative_stats: true,
            rng: &mut rng,
        };
        encoder.forward(&mut tape, xv, &mut ctx)?;
    }
    Ok(())
}

/// Embedding table for `manifest` using an in-memory encoder.
pub fn extract_with<T: Real>(
    encoder: &mut Encoder<T>,
    frontend: &FrontendConfig,
    norm: &NormStats,
    manifest: &Manifest,
    opts: &ExtractOptions,
) -> Result<(EmbeddingTable, Vec<Reject>)> {
    if let Some(p) = opts.pooling {
        encoder.config.temporal_pooling = p;
    }
    let (specs, rejects) = load_task_logmels::<T>(manifest, frontend, encoder.config.min_frames())?;
    let (rows, specs): (Vec<usize>, Vec<Spectrogram<T>>) = specs.into_iter().unzip();
    let values = embed(encoder, &specs, norm, opts.batch_size)?;
    let dim = encoder.config.embedding_dim();
    let table = EmbeddingTable::new(
        rows.iter().map(|&i| manifest.rows[i].path.clone()).collect(),
        dim,
        values,
        rows.iter().map(|&i| manifest.rows[i].labels.clone()).collect(),
        rows.iter().map(|&i| partition_of(manifest, i)).collect::<Result<_>>()?,
    )?;
    Ok((table, rejects))
}

/// Embedding table for `manifest` using the online encoder of a checkpoint.
pub fn extract(checkpoint: &Path, manifest: &Manifest, opts: &ExtractOptions) -> Result<(EmbeddingTable, Vec<Reject>)> {
    let (state, meta) = load_checkpoint::<f32>(checkpoint)?;
    let mut encoder = state.online.net.encoder;
    extract_with(&mut encoder, &meta.frontend, &meta.norm, manifest, opts)
}
