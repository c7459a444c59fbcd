//! Manifests, audio loading, corpus statistics and synthetic datasets.

mod manifest;
mod stats;
mod synth;

use std::path::Path;

pub use manifest::{Manifest, ManifestRow, Split};
pub use stats::{compute_corpus_stats, CorpusStats, StatsAccumulator, SIGMA_FLOOR};
pub use synth::{render_clip, synth_dataset, ClassRecipe, Nuisance, Signal, SplitScheme, SynthSpec};

use crate::error::Result;
use crate::frontend::{load_wav, logmel, resample, AudioClip, FrontendConfig, Spectrogram};
use crate::tensor::Real;

/// Resamples to the frontend rate and zero-pads (at the end) to at least
/// `min_samples`.
pub fn prepare_clip(clip: &AudioClip, cfg: &FrontendConfig, min_samples: usize) -> AudioClip {
    let mut clip = resample(clip, cfg.sample_rate);
    if clip.samples.len() < min_samples {
        clip.samples.resize(min_samples, 0.0);
    }
    clip
}

/// Loads a WAV file as a log-mel spectrogram with at least `min_frames`
/// frames.
pub fn load_logmel<T: Real>(path: &Path, cfg: &FrontendConfig, min_frames: usize) -> Result<Spectrogram<T>> {
    let clip = load_wav(path)?;
    logmel(&prepare_clip(&clip, cfg, cfg.samples_for_frames(min_frames.max(1))), cfg)
}

/// A file that could not be loaded, with the reason.
#[derive(Clone, Debug, PartialEq)]
pub struct Reject {
    pub path: String,
    pub reason: String,
}

/// Log-mels for every manifest row; unreadable files are skipped with a
/// warning and reported.
pub fn load_corpus<T: Real>(
    manifest: &Manifest,
    cfg: &FrontendConfig,
    min_frames: usize,
) -> (Vec<(usize, Spectrogram<T>)>, Vec<Reject>) {
    let mut ok = Vec::new();
    let mut rejects = Vec::new();
    for (i, row) in manifest.rows.iter().enumerate() {
        match load_logmel(&manifest.resolve(row), cfg, min_frames) {
            Ok(s) => ok.push((i, s)),
            Err(e) => {
                log::warn!("skipping {}: {e}", row.path);
                rejects.push(Reject {
                    path: row.path.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    (ok, rejects)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_loading_skips_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            clips_per_class: 2,
            duration_secs: 0.5,
            ..SynthSpec::two_tones(0)
        };
        let mut m = synth_dataset(&spec, dir.path()).unwrap();
        std::fs::write(dir.path().join("junk.wav"), b"not audio").unwrap();
        m.rows.push(ManifestRow {
            path: "junk.wav".into(),
            labels: vec!["a440".into()],
            split: Some(Split::Train),
            fold: None,
        });
        let cfg = FrontendConfig::default();
        let (ok, rejects) = load_corpus::<f32>(&m, &cfg, 96);
        assert_eq!(ok.len(), 4);
        assert_eq!(rejects.len(), 1);
        // 0.5 s is padded up to 96 frames
        assert!(ok.iter().all(|(_, s)| s.shape() == [64, 96]));
    }
}
