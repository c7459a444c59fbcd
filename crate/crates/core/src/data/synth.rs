use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestRow, Split};
use crate::error::{Error, Result};
use crate::frontend::{write_wav, AudioClip};

/// Source signal of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Signal {
    Tone { freq_hz: f64 },
    /// Linear frequency sweep over the clip.
    Chirp { start_hz: f64, end_hz: f64 },
    /// Band-limited noise built from random-phase sinusoids.
    Noise { low_hz: f64, high_hz: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecipe {
    pub name: String,
    pub signal: Signal,
}

/// Per-clip random variation applied on top of the class signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Nuisance {
    /// Uniform gain range in dB.
    pub gain_db: (f64, f64),
    /// Uniform signal-to-noise range in dB for white background noise.
    pub snr_db: Option<(f64, f64)>,
    /// Uniform frequency offset range in semitones.
    pub pitch_jitter: f64,
    /// Fraction of the clip the signal occupies, at a random onset.
    pub active_fraction: f64,
}

impl Default for Nuisance {
    fn default() -> Self {
        Self {
            gain_db: (0.0, 0.0),
            snr_db: None,
            pitch_jitter: 0.0,
            active_fraction: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum SplitScheme {
    /// Per-class fractions; the remainder goes to test.
    Ratios { train: f64, valid: f64 },
    Folds { k: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<ClassRecipe>,
    pub clips_per_class: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub seed: u64,
    #[serde(default)]
    pub nuisance: Nuisance,
    pub split: SplitScheme,
}

impl SynthSpec {
    /// Two classes of 1 s pure tones at 440 Hz and 880 Hz, 100 clips each.
    pub fn two_tones(seed: u64) -> Self {
        Self {
            classes: vec![
                ClassRecipe {
                    name: "a440".into(),
                    signal: Signal::Tone { freq_hz: 440.0 },
                },
                ClassRecipe {
                    name: "a880".into(),
                    signal: Signal::Tone { freq_hz: 880.0 },
                },
            ],
            clips_per_class: 100,
            duration_secs: 1.0,
            sample_rate: 16_000,
            seed,
            nuisance: Nuisance::default(),
            split: SplitScheme::Ratios { train: 0.6, valid: 0.2 },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.clips_per_class == 0 || !(self.duration_secs > 0.0) || self.sample_rate == 0 {
            return Err(Error::Config("synthetic spec needs classes, clips and a positive duration".into()));
        }
        let n = &self.nuisance;
        if !(0.0 < n.active_fraction && n.active_fraction <= 1.0) || n.gain_db.0 > n.gain_db.1 {
            return Err(Error::Config("invalid nuisance ranges".into()));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for c in &self.classes {
            if c.name.is_empty() || c.name.contains(['/', '\\', ';', ',']) {
                return Err(Error::Config(format!("invalid class name `{}`", c.name)));
            }
            let (lo, hi) = match c.signal {
                Signal::Tone { freq_hz } => (freq_hz, freq_hz),
                Signal::Chirp { start_hz, end_hz } => (start_hz.min(end_hz), start_hz.max(end_hz)),
                Signal::Noise { low_hz, high_hz } => (low_hz, high_hz),
            };
            if !(lo > 0.0 && lo <= hi && hi < nyquist) {
                return Err(Error::Config(format!("class `{}` frequencies outside (0, {nyquist})", c.name)));
            }
        }
        Ok(())
    }
}

/// Renders one clip of `len` samples.
pub fn render_clip<R: Rng + ?Sized>(signal: &Signal, nuisance: &Nuisance, sample_rate: u32, len: usize, rng: &mut R) -> Vec<f32> {
    let sr = sample_rate as f64;
    let shift = if nuisance.pitch_jitter > 0.0 {
        2f64.powf(rng.random_range(-nuisance.pitch_jitter..=nuisance.pitch_jitter) / 12.0)
    } else {
        1.0
    };
    let gain_db = if nuisance.gain_db.0 < nuisance.gain_db.1 {
        rng.random_range(nuisance.gain_db.0..=nuisance.gain_db.1)
    } else {
        nuisance.gain_db.0
    };
    let amp = 0.5 * 10f64.powf(gain_db / 20.0);
    let active = ((nuisance.active_fraction * len as f64).round() as usize).clamp(1, len);
    let onset = if active < len { rng.random_range(0..=len - active) } else { 0 };
    let phase0 = rng.random_range(0.0..2.0 * PI);

    let mut x = vec![0.0f64; len];
    match *signal {
        Signal::Tone { freq_hz } => {
            let w = 2.0 * PI * freq_hz * shift / sr;
            for (i, v) in x[onset..onset + active].iter_mut().enumerate() {
                *v = (w * i as f64 + phase0).sin();
            }
        }
        Signal::Chirp { start_hz, end_hz } => {
            let dur = active as f64 / sr;
            let (f0, f1) = (start_hz * shift, end_hz * shift);
            for (i, v) in x[onset..onset + active].iter_mut().enumerate() {
                let t = i as f64 / sr;
                *v = (2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / dur * t * t) + phase0).sin();
            }
        }
        Signal::Noise { low_hz, high_hz } => {
            const PARTIALS: usize = 64;
            let comps: Vec<(f64, f64)> = (0..PARTIALS)
                .map(|_| {
                    let f = if low_hz < high_hz { rng.random_range(low_hz..high_hz) } else { low_hz };
                    (2.0 * PI * f * shift / sr, rng.random_range(0.0..2.0 * PI))
                })
                .collect();
            let norm = (2.0 / PARTIALS as f64).sqrt();
            for (i, v) in x[onset..onset + active].iter_mut().enumerate() {
                *v = norm * comps.iter().map(|(w, p)| (w * i as f64 + p).sin()).sum::<f64>();
            }
        }
    }
    for v in &mut x {
        *v *= amp;
    }
    if let Some((lo, hi)) = nuisance.snr_db {
        let snr = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        // active signal power is amp^2 / 2
        let noise_std = (amp * amp / 2.0 / 10f64.powf(snr / 10.0)).sqrt();
        for v in &mut x {
            let n: f64 = StandardNormal.sample(rng);
            *v += noise_std * n;
        }
    }
    x.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect()
}

fn clip_rng(seed: u64, class: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class as u64) << 32) | index as u64);
    rng
}

/// Writes `<root>/<class>/<class>_<i>.wav` for every clip plus
/// `<root>/manifest.csv`, and returns the manifest.
pub fn synth_dataset(spec: &SynthSpec, root: &Path) -> Result<Manifest> {
    spec.validate()?;
    let len = (spec.duration_secs * spec.sample_rate as f64).round() as usize;
    let mut rows = Vec::new();
    for (c, class) in spec.classes.iter().enumerate() {
        let dir = root.join(&class.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut order: Vec<usize> = (0..spec.clips_per_class).collect();
        order.shuffle(&mut clip_rng(spec.seed, c, usize::MAX >> 32));
        let mut assignment = vec![(None, None); spec.clips_per_class];
        for (rank, &i) in order.iter().enumerate() {
            assignment[i] = match spec.split {
                SplitScheme::Ratios { train, valid } => {
                    let n = spec.clips_per_class as f64;
                    let split = if (rank as f64) < (train * n).round() {
                        Split::Train
                    } else if (rank as f64) < ((train + valid) * n).round() {
                        Split::Valid
                    } else {
                        Split::Test
                    };
                    (Some(split), None)
                }
                SplitScheme::Folds { k } => (None, Some(rank as u32 % k.max(1) + 1)),
            };
        }
        for (i, &(split, fold)) in assignment.iter().enumerate() {
            let samples = render_clip(&class.signal, &spec.nuisance, spec.sample_rate, len, &mut clip_rng(spec.seed, c, i));
            let rel = format!("{0}/{0}_{i:03}.wav", class.name);
            write_wav(root.join(&rel), &AudioClip::new(samples, spec.sample_rate)?)?;
            rows.push(ManifestRow {
                path: rel,
                labels: vec![class.name.clone()],
                split,
                fold,
            });
        }
    }
    let manifest = Manifest::new(root, rows)?;
    manifest.save(&root.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::load_wav;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            clips_per_class: 5,
            duration_secs: 0.1,
            ..SynthSpec::two_tones(seed)
        }
    }

    #[test]
    fn byte_identical_for_fixed_seed() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = synth_dataset(&small(1), a.path()).unwrap();
        synth_dataset(&small(1), b.path()).unwrap();
        for r in &ma.rows {
            assert_eq!(std::fs::read(a.path().join(&r.path)).unwrap(), std::fs::read(b.path().join(&r.path)).unwrap());
        }
        assert_eq!(
            std::fs::read(a.path().join("manifest.csv")).unwrap(),
            std::fs::read(b.path().join("manifest.csv")).unwrap()
        );
    }

    #[test]
    fn counts_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small(2);
        spec.clips_per_class = 10;
        let m = synth_dataset(&spec, dir.path()).unwrap();
        assert_eq!(m.rows.len(), 20);
        for class in ["a440", "a880"] {
            let rows: Vec<_> = m.rows.iter().filter(|r| r.labels == [class]).collect();
            assert_eq!(rows.len(), 10);
            let count = |s| rows.iter().filter(|r| r.split == Some(s)).count();
            assert_eq!((count(Split::Train), count(Split::Valid), count(Split::Test)), (6, 2, 2));
        }
        let reloaded = Manifest::load(&dir.path().join("manifest.csv"), None).unwrap();
        assert_eq!(reloaded.rows, m.rows);

        spec.split = SplitScheme::Folds { k: 5 };
        let m = synth_dataset(&spec, dir.path()).unwrap();
        assert!(m.rows.iter().all(|r| (1..=5).contains(&r.fold.unwrap())));
    }

    #[test]
    fn tone_has_expected_length_and_level() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(&small(3), dir.path()).unwrap();
        let clip = load_wav(m.resolve(&m.rows[0])).unwrap();
        assert_eq!(clip.samples.len(), 1600);
        let peak = clip.samples.iter().fold(0.0f32, |a, &b| a.max(b.abs()));
        assert!((peak - 0.5).abs() < 0.01);
    }

    #[test]
    fn nuisance_changes_clips() {
        let n = Nuisance {
            gain_db: (-12.0, 0.0),
            snr_db: Some((0.0, 10.0)),
            pitch_jitter: 1.0,
            active_fraction: 0.5,
        };
        let sig = Signal::Noise { low_hz: 300.0, high_hz: 600.0 };
        let a = render_clip(&sig, &n, 16_000, 800, &mut clip_rng(0, 0, 0));
        let b = render_clip(&sig, &n, 16_000, 800, &mut clip_rng(0, 0, 1));
        assert_ne!(a, b);
        assert_eq!(a, render_clip(&sig, &n, 16_000, 800, &mut clip_rng(0, 0, 0)));
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small(0);
        s.classes[0].signal = Signal::Tone { freq_hz: 9000.0 };
        assert!(synth_dataset(&s, Path::new("/nonexistent")).is_err());
    }
}
