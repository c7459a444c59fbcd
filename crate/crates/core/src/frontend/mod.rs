//! Audio ingestion and log-mel feature extraction.

mod logmel;
mod resample;
mod wav;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use logmel::{logmel, mel_filterbank, FrontendConfig, LOG_FLOOR};
pub use resample::resample;
pub use wav::{load_wav, read_wav, write_wav};

/// Mono audio with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("audio clip is empty".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-mel energies stored row-major as `[freq, time]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram<T = f32> {
    values: Vec<T>,
    n_freq: usize,
    n_frames: usize,
    /// Frame hop in seconds.
    pub hop: f64,
    pub sample_rate: u32,
}

impl<T: Real> Spectrogram<T> {
    pub fn new(n_freq: usize, n_frames: usize, values: Vec<T>) -> Result<Self> {
        if n_freq * n_frames != values.len() {
            return Err(Error::contract(format!(
                "spectrogram [{n_freq}, {n_frames}] needs {} values, got {}",
                n_freq * n_frames,
                values.len()
            )));
        }
        Ok(Self {
            values,
            n_freq,
            n_frames,
            hop: 0.01,
            sample_rate: 16_000,
        })
    }

    pub fn zeros(n_freq: usize, n_frames: usize) -> Self {
        Self::new(n_freq, n_frames, vec![T::zero(); n_freq * n_frames]).unwrap()
    }

    pub fn with_meta(mut self, hop: f64, sample_rate: u32) -> Self {
        self.hop = hop;
        self.sample_rate = sample_rate;
        self
    }

    /// Copies `hop` and `sample_rate` from `other`.
    pub fn like(mut self, other: &Self) -> Self {
        self.hop = other.hop;
        self.sample_rate = other.sample_rate;
        self
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.n_freq, self.n_frames]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, f: usize, t: usize) -> T {
        self.values[f * self.n_frames + t]
    }

    #[inline]
    pub fn set(&mut self, f: usize, t: usize, v: T) {
        self.values[f * self.n_frames + t] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Spectrogram<U> {
        Spectrogram {
            values: self.values.iter().map(|v| crate::tensor::r(v.as_f64())).collect(),
            n_freq: self.n_freq,
            n_frames: self.n_frames,
            hop: self.hop,
            sample_rate: self.sample_rate,
        }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.n_freq, self.n_frames], self.values.clone()).unwrap()
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        match t.shape() {
            &[f, n] => Self::new(f, n, t.data().to_vec()),
            s => Err(Error::contract(format!("spectrogram tensor must be rank 2, got {s:?}"))),
        }
    }

    /// Takes `len` frames starting at `start`; frames past the end are zero.
    pub fn frames(&self, start: usize, len: usize) -> Self {
        let mut out = vec![T::zero(); self.n_freq * len];
        for f in 0..self.n_freq {
            for t in 0..len {
                if start + t < self.n_frames {
                    out[f * len + t] = self.get(f, start + t);
                }
            }
        }
        Self::new(self.n_freq, len, out).unwrap().like(self)
    }
}

/// Crops a random window of `target` samples, or zero-pads at the end when
/// the clip is shorter.
pub fn crop_or_pad_samples<R: rand::Rng + ?Sized>(samples: &[f32], target: usize, rng: &mut R) -> Vec<f32> {
    if samples.len() >= target {
        let start = if samples.len() == target {
            0
        } else {
            rng.random_range(0..=samples.len() - target)
        };
        samples[start..start + target].to_vec()
    } else {
        let mut out = samples.to_vec();
        out.resize(target, 0.0);
        out
    }
}

/// Frame-domain analogue of [`crop_or_pad_samples`].
pub fn crop_or_pad_frames<T: Real, R: rand::Rng + ?Sized>(
    spec: &Spectrogram<T>,
    target: usize,
    rng: &mut R,
) -> Spectrogram<T> {
    let start = if spec.n_frames() > target {
        rng.random_range(0..=spec.n_frames() - target)
    } else {
        0
    };
    spec.frames(start, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pad_extends_with_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Spectrogram::<f32>::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let p = crop_or_pad_frames(&s, 5, &mut rng);
        assert_eq!(p.values(), &[1., 2., 3., 0., 0., 4., 5., 6., 0., 0.]);
        let c = crop_or_pad_frames(&s, 2, &mut rng);
        assert_eq!(c.n_frames(), 2);
        assert!(c.values() == [1., 2., 4., 5.] || c.values() == [2., 3., 5., 6.]);
    }

    #[test]
    fn sample_crop_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f32> = (0..100).map(|v| v as f32).collect();
        let c = crop_or_pad_samples(&x, 10, &mut rng);
        assert_eq!(c.len(), 10);
        assert!(c.windows(2).all(|w| w[1] == w[0] + 1.0));
        assert_eq!(crop_or_pad_samples(&x[..3], 5, &mut rng), vec![0., 1., 2., 0., 0.]);
    }
}
