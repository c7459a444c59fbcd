use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, Spectrogram};
use crate::error::{Error, Result};
use crate::tensor::{r, Real};

/// Power floor applied before the natural log; silence maps to `ln(1e-7)`.
pub const LOG_FLOOR: f64 = 1e-7;

/// Short-time Fourier and mel filterbank settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    /// Hann window length, also the FFT size.
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window: 1024,
            hop: 160,
            n_mels: 64,
            f_min: 60.0,
            f_max: 7800.0,
        }
    }
}

impl FrontendConfig {
    /// Frames produced for `len` samples (no centering or padding).
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.hop + 1
        }
    }

    /// Samples needed to produce exactly `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        self.window + frames.saturating_sub(1) * self.hop
    }
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn logstep() -> f64 {
    6.4f64.ln() / 27.0
}

pub(crate) fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / logstep()
    } else {
        hz / F_SP
    }
}

pub(crate) fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (logstep() * (mel - MIN_LOG_MEL)).exp()
    } else {
        mel * F_SP
    }
}

/// Triangular mel filters with Slaney area normalization, `[n_mels, window/2 + 1]`
/// row-major. Also returns each filter's center frequency in Hz.
pub fn mel_filterbank(cfg: &FrontendConfig) -> (Vec<f64>, Vec<f64>) {
    let n_bins = cfg.window / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (right - left);
        for k in 0..n_bins {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.window as f64;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            fb[m * n_bins + k] = up.min(down).max(0.0) * norm;
        }
    }
    (fb, edges[1..=cfg.n_mels].to_vec())
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Log-mel spectrogram `[n_mels, frames]` of a clip already at
/// `cfg.sample_rate`: Hann-windowed power spectra, mel filterbank, then
/// `ln(max(energy, 1e-7))`.
pub fn logmel<T: Real>(clip: &AudioClip, cfg: &FrontendConfig) -> Result<Spectrogram<T>> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::contract(format!(
            "log-mel expects {} Hz audio, got {} Hz",
            cfg.sample_rate, clip.sample_rate
        )));
    }
    let frames = cfg.frame_count(clip.samples.len());
    if frames == 0 {
        return Err(Error::TooShort {
            samples: clip.samples.len(),
            needed: cfg.window,
        });
    }
    let n_bins = cfg.window / 2 + 1;
    let (fb, _) = mel_filterbank(cfg);
    let window = hann(cfg.window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.window);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.window];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut power = vec![0.0; n_bins];
    let mut out = vec![T::zero(); cfg.n_mels * frames];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(clip.samples[start + i] as f64 * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let e: f64 = fb[m * n_bins..(m + 1) * n_bins]
                .iter()
                .zip(&power)
                .map(|(w, p)| w * p)
                .sum();
            out[m * frames + t] = r(e.max(LOG_FLOOR).ln());
        }
    }
    Ok(Spectrogram::new(cfg.n_mels, frames, out)?
        .with_meta(cfg.hop as f64 / cfg.sample_rate as f64, cfg.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, len: usize) -> AudioClip {
        AudioClip::new(
            (0..len)
                .map(|i| (amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin()) as f32)
                .collect(),
            16_000,
        )
        .unwrap()
    }

    /// Direct O(n^2) DFT + filterbank for one frame.
    fn oracle_frame(x: &[f32], cfg: &FrontendConfig, start: usize) -> Vec<f64> {
        let n = cfg.window;
        let w: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
        let (fb, _) = mel_filterbank(cfg);
        let bins = n / 2 + 1;
        let power: Vec<f64> = (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..n {
                    let v = x[start + i] as f64 * w[i];
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect();
        (0..cfg.n_mels)
            .map(|m| {
                let e: f64 = (0..bins).map(|k| fb[m * bins + k] * power[k]).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect()
    }

    #[test]
    fn mel_scale_roundtrip() {
        for hz in [0.0, 60.0, 999.0, 1000.0, 4000.0, 7800.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn silence_hits_floor() {
        let cfg = FrontendConfig::default();
        let s: Spectrogram<f64> = logmel(&AudioClip::new(vec![0.0; 4000], 16_000).unwrap(), &cfg).unwrap();
        assert!(s.values().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn frame_count_formula() {
        let cfg = FrontendConfig::default();
        // 0.96 s: floor((15360 - 1024) / 160) + 1
        assert_eq!(cfg.frame_count(15_360), 90);
        let s: Spectrogram<f32> = logmel(&tone(440.0, 0.5, 15_360), &cfg).unwrap();
        assert_eq!(s.shape(), [64, 90]);
        assert_eq!(cfg.samples_for_frames(96), 16_224);
        assert_eq!(cfg.frame_count(16_224), 96);
    }

    #[test]
    fn too_short_and_wrong_rate() {
        let cfg = FrontendConfig::default();
        let short = AudioClip::new(vec![0.0; 1023], 16_000).unwrap();
        assert!(matches!(logmel::<f32>(&short, &cfg), Err(Error::TooShort { .. })));
        let wrong = AudioClip::new(vec![0.0; 2048], 8_000).unwrap();
        assert!(matches!(logmel::<f32>(&wrong, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn matches_direct_dft_and_peaks_at_filter_center() {
        let cfg = FrontendConfig::default();
        let (_, centers) = mel_filterbank(&cfg);
        for idx in [20usize, 35, 50] {
            let clip = tone(centers[idx], 0.5, 8000);
            let s: Spectrogram<f64> = logmel(&clip, &cfg).unwrap();
            let mid = s.n_frames() / 2;
            let oracle = oracle_frame(&clip.samples, &cfg, mid * cfg.hop);
            for m in 0..cfg.n_mels {
                assert!((s.get(m, mid) - oracle[m]).abs() < 1e-6, "bin {m}");
            }
            let argmax = (0..cfg.n_mels)
                .max_by(|&a, &b| s.get(a, mid).total_cmp(&s.get(b, mid)))
                .unwrap();
            assert_eq!(argmax, idx);
        }
    }

    #[test]
    fn louder_never_decreases() {
        let cfg = FrontendConfig::default();
        let quiet: Spectrogram<f64> = logmel(&tone(700.0, 0.1, 4000), &cfg).unwrap();
        let loud: Spectrogram<f64> = logmel(&tone(700.0, 0.3, 4000), &cfg).unwrap();
        assert!(quiet.values().iter().zip(loud.values()).all(|(q, l)| l >= q));
    }
}
