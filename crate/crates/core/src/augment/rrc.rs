use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Spectrogram;
use crate::tensor::{r, Real};

/// Crop-size ranges and the width of the zero-filled virtual time boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RrcConfig {
    pub freq_range: (f64, f64),
    pub time_range: (f64, f64),
    /// Virtual boundary length in units of the input's frame count.
    pub virtual_time_scale: f64,
}

impl Default for RrcConfig {
    fn default() -> Self {
        Self {
            freq_range: (0.6, 1.5),
            time_range: (0.6, 1.5),
            virtual_time_scale: 1.5,
        }
    }
}

impl RrcConfig {
    pub fn validate(&self) -> Result<()> {
        let (f1, f2) = self.freq_range;
        let (t1, t2) = self.time_range;
        if !(0.0 < f1 && f1 <= f2) || !(0.0 < t1 && t1 <= t2) || !(self.virtual_time_scale >= 1.0) {
            return Err(Error::contract(format!("invalid crop config {self:?}")));
        }
        Ok(())
    }

    /// Frame count of the virtual boundary for a `frames`-long input.
    pub fn virtual_frames(&self, frames: usize) -> usize {
        ((self.virtual_time_scale * frames as f64).floor() as usize).max(frames)
    }
}

/// Crop size from raw uniform draws: `F_C = floor(min(fdraw, 1) * F)` and
/// `T_C = floor(tdraw * T)`, each kept within `[1, boundary]`.
pub fn crop_size(n_freq: usize, n_frames: usize, virtual_frames: usize, fdraw: f64, tdraw: f64) -> (usize, usize) {
    let fc = (fdraw.min(1.0) * n_freq as f64).floor() as usize;
    let tc = (tdraw * n_frames as f64).floor() as usize;
    (fc.clamp(1, n_freq), tc.clamp(1, virtual_frames))
}

/// Catmull-Rom cubic convolution kernel (`a = -0.5`).
#[inline]
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Interpolation taps `(index, weight)` for each output position along one
/// axis, half-pixel aligned with edge clamping.
fn taps(input: usize, output: usize) -> Vec<[(usize, f64); 4]> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut out = [(0usize, 0.0); 4];
            for (j, slot) in out.iter_mut().enumerate() {
                let idx = base as isize - 1 + j as isize;
                *slot = (
                    idx.clamp(0, input as isize - 1) as usize,
                    cubic_kernel(frac - (j as f64 - 1.0)),
                );
            }
            out
        })
        .collect()
}

/// Separable bicubic resize of a row-major `[h, w]` grid to `[out_h, out_w]`.
pub fn resize_bicubic(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let tw = taps(w, out_w);
    let th = taps(h, out_h);
    let mut rows = vec![0.0; h * out_w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (x, t) in tw.iter().enumerate() {
            rows[y * out_w + x] = t.iter().map(|&(i, k)| k * row[i]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (y, t) in th.iter().enumerate() {
        for x in 0..out_w {
            out[y * out_w + x] = t.iter().map(|&(i, k)| k * rows[i * out_w + x]).sum();
        }
    }
    out
}

/// Extracts the `[fc, tc]` crop at `(f0, t0)` of the virtual boundary (input
/// centered in time, zeros outside) and resizes it back to the input shape.
pub fn resize_crop<T: Real>(x: &Spectrogram<T>, virtual_frames: usize, f0: usize, t0: usize, fc: usize, tc: usize) -> Spectrogram<T> {
    let (nf, nt) = (x.n_freq(), x.n_frames());
    let offset = (virtual_frames - nt) / 2;
    let mut crop = vec![0.0; fc * tc];
    for f in 0..fc {
        for t in 0..tc {
            let vt = t0 + t;
            if vt >= offset && vt < offset + nt {
                crop[f * tc + t] = x.get(f0 + f, vt - offset).as_f64();
            }
        }
    }
    let out = resize_bicubic(&crop, fc, tc, nf, nt);
    Spectrogram::new(nf, nt, out.into_iter().map(r).collect())
        .unwrap()
        .like(x)
}

/// Random resize crop. Draw order: frequency scale, time scale, frequency
/// offset, time offset.
pub fn random_resize_crop<T: Real, R: Rng + ?Sized>(x: &Spectrogram<T>, cfg: &RrcConfig, rng: &mut R) -> Result<Spectrogram<T>> {
    cfg.validate()?;
    let (nf, nt) = (x.n_freq(), x.n_frames());
    let vt = cfg.virtual_frames(nt);
    let fdraw = rng.random_range(cfg.freq_range.0..=cfg.freq_range.1);
    let tdraw = rng.random_range(cfg.time_range.0..=cfg.time_range.1);
    let (fc, tc) = crop_size(nf, nt, vt, fdraw, tdraw);
    let f0 = rng.random_range(0..=nf - fc);
    let t0 = rng.random_range(0..=vt - tc);
    Ok(resize_crop(x, vt, f0, t0, fc, tc))
}
