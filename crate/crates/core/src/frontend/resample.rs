use std::f64::consts::PI;

use super::AudioClip;

/// Zero crossings of the sinc kernel on each side.
const ZERO_CROSSINGS: f64 = 16.0;
/// Passband edge relative to the output Nyquist frequency.
const ROLLOFF: f64 = 0.945;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hann-windowed sinc resampling. The output has
/// `round(len * target / source)` samples; each output tap set is normalized
/// to unit gain so constant signals pass through unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target rate must be positive");
    if clip.sample_rate == target_rate {
        return clip.clone();
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = ((clip.samples.len() as f64 * ratio).round() as usize).max(1);
    let cutoff = ratio.min(1.0) * ROLLOFF;
    let half_width = ZERO_CROSSINGS / cutoff;
    let x = &clip.samples;
    let n = x.len() as isize;
    let samples = (0..out_len)
        .map(|i| {
            let center = i as f64 / ratio;
            let lo = ((center - half_width).ceil() as isize).max(0);
            let hi = ((center + half_width).floor() as isize).min(n - 1);
            let (mut acc, mut norm) = (0.0, 0.0);
            for k in lo..=hi {
                let d = center - k as f64;
                let window = 0.5 + 0.5 * (PI * d / half_width).cos();
                let w = cutoff * sinc(cutoff * d) * window;
                acc += w * x[k as usize] as f64;
                norm += w;
            }
            if norm.abs() > 1e-12 {
                (acc / norm) as f32
            } else {
                0.0
            }
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: target_rate,
    }
}
