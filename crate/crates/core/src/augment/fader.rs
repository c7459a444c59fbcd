use rand::Rng;

use crate::frontend::Spectrogram;
use crate::tensor::{r, Real};

/// Adds the ramp `a + (b - a) t / T` to every frequency bin of frame `t`.
pub fn linear_fader<T: Real>(x: &Spectrogram<T>, a: f64, b: f64) -> Spectrogram<T> {
    let nt = x.n_frames();
    let ramp: Vec<T> = (0..nt).map(|t| r(a + (b - a) * t as f64 / nt as f64)).collect();
    let mut out = x.clone();
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        *v += ramp[i % nt];
    }
    out
}

/// [`linear_fader`] with `a, b ~ U(-1, 1)`, drawn in that order.
pub fn random_linear_fader<T: Real, R: Rng + ?Sized>(x: &Spectrogram<T>, rng: &mut R) -> Spectrogram<T> {
    let a = rng.random_range(-1.0..1.0);
    let b = rng.random_range(-1.0..1.0);
    linear_fader(x, a, b)
}
