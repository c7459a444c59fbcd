use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frontend::Spectrogram;
use crate::tensor::{r, Real};

pub const DEFAULT_QUEUE_CAPACITY: usize = 2048;

/// `log((1 - lambda) exp(a) + lambda exp(b))`, evaluated stably and clamped
/// to `[min(a, b), max(a, b)]`.
#[inline]
fn log_mix(a: f64, b: f64, lambda: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let v = hi + ((1.0 - lambda) * (a - hi).exp() + lambda * (b - hi).exp()).ln();
    v.clamp(lo, hi)
}

/// Mixes two log-scale spectrograms in the linear-energy domain.
pub fn log_mixup_exp<T: Real>(xi: &Spectrogram<T>, xk: &Spectrogram<T>, lambda: f64) -> Result<Spectrogram<T>> {
    if xi.shape() != xk.shape() {
        return Err(Error::contract(format!(
            "log-mixup-exp shapes differ: {:?} vs {:?}",
            xi.shape(),
            xk.shape()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!("mixing ratio {lambda} outside [0, 1]")));
    }
    if lambda == 0.0 {
        return Ok(xi.clone());
    }
    if lambda == 1.0 {
        return Ok(xk.clone().like(xi));
    }
    let values = xi
        .values()
        .iter()
        .zip(xk.values())
        .map(|(&a, &b)| r(log_mix(a.as_f64(), b.as_f64(), lambda)))
        .collect();
    Ok(Spectrogram::new(xi.n_freq(), xi.n_frames(), values)?.like(xi))
}

/// FIFO of past (pre-normalized) inputs used as mixing counterparts.
#[derive(Clone, Debug)]
pub struct MixupQueue<T = f32> {
    items: VecDeque<Spectrogram<T>>,
    capacity: usize,
    /// Upper bound of the uniform mixing-ratio distribution.
    pub alpha: f64,
}

impl<T: Real> MixupQueue<T> {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity.min(4096)),
            capacity: capacity.max(1),
            alpha,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends `x`, evicting the oldest entry when full.
    pub fn push(&mut self, x: Spectrogram<T>) -> Result<()> {
        if let Some(front) = self.items.front() {
            if front.shape() != x.shape() {
                return Err(Error::contract(format!(
                    "queue holds {:?} spectrograms, got {:?}",
                    front.shape(),
                    x.shape()
                )));
            }
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(x);
        Ok(())
    }

    /// Uniformly chosen entry, or `None` while the queue is empty.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&Spectrogram<T>> {
        if self.items.is_empty() {
            None
        } else {
            Some(&self.items[rng.random_range(0..self.items.len())])
        }
    }
}

/// Mixes `x` with a random queue entry without modifying the queue. Draws the
/// counterpart index, then `lambda ~ U(0, alpha)`. Returns `x` unchanged when
/// the queue is empty.
pub fn mixup_draw<T: Real, R: Rng + ?Sized>(
    x: &Spectrogram<T>,
    queue: &MixupQueue<T>,
    rng: &mut R,
) -> Result<Spectrogram<T>> {
    let Some(other) = queue.sample(rng) else {
        return Ok(x.clone());
    };
    let lambda = queue.alpha * rng.random::<f64>();
    log_mixup_exp(x, other, lambda)
}

/// [`mixup_draw`] followed by enqueuing `x`.
pub fn mixup<T: Real, R: Rng + ?Sized>(
    x: &Spectrogram<T>,
    queue: &mut MixupQueue<T>,
    rng: &mut R,
) -> Result<Spectrogram<T>> {
    let out = mixup_draw(x, queue, rng)?;
    queue.push(x.clone())?;
    Ok(out)
}

/// Log-mixup-exp against i.i.d. Gaussian "noise spectrogram" values. Draws
/// `lambda ~ U(0, alpha)` first, then the noise cells.
pub fn gaussian_noise_mix<T: Real, R: Rng + ?Sized>(
    x: &Spectrogram<T>,
    std: f64,
    alpha: f64,
    rng: &mut R,
) -> Result<Spectrogram<T>> {
    let lambda = alpha * rng.random::<f64>();
    let normal = Normal::new(0.0, std).map_err(|e| Error::contract(format!("noise std {std}: {e}")))?;
    let noise: Vec<T> = (0..x.values().len()).map(|_| r(normal.sample(rng))).collect();
    let noise = Spectrogram::new(x.n_freq(), x.n_frames(), noise)?;
    log_mixup_exp(x, &noise, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(v: &[f64]) -> Spectrogram<f64> {
        Spectrogram::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn endpoints_are_exact() {
        let a = spec(&[0.3, -1.2, 4.0]);
        let b = spec(&[1.0, 2.0, -3.0]);
        assert_eq!(log_mixup_exp(&a, &b, 0.0).unwrap(), a);
        assert_eq!(log_mixup_exp(&a, &b, 1.0).unwrap().values(), b.values());
    }

    #[test]
    fn half_mix_of_two_and_four_is_three() {
        let out = log_mixup_exp(&spec(&[2f64.ln()]), &spec(&[4f64.ln()]), 0.5).unwrap();
        assert!((out.values()[0] - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(matches!(log_mixup_exp(&spec(&[0.0]), &spec(&[0.0, 1.0]), 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn empty_queue_passes_through_and_enqueues() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = MixupQueue::new(4, 0.2);
        let x = spec(&[1.0, 2.0]);
        assert_eq!(mixup(&x, &mut q, &mut rng).unwrap(), x);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn zero_alpha_never_mixes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut q = MixupQueue::new(4, 0.0);
        q.push(spec(&[9.0, -9.0])).unwrap();
        let x = spec(&[1.0, 2.0]);
        for _ in 0..10 {
            assert_eq!(mixup(&x, &mut q, &mut rng).unwrap(), x);
        }
    }

    #[test]
    fn single_entry_queue_is_deterministic() {
        let k = spec(&[0.5, -0.5, 3.0]);
        let x = spec(&[1.0, 2.0, -1.0]);
        let mut q = MixupQueue::new(8, 0.4);
        q.push(k.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut probe = rng.clone();
        let out = mixup(&x, &mut q, &mut rng).unwrap();
        let _ = probe.random_range(0..1usize);
        let lambda = 0.4 * probe.random::<f64>();
        assert_eq!(out, log_mixup_exp(&x, &k, lambda).unwrap());

        let fixed = log_mixup_exp(&x, &k, 0.2).unwrap();
        for (i, v) in fixed.values().iter().enumerate() {
            let expect = (0.8 * x.values()[i].exp() + 0.2 * k.values()[i].exp()).ln();
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn queue_evicts_oldest() {
        let mut q = MixupQueue::new(2, 0.2);
        for i in 0..3 {
            q.push(spec(&[i as f64])).unwrap();
        }
        assert_eq!(q.len(), 2);
        assert!(q.items.iter().all(|s| s.values()[0] >= 1.0));
        assert!(q.push(spec(&[0.0, 0.0])).is_err());
        assert_eq!(MixupQueue::<f32>::new(DEFAULT_QUEUE_CAPACITY, 0.2).capacity(), 2048);
    }

    #[test]
    fn gaussian_cases() {
        let x = spec(&[0.1, 0.2, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(gaussian_noise_mix(&x, 0.4, 0.0, &mut rng).unwrap(), x);
        let zero = spec(&[0.0; 5]);
        let out = gaussian_noise_mix(&zero, 0.0, 0.5, &mut rng).unwrap();
        assert!(out.values().iter().all(|&v| v.abs() < 1e-15));
        let a = gaussian_noise_mix(&x, 0.4, 0.3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = gaussian_noise_mix(&x, 0.4, 0.3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, x);
    }

    proptest! {
        #[test]
        fn stays_between_operands(a in -20.0f64..20.0, b in -20.0f64..20.0, lambda in 0.0f64..=1.0) {
            let out = log_mixup_exp(&spec(&[a]), &spec(&[b]), lambda).unwrap().values()[0];
            prop_assert!(a.min(b) <= out && out <= a.max(b));
        }
    }
}
