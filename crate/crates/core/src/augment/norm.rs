use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Spectrogram;
use crate::tensor::{r, Real};

/// Variance guard used when a batch is constant.
pub const POST_NORM_EPS: f64 = 1e-8;

/// Corpus-level scalar mean and standard deviation of log-mel cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: f64,
    pub sigma: f64,
}

impl NormStats {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::contract(format!("invalid normalization stats mu={mu} sigma={sigma}")));
        }
        Ok(Self { mu, sigma })
    }
}

/// `(x - mu) / sigma`, elementwise.
pub fn pre_norm<T: Real>(x: &Spectrogram<T>, stats: &NormStats) -> Result<Spectrogram<T>> {
    if !(stats.sigma > 0.0) {
        return Err(Error::contract(format!("sigma must be positive, got {}", stats.sigma)));
    }
    let (mu, sigma): (T, T) = (r(stats.mu), r(stats.sigma));
    Ok(x.map(|v| (v - mu) / sigma))
}

/// Population mean and standard deviation over every cell of a batch.
pub fn batch_moments<T: Real>(batch: &[Spectrogram<T>]) -> (f64, f64) {
    let n: usize = batch.iter().map(|s| s.values().len()).sum();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = batch
        .iter()
        .flat_map(|s| s.values())
        .map(|v| v.as_f64())
        .sum::<f64>()
        / n as f64;
    let var = batch
        .iter()
        .flat_map(|s| s.values())
        .map(|v| (v.as_f64() - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    (mean, var.sqrt())
}

/// Standardizes a batch in place with its own scalar mean and standard
/// deviation; a constant batch becomes all zeros.
pub fn post_norm<T: Real>(batch: &mut [Spectrogram<T>]) {
    let (mean, std) = batch_moments(batch);
    let denom = std + POST_NORM_EPS;
    for s in batch.iter_mut() {
        for v in s.values_mut() {
            *v = r((v.as_f64() - mean) / denom);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(v: &[f64]) -> Spectrogram<f64> {
        Spectrogram::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn pre_norm_cases() {
        let st = NormStats::new(3.0, 2.0).unwrap();
        assert_eq!(pre_norm(&spec(&[3.0, 3.0]), &st).unwrap().values(), &[0.0, 0.0]);
        assert_eq!(pre_norm(&spec(&[5.0]), &st).unwrap().values(), &[1.0]);
        // corpus {0, 2}: mu = 1, sigma = 1
        let st = NormStats::new(1.0, 1.0).unwrap();
        assert_eq!(pre_norm(&spec(&[0.0]), &st).unwrap().values(), &[-1.0]);
        assert!(NormStats::new(0.0, 0.0).is_err());
        let bad = NormStats { mu: 0.0, sigma: -1.0 };
        assert!(matches!(pre_norm(&spec(&[1.0]), &bad), Err(Error::Contract(_))));
    }

    #[test]
    fn post_norm_cases() {
        let mut b = vec![spec(&[-2.0, 0.0, 2.0])];
        post_norm(&mut b);
        let (m, s) = batch_moments(&b);
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-6);

        let mut c = vec![spec(&[4.0, 4.0]), spec(&[4.0])];
        post_norm(&mut c);
        assert!(c.iter().all(|s| s.values().iter().all(|&v| v == 0.0)));

        let already = spec(&[-1.0, 1.0, -1.0, 1.0]);
        let mut d = vec![already.clone()];
        post_norm(&mut d);
        for (a, b) in d[0].values().iter().zip(already.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
