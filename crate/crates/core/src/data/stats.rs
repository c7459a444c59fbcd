use serde::{Deserialize, Serialize};

use crate::augment::NormStats;
use crate::error::{Error, Result};
use crate::frontend::Spectrogram;
use crate::tensor::Real;

/// Floor for the corpus standard deviation of a constant corpus.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Scalar mean and population standard deviation over every log-mel cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub mu: f64,
    pub sigma: f64,
    pub cell_count: u64,
}

impl CorpusStats {
    pub fn norm(&self) -> NormStats {
        NormStats {
            mu: self.mu,
            sigma: self.sigma,
        }
    }
}

/// Streaming mean/variance. Each clip is reduced to `(n, mean, M2)` and
/// merged with Chan's pairwise update, in the order clips are pushed.
#[derive(Clone, Copy, Debug, Default)]
pub struct StatsAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_values(&mut self, values: impl IntoIterator<Item = f64> + Clone) {
        let (mut n, mut sum) = (0u64, 0.0);
        for v in values.clone() {
            n += 1;
            sum += v;
        }
        if n == 0 {
            return;
        }
        let mean = sum / n as f64;
        let m2 = values.into_iter().map(|v| (v - mean).powi(2)).sum();
        self.merge(&StatsAccumulator { n, mean, m2 });
    }

    pub fn push<T: Real>(&mut self, spec: &Spectrogram<T>) {
        self.push_values(spec.values().iter().map(|v| v.as_f64()));
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn finish(&self) -> Result<CorpusStats> {
        if self.n == 0 {
            return Err(Error::Data("no log-mel cells to compute statistics from".into()));
        }
        let sigma = (self.m2 / self.n as f64).sqrt();
        Ok(CorpusStats {
            mu: self.mean,
            sigma: if sigma > SIGMA_FLOOR { sigma } else { SIGMA_FLOOR },
            cell_count: self.n,
        })
    }
}

pub fn compute_corpus_stats<'a, T: Real>(corpus: impl IntoIterator<Item = &'a Spectrogram<T>>) -> Result<CorpusStats> {
    let mut acc = StatsAccumulator::new();
    for s in corpus {
        acc.push(s);
    }
    acc.finish()
}
