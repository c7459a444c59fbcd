use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::tensor::{tnsr, Tensor};

/// Standardization guard for constant dimensions.
pub const STD_EPS: f64 = 1e-8;

/// Which evaluation partition a row belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Split(Split),
    Fold(u32),
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Partition::Split(s) => write!(f, "{s}"),
            Partition::Fold(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<u32>() {
            Ok(k) => Ok(Partition::Fold(k)),
            Err(_) => Ok(Partition::Split(s.parse()?)),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarRow {
    id: String,
    label: String,
    split: String,
}

/// One embedding per clip with its labels and partition.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub dim: usize,
    /// Row-major `[N, dim]`.
    pub values: Vec<f64>,
    pub labels: Vec<Vec<String>>,
    pub partition: Vec<Partition>,
}

impl EmbeddingTable {
    pub fn new(
        ids: Vec<String>,
        dim: usize,
        values: Vec<f64>,
        labels: Vec<Vec<String>>,
        partition: Vec<Partition>,
    ) -> Result<Self> {
        let n = ids.len();
        if values.len() != n * dim || labels.len() != n || partition.len() != n {
            return Err(Error::contract(format!(
                "table of {n} rows has {} values for dim {dim}, {} label sets, {} partitions",
                values.len(),
                labels.len(),
                partition.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding table".into()));
        }
        let t = Self {
            ids,
            dim,
            values,
            labels,
            partition,
        };
        let folds = t.partition.iter().any(|p| matches!(p, Partition::Fold(_)));
        let splits = t.partition.iter().any(|p| matches!(p, Partition::Split(_)));
        if folds && splits {
            return Err(Error::Data("table mixes splits and folds".into()));
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn uses_folds(&self) -> bool {
        self.partition.iter().any(|p| matches!(p, Partition::Fold(_)))
    }

    /// Sorted label vocabulary.
    pub fn classes(&self) -> Vec<String> {
        self.labels.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn rows_in(&self, part: Partition) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.partition[i] == part).collect()
    }

    /// Sorted fold ids.
    pub fn folds(&self) -> Vec<u32> {
        self.partition
            .iter()
            .filter_map(|p| match p {
                Partition::Fold(k) => Some(*k),
                _ => None,
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Per-dimension `(mean, std)` from `rows`, applied to every row.
    pub fn standardize_with(&self, rows: &[usize]) -> Result<(Self, Vec<(f64, f64)>)> {
        if rows.is_empty() {
            return Err(Error::Data("standardization needs at least one training row".into()));
        }
        let d = self.dim;
        let n = rows.len() as f64;
        let stats: Vec<(f64, f64)> = (0..d)
            .map(|j| {
                let mean = rows.iter().map(|&i| self.values[i * d + j]).sum::<f64>() / n;
                let var = rows.iter().map(|&i| (self.values[i * d + j] - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect();
        let mut out = self.clone();
        for row in out.values.chunks_mut(d) {
            for (v, &(m, s)) in row.iter_mut().zip(&stats) {
                *v = (*v - m) / s.max(STD_EPS);
            }
        }
        Ok((out, stats))
    }

    /// Standardizes with statistics of the `train` split.
    pub fn standardize(&self) -> Result<Self> {
        Ok(self.standardize_with(&self.rows_in(Partition::Split(Split::Train)))?.0)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("csv")
    }

    /// TNSR file with one `embeddings` entry plus a CSV sidecar
    /// `id,label,split`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let t = Tensor::new(vec![self.len(), self.dim], self.values.iter().map(|&v| v as f32).collect())?;
        tnsr::save(path, &[("embeddings".to_string(), t)])?;
        let side = Self::sidecar_path(path);
        let mut w = csv::Writer::from_path(&side)?;
        for i in 0..self.len() {
            w.serialize(SidecarRow {
                id: self.ids[i].clone(),
                label: self.labels[i].join(";"),
                split: self.partition[i].to_string(),
            })?;
        }
        w.flush().map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = tnsr::load::<f32>(path)?;
        let (_, t) = entries
            .into_iter()
            .find(|(n, _)| n == "embeddings")
            .ok_or_else(|| Error::Format(format!("{} has no `embeddings` entry", path.display())))?;
        if t.rank() != 2 {
            return Err(Error::Format(format!("embeddings must be [N, D], got {:?}", t.shape())));
        }
        let side = Self::sidecar_path(path);
        let mut rdr = csv::Reader::from_path(&side)?;
        let (mut ids, mut labels, mut partition) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.deserialize::<SidecarRow>() {
            let r = rec?;
            ids.push(r.id);
            labels.push(if r.label.is_empty() {
                Vec::new()
            } else {
                r.label.split(';').map(str::to_string).collect()
            });
            partition.push(r.split.parse()?);
        }
        if ids.len() != t.shape()[0] {
            return Err(Error::Data(format!(
                "{} lists {} rows but the tensor has {}",
                side.display(),
                ids.len(),
                t.shape()[0]
            )));
        }
        let dim = t.shape()[1];
        Self::new(ids, dim, t.data().iter().map(|&v| v as f64).collect(), labels, partition)
    }
}
