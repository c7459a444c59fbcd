use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, map_auc};
use super::table::{EmbeddingTable, Partition};
use crate::data::Split;
use crate::error::{Error, Result};

/// Learning rates swept when none is pinned.
pub const LR_GRID: [f64; 4] = [1e-5, 1e-4, 1e-3, 1e-2];
/// Learning rate used when there is no validation split to choose with.
pub const FALLBACK_LR: f64 = 1e-3;
/// Weight init bound, relative to `1/sqrt(D)`.
pub const INIT_SCALE: f64 = 1e-2;
pub const CI_FORMULA: &str = "mean ± 1.96 * sample_std / sqrt(runs)";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Multiclass,
    Multilabel,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" => Ok(TaskKind::Multiclass),
            "multilabel" => Ok(TaskKind::Multilabel),
            _ => Err(Error::Config(format!("unknown task kind `{s}` (multiclass|multilabel)"))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Multiclass => "multiclass",
            TaskKind::Multilabel => "multilabel",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub max_epochs: usize,
    pub patience: usize,
    /// Pinned learning rate; `None` sweeps [`LR_GRID`].
    pub learning_rate: Option<f64>,
    pub runs: usize,
    pub task: TaskKind,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            patience: 20,
            learning_rate: None,
            runs: 3,
            task: TaskKind::Multiclass,
            seed: 42,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("probe runs must be at least 1".into()));
        }
        if self.max_epochs == 0 || self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "probe needs 0 < patience ({}) <= max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("probe learning rate must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    fn lr_candidates(&self, has_valid: bool) -> Vec<f64> {
        match self.learning_rate {
            Some(lr) => vec![lr],
            None if has_valid => LR_GRID.to_vec(),
            None => {
                log::warn!("no validation split to sweep learning rates; using {FALLBACK_LR}");
                vec![FALLBACK_LR]
            }
        }
    }
}

/// Row indices of one train/valid/test arrangement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partitioning {
    /// Fold held out for testing, in folds mode.
    pub fold: Option<u32>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// The arrangements a table is evaluated on: one for split tables, one per
/// fold otherwise. With three or more folds the fold after the test fold
/// serves as validation.
pub fn partitionings(table: &EmbeddingTable) -> Result<Vec<Partitioning>> {
    if !table.uses_folds() {
        let p = Partitioning {
            fold: None,
            train: table.rows_in(Partition::Split(Split::Train)),
            valid: table.rows_in(Partition::Split(Split::Valid)),
            test: table.rows_in(Partition::Split(Split::Test)),
        };
        if p.train.is_empty() || p.test.is_empty() {
            return Err(Error::Data("probe needs non-empty train and test splits".into()));
        }
        return Ok(vec![p]);
    }
    let folds = table.folds();
    if folds.len() < 2 {
        return Err(Error::Data("cross-validation needs at least two folds".into()));
    }
    Ok((0..folds.len())
        .map(|k| {
            let test_fold = folds[k];
            let valid_fold = (folds.len() >= 3).then(|| folds[(k + 1) % folds.len()]);
            let mut p = Partitioning {
                fold: Some(test_fold),
                train: Vec::new(),
                valid: Vec::new(),
                test: Vec::new(),
            };
            for (i, part) in table.partition.iter().enumerate() {
                match part {
                    Partition::Fold(f) if *f == test_fold => p.test.push(i),
                    Partition::Fold(f) if Some(*f) == valid_fold => p.valid.push(i),
                    _ => p.train.push(i),
                }
            }
            p
        })
        .collect())
}

/// Dense targets: class index per row (multiclass) or a row-major `[N, C]`
/// indicator matrix (multilabel).
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Indicators(Vec<bool>),
}

pub fn encode_targets(table: &EmbeddingTable, classes: &[String], task: TaskKind) -> Result<Targets> {
    let index = |name: &String| classes.iter().position(|c| c == name).unwrap();
    match task {
        TaskKind::Multiclass => table
            .labels
            .iter()
            .zip(&table.ids)
            .map(|(l, id)| match l.as_slice() {
                [one] => Ok(index(one)),
                _ => Err(Error::Data(format!("multiclass row `{id}` has {} labels", l.len()))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Targets::Classes),
        TaskKind::Multilabel => {
            let c = classes.len();
            let mut y = vec![false; table.len() * c];
            for (i, l) in table.labels.iter().enumerate() {
                for name in l {
                    y[i * c + index(name)] = true;
                }
            }
            Ok(Targets::Indicators(y))
        }
    }
}

/// A single linear layer `logits = W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `[C, D]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearProbe {
    /// Near-zero uniform init, so the first updates rather than the draw
    /// decide the initial validation ranking.
    pub fn new(n_classes: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = INIT_SCALE / (dim.max(1) as f64).sqrt();
        Self {
            n_classes,
            dim,
            weight: (0..n_classes * dim).map(|_| rng.random_range(-bound..bound)).collect(),
            bias: vec![0.0; n_classes],
        }
    }

    /// Row-major `[rows, C]` logits.
    pub fn logits(&self, table: &EmbeddingTable, rows: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * self.n_classes);
        for &i in rows {
            let x = table.row(i);
            for c in 0..self.n_classes {
                let w = &self.weight[c * self.dim..(c + 1) * self.dim];
                out.push(self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        out
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean loss over `rows` and its gradient with respect to the logits.
fn loss_and_dlogits(logits: &[f64], targets: &Targets, rows: &[usize], c: usize) -> (f64, Vec<f64>) {
    let n = rows.len() as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (r, &i) in rows.iter().enumerate() {
        let z = &logits[r * c..(r + 1) * c];
        let g = &mut grad[r * c..(r + 1) * c];
        match targets {
            Targets::Classes(y) => {
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
                let lse = m + sum.ln();
                loss += lse - z[y[i]];
                for k in 0..c {
                    g[k] = ((z[k] - lse).exp() - (k == y[i]) as u8 as f64) / n;
                }
            }
            Targets::Indicators(y) => {
                for k in 0..c {
                    let t = y[i * c + k] as u8 as f64;
                    // log(1 + e^z) - t z, written stably
                    loss += z[k].max(0.0) - z[k] * t + (-z[k].abs()).exp().ln_1p();
                    g[k] = (sigmoid(z[k]) - t) / (n * c as f64);
                }
            }
        }
    }
    let scale = match targets {
        Targets::Classes(_) => n,
        Targets::Indicators(_) => n * c as f64,
    };
    (loss / scale, grad)
}

/// Accuracy (multiclass) or mAP (multilabel) of `probe` on `rows`.
fn primary_metric(probe: &LinearProbe, table: &EmbeddingTable, targets: &Targets, rows: &[usize]) -> Result<f64> {
    let scores = probe.logits(table, rows);
    match targets {
        Targets::Classes(y) => {
            let t: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
            Ok(accuracy(&scores, probe.n_classes, &t))
        }
        Targets::Indicators(_) => Ok(map_auc(&scores, &indicator_rows(targets, rows, probe.n_classes), probe.n_classes)?.0),
    }
}

fn indicator_rows(targets: &Targets, rows: &[usize], c: usize) -> Vec<bool> {
    match targets {
        Targets::Indicators(y) => rows.iter().flat_map(|&i| y[i * c..(i + 1) * c].iter().copied()).collect(),
        Targets::Classes(y) => rows.iter().flat_map(|&i| (0..c).map(move |k| k == y[i])).collect(),
    }
}

/// Result of fitting one probe.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub probe: LinearProbe,
    /// Training loss before each epoch's update.
    pub train_loss: Vec<f64>,
    /// Best validation metric, when there is a validation set.
    pub best_valid: Option<f64>,
    pub epochs_run: usize,
}

/// Full-batch Adam on the training rows. With validation rows, training
/// stops after `patience` epochs without improvement and the best weights
/// are kept; without, it runs `max_epochs`.
pub fn fit_probe(
    table: &EmbeddingTable,
    targets: &Targets,
    n_classes: usize,
    part: &Partitioning,
    lr: f64,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<FitOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = LinearProbe::new(n_classes, table.dim, &mut rng);
    let (d, c) = (table.dim, n_classes);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let np = c * d + c;
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let mut best: Option<(f64, LinearProbe)> = None;
    let mut since_best = 0;
    let mut train_loss = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        let logits = probe.logits(table, &part.train);
        let (loss, dz) = loss_and_dlogits(&logits, targets, &part.train, c);
        if !loss.is_finite() {
            return Err(Error::NonFinite("probe training loss".into()));
        }
        train_loss.push(loss);
        let mut grad = vec![0.0; np];
        for (r, &i) in part.train.iter().enumerate() {
            let x = table.row(i);
            for k in 0..c {
                let g = dz[r * c + k];
                for (gw, xv) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *gw += g * xv;
                }
                grad[c * d + k] += g;
            }
        }
        let bc1 = 1.0 - b1.powi(epoch as i32);
        let bc2 = 1.0 - b2.powi(epoch as i32);
        let params = probe.weight.iter_mut().chain(probe.bias.iter_mut());
        for (((p, g), mi), vi) in params.zip(&grad).zip(&mut m).zip(&mut v) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            *p -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
        }
        epochs_run = epoch;
        if part.valid.is_empty() {
            continue;
        }
        let score = primary_metric(&probe, table, targets, &part.valid)?;
        // ties keep the later, longer-trained weights but do not reset patience
        let prev = best.as_ref().map(|(b, _)| *b);
        if prev.is_none_or(|b| score >= b) {
            best = Some((score, probe.clone()));
        }
        if prev.is_none_or(|b| score > b) {
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let best_valid = best.as_ref().map(|(s, _)| *s);
    if let Some((_, p)) = best {
        probe = p;
    }
    Ok(FitOutcome {
        probe,
        train_loss,
        best_valid,
        epochs_run,
    })
}

/// Per-run values of one metric with their mean and 95% half-width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub runs: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

impl MetricSummary {
    pub fn new(name: &str, runs: Vec<f64>) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let ci95 = if runs.len() > 1 {
            let var = runs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * var.sqrt() / n.sqrt()
        } else {
            0.0
        };
        Self {
            name: name.to_string(),
            runs,
            mean,
            ci95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: u32,
    /// Primary test metric averaged over runs.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub learning_rate: f64,
    /// Validation metric averaged over runs and folds; absent without a
    /// validation split.
    pub valid: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub task: TaskKind,
    pub classes: Vec<String>,
    pub learning_rate: f64,
    /// Primary metric first (accuracy or mAP), then AUC for multilabel.
    pub metrics: Vec<MetricSummary>,
    pub folds: Vec<FoldScore>,
    pub sweep: Vec<SweepEntry>,
    pub ci_formula: String,
}

impl ProbeReport {
    pub fn primary(&self) -> &MetricSummary {
        &self.metrics[0]
    }
}

pub struct ProbeResult {
    pub report: ProbeReport,
    /// Fitted probes for the chosen learning rate, indexed `[run][partitioning]`.
    pub probes: Vec<Vec<LinearProbe>>,
}

/// Standardizes per arrangement with its training rows, sweeps learning
/// rates on validation, and reports test metrics for the best rate over
/// `cfg.runs` seeds. In folds mode each run's value is the mean over folds.
pub fn train_probe(table: &EmbeddingTable, cfg: &ProbeConfig) -> Result<ProbeResult> {
    cfg.validate()?;
    let classes = table.classes();
    if classes.len() < 2 && cfg.task == TaskKind::Multiclass {
        return Err(Error::Data("multiclass probe needs at least two classes".into()));
    }
    let targets = encode_targets(table, &classes, cfg.task)?;
    let parts = partitionings(table)?;
    let has_valid = parts.iter().all(|p| !p.valid.is_empty());
    if !has_valid {
        log::warn!("no validation rows; early stopping disabled, training {} epochs", cfg.max_epochs);
    }
    let standardized: Vec<EmbeddingTable> = parts
        .iter()
        .map(|p| table.standardize_with(&p.train).map(|(t, _)| t))
        .collect::<Result<_>>()?;
    let c = classes.len();

    let mut sweep = Vec::new();
    let mut chosen: Option<(f64, Option<f64>, Vec<Vec<LinearProbe>>)> = None;
    for lr in cfg.lr_candidates(has_valid) {
        let mut probes = Vec::with_capacity(cfg.runs);
        let mut valid_sum = 0.0;
        for run in 0..cfg.runs {
            let mut per_part = Vec::with_capacity(parts.len());
            for (p, t) in parts.iter().zip(&standardized) {
                let fit = fit_probe(t, &targets, c, p, lr, cfg, cfg.seed.wrapping_add(run as u64))?;
                valid_sum += fit.best_valid.unwrap_or(0.0);
                per_part.push(fit.probe);
            }
            probes.push(per_part);
        }
        let valid = has_valid.then(|| valid_sum / (cfg.runs * parts.len()) as f64);
        sweep.push(SweepEntry {
            learning_rate: lr,
            valid,
        });
        // ties go to the larger rate
        if chosen.as_ref().is_none_or(|(_, best, _)| valid >= *best) {
            chosen = Some((lr, valid, probes));
        }
    }
    let (lr, _, probes) = chosen.expect("at least one learning rate");

    let mut primary_runs = Vec::with_capacity(cfg.runs);
    let mut auc_runs = Vec::with_capacity(cfg.runs);
    let mut fold_sums = vec![0.0; parts.len()];
    for run_probes in &probes {
        let (mut prim, mut auc) = (0.0, 0.0);
        for (k, ((probe, p), t)) in run_probes.iter().zip(&parts).zip(&standardized).enumerate() {
            let value = match cfg.task {
                TaskKind::Multiclass => primary_metric(probe, t, &targets, &p.test)?,
                TaskKind::Multilabel => {
                    let scores = probe.logits(t, &p.test);
                    let (m, a) = map_auc(&scores, &indicator_rows(&targets, &p.test, c), c)?;
                    auc += a;
                    m
                }
            };
            fold_sums[k] += value;
            prim += value;
        }
        primary_runs.push(prim / parts.len() as f64);
        auc_runs.push(auc / parts.len() as f64);
    }
    let mut metrics = vec![MetricSummary::new(
        match cfg.task {
            TaskKind::Multiclass => "accuracy",
            TaskKind::Multilabel => "mAP",
        },
        primary_runs,
    )];
    if cfg.task == TaskKind::Multilabel {
        metrics.push(MetricSummary::new("AUC", auc_runs));
    }
    let folds = parts
        .iter()
        .zip(&fold_sums)
        .filter_map(|(p, s)| {
            p.fold.map(|fold| FoldScore {
                fold,
                value: s / cfg.runs as f64,
            })
        })
        .collect();
    Ok(ProbeResult {
        report: ProbeReport {
            task: cfg.task,
            classes,
            learning_rate: lr,
            metrics,
            folds,
            sweep,
            ci_formula: CI_FORMULA.to_string(),
        },
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Gaussian blobs; class `k` is centred at `sep * e_k`.
    pub(crate) fn blobs(n_per: usize, classes: usize, dim: usize, sep: f64, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut ids, mut values, mut labels, mut partition) = (vec![], vec![], vec![], vec![]);
        for k in 0..classes {
            for j in 0..n_per {
                ids.push(format!("c{k}_{j}"));
                for dd in 0..dim {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    values.push(noise + if dd == k { sep } else { 0.0 });
                }
                labels.push(vec![format!("c{k}")]);
                let split = match j % 5 {
                    0 => Split::Test,
                    1 => Split::Valid,
                    _ => Split::Train,
                };
                partition.push(Partition::Split(split));
            }
        }
        EmbeddingTable::new(ids, dim, values, labels, partition).unwrap()
    }

    #[test]
    fn separable_reaches_full_accuracy() {
        let t = blobs(40, 2, 4, 20.0, 1);
        let res = train_probe(&t, &ProbeConfig::default()).unwrap();
        let acc = res.report.primary();
        assert_eq!(acc.runs, vec![1.0; 3]);
        assert_eq!(acc.mean, 1.0);
        assert_eq!(acc.ci95, 0.0);
        assert_eq!(res.report.sweep.len(), LR_GRID.len());
    }

    #[test]
    fn shuffled_labels_stay_at_chance() {
        let c = 4;
        let mut t = blobs(500, c, 8, 0.0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for l in t.labels.iter_mut() {
            *l = vec![format!("c{}", rng.random_range(0..c))];
        }
        let cfg = ProbeConfig {
            runs: 1,
            learning_rate: Some(1e-2),
            ..ProbeConfig::default()
        };
        let acc = train_probe(&t, &cfg).unwrap().report.primary().mean;
        assert!((acc - 1.0 / c as f64).abs() < 0.05, "accuracy {acc}");
    }

    #[test]
    fn loss_is_monotone_on_separable_data() {
        let t = blobs(40, 3, 5, 6.0, 4).standardize().unwrap();
        let classes = t.classes();
        let targets = encode_targets(&t, &classes, TaskKind::Multiclass).unwrap();
        let mut parts = partitionings(&t).unwrap();
        parts[0].valid.clear();
        for lr in LR_GRID {
            let fit = fit_probe(&t, &targets, 3, &parts[0], lr, &ProbeConfig::default(), 0).unwrap();
            assert_eq!(fit.epochs_run, 200);
            for w in fit.train_loss.windows(2) {
                assert!(w[1] <= w[0] + 1e-6, "lr {lr}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn poisoned_test_rows_do_not_change_training() {
        let t = blobs(30, 2, 3, 3.0, 5);
        let mut poisoned = t.clone();
        for (i, p) in t.partition.iter().enumerate() {
            if *p == Partition::Split(Split::Test) {
                for v in &mut poisoned.values[i * 3..(i + 1) * 3] {
                    *v = 1e6;
                }
            }
        }
        let cfg = ProbeConfig {
            runs: 2,
            ..ProbeConfig::default()
        };
        let a = train_probe(&t, &cfg).unwrap();
        let b = train_probe(&poisoned, &cfg).unwrap();
        assert_eq!(a.probes, b.probes);
        assert_eq!(a.report.sweep, b.report.sweep);
    }

    #[test]
    fn report_mean_is_mean_of_runs() {
        let t = blobs(20, 3, 3, 1.0, 6);
        let r = train_probe(&t, &ProbeConfig::default()).unwrap().report;
        let m = r.primary();
        assert_eq!(m.runs.len(), 3);
        assert_eq!(m.mean, m.runs.iter().sum::<f64>() / 3.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("1.96"));
    }

    #[test]
    fn folds_report_mean_of_fold_scores() {
        let mut t = blobs(20, 2, 3, 1.5, 7);
        for (i, p) in t.partition.iter_mut().enumerate() {
            *p = Partition::Fold((i % 4) as u32 + 1);
        }
        let cfg = ProbeConfig {
            runs: 1,
            ..ProbeConfig::default()
        };
        let r = train_probe(&t, &cfg).unwrap().report;
        assert_eq!(r.folds.len(), 4);
        let hand = r.folds.iter().map(|f| f.value).sum::<f64>() / 4.0;
        assert!((r.primary().mean - hand).abs() < 1e-15);
        let parts = partitionings(&t).unwrap();
        assert_eq!(parts[3].fold, Some(4));
        assert!(parts[3].valid.iter().all(|&i| t.partition[i] == Partition::Fold(1)));
    }

    #[test]
    fn multilabel_reports_map_and_auc() {
        let mut t = blobs(30, 3, 4, 5.0, 8);
        for (i, l) in t.labels.iter_mut().enumerate() {
            if i % 3 == 0 {
                l.push("extra".into());
            }
        }
        let cfg = ProbeConfig {
            task: TaskKind::Multilabel,
            runs: 1,
            learning_rate: Some(1e-2),
            ..ProbeConfig::default()
        };
        let r = train_probe(&t, &cfg).unwrap().report;
        assert_eq!(r.metrics.iter().map(|m| m.name.as_str()).collect::<Vec<_>>(), ["mAP", "AUC"]);
        assert!(r.metrics[1].mean > 0.7);
        assert!(matches!(train_probe(&t, &ProbeConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn config_validation() {
        assert!(ProbeConfig { runs: 0, ..Default::default() }.validate().is_err());
        assert!(ProbeConfig { patience: 201, ..Default::default() }.validate().is_err());
        assert!(ProbeConfig::default().validate().is_ok());
    }
}
