//! Linear evaluation: embedding extraction, standardization, probe training
//! and ranking metrics.

mod extract;
mod metrics;
mod probe;
mod table;

pub use extract::{calibrate_bn, embed, extract, extract_with, fit_length, load_task_logmels, ExtractOptions};
pub use metrics::{accuracy, argmax, average_precision, map_auc, roc_auc, subset_map};
pub use probe::{
    encode_targets, fit_probe, partitionings, train_probe, FitOutcome, FoldScore, LinearProbe, MetricSummary,
    Partitioning, ProbeConfig, ProbeReport, ProbeResult, SweepEntry, Targets, TaskKind, CI_FORMULA, FALLBACK_LR,
    LR_GRID,
};
pub use table::{EmbeddingTable, Partition, STD_EPS};
