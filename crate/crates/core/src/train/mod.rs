//! Source pretraining, adaptation, evaluation and ablations.

pub mod ablation;
pub mod adapt;
pub mod config;
pub mod eval;
pub mod optim;
pub mod pretrain;

use rand::seq::SliceRandom;

use crate::rng::rng;

pub use ablation::{ablation_cells, run_ablation, AblationData, AblationKind, AblationReport};
pub use adapt::{adapt, adapt_with, AdaptOutcome, StepEvent};
pub use config::{config_hash, AdamConfig, AdaptConfig, PretrainConfig, Selection, TeacherMode, Variant};
pub use eval::{evaluate, format_table, MetricRow, MetricsReport};
pub use optim::Adam;
pub use pretrain::{pretrain_source, PretrainOutcome};

/// Shuffled sample order of one epoch.
pub(crate) fn epoch_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed));
    order
}

pub(crate) fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}
