use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::masking::MaskStrategy;
use crate::synthetic::{LabeledSample, PartialSource};
use crate::tensor::ParameterSet;
use crate::train::adapt::adapt;
use crate::train::config::{config_hash, AdaptConfig, Variant};
use crate::train::eval::{evaluate, MetricsReport};

pub const K_GRID: [usize; 4] = [1, 2, 3, 4];
pub const FPS_GRID: [usize; 5] = [128, 256, 512, 1024, 2048];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    Variant(Variant),
    /// Every variant row, A to E and the full method.
    Table,
    KSweep,
    FpsSweep,
    MaskSweep,
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(AblationKind::Table),
            "k-sweep" => Ok(AblationKind::KSweep),
            "fps-sweep" => Ok(AblationKind::FpsSweep),
            "mask-sweep" => Ok(AblationKind::MaskSweep),
            other => other.parse::<Variant>().map(AblationKind::Variant).map_err(|_| {
                Error::invalid(format!(
                    "unknown ablation {s:?}; expected A-E, ours, table, k-sweep, fps-sweep or mask-sweep"
                ))
            }),
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationKind::Variant(v) => write!(f, "{v}"),
            AblationKind::Table => f.write_str("table"),
            AblationKind::KSweep => f.write_str("k-sweep"),
            AblationKind::FpsSweep => f.write_str("fps-sweep"),
            AblationKind::MaskSweep => f.write_str("mask-sweep"),
        }
    }
}

/// Labeled configurations making up an ablation, derived from `base`.
pub fn ablation_cells(kind: AblationKind, base: &AdaptConfig) -> Vec<(String, AdaptConfig)> {
    let with = |f: &dyn Fn(&mut AdaptConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match kind {
        AblationKind::Variant(v) => vec![(v.to_string(), with(&|c| c.variant = v))],
        AblationKind::Table => Variant::ALL
            .into_iter()
            .map(|v| (v.to_string(), with(&|c| c.variant = v)))
            .collect(),
        AblationKind::KSweep => K_GRID
            .into_iter()
            .map(|k| (format!("k={k}"), with(&|c| c.k = k)))
            .collect(),
        AblationKind::FpsSweep => FPS_GRID
            .into_iter()
            .map(|n| (format!("fps={n}"), with(&|c| c.fps_n = n)))
            .collect(),
        AblationKind::MaskSweep => [MaskStrategy::partition(), MaskStrategy::view()]
            .into_iter()
            .map(|m| (m.name().to_string(), with(&|c| c.mask = m)))
            .collect(),
    }
}

/// Everything an ablation run reads.
pub struct AblationData<'a> {
    pub source: &'a ParameterSet,
    pub backbone: &'a BackboneConfig,
    pub train: &'a dyn PartialSource,
    pub val: Option<&'a dyn PartialSource>,
    pub test: &'a [LabeledSample],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub kind: String,
    /// The unadapted source model on the same test split.
    pub source: MetricsReport,
    pub cells: Vec<MetricsReport>,
}

impl AblationReport {
    pub fn all(&self) -> Vec<MetricsReport> {
        std::iter::once(self.source.clone()).chain(self.cells.iter().cloned()).collect()
    }

    pub fn cell(&self, label: &str) -> Option<&MetricsReport> {
        self.cells.iter().find(|c| c.label == label)
    }
}

/// Adapts once per cell and evaluates every result on `data.test`.
pub fn run_ablation(kind: AblationKind, base: &AdaptConfig, data: &AblationData) -> Result<AblationReport> {
    let source = evaluate(data.source, data.backbone, data.test, "source", config_hash(data.backbone))?;
    let mut cells = Vec::new();
    for (label, cfg) in ablation_cells(kind, base) {
        let out = adapt(data.source, data.backbone, data.train, data.val, &cfg)?;
        let mut report = evaluate(&out.selected, data.backbone, data.test, label, config_hash(&cfg))?;
        report.history = out.history;
        report.wall_clock_s += out.wall_clock_s;
        cells.push(report);
    }
    Ok(AblationReport {
        kind: kind.to_string(),
        source,
        cells,
    })
}
