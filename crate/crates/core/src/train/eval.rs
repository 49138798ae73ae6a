use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbone::{forward, BackboneConfig};
use crate::error::Result;
use crate::geometry::cd;
use crate::losses::LossBreakdown;
use crate::synthetic::{Category, LabeledSample};
use crate::tensor::ParameterSet;

/// Reported metric scale: squared-distance chamfer times 10^4.
pub const CD_SCALE: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: Category,
    pub samples: usize,
    pub cd_x1e4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub categories: Vec<CategoryScore>,
    /// Arithmetic mean of the per-category values.
    pub average_x1e4: f64,
    /// Batch-averaged loss breakdown per training step, when the evaluated
    /// model came out of a training run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<LossBreakdown>,
    pub config_hash: String,
    pub wall_clock_s: f64,
}

/// One machine-readable record per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run: String,
    pub category: String,
    pub samples: usize,
    pub cd_x1e4: f64,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn score(&self, category: Category) -> Option<f64> {
        self.categories
            .iter()
            .find(|c| c.category == category)
            .map(|c| c.cd_x1e4)
    }

    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows: Vec<MetricRow> = self
            .categories
            .iter()
            .map(|c| MetricRow {
                run: self.label.clone(),
                category: c.category.name().to_string(),
                samples: c.samples,
                cd_x1e4: c.cd_x1e4,
                config_hash: self.config_hash.clone(),
            })
            .collect();
        rows.push(MetricRow {
            run: self.label.clone(),
            category: "average".into(),
            samples: self.categories.iter().map(|c| c.samples).sum(),
            cd_x1e4: self.average_x1e4,
            config_hash: self.config_hash.clone(),
        });
        rows
    }
}

/// Text table with one row per report and one column per category.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let mut cats: Vec<Category> = reports
        .iter()
        .flat_map(|r| r.categories.iter().map(|c| c.category))
        .collect();
    cats.sort();
    cats.dedup();
    let width = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}", "run");
    for c in &cats {
        let _ = write!(out, " {:>12}", c.name());
    }
    let _ = writeln!(out, " {:>12}", "average");
    for r in reports {
        let _ = write!(out, "{:<width$}", r.label);
        for c in &cats {
            match r.score(*c) {
                Some(v) => {
                    let _ = write!(out, " {v:>12.3}");
                }
                None => {
                    let _ = write!(out, " {:>12}", "-");
                }
            }
        }
        let _ = writeln!(out, " {:>12.3}", r.average_x1e4);
    }
    out
}

/// Mean chamfer distance of `(fine, complete)` per sample, in input order.
pub fn per_sample_cd(params: &ParameterSet, backbone: &BackboneConfig, samples: &[LabeledSample]) -> Result<Vec<f64>> {
    let one = |s: &LabeledSample| -> Result<f64> {
        let x = backbone.prepare_input(&s.partial)?;
        let out = forward(params, backbone, &x)?;
        cd(&out.fine, &s.complete)
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(samples.len().max(1));
    if threads <= 1 {
        return samples.iter().map(one).collect();
    }
    let chunk = samples.len().div_ceil(threads);
    let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(one).collect::<Result<Vec<f64>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Per-category mean `cd(fine, ground truth) * 10^4` over labeled samples.
pub fn evaluate(
    params: &ParameterSet,
    backbone: &BackboneConfig,
    samples: &[LabeledSample],
    label: impl Into<String>,
    config_hash: impl Into<String>,
) -> Result<MetricsReport> {
    let start = Instant::now();
    let values = per_sample_cd(params, backbone, samples)?;
    let mut categories = Vec::new();
    for cat in Category::ALL {
        let vals: Vec<f64> = samples
            .iter()
            .zip(&values)
            .filter(|(s, _)| s.category == cat)
            .map(|(_, v)| *v)
            .collect();
        if vals.is_empty() {
            continue;
        }
        categories.push(CategoryScore {
            category: cat,
            samples: vals.len(),
            cd_x1e4: CD_SCALE * vals.iter().sum::<f64>() / vals.len() as f64,
        });
    }
    let average_x1e4 = if categories.is_empty() {
        0.0
    } else {
        categories.iter().map(|c| c.cd_x1e4).sum::<f64>() / categories.len() as f64
    };
    Ok(MetricsReport {
        label: label.into(),
        categories,
        average_x1e4,
        history: Vec::new(),
        config_hash: config_hash.into(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(label: &str, vals: &[(Category, f64)]) -> MetricsReport {
        let categories: Vec<CategoryScore> = vals
            .iter()
            .map(|&(category, cd_x1e4)| CategoryScore {
                category,
                samples: 1,
                cd_x1e4,
            })
            .collect();
        let average_x1e4 = vals.iter().map(|v| v.1).sum::<f64>() / vals.len() as f64;
        MetricsReport {
            label: label.into(),
            categories,
            average_x1e4,
            history: vec![],
            config_hash: "h".into(),
            wall_clock_s: 0.0,
        }
    }

    #[test]
    fn table_and_rows() {
        let r = report("src", &[(Category::BoxTable, 2.0), (Category::TubeLamp, 4.0)]);
        let t = format_table(&[r.clone()]);
        assert!(t.contains("box-table") && t.contains("3.000"), "{t}");
        let rows = r.rows();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].category, "average");
        assert_eq!(rows[2].cd_x1e4, 3.0);
    }
}
