//! Adaptation objectives.
//!
//! Every loss is recorded on a [`Graph`] so the student side can be
//! differentiated. Teacher outputs enter as plain [`PointCloud`]s or
//! [`Tensor`]s and are therefore constants: no gradient reaches the teacher.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fps_cloud, PointCloud};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub fine: f64,
    pub coarse: f64,
    pub consistency: f64,
    pub partial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            fine: 1.0,
            coarse: 1.0,
            consistency: 100.0,
            partial: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fine", self.fine),
            ("coarse", self.coarse),
            ("consistency", self.consistency),
            ("partial", self.partial),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "loss weight {name} = {v} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// Per-step values of each component and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fine: f64,
    pub coarse: f64,
    pub consistency: f64,
    pub partial: f64,
    /// Only present in the feature-distillation ablation, where it takes the
    /// place (and weight) of the coarse term.
    pub feature: Option<f64>,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted sum of the components with `weights`.
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.fine * self.fine
            + w.coarse * (self.coarse + self.feature.unwrap_or(0.0))
            + w.consistency * self.consistency
            + w.partial * self.partial
    }

    /// Component-wise sum, used for batch averaging.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.fine += other.fine;
        self.coarse += other.coarse;
        self.consistency += other.consistency;
        self.partial += other.partial;
        self.total += other.total;
        self.feature = match (self.feature, other.feature) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(0.0) + b.unwrap_or(0.0)),
        };
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.fine *= s;
        self.coarse *= s;
        self.consistency *= s;
        self.partial *= s;
        self.total *= s;
        self.feature = self.feature.map(|f| f * s);
        self
    }
}

fn require_targets(targets: &[Var], what: &str) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::invalid(format!("{what} needs at least one target output")));
    }
    Ok(())
}

/// `sum_i ucd(fps(source_fine, fps_n, fps_start), target_fines[i])`.
pub fn l_fine(
    g: &mut Graph,
    source_fine: &PointCloud,
    target_fines: &[Var],
    fps_n: usize,
    fps_start: usize,
) -> Result<Var> {
    require_targets(target_fines, "l_fine")?;
    let sampled = fps_cloud(source_fine, fps_n, fps_start)?;
    let s = g.cloud(&sampled);
    let terms = target_fines
        .iter()
        .map(|&t| g.ucd(s, t))
        .collect::<Result<Vec<_>>>()?;
    g.add_all(&terms)
}

/// `sum_i cd(source_coarse, target_coarses[i])`.
pub fn l_coarse(g: &mut Graph, source_coarse: &PointCloud, target_coarses: &[Var]) -> Result<Var> {
    require_targets(target_coarses, "l_coarse")?;
    let s = g.cloud(source_coarse);
    let terms = target_coarses
        .iter()
        .map(|&t| g.cd(s, t))
        .collect::<Result<Vec<_>>>()?;
    g.add_all(&terms)
}

/// `sum_{i>=1} cd(target_fines[0], target_fines[i])`; zero when there are no masked views.
///
/// With `detach_original` the unmasked branch acts as a fixed target and only
/// the masked branches receive gradient.
pub fn l_consistency(g: &mut Graph, target_fines: &[Var], detach_original: bool) -> Result<Var> {
    require_targets(target_fines, "l_consistency")?;
    if target_fines.len() == 1 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let anchor = if detach_original {
        g.detach(target_fines[0])
    } else {
        target_fines[0]
    };
    let terms = target_fines[1..]
        .iter()
        .map(|&t| g.cd(anchor, t))
        .collect::<Result<Vec<_>>>()?;
    g.add_all(&terms)
}

/// `sum_i ucd(input, target_fines[i])` with `input` the unmasked partial cloud.
pub fn l_partial(g: &mut Graph, input: &PointCloud, target_fines: &[Var]) -> Result<Var> {
    require_targets(target_fines, "l_partial")?;
    let x = g.cloud(input);
    let terms = target_fines
        .iter()
        .map(|&t| g.ucd(x, t))
        .collect::<Result<Vec<_>>>()?;
    g.add_all(&terms)
}

/// `1 - cos(source_feature, target_feature)`.
pub fn l_feature(g: &mut Graph, source_feature: &Tensor, target_feature: Var) -> Result<Var> {
    let t = g.value(target_feature);
    if t.len() != source_feature.len() {
        return Err(Error::invalid(format!(
            "feature lengths differ: {} vs {}",
            source_feature.len(),
            t.len()
        )));
    }
    let norm = |d: &[f64]| d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm(source_feature.data()) == 0.0 || norm(t.data()) == 0.0 {
        return Err(Error::invalid("cosine feature loss needs non-zero feature vectors"));
    }
    let shape = t.shape().to_vec();
    let s = g.constant(source_feature.reshaped(shape)?);
    let st = g.mul(s, target_feature)?;
    let dot = g.sum(st);
    let ss = g.mul(s, s)?;
    let ss = g.sum(ss);
    let tt = g.mul(target_feature, target_feature)?;
    let tt = g.sum(tt);
    let norms = g.mul(ss, tt)?;
    let norms = g.sqrt(norms);
    let cos = g.div(dot, norms)?;
    Ok(g.affine(cos, -1.0, 1.0))
}

/// Loss nodes of one step, before weighting.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub fine: Option<Var>,
    pub coarse: Option<Var>,
    pub consistency: Option<Var>,
    pub partial: Option<Var>,
    pub feature: Option<Var>,
}

/// Weighted total `w_fine*L_fine + w_coarse*L_coarse + w_cons*L_cons + w_partial*L_partial`.
///
/// Absent terms count as zero. A feature term, when present, is weighted by
/// `w_coarse`.
pub fn total_loss(g: &mut Graph, terms: &LossTerms, w: &LossWeights) -> Result<(Var, LossBreakdown)> {
    w.validate()?;
    let parts = [
        (terms.fine, w.fine),
        (terms.coarse, w.coarse),
        (terms.feature, w.coarse),
        (terms.consistency, w.consistency),
        (terms.partial, w.partial),
    ];
    let mut weighted = Vec::new();
    for (v, weight) in parts.into_iter() {
        if let Some(v) = v {
            weighted.push(g.scale(v, weight));
        }
    }
    let total = if weighted.is_empty() {
        g.constant(Tensor::scalar(0.0))
    } else {
        g.add_all(&weighted)?
    };
    let val = |v: Option<Var>| v.map(|v| g.scalar(v)).unwrap_or(0.0);
    let breakdown = LossBreakdown {
        fine: val(terms.fine),
        coarse: val(terms.coarse),
        consistency: val(terms.consistency),
        partial: val(terms.partial),
        feature: terms.feature.map(|v| g.scalar(v)),
        total: g.scalar(total),
    };
    Ok((total, breakdown))
}

/// Value-only weighted sum of already computed components.
pub fn combine(fine: f64, coarse: f64, consistency: f64, partial: f64, w: &LossWeights) -> LossBreakdown {
    let mut b = LossBreakdown {
        fine,
        coarse,
        consistency,
        partial,
        feature: None,
        total: 0.0,
    };
    b.total = b.weighted(w);
    b
}
