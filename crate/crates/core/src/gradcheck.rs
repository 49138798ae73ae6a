//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::graph::{Bound, Graph, Var};
use crate::tensor::{GradientRecord, ParameterSet};

/// One evaluation of a loss: value, analytic gradient, and the signature of
/// the discrete selections (relu masks, argmax/argmin) made on the way.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grads: GradientRecord,
    pub signature: u64,
}

impl Evaluation {
    pub fn from_graph(graph: &Graph, loss: Var, bound: &Bound) -> Result<Self> {
        let grads = graph.backward(loss)?.record(graph, bound);
        Ok(Self {
            value: graph.scalar(loss),
            grads,
            signature: graph.selection_signature(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so vanishing gradients are
    /// compared in absolute terms.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (evenly strided).
    pub max_coords_per_param: Option<usize>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords_per_param: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinates whose stencil crossed a selection change.
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn excluded(&self) -> usize {
        self.params.iter().map(|p| p.excluded.len()).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `loss_fn`'s analytic gradient with central differences.
///
/// Coordinates where the perturbed evaluations make different discrete
/// selections than the base point are reported as excluded, not failed.
pub fn finite_diff_check<F>(loss_fn: F, params: &ParameterSet, cfg: CheckConfig) -> Result<CheckReport>
where
    F: Fn(&ParameterSet) -> Result<Evaluation>,
{
    let base = loss_fn(params)?;
    let again = loss_fn(params)?;
    if base.value.to_bits() != again.value.to_bits()
        || base.grads != again.grads
        || base.signature != again.signature
    {
        return Err(Error::contract(
            "loss function is not deterministic: two evaluations at the same point disagree",
        ));
    }
    base.grads.as_set().ensure_congruent(params)?;

    let mut report = CheckReport {
        params: Vec::new(),
        tolerance: cfg.tolerance,
    };
    let mut work = params.clone();
    for (name, tensor) in params.iter() {
        let n = tensor.len();
        let stride = match cfg.max_coords_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let analytic = base.grads.get(name).expect("congruent").data().to_vec();
        let mut pc = ParamCheck {
            name: name.clone(),
            checked: 0,
            max_rel_error: 0.0,
            excluded: Vec::new(),
        };
        for i in (0..n).step_by(stride) {
            let orig = tensor.data()[i];
            work.get_mut(name).expect("present").data_mut()[i] = orig + cfg.step;
            let plus = loss_fn(&work)?;
            work.get_mut(name).expect("present").data_mut()[i] = orig - cfg.step;
            let minus = loss_fn(&work)?;
            work.get_mut(name).expect("present").data_mut()[i] = orig;
            if plus.signature != base.signature || minus.signature != base.signature {
                pc.excluded.push(i);
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * cfg.step);
            let err = relative_error(analytic[i], numeric, cfg.floor);
            pc.max_rel_error = pc.max_rel_error.max(err);
            pc.checked += 1;
        }
        report.params.push(pc);
    }
    Ok(report)
}
