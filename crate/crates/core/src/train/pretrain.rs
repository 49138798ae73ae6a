use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::backbone::{check_params, forward_graph, init_params, BackboneConfig};
use crate::error::{Error, Result};
use crate::geometry::{fps_cloud, PointCloud};
use crate::graph::Graph;
use crate::rng::derive_seed;
use crate::synthetic::LabeledSample;
use crate::tensor::{GradientRecord, ParameterSet};
use crate::train::config::PretrainConfig;
use crate::train::eval::per_sample_cd;
use crate::train::optim::Adam;
use crate::train::{batches, epoch_order};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean `cd(fine, ground truth)` on the validation split.
    pub val_cd: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Parameters of the epoch with the lowest validation distance.
    pub params: ParameterSet,
    pub best_epoch: usize,
    /// Validation distance of the untrained initialization.
    pub initial_val_cd: f64,
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_s: f64,
}

struct Prepared {
    input: PointCloud,
    complete: PointCloud,
    coarse_target: PointCloud,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Supervised training on paired source data with
/// `cd(fine, gt) + cd(coarse, fps(gt, M))`, keeping the best epoch on `val`.
pub fn pretrain_source(
    backbone: &BackboneConfig,
    train: &[LabeledSample],
    val: &[LabeledSample],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    backbone.validate()?;
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("pretraining needs non-empty train and val splits"));
    }
    let start = Instant::now();
    let prepared = train
        .iter()
        .map(|s| {
            Ok(Prepared {
                input: backbone.prepare_input(&s.partial)?,
                coarse_target: fps_cloud(&s.complete, backbone.coarse_count.min(s.complete.len()), 0)?,
                complete: s.complete.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut params = init_params(backbone)?;
    check_params(backbone, &params)?;
    let mut opt = Adam::new(cfg.optimizer, &params)?;
    let initial_val_cd = mean(&per_sample_cd(&params, backbone, val)?);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut epochs = Vec::new();

    for epoch in 0..cfg.epochs {
        let order = epoch_order(prepared.len(), derive_seed(cfg.seed, epoch as u64));
        let mut losses = Vec::new();
        for batch in batches(&order, cfg.batch_size) {
            let mut grads = GradientRecord::zeros_for(&params);
            let mut batch_loss = 0.0;
            for &i in batch {
                let p = &prepared[i];
                let mut g = Graph::new();
                let bound = g.bind(&params);
                let x = g.cloud(&p.input);
                let out = forward_graph(&mut g, &bound, backbone, x)?;
                let gt = g.cloud(&p.complete);
                let ct = g.cloud(&p.coarse_target);
                let lf = g.cd(out.fine, gt)?;
                let lc = g.cd(out.coarse, ct)?;
                let loss = g.add(lf, lc)?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Divergence(format!(
                        "pretraining loss {value} at epoch {epoch} (fine {}, coarse {})",
                        g.scalar(lf),
                        g.scalar(lc)
                    )));
                }
                batch_loss += value;
                let record = g.backward(loss)?.record(&g, &bound);
                grads.add_scaled(&record, 1.0 / batch.len() as f64)?;
            }
            opt.step(&mut params, &grads)?;
            losses.push(batch_loss / batch.len() as f64);
        }
        let val_cd = mean(&per_sample_cd(&params, backbone, val)?);
        if !val_cd.is_finite() {
            return Err(Error::Divergence(format!("validation distance {val_cd} at epoch {epoch}")));
        }
        let rec = EpochRecord {
            epoch,
            train_loss: mean(&losses),
            val_cd,
        };
        info!(
            "pretrain epoch {epoch}: train {:.5} val cd x1e4 {:.3}",
            rec.train_loss,
            val_cd * 1e4
        );
        if val_cd < best.0 {
            best = (val_cd, epoch, params.clone());
        }
        epochs.push(rec);
    }
    Ok(PretrainOutcome {
        params: best.2,
        best_epoch: best.1,
        initial_val_cd,
        epochs,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}
