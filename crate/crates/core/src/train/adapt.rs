use std::time::Instant;

use log::{info, warn};

use crate::backbone::{check_params, forward, forward_graph, BackboneConfig, CompletionOutput};
use crate::ema::ema_step;
use crate::error::{Error, Result};
use crate::geometry::{cd, ucd, PointCloud};
use crate::graph::Graph;
use crate::losses::{l_coarse, l_consistency, l_feature, l_fine, l_partial, total_loss, LossBreakdown, LossTerms};
use crate::masking::build_masked_set;
use crate::rng::derive_seed;
use crate::synthetic::PartialSource;
use crate::tensor::{GradientRecord, ParameterSet};
use crate::train::config::{AdaptConfig, Selection, TeacherMode};
use crate::train::optim::Adam;
use crate::train::{batches, epoch_order};

const MASK_STREAM: u64 = 0x6d61_736b;
const PROXY_STREAM: u64 = 0x7072_6f78;

/// Proxy score of one epoch checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyPoint {
    pub step: usize,
    pub proxy: f64,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    /// Student after the last step.
    pub student: ParameterSet,
    /// Teacher after the last step.
    pub teacher: ParameterSet,
    /// The model chosen by the configured [`Selection`].
    pub selected: ParameterSet,
    pub selected_step: usize,
    /// Batch-averaged losses, one entry per step.
    pub history: Vec<LossBreakdown>,
    pub proxy: Vec<ProxyPoint>,
    pub wall_clock_s: f64,
}

/// State after an optimizer step, handed to [`adapt_with`] observers.
pub struct StepEvent<'a> {
    pub step: usize,
    pub student: &'a ParameterSet,
    pub teacher: Option<&'a ParameterSet>,
    pub loss: &'a LossBreakdown,
}

/// Prepared inputs, loaded through the source on first use.
struct Inputs<'a> {
    source: &'a dyn PartialSource,
    backbone: &'a BackboneConfig,
    cache: Vec<Option<PointCloud>>,
}

impl<'a> Inputs<'a> {
    fn new(source: &'a dyn PartialSource, backbone: &'a BackboneConfig) -> Self {
        Self {
            source,
            backbone,
            cache: vec![None; source.len()],
        }
    }

    fn get(&mut self, i: usize) -> Result<&PointCloud> {
        if self.cache[i].is_none() {
            let raw = self.source.partial(i)?;
            self.cache[i] = Some(self.backbone.prepare_input(&raw)?);
        }
        Ok(self.cache[i].as_ref().expect("filled above"))
    }
}

/// Loss of the student on one input; returns the breakdown and gradient.
fn sample_step(
    student: &ParameterSet,
    backbone: &BackboneConfig,
    cfg: &AdaptConfig,
    input: &PointCloud,
    teacher_out: Option<&CompletionOutput>,
    mask_seed: u64,
) -> Result<(LossBreakdown, GradientRecord)> {
    let wiring = cfg.variant.wiring();
    let masked = build_masked_set(input, cfg.effective_k(), cfg.mask, mask_seed)?;
    let mut g = Graph::new();
    let bound = g.bind(student);
    let mut fines = Vec::with_capacity(masked.clouds.len());
    let mut coarses = Vec::with_capacity(masked.clouds.len());
    let mut global = None;
    for cloud in &masked.clouds {
        let x = g.cloud(cloud);
        let out = forward_graph(&mut g, &bound, backbone, x)?;
        fines.push(out.fine);
        coarses.push(out.coarse);
        global.get_or_insert(out.global);
    }
    let mut terms = LossTerms::default();
    if let Some(t) = teacher_out {
        if wiring.fine {
            let n = cfg.fps_n.min(t.fine.len());
            terms.fine = Some(l_fine(&mut g, &t.fine, &fines, n, 0)?);
        }
        if wiring.coarse {
            terms.coarse = Some(l_coarse(&mut g, &t.coarse, &coarses)?);
        }
        if wiring.feature {
            let gv = global.expect("at least the original cloud");
            terms.feature = Some(l_feature(&mut g, &t.global_feature, gv)?);
        }
    }
    if wiring.masked_consistency {
        terms.consistency = Some(l_consistency(&mut g, &fines, false)?);
    }
    terms.partial = Some(l_partial(&mut g, input, &fines)?);
    let (loss, breakdown) = total_loss(&mut g, &terms, &cfg.weights)?;
    if !breakdown.total.is_finite() {
        return Err(Error::Divergence(format!("non-finite adaptation loss: {breakdown:?}")));
    }
    let grads = g.backward(loss)?.record(&g, &bound);
    Ok((breakdown, grads))
}

/// Unsupervised selection score: mean over `inputs` of
/// `ucd(input, fine) + cd(fine, fine of a masked copy)`.
fn proxy_score(params: &ParameterSet, backbone: &BackboneConfig, cfg: &AdaptConfig, inputs: &mut Inputs) -> Result<f64> {
    let n = inputs.source.len();
    let mut total = 0.0;
    for i in 0..n {
        let x = inputs.get(i)?.clone();
        let masked = build_masked_set(&x, 1, cfg.mask, derive_seed(cfg.seed ^ PROXY_STREAM, i as u64))?;
        let full = forward(params, backbone, &masked.clouds[0])?;
        let part = forward(params, backbone, &masked.clouds[1])?;
        total += ucd(&x, &full.fine)? + cd(&full.fine, &part.fine)?;
    }
    Ok(total / n.max(1) as f64)
}

/// Source-free adaptation of `source` to the unlabeled partials in `train`.
///
/// `val` holds held-out target partials used only for proxy selection.
pub fn adapt(
    source: &ParameterSet,
    backbone: &BackboneConfig,
    train: &dyn PartialSource,
    val: Option<&dyn PartialSource>,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    adapt_with(source, backbone, train, val, cfg, |_| {})
}

/// [`adapt`] with a callback invoked after every optimizer and teacher update.
pub fn adapt_with(
    source: &ParameterSet,
    backbone: &BackboneConfig,
    train: &dyn PartialSource,
    val: Option<&dyn PartialSource>,
    cfg: &AdaptConfig,
    mut observe: impl FnMut(&StepEvent),
) -> Result<AdaptOutcome> {
    backbone.validate()?;
    cfg.validate()?;
    check_params(backbone, source)?;
    let start = Instant::now();
    let wiring = cfg.variant.wiring();
    let mut student = source.clone();
    let mut teacher = match wiring.teacher {
        TeacherMode::None => None,
        TeacherMode::Frozen | TeacherMode::Ema => Some(source.clone()),
    };
    let mut history = Vec::with_capacity(cfg.steps);
    let mut proxy = Vec::new();
    let mut selected = (f64::INFINITY, 0usize, source.clone());

    if cfg.steps == 0 {
        return Ok(AdaptOutcome {
            student: student.clone(),
            teacher: teacher.unwrap_or(student),
            selected: selected.2,
            selected_step: 0,
            history,
            proxy,
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
    }
    if train.is_empty() {
        return Err(Error::invalid("adaptation needs at least one target partial cloud"));
    }
    let mut inputs = Inputs::new(train, backbone);
    let mut val_inputs = match (cfg.selection, val) {
        (Selection::Proxy, Some(v)) if !v.is_empty() => Some(Inputs::new(v, backbone)),
        (Selection::Proxy, _) => {
            warn!("proxy selection requested without held-out partials; keeping the final student");
            None
        }
        (Selection::Final, _) => None,
    };
    let mut opt = Adam::new(cfg.optimizer, &student)?;
    let per_epoch = train.len().div_ceil(cfg.batch_size);

    let mut step = 0usize;
    let mut epoch = 0u64;
    'epochs: loop {
        let order = epoch_order(train.len(), derive_seed(cfg.seed, epoch));
        for batch in batches(&order, cfg.batch_size) {
            let mut grads = GradientRecord::zeros_for(&student);
            let mut mean = LossBreakdown::default();
            let scale = 1.0 / batch.len() as f64;
            for (j, &i) in batch.iter().enumerate() {
                let x = inputs.get(i)?.clone();
                let t_out = match &teacher {
                    Some(t) => Some(forward(t, backbone, &x)?),
                    None => None,
                };
                let mask_seed = derive_seed(cfg.seed ^ MASK_STREAM, (step * cfg.batch_size + j) as u64);
                let (b, g) = sample_step(&student, backbone, cfg, &x, t_out.as_ref(), mask_seed)
                    .map_err(|e| match e {
                        Error::Divergence(msg) => Error::Divergence(format!(
                            "step {step}: {msg}; last batch mean {:?}",
                            history.last()
                        )),
                        e => e,
                    })?;
                grads.add_scaled(&g, scale)?;
                mean.accumulate(&b.scaled(scale));
            }
            opt.step(&mut student, &grads)?;
            if wiring.teacher == TeacherMode::Ema && (step + 1) % cfg.ema.every == 0 {
                let t = teacher.as_ref().expect("ema teacher exists");
                teacher = Some(ema_step(t, &student, cfg.ema.decay)?);
            }
            observe(&StepEvent {
                step,
                student: &student,
                teacher: teacher.as_ref(),
                loss: &mean,
            });
            history.push(mean);
            step += 1;

            let epoch_end = step % per_epoch == 0 || step == cfg.steps;
            if epoch_end {
                if let Some(v) = val_inputs.as_mut() {
                    let score = proxy_score(&student, backbone, cfg, v)?;
                    info!("adapt step {step}: loss {:.5} proxy {:.6}", mean.total, score);
                    proxy.push(ProxyPoint { step, proxy: score });
                    if score < selected.0 {
                        selected = (score, step, student.clone());
                    }
                } else {
                    info!("adapt step {step}: loss {:.5}", mean.total);
                }
            }
            if step == cfg.steps {
                break 'epochs;
            }
        }
        epoch += 1;
    }

    let (selected_params, selected_step) = if proxy.is_empty() {
        (student.clone(), step)
    } else {
        (selected.2, selected.1)
    };
    Ok(AdaptOutcome {
        teacher: teacher.unwrap_or_else(|| source.clone()),
        student,
        selected: selected_params,
        selected_step,
        history,
        proxy,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}
