//! A small coarse-to-fine completion network.
//!
//! Shared per-point layers and a max-pool encode the partial cloud into a
//! global feature. A dense decoder maps the feature to `M` coarse points.
//! Each coarse point is then expanded into `E` fine points by predicting
//! bounded offsets from the coarse coordinate, a fixed 2D grid code and the
//! global feature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fps_cloud, PointCloud};
use crate::graph::{Bound, Graph, Var};
use crate::rng::rng;
use crate::tensor::{ParameterSet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub encoder_widths: Vec<usize>,
    pub global_dim: usize,
    pub coarse_hidden: usize,
    /// Number of coarse points `M`.
    pub coarse_count: usize,
    /// Fine points generated per coarse point `E`.
    pub expansion: usize,
    pub refine_hidden: usize,
    /// Refinement offsets are `offset_scale * tanh(.)`.
    pub offset_scale: f64,
    /// Inputs with more points are reduced to this many by farthest point
    /// sampling before encoding; see [`BackboneConfig::prepare_input`].
    pub input_points: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            encoder_widths: vec![64, 128, 256],
            global_dim: 256,
            coarse_hidden: 256,
            coarse_count: 128,
            expansion: 16,
            refine_hidden: 64,
            offset_scale: 0.1,
            input_points: 2048,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    /// The single-core benchmark model: 512 input points, 64 x 8 output points.
    pub fn desk() -> Self {
        Self {
            encoder_widths: vec![32, 64, 128],
            global_dim: 128,
            coarse_hidden: 128,
            coarse_count: 64,
            expansion: 8,
            refine_hidden: 32,
            offset_scale: 0.1,
            input_points: 512,
            seed: 0,
        }
    }

    /// A very small configuration for gradient checks and unit tests.
    pub fn toy() -> Self {
        Self {
            encoder_widths: vec![8, 16],
            global_dim: 16,
            coarse_hidden: 16,
            coarse_count: 8,
            expansion: 4,
            refine_hidden: 8,
            offset_scale: 0.1,
            input_points: 2048,
            seed: 0,
        }
    }

    pub fn fine_count(&self) -> usize {
        self.coarse_count * self.expansion
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("global_dim", self.global_dim),
            ("coarse_hidden", self.coarse_hidden),
            ("coarse_count", self.coarse_count),
            ("expansion", self.expansion),
            ("refine_hidden", self.refine_hidden),
            ("input_points", self.input_points),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("backbone {name} must be >= 1")));
            }
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return Err(Error::invalid(
                "backbone encoder_widths must be a non-empty list of positive widths",
            ));
        }
        if !(self.offset_scale > 0.0 && self.offset_scale.is_finite()) {
            return Err(Error::invalid("backbone offset_scale must be positive"));
        }
        Ok(())
    }

    /// Deterministic reduction of a raw partial cloud to at most
    /// `input_points` points (farthest point sampling from index 0).
    pub fn prepare_input(&self, cloud: &PointCloud) -> Result<PointCloud> {
        if cloud.len() <= self.input_points {
            return Ok(cloud.clone());
        }
        fps_cloud(cloud, self.input_points, 0)
    }

    /// Name, shape and fan-in of every parameter, in construction order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        let mut dense = |prefix: &str, fan_in: usize, fan_out: usize| {
            out.push((format!("{prefix}.w"), vec![fan_in, fan_out], fan_in));
            out.push((format!("{prefix}.b"), vec![fan_out], fan_in));
        };
        let mut width = 3;
        for (i, &w) in self.encoder_widths.iter().enumerate() {
            dense(&format!("enc.{i}"), width, w);
            width = w;
        }
        dense("glob", width, self.global_dim);
        dense("coarse.0", self.global_dim, self.coarse_hidden);
        dense("coarse.1", self.coarse_hidden, 3 * self.coarse_count);
        // The refinement input is [coarse xyz, grid uv | global]; the global part is
        // applied once per sample and broadcast.
        dense("refine.local", 5, self.refine_hidden);
        dense("refine.out", self.refine_hidden, 3);
        out.push((
            "refine.global.w".to_string(),
            vec![self.global_dim, self.refine_hidden],
            self.global_dim + 5,
        ));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.param_layout()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }
}

/// Seeded initialisation, uniform in `±1/sqrt(fan_in)`.
pub fn init_params(config: &BackboneConfig) -> Result<ParameterSet> {
    config.validate()?;
    let mut r = rng(config.seed);
    let mut params = ParameterSet::new();
    for (name, shape, fan_in) in config.param_layout() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.gen_range(-bound..bound)).collect();
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(params)
}

/// Verifies that `params` has exactly the layout `config` expects.
pub fn check_params(config: &BackboneConfig, params: &ParameterSet) -> Result<()> {
    let mut expected = ParameterSet::new();
    for (name, shape, _) in config.param_layout() {
        expected.insert(name, Tensor::zeros(&shape))?;
    }
    expected.ensure_congruent(params)
}

/// Fixed 2D codes, one per fine point of a coarse patch, on a grid in `[-0.5, 0.5]^2`.
pub fn grid_codes(expansion: usize) -> Tensor {
    let rows = (expansion as f64).sqrt().ceil() as usize;
    let cols = expansion.div_ceil(rows);
    let coord = |i: usize, n: usize| {
        if n <= 1 {
            0.0
        } else {
            i as f64 / (n - 1) as f64 - 0.5
        }
    };
    let mut data = Vec::with_capacity(2 * expansion);
    for e in 0..expansion {
        data.push(coord(e / cols, rows));
        data.push(coord(e % cols, cols));
    }
    Tensor::matrix(expansion, 2, data).expect("expansion x 2")
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub coarse: Var,
    pub fine: Var,
    pub global: Var,
}

/// Paired coarse and fine clouds of one forward pass, plus the global feature.
#[derive(Debug, Clone)]
pub struct CompletionOutput {
    pub coarse: PointCloud,
    pub fine: PointCloud,
    pub global_feature: Tensor,
}

fn dense(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    let h = g.matmul(x, w)?;
    g.add_row(h, b)
}

/// Records a forward pass on `g`. `input` is an `n x 3` node.
pub fn forward_graph(g: &mut Graph, p: &Bound, config: &BackboneConfig, input: Var) -> Result<ForwardVars> {
    let mut h = input;
    for i in 0..config.encoder_widths.len() {
        let z = dense(g, p, &format!("enc.{i}"), h)?;
        h = g.relu(z);
    }
    let pooled = g.max_rows(h)?;
    let global = dense(g, p, "glob", pooled)?;

    let c0 = dense(g, p, "coarse.0", global)?;
    let c0 = g.relu(c0);
    let c1 = dense(g, p, "coarse.1", c0)?;
    let coarse = g.reshape(c1, vec![config.coarse_count, 3])?;

    let e = config.expansion;
    let m = config.coarse_count;
    let anchors = g.repeat_rows(coarse, e)?;
    let grid = g.constant(grid_codes(e));
    let grid = g.tile_rows(grid, m)?;
    let local = g.concat_cols(anchors, grid)?;
    let local = dense(g, p, "refine.local", local)?;
    let gw = p.get("refine.global.w")?;
    let gctx = g.matmul(global, gw)?;
    let hidden = g.add_row(local, gctx)?;
    let hidden = g.relu(hidden);
    let raw = dense(g, p, "refine.out", hidden)?;
    let squashed = g.tanh(raw);
    let offsets = g.scale(squashed, config.offset_scale);
    let fine = g.add(anchors, offsets)?;
    Ok(ForwardVars {
        coarse,
        fine,
        global,
    })
}

impl ForwardVars {
    pub fn read(&self, g: &Graph) -> Result<CompletionOutput> {
        Ok(CompletionOutput {
            coarse: g.to_cloud(self.coarse)?,
            fine: g.to_cloud(self.fine)?,
            global_feature: g.value(self.global).clone(),
        })
    }
}

/// Plain evaluation without gradient bookkeeping.
pub fn forward(params: &ParameterSet, config: &BackboneConfig, input: &PointCloud) -> Result<CompletionOutput> {
    check_params(config, params)?;
    let mut g = Graph::new();
    // constants, so the backward bookkeeping is skipped entirely
    let mut bound = Vec::new();
    for (name, t) in params.iter() {
        bound.push((name.clone(), g.constant(t.clone())));
    }
    let bound = Bound::from_pairs(bound);
    let x = g.cloud(input);
    let vars = forward_graph(&mut g, &bound, config, x)?;
    vars.read(&g)
}
