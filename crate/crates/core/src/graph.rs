//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every primitive as it is evaluated. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! accumulates adjoints into every node that depends on a parameter leaf.
//!
//! Discrete selections made during the forward pass (relu activity, max-pool
//! argmax, nearest-neighbour argmin) are treated as constants by the backward
//! pass. The graph also folds them into a [`Graph::selection_signature`] so a
//! finite-difference check can tell when a perturbation crossed a kink.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{nearest_in, Point, PointCloud};
use crate::tensor::{GradientRecord, ParameterSet, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sqrt(Var),
    Sum(Var),
    MaxRows { input: Var, argmax: Vec<usize> },
    ConcatCols(Var, Var),
    Reshape(Var),
    RepeatRows(Var, usize),
    TileRows(Var),
    Ucd { x: Var, y: Var, nearest: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recording context. Single-threaded; build one per sample or per thread.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    signature: u64,
}

/// Parameter leaves registered on a graph, keyed by name.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter {name:?} not present")))
    }
}

/// Adjoints of every node, as produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient record for a bound parameter set; disconnected parameters get zeros.
    pub fn record(&self, graph: &Graph, bound: &Bound) -> GradientRecord {
        let mut set = ParameterSet::new();
        for (name, &v) in &bound.vars {
            let shape = graph.value(v).shape().to_vec();
            let t = match self.of(v) {
                Some(g) => Tensor::new(shape, g.to_vec()).expect("adjoint matches value shape"),
                None => Tensor::zeros(&shape),
            };
            set.insert(name.clone(), t).expect("names unique");
        }
        GradientRecord::from_set(set)
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::invalid(format!(
        "{op}: incompatible shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
}

/// `c (m x n) [+]= op(a) (m x k) * op(b) (k x n)`, row-major storage.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    // stored a is m x k (or k x m when transposed); same for b.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked by the callers against m, k, n and the
    // strides above address exactly those row-major buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn mix(sig: u64, v: u64) -> u64 {
    // FNV-1a style fold.
    (sig ^ v).wrapping_mul(0x0000_0100_0000_01b3)
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            signature: 0xcbf2_9ce4_8422_2325,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every discrete choice made so far.
    pub fn selection_signature(&self) -> u64 {
        self.signature
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn bind(&mut self, params: &ParameterSet) -> Bound {
        let vars = params
            .iter()
            .map(|(name, t)| (name.clone(), self.param(t.clone())))
            .collect();
        Bound { vars }
    }

    /// Copies a node's value into a fresh constant; no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn cloud(&mut self, cloud: &PointCloud) -> Var {
        let t = Tensor::matrix(cloud.len(), 3, cloud.to_flat()).expect("cloud is n x 3");
        self.constant(t)
    }

    pub fn to_cloud(&self, v: Var) -> Result<PointCloud> {
        let t = self.value(v);
        match t.dims2()? {
            (_, 3) => PointCloud::from_flat(t.data()),
            (r, c) => Err(Error::invalid(format!("expected n x 3 points, got {r} x {c}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2()?;
        let (k2, n) = tb.dims2()?;
        if k != k2 || ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Adds a length-`c` row to every row of an `n x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (_, c) = ta.dims2()?;
        if tr.len() != c {
            return Err(shape_err("add_row", ta, tr));
        }
        let r = tr.data();
        let data = ta
            .data()
            .chunks_exact(c)
            .flat_map(|x| x.iter().zip(r).map(|(u, v)| u + v))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("div", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x / y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Div(a, b), rg))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| scale * x + shift).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let mut sig = self.signature;
        for chunk in data.chunks(64) {
            let bits = chunk
                .iter()
                .enumerate()
                .fold(0u64, |acc, (i, &x)| acc | (u64::from(x > 0.0) << i));
            sig = mix(sig, bits);
        }
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.signature = sig;
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x.tanh()).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x.sqrt()).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Sqrt(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Column-wise maximum over the leading (point) axis of an `n x c` matrix.
    /// Ties resolve to the lowest row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (n, c) = ta.dims2()?;
        let d = ta.data();
        let mut best = d[..c].to_vec();
        let mut argmax = vec![0usize; c];
        for r in 1..n {
            let row = &d[r * c..(r + 1) * c];
            for j in 0..c {
                if row[j] > best[j] {
                    best[j] = row[j];
                    argmax[j] = r;
                }
            }
        }
        let sig = argmax.iter().fold(self.signature, |s, &i| mix(s, i as u64));
        self.signature = sig;
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(1, c, best)?,
            Op::MaxRows { input: a, argmax },
            rg,
        ))
    }

    /// Argmax indices recorded by a `max_rows` node.
    pub fn argmax_of(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxRows { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, p) = ta.dims2()?;
        let (n2, q) = tb.dims2()?;
        if n != n2 {
            return Err(shape_err("concat_cols", ta, tb));
        }
        let mut data = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            data.extend_from_slice(&ta.data()[r * p..(r + 1) * p]);
            data.extend_from_slice(&tb.data()[r * q..(r + 1) * q]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(n, p + q, data)?, Op::ConcatCols(a, b), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Repeats each row `times` times consecutively: row `r` of the output is row `r / times`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, c) = ta.dims2()?;
        if times == 0 {
            return Err(Error::invalid("repeat_rows needs times >= 1"));
        }
        let mut data = Vec::with_capacity(n * times * c);
        for row in ta.data().chunks_exact(c) {
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(n * times, c, data)?, Op::RepeatRows(a, times), rg))
    }

    /// Tiles the whole matrix `times` times: row `r` of the output is row `r % n`.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, c) = ta.dims2()?;
        if times == 0 {
            return Err(Error::invalid("tile_rows needs times >= 1"));
        }
        let data = ta.data().repeat(times);
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(n * times, c, data)?, Op::TileRows(a), rg))
    }

    /// Unidirectional Chamfer distance between two `n x 3` point matrices.
    pub fn ucd(&mut self, x: Var, y: Var) -> Result<Var> {
        let (tx, ty) = (self.value(x), self.value(y));
        if tx.dims2()?.1 != 3 || ty.dims2()?.1 != 3 {
            return Err(shape_err("ucd", tx, ty));
        }
        let xs = as_points(tx);
        let ys = as_points(ty);
        let nn = nearest_in(&xs, &ys);
        let sum: f64 = nn.iter().map(|&(_, d)| d).sum();
        let value = sum / xs.len() as f64;
        let nearest: Vec<usize> = nn.into_iter().map(|(j, _)| j).collect();
        self.signature = nearest
            .iter()
            .fold(self.signature, |s, &i| mix(s, i as u64));
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(Tensor::scalar(value), Op::Ucd { x, y, nearest }, rg))
    }

    /// Symmetric Chamfer distance `ucd(x, y) + ucd(y, x)`.
    pub fn cd(&mut self, x: Var, y: Var) -> Result<Var> {
        let a = self.ucd(x, y)?;
        let b = self.ucd(y, x)?;
        self.add(a, b)
    }

    /// Sums a non-empty list of same-shaped nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::invalid("add_all needs at least one term"))?;
        let mut acc = *first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Returns the accumulation buffer of `v`, or None if it needs no gradient.
        fn slot<'a>(
            nodes: &[Node],
            grads: &'a mut [Option<Vec<f64>>],
            v: Var,
        ) -> Option<&'a mut Vec<f64>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let n = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = ta.dims2().expect("matrix");
                let n = tb.dims2().expect("matrix").1;
                if let Some(ga) = slot(nodes, grads, *a) {
                    gemm(m, n, k, g, false, tb.data(), true, ga, true);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gemm(k, m, n, ta.data(), true, g, false, gb, true);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(s) = slot(nodes, grads, *v) {
                        s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(s) = slot(nodes, grads, *a) {
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(s) = slot(nodes, grads, *row) {
                    let c = s.len();
                    for chunk in g.chunks_exact(c) {
                        s.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(s) = slot(nodes, grads, *a) {
                    for i in 0..s.len() {
                        s[i] += g[i] * vb[i];
                    }
                }
                if let Some(s) = slot(nodes, grads, *b) {
                    for i in 0..s.len() {
                        s[i] += g[i] * va[i];
                    }
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(s) = slot(nodes, grads, *a) {
                    for i in 0..s.len() {
                        s[i] += g[i] / vb[i];
                    }
                }
                if let Some(s) = slot(nodes, grads, *b) {
                    for i in 0..s.len() {
                        s[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                }
            }
            Op::Affine(a, scale) => {
                if let Some(s) = slot(nodes, grads, *a) {
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += scale * y);
                }
            }
            Op::Relu(a) => {
                let out = node.value.data();
                if let Some(s) = slot(nodes, grads, *a) {
                    for i in 0..s.len() {
                        if out[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                let out = node.value.data();
                if let Some(s) = slot(nodes, grads, *a) {
                    for i in 0..s.len() {
                        s[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
            }
            Op::Sqrt(a) => {
                let out = node.value.data();
                if let Some(s) = slot(nodes, grads, *a) {
                    for i in 0..s.len() {
                        s[i] += g[i] * 0.5 / out[i];
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(s) = slot(nodes, grads, *a) {
                    s.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::MaxRows { input, argmax } => {
                if let Some(s) = slot(nodes, grads, *input) {
                    let c = argmax.len();
                    for (j, &r) in argmax.iter().enumerate() {
                        s[r * c + j] += g[j];
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let p = nodes[a.0].value.dims2().expect("matrix").1;
                let q = nodes[b.0].value.dims2().expect("matrix").1;
                if let Some(s) = slot(nodes, grads, *a) {
                    for (dst, src) in s.chunks_exact_mut(p).zip(g.chunks_exact(p + q)) {
                        dst.iter_mut().zip(&src[..p]).for_each(|(x, y)| *x += y);
                    }
                }
                if let Some(s) = slot(nodes, grads, *b) {
                    for (dst, src) in s.chunks_exact_mut(q).zip(g.chunks_exact(p + q)) {
                        dst.iter_mut().zip(&src[p..]).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(s) = slot(nodes, grads, *a) {
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::RepeatRows(a, times) => {
                let c = nodes[a.0].value.dims2().expect("matrix").1;
                if let Some(s) = slot(nodes, grads, *a) {
                    for (r, chunk) in g.chunks_exact(c).enumerate() {
                        let dst = &mut s[(r / times) * c..(r / times + 1) * c];
                        dst.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::TileRows(a) => {
                if let Some(s) = slot(nodes, grads, *a) {
                    let len = s.len();
                    for chunk in g.chunks_exact(len) {
                        s.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Ucd { x, y, nearest } => {
                let (vx, vy) = (nodes[x.0].value.data(), nodes[y.0].value.data());
                let w = 2.0 * g[0] / nearest.len() as f64;
                let diff = |i: usize, k: usize| vx[3 * i + k] - vy[3 * nearest[i] + k];
                if let Some(s) = slot(nodes, grads, *x) {
                    for i in 0..nearest.len() {
                        for k in 0..3 {
                            s[3 * i + k] += w * diff(i, k);
                        }
                    }
                }
                if let Some(s) = slot(nodes, grads, *y) {
                    for i in 0..nearest.len() {
                        let j = nearest[i];
                        for k in 0..3 {
                            s[3 * j + k] -= w * diff(i, k);
                        }
                    }
                }
            }
        }
    }
}

fn as_points(t: &Tensor) -> Vec<Point> {
    t.data()
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect()
}
