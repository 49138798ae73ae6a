//! Dense `f64` tensors and named parameter collections.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor shape {shape:?} must be a non-empty list of positive sizes"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor; a rank-1 tensor is treated as one row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            [c] => Ok((1, *c)),
            s => Err(Error::invalid(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Named trainable arrays of one model, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Lists every name/shape disagreement between two sets.
    pub fn mismatches(&self, other: &ParameterSet) -> Vec<String> {
        let mut out = Vec::new();
        for (name, t) in &self.entries {
            match other.entries.get(name) {
                None => out.push(format!("{name}: missing on right")),
                Some(o) if o.shape() != t.shape() => out.push(format!(
                    "{name}: shape {:?} vs {:?}",
                    t.shape(),
                    o.shape()
                )),
                _ => {}
            }
        }
        for name in other.entries.keys() {
            if !self.entries.contains_key(name) {
                out.push(format!("{name}: missing on left"));
            }
        }
        out
    }

    pub fn is_congruent(&self, other: &ParameterSet) -> bool {
        self.mismatches(other).is_empty()
    }

    pub fn ensure_congruent(&self, other: &ParameterSet) -> Result<()> {
        let m = self.mismatches(other);
        if m.is_empty() {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "parameter sets are not congruent: {}",
                m.join("; ")
            )))
        }
    }

    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }
}

/// Per-parameter gradients, congruent with the set that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    grads: ParameterSet,
}

impl GradientRecord {
    pub fn zeros_for(params: &ParameterSet) -> Self {
        Self {
            grads: params.zeros_like(),
        }
    }

    pub(crate) fn from_set(grads: ParameterSet) -> Self {
        Self { grads }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn as_set(&self) -> &ParameterSet {
        &self.grads
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &GradientRecord, alpha: f64) -> Result<()> {
        self.grads.ensure_congruent(&other.grads)?;
        for (name, t) in self.grads.iter_mut() {
            let o = other.grads.get(name).expect("congruent");
            for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                *a += alpha * b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.grads.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.all_finite()
    }
}
