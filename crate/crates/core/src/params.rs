//! Named parameter storage and gradient accumulators.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Learnable tensors in registration order.
///
/// Values are stored in single precision. A double-precision mirror is kept
/// in sync so the tape can borrow parameters without converting them.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor<f32>>,
    mirror: Vec<Tensor<f64>>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<f32>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.mirror.push(value.to_f64());
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<f32> {
        &self.values[id.0]
    }

    pub(crate) fn get_f64(&self, id: ParamId) -> &Tensor<f64> {
        &self.mirror[id.0]
    }

    pub(crate) fn mirror_mut(&mut self, id: ParamId) -> &mut Tensor<f64> {
        &mut self.mirror[id.0]
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Applies `f` to the raw values of one parameter and refreshes the mirror.
    pub fn update(&mut self, id: ParamId, f: impl FnOnce(&mut [f32])) {
        f(self.values[id.0].data_mut());
        let src = self.values[id.0].data();
        for (m, &v) in self.mirror[id.0].data_mut().iter_mut().zip(src) {
            *m = v as f64;
        }
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<f32>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Shape {
                op: "param set",
                left: self.values[id.0].shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.mirror[id.0] = value.to_f64();
        self.values[id.0] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }
}

/// Per-parameter gradient accumulators in double precision.
#[derive(Clone, Debug)]
pub struct GradStore {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradStore {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        self.grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn zero(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds every accumulator of `other` into `self`.
    pub fn merge(&mut self, other: &GradStore) {
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(src) = src {
                let dst = dst.get_or_insert_with(|| vec![0.0; src.len()]);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().flatten().all(|x| x.is_finite())
    }
}

/// Glorot-uniform initialised `[rows × cols]` weight.
pub fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor<f32> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, &[rows, cols], limit)
}

pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], limit: f64) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(-limit..=limit) as f32)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

pub fn filled(shape: &[usize], value: f32) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), vec![value; n]).expect("shape and data agree")
}
