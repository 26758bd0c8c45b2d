use std::collections::HashMap;

use crate::error::{bail, Result};
use crate::rng::{normals, SeededRng};
use crate::scalar::Scalar;

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
}

/// Gradients for a subset of parameters, sorted by id.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads<T>(pub Vec<(ParamId, Vec<T>)>);

impl<T: Scalar> ParamGrads<T> {
    /// Elementwise sum; both sides must come from the same store.
    pub fn merge(self, other: Self) -> Self {
        let mut by_id: Vec<(ParamId, Vec<T>)> = self.0;
        for (id, g) in other.0 {
            match by_id.iter_mut().find(|(i, _)| *i == id) {
                Some((_, acc)) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                None => by_id.push((id, g)),
            }
        }
        by_id.sort_by_key(|(id, _)| *id);
        ParamGrads(by_id)
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            bail!(InvalidArgument, "duplicate parameter name {name:?}");
        }
        let id = self.params.len();
        let grad = vec![T::zero(); value.numel()];
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value: value.with_requires_grad(true),
            grad,
        });
        Ok(ParamId(id))
    }

    /// `rows × cols` parameter with i.i.d. `N(0, std²)` entries.
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut SeededRng,
    ) -> Result<ParamId> {
        let data = normals::<f64, _>(rng, rows * cols)
            .into_iter()
            .map(|x| T::lit(x * std))
            .collect();
        self.add(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn add_full(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(vec![rows, cols], T::lit(v)))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds `grads` into the stored gradients.
    pub fn accumulate(&mut self, grads: &ParamGrads<T>) {
        for (id, g) in &grads.0 {
            let p = &mut self.params[id.0];
            p.grad.iter_mut().zip(g).for_each(|(a, b)| *a += *b);
        }
    }

    /// Multiplies every stored gradient by `c`.
    pub fn scale_grads(&mut self, c: T) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= c);
        }
    }

    pub fn grad_norm(&self) -> T {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|&g| g * g)
            .sum::<T>()
            .sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let n = self.grad_norm();
        if n > max_norm && n > T::zero() {
            self.scale_grads(max_norm / n);
        }
        n
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    /// Converts every value to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: vec![U::zero(); p.grad.len()],
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}
