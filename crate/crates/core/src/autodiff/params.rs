use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T: Real = f32> {
    pub name: String,
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
}

/// Ordered table of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
    pending: usize,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
            pending: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor4<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        let grad = Tensor4::zeros(value.shape());
        self.params.push(Param { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor4<T> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
        self.pending = 0;
    }

    /// Backward passes accumulated since the last [`zero_grad`](Self::zero_grad).
    pub fn pending_backward(&self) -> usize {
        self.pending
    }

    /// Adds a backward pass's parameter gradients into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (i, g) in grads.params.iter().enumerate() {
            if let Some(g) = g {
                self.params[i].grad.add_assign(g)?;
            }
        }
        self.pending += 1;
        Ok(())
    }

    pub fn values(&self) -> Vec<Tensor4<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Replaces every value, e.g. to restore a snapshot taken with [`values`](Self::values).
    pub fn restore(&mut self, values: &[Tensor4<T>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::WeightsMismatch(format!(
                "snapshot has {} tensors, store has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::WeightsMismatch(format!(
                    "{}: expected {}, got {}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
            pending: self.pending,
        }
    }
}

/// Gradients produced by one backward pass: one optional tensor per
/// parameter of the store the tape read from, plus gradients for input
/// leaves.
#[derive(Clone, Debug)]
pub struct Gradients<T: Real = f32> {
    pub(crate) params: Vec<Option<Tensor4<T>>>,
    pub(crate) inputs: HashMap<usize, Tensor4<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor4<T>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    pub fn input(&self, var: super::Var) -> Option<&Tensor4<T>> {
        self.inputs.get(&var.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor4::zeros(Shape4::scalar())).unwrap();
        assert!(s.add("a", Tensor4::zeros(Shape4::scalar())).is_err());
        assert_eq!(s.id("a"), Some(ParamId(0)));
    }
}
