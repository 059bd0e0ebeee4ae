//! Tensor operators with reverse-mode differentiation.
//!
//! Model code is written once against [`Exec`]. [`Eager`] evaluates it
//! without recording anything (the inference path); [`Tape`] records every
//! operation so [`Tape::backward`] can propagate gradients to parameters and
//! inputs.

pub mod kernels;
mod params;
mod tape;

pub use kernels::FocalParams;
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::Tape;

use crate::error::Result;
use crate::tensor::{Real, Tensor4};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Parameters of one squeeze-and-excitation gate: two fully connected layers
/// stored as 1x1 convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeParams {
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
}

/// Operator set shared by the eager executor and the recording tape.
pub trait Exec<T: Real> {
    type Value: Clone;

    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor4<T>;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        weight: ParamId,
        bias: Option<ParamId>,
        stride: usize,
        padding: usize,
    ) -> Result<Self::Value>;

    fn conv_transpose2x2(&mut self, x: &Self::Value, weight: ParamId, bias: Option<ParamId>) -> Result<Self::Value>;

    fn max_pool2x2(&mut self, x: &Self::Value) -> Result<Self::Value>;

    fn upsample2x(&mut self, x: &Self::Value) -> Result<Self::Value>;

    fn group_norm(
        &mut self,
        x: &Self::Value,
        groups: usize,
        gamma: ParamId,
        beta: ParamId,
        eps: f64,
    ) -> Result<Self::Value>;

    fn relu(&mut self, x: Self::Value) -> Self::Value;

    fn sigmoid(&mut self, x: Self::Value) -> Self::Value;

    fn add(&mut self, a: Self::Value, b: &Self::Value) -> Result<Self::Value>;

    fn concat(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;

    fn global_avg_pool(&mut self, x: &Self::Value) -> Self::Value;

    fn scale_channels(&mut self, x: Self::Value, scale: &Self::Value) -> Result<Self::Value>;

    /// Channel gate `x · sigmoid(fc2(relu(fc1(gap(x)))))`.
    fn se_gate(&mut self, x: Self::Value, se: &SeParams) -> Result<Self::Value> {
        let pooled = self.global_avg_pool(&x);
        let hidden = self.conv2d(&pooled, se.fc1_weight, Some(se.fc1_bias), 1, 0)?;
        let hidden = self.relu(hidden);
        let logits = self.conv2d(&hidden, se.fc2_weight, Some(se.fc2_bias), 1, 0)?;
        let gate = self.sigmoid(logits);
        self.scale_channels(x, &gate)
    }
}

/// Inference executor: evaluates operators directly and keeps no history.
pub struct Eager<'p, T: Real = f32> {
    params: &'p ParamStore<T>,
}

impl<'p, T: Real> Eager<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Eager { params }
    }
}

impl<T: Real> Exec<T> for Eager<'_, T> {
    type Value = Tensor4<T>;

    fn tensor<'a>(&'a self, v: &'a Tensor4<T>) -> &'a Tensor4<T> {
        v
    }

    fn conv2d(
        &mut self,
        x: &Tensor4<T>,
        weight: ParamId,
        bias: Option<ParamId>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor4<T>> {
        kernels::conv2d(
            x,
            self.params.value(weight),
            bias.map(|b| self.params.value(b)),
            stride,
            padding,
        )
    }

    fn conv_transpose2x2(&mut self, x: &Tensor4<T>, weight: ParamId, bias: Option<ParamId>) -> Result<Tensor4<T>> {
        kernels::conv_transpose2x2(x, self.params.value(weight), bias.map(|b| self.params.value(b)))
    }

    fn max_pool2x2(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        kernels::max_pool2x2(x).map(|(y, _)| y)
    }

    fn upsample2x(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(kernels::upsample2x(x))
    }

    fn group_norm(
        &mut self,
        x: &Tensor4<T>,
        groups: usize,
        gamma: ParamId,
        beta: ParamId,
        eps: f64,
    ) -> Result<Tensor4<T>> {
        kernels::group_norm(x, groups, self.params.value(gamma), self.params.value(beta), eps).map(|(y, _)| y)
    }

    fn relu(&mut self, mut x: Tensor4<T>) -> Tensor4<T> {
        kernels::relu_in_place(&mut x);
        x
    }

    fn sigmoid(&mut self, mut x: Tensor4<T>) -> Tensor4<T> {
        kernels::sigmoid_in_place(&mut x);
        x
    }

    fn add(&mut self, a: Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
        kernels::add(a, b)
    }

    fn concat(&mut self, a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
        kernels::concat(a, b)
    }

    fn global_avg_pool(&mut self, x: &Tensor4<T>) -> Tensor4<T> {
        kernels::global_avg_pool(x)
    }

    fn scale_channels(&mut self, x: Tensor4<T>, scale: &Tensor4<T>) -> Result<Tensor4<T>> {
        kernels::scale_channels(&x, scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn se_store(bias2: f64) -> (ParamStore<f64>, SeParams) {
        let mut s = ParamStore::new();
        let se = SeParams {
            fc1_weight: s.add("fc1.w", Tensor4::full(Shape4::new(2, 8, 1, 1), 0.1)).unwrap(),
            fc1_bias: s.add("fc1.b", Tensor4::zeros(Shape4::new(1, 2, 1, 1))).unwrap(),
            fc2_weight: s.add("fc2.w", Tensor4::zeros(Shape4::new(8, 2, 1, 1))).unwrap(),
            fc2_bias: s.add("fc2.b", Tensor4::full(Shape4::new(1, 8, 1, 1), bias2)).unwrap(),
        };
        (s, se)
    }

    #[test]
    fn saturated_gate_is_identity_and_closed_gate_zeroes() {
        let x = Tensor4::<f64>::from_fn(Shape4::new(1, 8, 4, 4), |_, c, y, x| (c + y * 4 + x) as f64 * 0.1);
        let (open, se) = se_store(100.0);
        let y = Eager::new(&open).se_gate(x.clone(), &se).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-12);
        let (closed, se) = se_store(-100.0);
        let y = Eager::new(&closed).se_gate(x.clone(), &se).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn eager_and_tape_agree() {
        let x = Tensor4::<f64>::from_fn(Shape4::new(1, 8, 4, 4), |_, c, y, x| ((c * 3 + y * 5 + x) % 7) as f64 - 3.0);
        let (store, se) = se_store(0.3);
        let eager = Eager::new(&store).se_gate(x.clone(), &se).unwrap();
        let mut tape = Tape::new(&store);
        let xv = tape.input(x);
        let y = tape.se_gate(xv, &se).unwrap();
        assert_eq!(tape.value(y), &eager);
    }
}
