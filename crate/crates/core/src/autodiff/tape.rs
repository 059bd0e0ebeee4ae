//! Recording tape for reverse-mode differentiation.

use std::collections::HashMap;

use super::kernels::{self as k, FocalParams, GroupStats};
use super::params::{Gradients, ParamId, ParamStore};
use super::{Exec, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

enum Op<T: Real> {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2x2 {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MaxPool2x2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2x {
        x: Var,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        stats: GroupStats<T>,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    ScaleChannels {
        x: Var,
        s: Var,
    },
    Sum {
        x: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    DiceLoss {
        probs: Var,
        target: Tensor4<T>,
        eps: f64,
    },
    FocalLoss {
        probs: Var,
        target: Tensor4<T>,
        params: FocalParams,
    },
    MseLoss {
        pred: Var,
        target: Tensor4<T>,
    },
}

struct Node<T: Real> {
    op: Op<T>,
    // `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor4<T>>,
}

/// Records operations in execution order. Node indices are therefore a
/// topological order of the computation DAG.
pub struct Tape<'p, T: Real = f32> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_leaves: HashMap<ParamId, Var>,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor4<T>) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn input(&mut self, value: Tensor4<T>) -> Var {
        self.push(Op::Input, value)
    }

    /// Leaf node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_leaves.insert(id, v);
        v
    }

    pub fn conv2d_var(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let y = k::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        Ok(self.push(Op::Conv2d { x, w, b, stride, pad }, y))
    }

    pub fn conv_transpose2x2_var(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = k::conv_transpose2x2(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(Op::ConvTranspose2x2 { x, w, b }, y))
    }

    pub fn group_norm_var(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, stats) = k::group_norm(self.value(x), groups, self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
            y,
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = k::mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul { a, b }, y))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor4::scalar(self.value(x).sum());
        self.push(Op::Sum { x }, y)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let y = self.value(x).map(|v| v * factor);
        self.push(Op::Scale { x, factor }, y)
    }

    pub fn dice_loss(&mut self, probs: Var, target: &Tensor4<T>, eps: f64) -> Result<Var> {
        let v = k::dice_loss(self.value(probs), target, eps)?;
        Ok(self.push(
            Op::DiceLoss {
                probs,
                target: target.clone(),
                eps,
            },
            Tensor4::scalar(v),
        ))
    }

    pub fn focal_loss(&mut self, probs: Var, target: &Tensor4<T>, params: FocalParams) -> Result<Var> {
        let v = k::focal_loss(self.value(probs), target, params)?;
        Ok(self.push(
            Op::FocalLoss {
                probs,
                target: target.clone(),
                params,
            },
            Tensor4::scalar(v),
        ))
    }

    pub fn mse_loss(&mut self, pred: Var, target: &Tensor4<T>) -> Result<Var> {
        let v = k::mse_loss(self.value(pred), target)?;
        Ok(self.push(
            Op::MseLoss {
                pred,
                target: target.clone(),
            },
            Tensor4::scalar(v),
        ))
    }

    /// Reverse pass from a scalar root. Consumes the tape, releasing its
    /// borrow of the parameter store so the caller can accumulate the result.
    pub fn backward(self, root: Var) -> Result<Gradients<T>> {
        let root_shape = self.value(root).shape();
        if root_shape.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("root must be scalar, got {root_shape}"),
            ));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor4::full(root_shape, T::one()));
        let mut out = Gradients {
            params: (0..self.params.len()).map(|_| None).collect(),
            inputs: HashMap::new(),
        };

        fn acc<T: Real>(grads: &mut [Option<Tensor4<T>>], v: Var, g: Tensor4<T>) -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {
                    out.inputs.insert(i, dy);
                }
                Op::Param(id) => match &mut out.params[id.0] {
                    Some(existing) => existing.add_assign(&dy)?,
                    slot @ None => *slot = Some(dy),
                },
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (dx, dw, db) = k::conv2d_backward(self.value(*x), self.value(*w), &dy, *stride, *pad)?;
                    acc(&mut grads, *x, dx)?;
                    acc(&mut grads, *w, dw)?;
                    if let Some(b) = b {
                        let db = db.reshape(self.value(*b).shape())?;
                        acc(&mut grads, *b, db)?;
                    }
                }
                Op::ConvTranspose2x2 { x, w, b } => {
                    let (dx, dw, db) = k::conv_transpose2x2_backward(self.value(*x), self.value(*w), &dy)?;
                    acc(&mut grads, *x, dx)?;
                    acc(&mut grads, *w, dw)?;
                    if let Some(b) = b {
                        let db = db.reshape(self.value(*b).shape())?;
                        acc(&mut grads, *b, db)?;
                    }
                }
                Op::MaxPool2x2 { x, argmax } => {
                    let dx = k::max_pool2x2_backward(self.value(*x).shape(), argmax, &dy);
                    acc(&mut grads, *x, dx)?;
                }
                Op::Upsample2x { x } => {
                    let dx = k::upsample2x_backward(self.value(*x).shape(), &dy);
                    acc(&mut grads, *x, dx)?;
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    stats,
                } => {
                    let (dx, dg, db) = k::group_norm_backward(self.value(*x), *groups, self.value(*gamma), stats, &dy);
                    acc(&mut grads, *x, dx)?;
                    let dg = dg.reshape(self.value(*gamma).shape())?;
                    let db = db.reshape(self.value(*beta).shape())?;
                    acc(&mut grads, *gamma, dg)?;
                    acc(&mut grads, *beta, db)?;
                }
                Op::Relu { x } => {
                    let dx = k::relu_backward(self.value(Var(i)), &dy);
                    acc(&mut grads, *x, dx)?;
                }
                Op::Sigmoid { x } => {
                    let dx = k::sigmoid_backward(self.value(*x), self.value(Var(i)), &dy);
                    acc(&mut grads, *x, dx)?;
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *b, dy.clone())?;
                    acc(&mut grads, *a, dy)?;
                }
                Op::Mul { a, b } => {
                    let da = k::mul(&dy, self.value(*b))?;
                    let db = k::mul(&dy, self.value(*a))?;
                    acc(&mut grads, *a, da)?;
                    acc(&mut grads, *b, db)?;
                }
                Op::Concat { a, b } => {
                    let (da, db) = k::concat_backward(self.value(*a).shape().c, &dy)?;
                    acc(&mut grads, *a, da)?;
                    acc(&mut grads, *b, db)?;
                }
                Op::GlobalAvgPool { x } => {
                    let dx = k::global_avg_pool_backward(self.value(*x).shape(), &dy);
                    acc(&mut grads, *x, dx)?;
                }
                Op::ScaleChannels { x, s } => {
                    let (dx, ds) = k::scale_channels_backward(self.value(*x), self.value(*s), &dy);
                    acc(&mut grads, *x, dx)?;
                    acc(&mut grads, *s, ds)?;
                }
                Op::Sum { x } => {
                    let g = dy.data()[0];
                    let dx = Tensor4::full(self.value(*x).shape(), g);
                    acc(&mut grads, *x, dx)?;
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    acc(&mut grads, *x, dy.map(|v| v * f))?;
                }
                Op::DiceLoss { probs, target, eps } => {
                    let g = dy.data()[0];
                    let dp = k::dice_loss_grad(self.value(*probs), target, *eps)?.map(|v| v * g);
                    acc(&mut grads, *probs, dp)?;
                }
                Op::FocalLoss { probs, target, params } => {
                    let g = dy.data()[0];
                    let dp = k::focal_loss_grad(self.value(*probs), target, *params)?.map(|v| v * g);
                    acc(&mut grads, *probs, dp)?;
                }
                Op::MseLoss { pred, target } => {
                    let g = dy.data()[0];
                    let dp = k::mse_loss_grad(self.value(*pred), target)?.map(|v| v * g);
                    acc(&mut grads, *pred, dp)?;
                }
            }
        }
        Ok(out)
    }
}

impl<T: Real> Exec<T> for Tape<'_, T> {
    type Value = Var;

    fn tensor<'a>(&'a self, v: &'a Var) -> &'a Tensor4<T> {
        self.value(*v)
    }

    fn conv2d(&mut self, x: &Var, weight: ParamId, bias: Option<ParamId>, stride: usize, padding: usize) -> Result<Var> {
        let w = self.param(weight);
        let b = bias.map(|b| self.param(b));
        self.conv2d_var(*x, w, b, stride, padding)
    }

    fn conv_transpose2x2(&mut self, x: &Var, weight: ParamId, bias: Option<ParamId>) -> Result<Var> {
        let w = self.param(weight);
        let b = bias.map(|b| self.param(b));
        self.conv_transpose2x2_var(*x, w, b)
    }

    fn max_pool2x2(&mut self, x: &Var) -> Result<Var> {
        let (y, argmax) = k::max_pool2x2(self.value(*x))?;
        Ok(self.push(Op::MaxPool2x2 { x: *x, argmax }, y))
    }

    fn upsample2x(&mut self, x: &Var) -> Result<Var> {
        let y = k::upsample2x(self.value(*x));
        Ok(self.push(Op::Upsample2x { x: *x }, y))
    }

    fn group_norm(&mut self, x: &Var, groups: usize, gamma: ParamId, beta: ParamId, eps: f64) -> Result<Var> {
        let g = self.param(gamma);
        let b = self.param(beta);
        self.group_norm_var(*x, groups, g, b, eps)
    }

    fn relu(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        k::relu_in_place(&mut y);
        self.push(Op::Relu { x }, y)
    }

    fn sigmoid(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        k::sigmoid_in_place(&mut y);
        self.push(Op::Sigmoid { x }, y)
    }

    fn add(&mut self, a: Var, b: &Var) -> Result<Var> {
        let y = k::add(self.value(a).clone(), self.value(*b))?;
        Ok(self.push(Op::Add { a, b: *b }, y))
    }

    fn concat(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = k::concat(self.value(*a), self.value(*b))?;
        Ok(self.push(Op::Concat { a: *a, b: *b }, y))
    }

    fn global_avg_pool(&mut self, x: &Var) -> Var {
        let y = k::global_avg_pool(self.value(*x));
        self.push(Op::GlobalAvgPool { x: *x }, y)
    }

    fn scale_channels(&mut self, x: Var, scale: &Var) -> Result<Var> {
        let y = k::scale_channels(self.value(x), self.value(*scale))?;
        Ok(self.push(Op::ScaleChannels { x, s: *scale }, y))
    }
}
