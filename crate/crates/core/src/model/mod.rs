//! Declarative model graphs: a flat layer list plus a parameter table.
//!
//! Execution, parameter counting and FLOP accounting all walk the same
//! [`LayerSpec`] list, so they cannot drift apart.

mod builder;
mod ultraunet;
mod unet;

pub use builder::GraphBuilder;
pub use ultraunet::{build_ultraunet, UltraUNetConfig, Upsampling};
pub use unet::{build_denoiser, build_ref_unet, DenoiserConfig, RefUNetConfig};

use std::collections::HashMap;
use std::fmt;

use crate::autodiff::{kernels, Eager, Exec, ParamId, ParamStore, SeParams, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape4, Tensor4};

/// Where a layer sits in the encoder-decoder. Encoder stage 1 runs at full
/// resolution; decoder stage 1 is the first block after the bottleneck.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Input,
    Encoder(usize),
    Decoder(usize),
    Head,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Input => write!(f, "input"),
            Stage::Encoder(s) => write!(f, "enc{s}"),
            Stage::Decoder(s) => write!(f, "dec{s}"),
            Stage::Head => write!(f, "head"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipMerge {
    /// Element-wise sum; shapes must match exactly.
    Add,
    /// Channel concatenation `[skip, current]`.
    Concat,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: ParamId,
        bias: ParamId,
    },
    TransposedConv2x2 {
        in_channels: usize,
        out_channels: usize,
        weight: ParamId,
        bias: ParamId,
    },
    Upsample2x,
    MaxPool2x2,
    GroupNorm {
        channels: usize,
        groups: usize,
        eps: f64,
        gamma: ParamId,
        beta: ParamId,
    },
    Relu,
    SqueezeExcite {
        channels: usize,
        reduced: usize,
        params: SeParams,
    },
    SaveSkip {
        slot: usize,
    },
    MergeSkip {
        slot: usize,
        mode: SkipMerge,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub stage: Stage,
    pub kind: LayerKind,
}

/// A buildable, executable network.
#[derive(Clone, Debug)]
pub struct ModelGraph<T: Real = f32> {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub params: ParamStore<T>,
}

/// Options for [`ModelGraph::run_with`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Skip every squeeze-and-excitation gate (equivalent to an all-ones scale).
    pub bypass_se: bool,
}

impl<T: Real> ModelGraph<T> {
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn pool_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l.kind, LayerKind::MaxPool2x2)).count()
    }

    /// Input spatial extents must be divisible by this.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.pool_count()
    }

    /// Output shape of every layer for an input of `input` shape. Fails on
    /// the first layer whose input shape is invalid.
    pub fn infer_shapes(&self, input: Shape4) -> Result<Vec<Shape4>> {
        let d = self.spatial_divisor();
        if input.h % d != 0 || input.w % d != 0 || !input.is_valid() {
            return Err(Error::invalid(
                "forward",
                format!(
                    "{}: spatial size {}x{} is not divisible by {d}",
                    self.name, input.h, input.w
                ),
            ));
        }
        let mut cur = input;
        let mut slots: HashMap<usize, Shape4> = HashMap::new();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let err = |why: String| Error::Config(format!("{}: layer {} ({}): {why}", self.name, layer.name, layer.stage));
            cur = match &layer.kind {
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    if cur.c != *in_channels {
                        return Err(err(format!("expects {in_channels} channels, got {cur}")));
                    }
                    let h = kernels::conv_out_dim(cur.h, *kernel, *stride, *padding);
                    let w = kernels::conv_out_dim(cur.w, *kernel, *stride, *padding);
                    match (h, w) {
                        (Some(h), Some(w)) => Shape4::new(cur.n, *out_channels, h, w),
                        _ => return Err(err(format!("kernel {kernel} does not fit {cur}"))),
                    }
                }
                LayerKind::TransposedConv2x2 {
                    in_channels,
                    out_channels,
                    ..
                } => {
                    if cur.c != *in_channels {
                        return Err(err(format!("expects {in_channels} channels, got {cur}")));
                    }
                    Shape4::new(cur.n, *out_channels, cur.h * 2, cur.w * 2)
                }
                LayerKind::Upsample2x => Shape4::new(cur.n, cur.c, cur.h * 2, cur.w * 2),
                LayerKind::MaxPool2x2 => {
                    if cur.h % 2 != 0 || cur.w % 2 != 0 {
                        return Err(err(format!("odd spatial size {cur}")));
                    }
                    Shape4::new(cur.n, cur.c, cur.h / 2, cur.w / 2)
                }
                LayerKind::GroupNorm { channels, .. } | LayerKind::SqueezeExcite { channels, .. } => {
                    if cur.c != *channels {
                        return Err(err(format!("expects {channels} channels, got {cur}")));
                    }
                    cur
                }
                LayerKind::Relu => cur,
                LayerKind::SaveSkip { slot } => {
                    slots.insert(*slot, cur);
                    cur
                }
                LayerKind::MergeSkip { slot, mode } => {
                    let skip = slots
                        .remove(slot)
                        .ok_or_else(|| err(format!("skip slot {slot} was never saved")))?;
                    match mode {
                        SkipMerge::Add => {
                            if skip != cur {
                                return Err(err(format!("summation skip {skip} does not match {cur}")));
                            }
                            cur
                        }
                        SkipMerge::Concat => {
                            if (skip.n, skip.h, skip.w) != (cur.n, cur.h, cur.w) {
                                return Err(err(format!("concatenation skip {skip} does not match {cur}")));
                            }
                            Shape4::new(cur.n, skip.c + cur.c, cur.h, cur.w)
                        }
                    }
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        Ok(self.infer_shapes(input)?.last().copied().unwrap_or(input))
    }

    /// Executes the layer list on any executor.
    pub fn run<E: Exec<T>>(&self, exec: &mut E, input: E::Value) -> Result<E::Value> {
        self.run_with(exec, input, RunOptions::default())
    }

    pub fn run_with<E: Exec<T>>(&self, exec: &mut E, input: E::Value, opts: RunOptions) -> Result<E::Value> {
        self.infer_shapes(exec.tensor(&input).shape())?;
        let mut cur = input;
        let mut slots: HashMap<usize, E::Value> = HashMap::new();
        for layer in &self.layers {
            cur = match &layer.kind {
                LayerKind::Conv2d {
                    stride,
                    padding,
                    weight,
                    bias,
                    ..
                } => exec.conv2d(&cur, *weight, Some(*bias), *stride, *padding)?,
                LayerKind::TransposedConv2x2 { weight, bias, .. } => exec.conv_transpose2x2(&cur, *weight, Some(*bias))?,
                LayerKind::Upsample2x => exec.upsample2x(&cur)?,
                LayerKind::MaxPool2x2 => exec.max_pool2x2(&cur)?,
                LayerKind::GroupNorm {
                    groups, eps, gamma, beta, ..
                } => exec.group_norm(&cur, *groups, *gamma, *beta, *eps)?,
                LayerKind::Relu => exec.relu(cur),
                LayerKind::SqueezeExcite { params, .. } => {
                    if opts.bypass_se {
                        cur
                    } else {
                        exec.se_gate(cur, params)?
                    }
                }
                LayerKind::SaveSkip { slot } => {
                    slots.insert(*slot, cur.clone());
                    cur
                }
                LayerKind::MergeSkip { slot, mode } => {
                    let skip = slots.remove(slot).ok_or_else(|| {
                        Error::Config(format!("{}: skip slot {slot} was never saved", self.name))
                    })?;
                    match mode {
                        SkipMerge::Add => exec.add(cur, &skip)?,
                        SkipMerge::Concat => exec.concat(&skip, &cur)?,
                    }
                }
            };
        }
        Ok(cur)
    }

    /// Inference forward pass; allocates no tape.
    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut exec = Eager::new(&self.params);
        self.run(&mut exec, input.clone())
    }

    /// Forward pass recorded on `tape` for a later backward pass.
    pub fn forward_recorded<'p>(&'p self, tape: &mut Tape<'p, T>, input: Var) -> Result<Var> {
        self.run(tape, input)
    }

    /// Copies parameter values from `other` wherever name and shape agree.
    /// Returns the number of tensors copied.
    pub fn copy_matching_params<U: Real>(&mut self, other: &ModelGraph<U>) -> usize {
        let mut copied = 0;
        for p in self.params.iter_mut() {
            if let Some(id) = other.params.id(&p.name) {
                let src = other.params.value(id);
                if src.shape() == p.value.shape() {
                    p.value = src.cast();
                    copied += 1;
                }
            }
        }
        copied
    }

    pub fn cast<U: Real>(&self) -> ModelGraph<U> {
        ModelGraph {
            name: self.name.clone(),
            layers: self.layers.clone(),
            params: self.params.cast(),
        }
    }
}
