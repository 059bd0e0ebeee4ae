use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LayerKind, LayerSpec, ModelGraph, SkipMerge, Stage};
use crate::autodiff::{ParamId, ParamStore, SeParams};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape4, Tensor4};

/// Appends layers and initialises their parameters from a seeded stream.
///
/// Weights use Kaiming fan-in normal initialisation (`std = sqrt(2 / fan_in)`),
/// biases start at zero, group-norm scales at one and shifts at zero.
pub struct GraphBuilder<T: Real> {
    name: String,
    params: ParamStore<T>,
    layers: Vec<LayerSpec>,
    rng: ChaCha8Rng,
    stage: Stage,
}

impl<T: Real> GraphBuilder<T> {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        GraphBuilder {
            name: name.into(),
            params: ParamStore::new(),
            layers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            stage: Stage::Input,
        }
    }

    pub fn stage(&mut self, stage: Stage) -> &mut Self {
        self.stage = stage;
        self
    }

    fn push(&mut self, name: impl Into<String>, kind: LayerKind) {
        self.layers.push(LayerSpec {
            name: name.into(),
            stage: self.stage,
            kind,
        });
    }

    fn kaiming(&mut self, name: String, shape: Shape4, fan_in: usize) -> Result<ParamId> {
        let std = (2.0 / fan_in as f64).sqrt();
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::of(z * std)
            })
            .collect();
        self.params.add(name, Tensor4::from_vec(shape, data)?)
    }

    fn constant(&mut self, name: String, channels: usize, value: f64) -> Result<ParamId> {
        self.params.add(name, Tensor4::full(Shape4::new(1, channels, 1, 1), T::of(value)))
    }

    pub fn conv(&mut self, name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Result<&mut Self> {
        let weight = self.kaiming(
            format!("{name}.weight"),
            Shape4::new(out_channels, in_channels, kernel, kernel),
            in_channels * kernel * kernel,
        )?;
        let bias = self.constant(format!("{name}.bias"), out_channels, 0.0)?;
        self.push(
            name,
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride: 1,
                padding: kernel / 2,
                weight,
                bias,
            },
        );
        Ok(self)
    }

    pub fn transposed_conv(&mut self, name: &str, in_channels: usize, out_channels: usize) -> Result<&mut Self> {
        // each output pixel receives exactly one tap per input channel
        let weight = self.kaiming(
            format!("{name}.weight"),
            Shape4::new(in_channels, out_channels, 2, 2),
            in_channels,
        )?;
        let bias = self.constant(format!("{name}.bias"), out_channels, 0.0)?;
        self.push(
            name,
            LayerKind::TransposedConv2x2 {
                in_channels,
                out_channels,
                weight,
                bias,
            },
        );
        Ok(self)
    }

    pub fn group_norm(&mut self, name: &str, channels: usize, groups: usize, eps: f64) -> Result<&mut Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!(
                "{name}: {channels} channels not divisible into {groups} groups"
            )));
        }
        let gamma = self.constant(format!("{name}.gamma"), channels, 1.0)?;
        let beta = self.constant(format!("{name}.beta"), channels, 0.0)?;
        self.push(
            name,
            LayerKind::GroupNorm {
                channels,
                groups,
                eps,
                gamma,
                beta,
            },
        );
        Ok(self)
    }

    pub fn squeeze_excite(&mut self, name: &str, channels: usize, reduction: usize) -> Result<&mut Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "{name}: {channels} channels not divisible by reduction ratio {reduction}"
            )));
        }
        let reduced = channels / reduction;
        let fc1_weight = self.kaiming(format!("{name}.fc1.weight"), Shape4::new(reduced, channels, 1, 1), channels)?;
        let fc1_bias = self.constant(format!("{name}.fc1.bias"), reduced, 0.0)?;
        let fc2_weight = self.kaiming(format!("{name}.fc2.weight"), Shape4::new(channels, reduced, 1, 1), reduced)?;
        let fc2_bias = self.constant(format!("{name}.fc2.bias"), channels, 0.0)?;
        self.push(
            name,
            LayerKind::SqueezeExcite {
                channels,
                reduced,
                params: SeParams {
                    fc1_weight,
                    fc1_bias,
                    fc2_weight,
                    fc2_bias,
                },
            },
        );
        Ok(self)
    }

    pub fn relu(&mut self, name: &str) -> &mut Self {
        self.push(name, LayerKind::Relu);
        self
    }

    pub fn max_pool(&mut self, name: &str) -> &mut Self {
        self.push(name, LayerKind::MaxPool2x2);
        self
    }

    pub fn upsample(&mut self, name: &str) -> &mut Self {
        self.push(name, LayerKind::Upsample2x);
        self
    }

    pub fn save_skip(&mut self, name: &str, slot: usize) -> &mut Self {
        self.push(name, LayerKind::SaveSkip { slot });
        self
    }

    pub fn merge_skip(&mut self, name: &str, slot: usize, mode: SkipMerge) -> &mut Self {
        self.push(name, LayerKind::MergeSkip { slot, mode });
        self
    }

    /// Finishes the graph and checks that `probe` flows through it to
    /// `expected_out`.
    pub fn finish(self, probe: Shape4, expected_out: Shape4) -> Result<ModelGraph<T>> {
        let graph = ModelGraph {
            name: self.name,
            layers: self.layers,
            params: self.params,
        };
        let out = graph.output_shape(probe)?;
        if out != expected_out {
            return Err(Error::Config(format!(
                "{}: input {probe} produces {out}, expected {expected_out}",
                graph.name
            )));
        }
        Ok(graph)
    }
}
