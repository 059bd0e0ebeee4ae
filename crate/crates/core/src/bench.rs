//! Analytic cost accounting and wall-clock throughput.
//!
//! Per-layer formulas (output extents `H x W`, `c` channels):
//!
//! | layer | MACs | other ops |
//! |---|---|---|
//! | conv k×k | `k²·c_in·c_out·H·W` | `c_out·H·W` bias adds |
//! | transposed conv 2×2 | `c_in·c_out·H·W` | `c_out·H·W` bias adds |
//! | max-pool 2×2 | 0 | 3 comparisons per output |
//! | group norm | 0 | 5 per element |
//! | ReLU | 0 | 1 per element |
//! | SE gate | `2·c²/r` | `c·H·W` pooling adds, `c/r + c` bias adds, `c/r` ReLU, 4·c sigmoid, `c·H·W` scaling |
//! | summation skip | 0 | 1 per element |
//! | upsample, concat | 0 | 0 |
//!
//! FLOPs are reported under two conventions: one FLOP per MAC, and two.
//! Other ops count one FLOP each under both.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerKind, ModelGraph, SkipMerge};
use crate::tensor::{Real, Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopConvention {
    /// FLOPs = MACs + other ops.
    MacIsOneFlop,
    /// FLOPs = 2·MACs + other ops.
    MacIsTwoFlops,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub stage: String,
    pub output: Shape4,
    pub params: u64,
    pub macs: u64,
    pub other_ops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub model: String,
    pub input: Shape4,
    pub layers: Vec<LayerCost>,
    pub params: u64,
    pub macs: u64,
    pub other_ops: u64,
}

impl CostReport {
    pub fn flops(&self, convention: FlopConvention) -> u64 {
        match convention {
            FlopConvention::MacIsOneFlop => self.macs + self.other_ops,
            FlopConvention::MacIsTwoFlops => 2 * self.macs + self.other_ops,
        }
    }

    pub fn gflops(&self, convention: FlopConvention) -> f64 {
        self.flops(convention) as f64 / 1e9
    }
}

/// Total element count of all parameters, including biases and affine terms.
pub fn count_params<T: Real>(graph: &ModelGraph<T>) -> u64 {
    graph.param_count() as u64
}

pub fn count_flops<T: Real>(graph: &ModelGraph<T>, input: Shape4) -> Result<CostReport> {
    let shapes = graph.infer_shapes(input)?;
    let numel = |id| graph.params.value(id).numel() as u64;
    let mut layers = Vec::with_capacity(graph.layers.len());
    for (layer, &out) in graph.layers.iter().zip(&shapes) {
        let hw = (out.h * out.w * out.n) as u64;
        let all = out.numel() as u64;
        let (params, macs, other) = match &layer.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                weight,
                bias,
                ..
            } => (
                numel(*weight) + numel(*bias),
                (kernel * kernel * in_channels * out_channels) as u64 * hw,
                *out_channels as u64 * hw,
            ),
            LayerKind::TransposedConv2x2 {
                in_channels,
                out_channels,
                weight,
                bias,
            } => (
                numel(*weight) + numel(*bias),
                (in_channels * out_channels) as u64 * hw,
                *out_channels as u64 * hw,
            ),
            LayerKind::MaxPool2x2 => (0, 0, 3 * all),
            LayerKind::Upsample2x | LayerKind::SaveSkip { .. } => (0, 0, 0),
            LayerKind::GroupNorm { gamma, beta, .. } => (numel(*gamma) + numel(*beta), 0, 5 * all),
            LayerKind::Relu => (0, 0, all),
            LayerKind::SqueezeExcite {
                channels,
                reduced,
                params: se,
            } => {
                let (c, r, n) = (*channels as u64, *reduced as u64, out.n as u64);
                (
                    numel(se.fc1_weight) + numel(se.fc1_bias) + numel(se.fc2_weight) + numel(se.fc2_bias),
                    2 * c * r * n,
                    2 * all + (r + c + r + 4 * c) * n,
                )
            }
            LayerKind::MergeSkip { mode, .. } => match mode {
                SkipMerge::Add => (0, 0, all),
                SkipMerge::Concat => (0, 0, 0),
            },
        };
        layers.push(LayerCost {
            name: layer.name.clone(),
            stage: layer.stage.to_string(),
            output: out,
            params,
            macs,
            other_ops: other,
        });
    }
    Ok(CostReport {
        model: graph.name.clone(),
        input,
        params: layers.iter().map(|l| l.params).sum(),
        macs: layers.iter().map(|l| l.macs).sum(),
        other_ops: layers.iter().map(|l| l.other_ops).sum(),
        layers,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpsReport {
    pub model: String,
    pub warmup_frames: usize,
    pub frames: usize,
    pub elapsed_seconds: f64,
    pub fps: f64,
    pub latency_ms_p50: f64,
    pub latency_ms_p90: f64,
    pub latency_ms_p99: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Runs `frame` `warmup` times, then repeatedly until `duration` has
/// elapsed. Only post-warmup frames are counted.
pub fn measure_fps(
    model: &str,
    duration: Duration,
    warmup: usize,
    mut frame: impl FnMut() -> Result<()>,
) -> Result<FpsReport> {
    if duration < Duration::from_secs(1) {
        return Err(Error::invalid("measure_fps", format!("duration {duration:?} below 1 s")));
    }
    if warmup < 10 {
        return Err(Error::invalid("measure_fps", format!("warmup of {warmup} frames below 10")));
    }
    for _ in 0..warmup {
        frame()?;
    }
    let mut lat = Vec::new();
    let start = Instant::now();
    while start.elapsed() < duration {
        let t = Instant::now();
        frame()?;
        lat.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let frames = lat.len();
    lat.sort_by(f64::total_cmp);
    Ok(FpsReport {
        model: model.to_string(),
        warmup_frames: warmup,
        frames,
        elapsed_seconds: elapsed,
        fps: frames as f64 / elapsed,
        latency_ms_p50: percentile(&lat, 0.5),
        latency_ms_p90: percentile(&lat, 0.9),
        latency_ms_p99: percentile(&lat, 0.99),
    })
}

/// Batch-1 inference throughput on one fixed random input of `input` shape.
pub fn measure_model_fps(graph: &ModelGraph<f32>, input: Shape4, duration: Duration, warmup: usize) -> Result<FpsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dist = Uniform::new(0.0f32, 1.0).expect("valid range");
    let x = Tensor4::from_fn(input, |_, _, _, _| dist.sample(&mut rng));
    graph.infer_shapes(input)?;
    measure_fps(&graph.name, duration, warmup, || graph.forward(&x).map(|_| ()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GraphBuilder, Stage};

    fn single_conv(cin: usize, cout: usize, k: usize, side: usize) -> ModelGraph<f32> {
        let mut b = GraphBuilder::<f32>::new("one", 0);
        b.stage(Stage::Encoder(1));
        b.conv("c", cin, cout, k).unwrap();
        b.finish(Shape4::new(1, cin, side, side), Shape4::new(1, cout, side, side)).unwrap()
    }

    #[test]
    fn single_conv_param_count() {
        assert_eq!(count_params(&single_conv(1, 24, 3, 8)), 240);
    }

    #[test]
    fn pointwise_conv_macs() {
        let r = count_flops(&single_conv(2, 3, 1, 4), Shape4::new(1, 2, 4, 4)).unwrap();
        assert_eq!(r.macs, 96);
        assert_eq!(r.other_ops, 48);
        assert_eq!(r.flops(FlopConvention::MacIsTwoFlops), 2 * 96 + 48);
    }

    #[test]
    fn short_durations_are_rejected() {
        assert!(measure_fps("x", Duration::from_millis(500), 10, || Ok(())).is_err());
        assert!(measure_fps("x", Duration::from_secs(1), 3, || Ok(())).is_err());
    }
}
