use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{GraphBuilder, ModelGraph, SkipMerge, Stage};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape4};

/// How decoder blocks double spatial resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsampling {
    /// Nearest-neighbour 2x upsampling followed by a 3x3 convolution and ReLU.
    NearestConv3x3,
    /// 2x2 stride-2 transposed convolution.
    TransposedConv2x2,
}

/// UltraUNet hyper-parameters.
///
/// Stage numbering: encoder stage 1 is the full-resolution block and stage
/// `depth` the bottleneck. Decoder stage `j` is the `j`-th decoder block after
/// the bottleneck; it upsamples to the resolution of encoder stage
/// `depth - j` and sums in that stage's output.
///
/// The defaults are the calibrated layout: two convolutions per block, upsample + 3x3 convolution in the
/// decoder, squeeze-and-excitation on the two deepest stages of each path and
/// group normalisation on the two deepest encoder stages. This lands at
/// 4,446,415 parameters and about 6.0 GMACs for a 1x1x224x224 input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UltraUNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub se_encoder_stages: BTreeSet<usize>,
    pub se_decoder_stages: BTreeSet<usize>,
    pub gn_encoder_stages: BTreeSet<usize>,
    pub se_reduction: usize,
    pub gn_groups: usize,
    pub gn_eps: f64,
    pub out_channels: usize,
    pub convs_per_block: usize,
    pub upsampling: Upsampling,
}

impl Default for UltraUNetConfig {
    fn default() -> Self {
        UltraUNetConfig {
            in_channels: 1,
            base_channels: 24,
            depth: 5,
            se_encoder_stages: [4, 5].into(),
            se_decoder_stages: [1, 2].into(),
            gn_encoder_stages: [4, 5].into(),
            se_reduction: 16,
            gn_groups: 8,
            gn_eps: 1e-5,
            out_channels: 1,
            convs_per_block: 2,
            upsampling: Upsampling::NearestConv3x3,
        }
    }
}

impl UltraUNetConfig {
    /// Small configuration for gradient checks and fast tests.
    pub fn miniature(depth: usize, base_channels: usize) -> Self {
        UltraUNetConfig {
            base_channels,
            depth,
            se_encoder_stages: [depth].into(),
            se_decoder_stages: [1].into(),
            gn_encoder_stages: [depth].into(),
            se_reduction: 4,
            gn_groups: 2,
            ..Self::default()
        }
    }

    /// Output channels of each encoder stage: `base · 2^i`.
    pub fn channel_plan(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.base_channels << i).collect()
    }

    /// Channels of decoder stage `j` (1-based).
    pub fn decoder_channels(&self, j: usize) -> usize {
        self.channel_plan()[self.depth - j - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("UltraUNet: {m}")));
        if self.depth < 2 {
            return fail(format!("depth must be at least 2, got {}", self.depth));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.base_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.convs_per_block == 0 {
            return fail("convs_per_block must be positive".into());
        }
        if !(self.gn_eps > 0.0) {
            return fail("gn_eps must be positive".into());
        }
        let plan = self.channel_plan();
        for &s in &self.se_encoder_stages {
            if s == 0 || s > self.depth {
                return fail(format!("SE encoder stage {s} outside 1..={}", self.depth));
            }
            if self.se_reduction == 0 || plan[s - 1] % self.se_reduction != 0 {
                return fail(format!(
                    "SE encoder stage {s}: {} channels not divisible by r = {}",
                    plan[s - 1],
                    self.se_reduction
                ));
            }
        }
        for &j in &self.se_decoder_stages {
            if j == 0 || j >= self.depth {
                return fail(format!("SE decoder stage {j} outside 1..={}", self.depth - 1));
            }
            let c = self.decoder_channels(j);
            if self.se_reduction == 0 || c % self.se_reduction != 0 {
                return fail(format!(
                    "SE decoder stage {j}: {c} channels not divisible by r = {}",
                    self.se_reduction
                ));
            }
        }
        for &s in &self.gn_encoder_stages {
            if s == 0 || s > self.depth {
                return fail(format!("GN encoder stage {s} outside 1..={}", self.depth));
            }
            if self.gn_groups == 0 || plan[s - 1] % self.gn_groups != 0 {
                return fail(format!(
                    "GN encoder stage {s}: {} channels not divisible into {} groups",
                    plan[s - 1],
                    self.gn_groups
                ));
            }
        }
        Ok(())
    }
}

/// Builds UltraUNet with deterministic initialisation from `seed`. The graph
/// is checked to map `1x in x 224x224` to `1x out x 224x224` (or the nearest
/// valid size for very deep configurations).
pub fn build_ultraunet<T: Real>(cfg: &UltraUNetConfig, seed: u64) -> Result<ModelGraph<T>> {
    cfg.validate()?;
    let plan = cfg.channel_plan();
    let mut b = GraphBuilder::<T>::new("ultraunet", seed);

    let mut c_prev = cfg.in_channels;
    for s in 1..=cfg.depth {
        let c = plan[s - 1];
        b.stage(Stage::Encoder(s));
        for i in 1..=cfg.convs_per_block {
            let cin = if i == 1 { c_prev } else { c };
            b.conv(&format!("enc{s}.conv{i}"), cin, c, 3)?;
            if cfg.gn_encoder_stages.contains(&s) {
                b.group_norm(&format!("enc{s}.gn{i}"), c, cfg.gn_groups, cfg.gn_eps)?;
            }
            b.relu(&format!("enc{s}.relu{i}"));
        }
        if cfg.se_encoder_stages.contains(&s) {
            b.squeeze_excite(&format!("enc{s}.se"), c, cfg.se_reduction)?;
        }
        if s < cfg.depth {
            b.save_skip(&format!("enc{s}.skip"), s);
            b.max_pool(&format!("enc{s}.pool"));
        }
        c_prev = c;
    }

    for j in 1..cfg.depth {
        let target = cfg.depth - j;
        let c = plan[target - 1];
        b.stage(Stage::Decoder(j));
        match cfg.upsampling {
            Upsampling::NearestConv3x3 => {
                b.upsample(&format!("dec{j}.upsample"));
                b.conv(&format!("dec{j}.up"), c_prev, c, 3)?;
                b.relu(&format!("dec{j}.up_relu"));
            }
            Upsampling::TransposedConv2x2 => {
                b.transposed_conv(&format!("dec{j}.up"), c_prev, c)?;
            }
        }
        b.merge_skip(&format!("dec{j}.skip"), target, SkipMerge::Add);
        for i in 1..=cfg.convs_per_block {
            b.conv(&format!("dec{j}.conv{i}"), c, c, 3)?;
            b.relu(&format!("dec{j}.relu{i}"));
        }
        if cfg.se_decoder_stages.contains(&j) {
            b.squeeze_excite(&format!("dec{j}.se"), c, cfg.se_reduction)?;
        }
        c_prev = c;
    }

    b.stage(Stage::Head);
    b.conv("head", c_prev, cfg.out_channels, 1)?;

    let side = probe_side(cfg.depth);
    b.finish(
        Shape4::new(1, cfg.in_channels, side, side),
        Shape4::new(1, cfg.out_channels, side, side),
    )
}

/// 224 when it is compatible with the pooling depth, otherwise the smallest
/// multiple of `2^(depth-1)` that is at least 224.
pub(crate) fn probe_side(depth: usize) -> usize {
    let d = 1usize << (depth - 1);
    224usize.div_ceil(d) * d
}
