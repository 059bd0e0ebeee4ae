use serde::{Deserialize, Serialize};

use super::{ultraunet::probe_side, GraphBuilder, ModelGraph, SkipMerge, Stage};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape4};

/// Classical UNet: two 3x3 conv + ReLU per block, max-pool downsampling,
/// 2x2 transposed-conv upsampling and concatenation skips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefUNetConfig {
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub out_channels: usize,
}

impl Default for RefUNetConfig {
    fn default() -> Self {
        RefUNetConfig {
            in_channels: 1,
            channels: vec![64, 128, 256, 512, 1024],
            out_channels: 1,
        }
    }
}

/// Reduced UNet used as a learned denoiser. The head is linear; with
/// `residual` the network predicts a correction that is added to its input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub channels: Vec<usize>,
    pub residual: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            channels: vec![16, 32, 64],
            residual: true,
        }
    }
}

fn check_plan(what: &str, channels: &[usize], in_channels: usize, out_channels: usize) -> Result<()> {
    if channels.len() < 2 {
        return Err(Error::Config(format!("{what}: need at least two stages, got {}", channels.len())));
    }
    if channels.contains(&0) || in_channels == 0 || out_channels == 0 {
        return Err(Error::Config(format!("{what}: channel counts must be positive")));
    }
    Ok(())
}

fn classical<T: Real>(
    b: &mut GraphBuilder<T>,
    in_channels: usize,
    channels: &[usize],
    out_channels: usize,
) -> Result<()> {
    let depth = channels.len();
    let mut c_prev = in_channels;
    for s in 1..=depth {
        let c = channels[s - 1];
        b.stage(Stage::Encoder(s));
        b.conv(&format!("enc{s}.conv1"), c_prev, c, 3)?.relu(&format!("enc{s}.relu1"));
        b.conv(&format!("enc{s}.conv2"), c, c, 3)?.relu(&format!("enc{s}.relu2"));
        if s < depth {
            b.save_skip(&format!("enc{s}.skip"), s).max_pool(&format!("enc{s}.pool"));
        }
        c_prev = c;
    }
    for j in 1..depth {
        let target = depth - j;
        let c = channels[target - 1];
        b.stage(Stage::Decoder(j));
        b.transposed_conv(&format!("dec{j}.up"), c_prev, c)?;
        b.merge_skip(&format!("dec{j}.skip"), target, SkipMerge::Concat);
        b.conv(&format!("dec{j}.conv1"), 2 * c, c, 3)?.relu(&format!("dec{j}.relu1"));
        b.conv(&format!("dec{j}.conv2"), c, c, 3)?.relu(&format!("dec{j}.relu2"));
        c_prev = c;
    }
    b.stage(Stage::Head);
    b.conv("head", c_prev, out_channels, 1)?;
    Ok(())
}

pub fn build_ref_unet<T: Real>(cfg: &RefUNetConfig, seed: u64) -> Result<ModelGraph<T>> {
    check_plan("UNet", &cfg.channels, cfg.in_channels, cfg.out_channels)?;
    let mut b = GraphBuilder::new("unet", seed);
    classical(&mut b, cfg.in_channels, &cfg.channels, cfg.out_channels)?;
    let side = probe_side(cfg.channels.len());
    b.finish(
        Shape4::new(1, cfg.in_channels, side, side),
        Shape4::new(1, cfg.out_channels, side, side),
    )
}

pub fn build_denoiser<T: Real>(cfg: &DenoiserConfig, seed: u64) -> Result<ModelGraph<T>> {
    check_plan("denoiser", &cfg.channels, 1, 1)?;
    let mut b = GraphBuilder::new("denoiser", seed);
    if cfg.residual {
        b.save_skip("input.skip", 0);
    }
    classical(&mut b, 1, &cfg.channels, 1)?;
    if cfg.residual {
        b.merge_skip("residual", 0, SkipMerge::Add);
    }
    let side = probe_side(cfg.channels.len());
    b.finish(Shape4::new(1, 1, side, side), Shape4::new(1, 1, side, side))
}
