//! The gradient-check cases, shared by the gradient tests and the
//! acceptance harness. Each returns `(label, (f64 error, f32 error))` rows.

use super::{binary, check_seeds, distinct, off_kink, rng, uniform, Case};
use rand::Rng;
use ultraseg::autodiff::{Exec, FocalParams, SeParams};
use ultraseg::model::{build_denoiser, build_ultraunet, DenoiserConfig, UltraUNetConfig, Upsampling};
use ultraseg::tensor::{Real, Shape4, Tensor4};
use ultraseg::train::{record_loss, LossConfig};

const SEEDS: u64 = 20;

fn s(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
    Shape4::new(n, c, h, w)
}

fn target_of<T: Real>(tape: &ultraseg::autodiff::Tape<'_, T>, v: ultraseg::autodiff::Var) -> Tensor4<T> {
    tape.value(v).clone()
}

pub fn conv2d_all_geometries() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 2, 0), (3, 1, 0)] {
        let errs = check_seeds(SEEDS, 12, |seed| {
            let mut r = rng(seed);
            let case = Case::new(vec![
                uniform(&mut r, s(2, 3, 7, 6), -1.0, 1.0),
                uniform(&mut r, s(4, 3, k, k), -0.5, 0.5),
                uniform(&mut r, s(1, 4, 1, 1), -0.5, 0.5),
            ]);
            struct Conv(usize, usize);
            impl super::Recorder for Conv {
                fn record<T: Real>(
                    &self,
                    t: &mut ultraseg::autodiff::Tape<'_, T>,
                    x: &[ultraseg::autodiff::Var],
                    _: &[ultraseg::autodiff::ParamId],
                ) -> ultraseg::Result<ultraseg::autodiff::Var> {
                    t.conv2d_var(x[0], x[1], Some(x[2]), self.0, self.1)
                }
            }
            (Conv(stride, pad), case)
        });
        out.push((format!("conv k{k} s{stride} p{pad}").to_string(), errs));
    }
    out
}

pub fn conv2d_parameter_path() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    let errs = check_seeds(SEEDS, 12, |seed| {
        let mut r = rng(seed);
        let case = Case::new(vec![uniform(&mut r, s(1, 2, 5, 5), -1.0, 1.0)])
            .with_param("w", uniform(&mut r, s(3, 2, 3, 3), -0.5, 0.5))
            .with_param("b", uniform(&mut r, s(1, 3, 1, 1), -0.5, 0.5));
        (recorder!(|t, x, p| t.conv2d(&x[0], p[0], Some(p[1]), 1, 1)), case)
    });
    out.push(("conv2d (params)".to_string(), errs));
    out
}

pub fn transposed_conv() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    let errs = check_seeds(SEEDS, 12, |seed| {
        let mut r = rng(seed);
        let case = Case::new(vec![
            uniform(&mut r, s(2, 3, 3, 4), -1.0, 1.0),
            uniform(&mut r, s(3, 2, 2, 2), -0.5, 0.5),
            uniform(&mut r, s(1, 2, 1, 1), -0.5, 0.5),
        ]);
        (recorder!(|t, x, p| t.conv_transpose2x2_var(x[0], x[1], Some(x[2]))), case)
    });
    out.push(("transposed conv".to_string(), errs));
    out
}

pub fn max_pool() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    let errs = check_seeds(SEEDS, 16, |seed| {
        let mut r = rng(seed);
        (recorder!(|t, x, p| t.max_pool2x2(&x[0])), Case::new(vec![distinct(&mut r, s(2, 2, 6, 6))]))
    });
    out.push(("max pool".to_string(), errs));
    out
}

pub fn upsample() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    let errs = check_seeds(SEEDS, 16, |seed| {
        let mut r = rng(seed);
        (recorder!(|t, x, p| t.upsample2x(&x[0])), Case::new(vec![uniform(&mut r, s(2, 2, 3, 4), -1.0, 1.0)]))
    });
    out.push(("upsample".to_string(), errs));
    out
}

pub fn group_norm() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    for groups in [1, 2, 4] {
        let errs = check_seeds(SEEDS, 16, |seed| {
            let mut r = rng(seed);
            let case = Case::new(vec![uniform(&mut r, s(2, 4, 3, 3), -2.0, 2.0)])
                .with_param("g", uniform(&mut r, s(1, 4, 1, 1), 0.5, 1.5))
                .with_param("b", uniform(&mut r, s(1, 4, 1, 1), -0.5, 0.5));
            struct Gn(usize);
            impl super::Recorder for Gn {
                fn record<T: Real>(
                    &self,
                    t: &mut ultraseg::autodiff::Tape<'_, T>,
                    x: &[ultraseg::autodiff::Var],
                    p: &[ultraseg::autodiff::ParamId],
                ) -> ultraseg::Result<ultraseg::autodiff::Var> {
                    t.group_norm(&x[0], self.0, p[0], p[1], 1e-5)
                }
            }
            (Gn(groups), case)
        });
        out.push((format!("group norm g{groups}").to_string(), errs));
    }
    out
}

pub fn relu_sigmoid_pointwise() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    let errs = check_seeds(SEEDS, 16, |seed| {
        let mut r = rng(seed);
        (recorder!(|t, x, p| Ok(t.relu(x[0]))), Case::new(vec![off_kink(&mut r, s(2, 3, 4, 4))]))
    });
    out.push(("relu".to_string(), errs));
    let errs = check_seeds(SEEDS, 16, |seed| {
        let mut r = rng(seed);
        (recorder!(|t, x, p| Ok(t.sigmoid(x[0]))), Case::new(vec![uniform(&mut r, s(2, 3, 4, 4), -4.0, 4.0)]))
    });
    out.push(("sigmoid".to_string(), errs));
    out
}

pub fn add_concat_mul_scale_sum() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    let errs = check_seeds(SEEDS, 16, |seed| {
        let mut r = rng(seed);
        let case = Case::new(vec![
            uniform(&mut r, s(2, 3, 3, 3), -1.0, 1.0),
            uniform(&mut r, s(2, 3, 3, 3), -1.0, 1.0),
        ]);
        (
            recorder!(|t, x, p| {
                let a = t.add(x[0], &x[1])?;
                let c = t.concat(&a, &x[1])?;
                let m = t.mul(c, c)?;
                let k = t.scale(m, T::of(0.7));
                Ok(t.sum(k))
            }),
            case,
        )
    });
    out.push(("add/concat/mul/scale/sum".to_string(), errs));
    out
}

pub fn pooling_and_channel_scaling() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    let errs = check_seeds(SEEDS, 16, |seed| {
        let mut r = rng(seed);
        let case = Case::new(vec![
            uniform(&mut r, s(2, 3, 4, 4), -1.0, 1.0),
            uniform(&mut r, s(2, 3, 1, 1), 0.1, 1.0),
        ]);
        (
            recorder!(|t, x, p| {
                let g = t.global_avg_pool(&x[0]);
                let y = t.scale_channels(x[0], &x[1])?;
                let z = t.scale_channels(y, &g)?;
                Ok(z)
            }),
            case,
        )
    });
    out.push(("global pool / channel scale".to_string(), errs));
    out
}

pub fn squeeze_excite_gate() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    let errs = check_seeds(SEEDS, 12, |seed| {
        let mut r = rng(seed);
        let case = Case::new(vec![uniform(&mut r, s(2, 8, 3, 3), -1.0, 1.0)])
            .with_param("fc1.w", uniform(&mut r, s(2, 8, 1, 1), -0.8, 0.8))
            .with_param("fc1.b", off_kink(&mut r, s(1, 2, 1, 1)))
            .with_param("fc2.w", uniform(&mut r, s(8, 2, 1, 1), -0.8, 0.8))
            .with_param("fc2.b", uniform(&mut r, s(1, 8, 1, 1), -0.5, 0.5));
        (
            recorder!(|t, x, p| {
                let se = SeParams {
                    fc1_weight: p[0],
                    fc1_bias: p[1],
                    fc2_weight: p[2],
                    fc2_bias: p[3],
                };
                t.se_gate(x[0], &se)
            }),
            case,
        )
    });
    out.push(("squeeze-excite".to_string(), errs));
    out
}

pub fn losses() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    // the second input is the (constant) target; its gradient is not used
    let make = |seed: u64| {
        let mut r = rng(seed);
        Case::new(vec![
            uniform(&mut r, s(2, 1, 4, 4), 0.05, 0.95),
            binary(&mut r, s(2, 1, 4, 4)),
        ])
        .with_constants(1)
    };
    let dice = check_seeds(SEEDS, 16, |seed| {
        (
            recorder!(|t, x, p| {
                let target = target_of(t, x[1]);
                t.dice_loss(x[0], &target, 1e-6)
            }),
            make(seed),
        )
    });
    out.push(("dice loss".to_string(), dice));
    for balanced in [false, true] {
        struct Focal(bool);
        impl super::Recorder for Focal {
            fn record<T: Real>(
                &self,
                t: &mut ultraseg::autodiff::Tape<'_, T>,
                x: &[ultraseg::autodiff::Var],
                _: &[ultraseg::autodiff::ParamId],
            ) -> ultraseg::Result<ultraseg::autodiff::Var> {
                let target = target_of(t, x[1]);
                let params = FocalParams {
                    alpha: 0.25,
                    gamma: 2.0,
                    class_balanced: self.0,
                };
                t.focal_loss(x[0], &target, params)
            }
        }
        let focal = check_seeds(SEEDS, 16, |seed| (Focal(balanced), make(seed)));
        out.push((format!("focal loss (balanced {balanced})").to_string(), focal));
    }
    let mse = check_seeds(SEEDS, 16, |seed| {
        (
            recorder!(|t, x, p| {
                let target = target_of(t, x[1]);
                t.mse_loss(x[0], &target)
            }),
            make(seed),
        )
    });
    out.push(("mse loss".to_string(), mse));
    out
}

pub fn combined_loss_on_logits() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    let errs = check_seeds(SEEDS, 16, |seed| {
        let mut r = rng(seed);
        let case = Case::new(vec![
            uniform(&mut r, s(3, 1, 5, 5), -3.0, 3.0),
            binary(&mut r, s(3, 1, 5, 5)),
        ])
        .with_constants(1);
        (
            recorder!(|t, x, p| {
                let target = target_of(t, x[1]);
                record_loss(t, x[0], &target, &LossConfig::default())
            }),
            case,
        )
    });
    out.push(("combined loss".to_string(), errs));
    out
}

/// Builder weights for `seed` with biases and norm shifts drawn from
/// ±0.1, so no pre-activation sits exactly on a ReLU kink.
fn jitter_biases(params: &mut ultraseg::autodiff::ParamStore<f64>, seed: u64) {
    let mut r = rng(seed ^ 0xb1a5);
    for p in params.iter_mut() {
        if p.name.ends_with("bias") || p.name.ends_with("beta") {
            for v in p.value.data_mut() {
                *v = r.random_range(-0.1..0.1);
            }
        }
    }
}

struct Whole(UltraUNetConfig, u64);

impl super::Recorder for Whole {
    fn record<T: Real>(
        &self,
        t: &mut ultraseg::autodiff::Tape<'_, T>,
        x: &[ultraseg::autodiff::Var],
        _: &[ultraseg::autodiff::ParamId],
    ) -> ultraseg::Result<ultraseg::autodiff::Var> {
        // same config and seed, hence the same parameter ids as the store the tape reads
        let g = build_ultraunet::<T>(&self.0, self.1)?;
        let logits = g.run(t, x[0])?;
        let target = target_of(t, x[1]);
        record_loss(t, logits, &target, &LossConfig::default())
    }
}

pub fn miniature_ultraunet_end_to_end() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    for upsampling in [Upsampling::NearestConv3x3, Upsampling::TransposedConv2x2] {
        let cfg = UltraUNetConfig {
            upsampling,
            ..UltraUNetConfig::miniature(3, 4)
        };
        let errs = check_seeds(SEEDS, 3, |seed| {
            let mut r = rng(seed);
            let mut g = build_ultraunet::<f64>(&cfg, seed).unwrap();
            jitter_biases(&mut g.params, seed);
            let mut case =
                Case::new(vec![uniform(&mut r, s(2, 1, 8, 8), 0.0, 1.0), binary(&mut r, s(2, 1, 8, 8))]).with_constants(1);
            case.params = g.params;
            (Whole(cfg.clone(), seed), case)
        });
        out.push((format!("miniature UltraUNet ({upsampling:?})").to_string(), errs));
    }
    out
}

struct Denoiser(u64);

impl super::Recorder for Denoiser {
    fn record<T: Real>(
        &self,
        t: &mut ultraseg::autodiff::Tape<'_, T>,
        x: &[ultraseg::autodiff::Var],
        _: &[ultraseg::autodiff::ParamId],
    ) -> ultraseg::Result<ultraseg::autodiff::Var> {
        let g = build_denoiser::<T>(&denoiser_cfg(), self.0)?;
        let out = g.run(t, x[0])?;
        let target = target_of(t, x[1]);
        t.mse_loss(out, &target)
    }
}

fn denoiser_cfg() -> DenoiserConfig {
    DenoiserConfig {
        channels: vec![2, 4],
        residual: true,
    }
}

pub fn concat_skip_denoiser_end_to_end() -> Vec<(String, (f64, f64))> {
    let mut out = Vec::new();
    let errs = check_seeds(SEEDS, 3, |seed| {
        let mut r = rng(seed);
        let mut g = build_denoiser::<f64>(&denoiser_cfg(), seed).unwrap();
        jitter_biases(&mut g.params, seed);
        let mut case =
            Case::new(vec![uniform(&mut r, s(1, 1, 8, 8), 0.0, 1.0), uniform(&mut r, s(1, 1, 8, 8), 0.0, 1.0)]).with_constants(1);
        case.params = g.params;
        (Denoiser(seed), case)
    });
    out.push(("denoiser".to_string(), errs));
    out
}

/// Every case, in the order above.
pub const ALL: &[fn() -> Vec<(String, (f64, f64))>] = &[
    conv2d_all_geometries,
    conv2d_parameter_path,
    transposed_conv,
    max_pool,
    upsample,
    group_norm,
    relu_sigmoid_pointwise,
    add_concat_mul_scale_sum,
    pooling_and_channel_scaling,
    squeeze_excite_gate,
    losses,
    combined_loss_on_logits,
    miniature_ultraunet_end_to_end,
    concat_skip_denoiser_end_to_end,
];
