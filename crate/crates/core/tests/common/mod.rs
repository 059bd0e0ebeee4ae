//! Finite-difference gradient checking shared by the gradient tests and the
//! acceptance harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ultraseg::autodiff::{ParamId, ParamStore, Tape, Var};
use ultraseg::tensor::{Real, Shape4, Tensor4};
use ultraseg::Result;

/// A computation recorded generically so it can be replayed at any precision.
pub trait Recorder {
    fn record<T: Real>(&self, tape: &mut Tape<'_, T>, x: &[Var], p: &[ParamId]) -> Result<Var>;
}

/// Builds an anonymous [`Recorder`] from a body over `tape`, inputs and param ids.
#[macro_export]
macro_rules! recorder {
    (|$t:ident, $x:ident, $p:ident| $body:expr) => {{
        struct Anon;
        impl $crate::common::Recorder for Anon {
            #[allow(unused_variables)]
            fn record<T: ultraseg::tensor::Real>(
                &self,
                $t: &mut ultraseg::autodiff::Tape<'_, T>,
                $x: &[ultraseg::autodiff::Var],
                $p: &[ultraseg::autodiff::ParamId],
            ) -> ultraseg::Result<ultraseg::autodiff::Var> {
                $body
            }
        }
        Anon
    }};
}

/// Inputs and parameters at which a gradient is checked (held in f64).
#[derive(Clone)]
pub struct Case {
    pub inputs: Vec<Tensor4<f64>>,
    pub params: ParamStore<f64>,
    pub ids: Vec<ParamId>,
    /// Trailing inputs that are constants (targets) and are not checked.
    pub constants: usize,
}

impl Case {
    pub fn new(inputs: Vec<Tensor4<f64>>) -> Self {
        Case {
            inputs,
            params: ParamStore::new(),
            ids: Vec::new(),
            constants: 0,
        }
    }

    pub fn with_constants(mut self, n: usize) -> Self {
        self.constants = n;
        self
    }

    pub fn with_param(mut self, name: &str, value: Tensor4<f64>) -> Self {
        let id = self.params.add(name, value).expect("unique name");
        self.ids.push(id);
        self
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, shape: Shape4, lo: f64, hi: f64) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| r.random_range(lo..hi))
}

/// Values with magnitude in `[0.1, 1)` and random sign: away from ReLU's kink.
pub fn off_kink(r: &mut ChaCha8Rng, shape: Shape4) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| {
        let m = r.random_range(0.1..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// A random permutation of evenly spaced values: no ties for max-pooling.
pub fn distinct(r: &mut ChaCha8Rng, shape: Shape4) -> Tensor4<f64> {
    use rand::seq::SliceRandom;
    let n = shape.numel();
    let mut v: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
    v.shuffle(r);
    Tensor4::from_vec(shape, v).unwrap()
}

pub fn binary(r: &mut ChaCha8Rng, shape: Shape4) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| if r.random_bool(0.4) { 1.0 } else { 0.0 })
}

/// Records `rec`, reducing a non-scalar output to `Σ out ⊙ proj`.
fn scalar_root<T: Real>(
    tape: &mut Tape<'_, T>,
    rec: &impl Recorder,
    inputs: &[Tensor4<T>],
    ids: &[ParamId],
    proj: Option<&Tensor4<T>>,
) -> Result<(Vec<Var>, Var)> {
    let xs: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = rec.record(tape, &xs, ids)?;
    let root = match proj {
        Some(p) if tape.value(out).numel() != 1 => {
            let pv = tape.input(p.clone());
            let m = tape.mul(out, pv)?;
            tape.sum(m)
        }
        _ => out,
    };
    Ok((xs, root))
}

fn eval_f64(rec: &impl Recorder, case: &Case, inputs: &[Tensor4<f64>], params: &ParamStore<f64>, proj: Option<&Tensor4<f64>>) -> f64 {
    let mut tape = Tape::new(params);
    let (_, root) = scalar_root(&mut tape, rec, inputs, &case.ids, proj).expect("forward");
    tape.value(root).item().unwrap()
}

#[derive(Clone, Copy, Debug)]
pub struct CheckReport {
    /// Largest per-tensor `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.
    pub max_rel_err: f64,
    pub coords: usize,
}

/// Compares the analytic gradient computed in precision `T` with central
/// differences computed in f64, on up to `per_tensor` randomly chosen
/// coordinates of every input and parameter.
pub fn check<T: Real>(rec: &impl Recorder, case: &Case, seed: u64, per_tensor: usize) -> CheckReport {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let out_shape = {
        let mut tape = Tape::new(&case.params);
        let xs: Vec<Var> = case.inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = rec.record(&mut tape, &xs, &case.ids).expect("forward");
        tape.value(out).shape()
    };
    let proj = (out_shape.numel() != 1).then(|| uniform(&mut r, out_shape, -1.0, 1.0));

    // analytic
    let params_t: ParamStore<T> = case.params.cast();
    let inputs_t: Vec<Tensor4<T>> = case.inputs.iter().map(|t| t.cast()).collect();
    let proj_t = proj.as_ref().map(|p| p.cast::<T>());
    let mut tape = Tape::new(&params_t);
    let (xs, root) = scalar_root(&mut tape, rec, &inputs_t, &case.ids, proj_t.as_ref()).expect("forward");
    let grads = tape.backward(root).expect("backward");

    let h: f64 = std::env::var("GRADCHECK_H").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-6);
    let mut worst = 0.0f64;
    let mut coords = 0;
    let mut compare = |label: &str, analytic: Vec<f64>, numeric: Vec<f64>| {
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel = if scale < 1e-10 { diff } else { diff / scale };
        if rel > 1e-3 && std::env::var("GRADCHECK_DEBUG").is_ok() {
            eprintln!("seed {seed} {label}: rel {rel:e}: analytic {analytic:?} numeric {numeric:?}");
        }
        worst = worst.max(rel);
        coords += analytic.len();
    };

    for (k, x) in xs.iter().enumerate().take(xs.len() - case.constants) {
        let n = case.inputs[k].numel();
        let pick = sample_coords(&mut r, n, per_tensor);
        let g = grads.input(*x);
        let analytic: Vec<f64> = pick.iter().map(|&i| g.map(|g| g.data()[i].as_f64()).unwrap_or(0.0)).collect();
        let numeric: Vec<f64> = pick
            .iter()
            .map(|&i| {
                let mut plus = case.inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = case.inputs.clone();
                minus[k].data_mut()[i] -= h;
                (eval_f64(rec, case, &plus, &case.params, proj.as_ref()) - eval_f64(rec, case, &minus, &case.params, proj.as_ref()))
                    / (2.0 * h)
            })
            .collect();
        compare(&format!("input {k}"), analytic, numeric);
    }
    for (id, p) in case.params.iter() {
        let n = p.value.numel();
        let pick = sample_coords(&mut r, n, per_tensor);
        let g = grads.param(id);
        let analytic: Vec<f64> = pick.iter().map(|&i| g.map(|g| g.data()[i].as_f64()).unwrap_or(0.0)).collect();
        let numeric: Vec<f64> = pick
            .iter()
            .map(|&i| {
                let mut plus = case.params.clone();
                plus.get_mut(id).value.data_mut()[i] += h;
                let mut minus = case.params.clone();
                minus.get_mut(id).value.data_mut()[i] -= h;
                (eval_f64(rec, case, &case.inputs, &plus, proj.as_ref()) - eval_f64(rec, case, &case.inputs, &minus, proj.as_ref()))
                    / (2.0 * h)
            })
            .collect();
        compare(&p.name, analytic, numeric);
    }
    CheckReport {
        max_rel_err: worst,
        coords,
    }
}

fn sample_coords(r: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    rand::seq::index::sample(r, n, k).into_vec()
}

/// Worst relative error over `seeds`, at f64 and at f32.
pub fn check_seeds<R: Recorder>(seeds: u64, per_tensor: usize, mut make: impl FnMut(u64) -> (R, Case)) -> (f64, f64) {
    let (mut w64, mut w32) = (0.0f64, 0.0f64);
    for s in 0..seeds {
        let (rec, case) = make(s);
        w64 = w64.max(check::<f64>(&rec, &case, s, per_tensor).max_rel_err);
        w32 = w32.max(check::<f32>(&rec, &case, s, per_tensor).max_rel_err);
    }
    (w64, w32)
}

/// Relative-error bounds for the two precisions.
pub const TOL_F64: f64 = 1e-3;
pub const TOL_F32: f64 = 1e-2;

pub mod suite;
pub mod oracles;
