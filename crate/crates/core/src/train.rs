//! Losses, optimiser, schedule, early stopping and the training drivers.

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{psf_blur, sample_seed, speckle, Augmenter, PsfKernel, ReferenceHistogram};
use crate::autodiff::{kernels, Exec, FocalParams, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::image::{derive_seed, stack, GrayImage, Sample};
use crate::metrics::{evaluate, FrameScore, MetricSummary};
use crate::model::{build_denoiser, DenoiserConfig, ModelGraph};
use crate::tensor::{Real, Shape4, Tensor4};

/// `w_dice · L_dice + w_focal · L_focal` on sigmoid probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub w_dice: f64,
    pub w_focal: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub eps: f64,
    /// Foreground weighted by `alpha`, background by `1 - alpha`.
    pub class_balanced_alpha: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_dice: 0.2,
            w_focal: 0.8,
            alpha: 0.25,
            gamma: 2.0,
            eps: 1e-6,
            class_balanced_alpha: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("loss: {m}")));
        if self.w_dice < 0.0 || self.w_focal < 0.0 || (self.w_dice + self.w_focal - 1.0).abs() > 1e-9 {
            return bad("weights must be non-negative and sum to 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        Ok(())
    }

    pub fn focal(&self) -> FocalParams {
        FocalParams {
            alpha: self.alpha,
            gamma: self.gamma,
            class_balanced: self.class_balanced_alpha,
        }
    }
}

pub fn combined_loss<T: Real>(probs: &Tensor4<T>, target: &Tensor4<T>, cfg: &LossConfig) -> Result<f64> {
    let d = kernels::dice_loss(probs, target, cfg.eps)?.as_f64();
    let f = kernels::focal_loss(probs, target, cfg.focal())?.as_f64();
    Ok(cfg.w_dice * d + cfg.w_focal * f)
}

/// Records sigmoid + combined loss on `tape`; returns the scalar root.
pub fn record_loss<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    logits: Var,
    target: &Tensor4<T>,
    cfg: &LossConfig,
) -> Result<Var> {
    let probs = tape.sigmoid(logits);
    let d = tape.dice_loss(probs, target, cfg.eps)?;
    let f = tape.focal_loss(probs, target, cfg.focal())?;
    let d = tape.scale(d, T::of(cfg.w_dice));
    let f = tape.scale(f, T::of(cfg.w_focal));
    tape.add(d, &f)
}

/// Polynomial decay `(1 - e/e_max)^power` for 0-based epoch `e`.
pub fn lr_factor(epoch: usize, epochs_max: usize, power: f64) -> Result<f64> {
    if epoch >= epochs_max {
        return Err(Error::invalid(
            "lr_factor",
            format!("epoch {epoch} outside 0..{epochs_max}"),
        ));
    }
    Ok((1.0 - epoch as f64 / epochs_max as f64).powf(power))
}

/// Bias-corrected Adam with per-parameter moment tensors.
#[derive(Clone, Debug)]
pub struct Adam<T: Real = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor4<T>>,
    v: Vec<Tensor4<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor4::zeros(p.value.shape())).collect::<Vec<_>>();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if params.pending_backward() == 0 {
            return Err(Error::invalid("adam_step", "no gradients accumulated since the last step"));
        }
        if params.len() != self.m.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("optimiser tracks {} tensors, store has {}", self.m.len(), params.len()),
            ));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let w = p.value.data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                let g = g.as_f64();
                let mn = b1 * m.as_f64() + (1.0 - b1) * g;
                let vn = b2 * v.as_f64() + (1.0 - b2) * g * g;
                *m = T::of(mn);
                *v = T::of(vn);
                let update = lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *w = T::of(w.as_f64() - update);
            }
        }
        params.zero_grad();
        Ok(())
    }
}

/// Stops after `patience` consecutive epochs without an improvement larger
/// than `min_delta`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopVerdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            min_delta: 1e-6,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopVerdict {
        let improved = loss < self.best - self.min_delta;
        if improved {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopVerdict {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch: usize,
    pub epochs_max: usize,
    pub patience: usize,
    pub poly_power: f64,
    pub trials: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            batch: 3,
            epochs_max: 50,
            patience: 10,
            poly_power: 0.9,
            trials: 3,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("training: {m}")));
        if !(self.lr0 > 0.0) || !(self.poly_power > 0.0) {
            return bad("lr0 and poly_power must be positive");
        }
        if self.batch == 0 || self.epochs_max == 0 || self.patience == 0 || self.trials == 0 {
            return bad("batch, epochs_max, patience and trials must be positive");
        }
        self.loss.validate()
    }
}

/// Worker threads for batch augmentation: `ULTRASEG_THREADS`, default 1.
pub fn worker_threads() -> usize {
    std::env::var("ULTRASEG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Order-preserving map over at most [`worker_threads`] scoped threads.
/// Results do not depend on the thread count.
pub fn par_map<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> Result<O> + Sync) -> Result<Vec<O>> {
    let threads = worker_threads().min(items.len());
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Result<Vec<O>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("augmentation worker panicked")?);
        }
        Ok(out)
    })
}

/// Loss curves of one `fit` call.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 0-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn mask_batch(samples: &[&Sample]) -> Result<Tensor4<f32>> {
    let first = samples.first().ok_or_else(|| Error::invalid("mask_batch", "empty batch"))?;
    let (h, w) = (first.mask.h(), first.mask.w());
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.mask.h(), s.mask.w()) != (h, w) {
            return Err(Error::invalid("mask_batch", "masks of different sizes in one batch"));
        }
        data.extend(s.mask.to_f32());
    }
    Tensor4::from_vec(Shape4::new(samples.len(), 1, h, w), data)
}

/// Mean combined loss over `samples` (no augmentation), batched.
pub fn dataset_loss(model: &ModelGraph<f32>, samples: &[Sample], cfg: &LossConfig, batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let x = stack(&refs.iter().map(|s| &s.image).collect::<Vec<_>>())?;
        let mut p = model.forward(&x)?;
        kernels::sigmoid_in_place(&mut p);
        total += combined_loss(&p, &mask_batch(&refs)?, cfg)? * chunk.len() as f64;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Mini-batch training with poly-decayed Adam and early stopping on the
/// validation loss. The best-validation weights are restored on return.
///
/// Batches are drawn from a per-epoch shuffle seeded by `(seed, epoch)`;
/// each training sample is augmented with a seed derived from
/// `(seed, epoch, index)`, so the run is reproducible bit for bit.
pub fn fit(
    model: &mut ModelGraph<f32>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    aug: &Augmenter,
    seed: u64,
) -> Result<FitHistory> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("fit", "training and validation splits must be non-empty"));
    }
    let mut adam = Adam::new(&model.params);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_weights = model.params.values();
    let mut hist = FitHistory::default();
    let aug_seed = derive_seed(seed, &[1]);
    model.params.zero_grad();
    for epoch in 0..cfg.epochs_max {
        let lr = cfg.lr0 * lr_factor(epoch, cfg.epochs_max, cfg.poly_power)?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0, epoch as u64])));
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let batch = par_map(idx, |&i| aug.augment(&train[i], sample_seed(aug_seed, epoch, i)))?;
            let refs: Vec<&Sample> = batch.iter().collect();
            let x = stack(&refs.iter().map(|s| &s.image).collect::<Vec<_>>())?;
            let target = mask_batch(&refs)?;
            let mut tape = Tape::new(&model.params);
            let xv = tape.input(x);
            let logits = model.forward_recorded(&mut tape, xv)?;
            let root = record_loss(&mut tape, logits, &target, &cfg.loss)?;
            let loss = tape.value(root).item()? as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    samples: idx.to_vec(),
                });
            }
            let grads = tape.backward(root)?;
            model.params.accumulate(&grads)?;
            adam.step(&mut model.params, lr)?;
            epoch_loss += loss * idx.len() as f64;
            debug!("epoch {epoch} batch {b}: loss {loss:.5}");
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = dataset_loss(model, val, &cfg.loss, cfg.batch)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                samples: Vec::new(),
            });
        }
        hist.train_loss.push(train_loss);
        hist.val_loss.push(val_loss);
        let verdict = stopper.observe(epoch, val_loss);
        info!("epoch {epoch}: lr {lr:.2e} train {train_loss:.5} val {val_loss:.5}");
        if verdict.improved {
            best_weights = model.params.values();
        }
        if verdict.stop {
            hist.stopped_early = epoch + 1 < cfg.epochs_max;
            break;
        }
    }
    hist.best_epoch = stopper.best().map(|(e, _)| e).unwrap_or(0);
    model.params.restore(&best_weights)?;
    Ok(hist)
}

/// Per-frame scores on `samples`, optionally histogram-matching each input
/// to `reference` first.
pub fn evaluate_model(
    model: &ModelGraph<f32>,
    samples: &[Sample],
    reference: Option<&ReferenceHistogram>,
    batch: usize,
) -> Result<Vec<FrameScore>> {
    let mut scores = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let images: Vec<GrayImage> = chunk
            .iter()
            .map(|s| match reference {
                Some(r) => crate::augment::histogram_match(&s.image, r),
                None => s.image.clone(),
            })
            .collect();
        let logits = model.forward(&stack(&images.iter().collect::<Vec<_>>())?)?;
        for (n, s) in chunk.iter().enumerate() {
            let plane = &logits.sample(n)[..logits.shape().plane()];
            scores.push(evaluate(plane, &s.mask, &s.contour)?);
        }
    }
    Ok(scores)
}

/// Train, validation and test samples.
#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub test: MetricSummary,
    pub wall_seconds: f64,
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MeanStd { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialsReport {
    pub trials: Vec<TrialResult>,
    pub dice: MeanStd,
    /// Over trials with a defined test MSD.
    pub msd: Option<MeanStd>,
}

impl TrialsReport {
    pub fn from_trials(trials: Vec<TrialResult>) -> Self {
        let dice: Vec<f64> = trials.iter().map(|t| t.test.dice).collect();
        let msd: Vec<f64> = trials.iter().filter_map(|t| t.test.msd).collect();
        TrialsReport {
            dice: MeanStd::of(&dice).unwrap_or_default(),
            msd: MeanStd::of(&msd),
            trials,
        }
    }
}

/// Seed of trial `t` under base seed `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, &[trial as u64])
}

/// Trains `cfg.trials` fresh models (each initialised and shuffled from its
/// own trial seed) and scores each on the test split. `on_trial` sees every
/// trained model, e.g. to save it or score it elsewhere.
pub fn run_trials(
    build: impl Fn(u64) -> Result<ModelGraph<f32>>,
    data: &Splits,
    cfg: &TrainConfig,
    aug: &Augmenter,
    eval_reference: Option<&ReferenceHistogram>,
    mut on_trial: impl FnMut(&TrialResult, &ModelGraph<f32>) -> Result<()>,
) -> Result<TrialsReport> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let seed = trial_seed(cfg.seed, t);
        let start = Instant::now();
        let mut model = build(seed)?;
        let hist = fit(&mut model, &data.train, &data.val, cfg, aug, seed)?;
        let scores = evaluate_model(&model, &data.test, eval_reference, cfg.batch)?;
        let test = MetricSummary::from_frames(&scores);
        info!("trial {t}: dice {:.4} msd {:?}", test.dice, test.msd);
        let result = TrialResult {
            trial: t,
            seed,
            epochs_run: hist.val_loss.len(),
            train_loss: hist.train_loss,
            val_loss: hist.val_loss,
            best_epoch: hist.best_epoch,
            stopped_early: hist.stopped_early,
            test,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_trial(&result, &model)?;
        out.push(result);
    }
    Ok(TrialsReport::from_trials(out))
}

/// Settings for training the denoising network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserTrainConfig {
    pub model: DenoiserConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub val_fraction: f64,
    pub speckle_sigma: (f64, f64),
    pub psf_sigma: (f64, f64),
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        DenoiserTrainConfig {
            model: DenoiserConfig::default(),
            lr: 1e-3,
            epochs: 10,
            batch: 4,
            val_fraction: 0.2,
            speckle_sigma: (0.05, 0.4),
            psf_sigma: (0.5, 2.5),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DenoiserReport {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// Validation MSE of returning the noisy input unchanged.
    pub identity_val_mse: f64,
    pub best_epoch: usize,
}

impl DenoiserReport {
    pub fn best_val_mse(&self) -> f64 {
        self.val_mse.get(self.best_epoch).copied().unwrap_or(f64::INFINITY)
    }
}

/// PSF blur then speckle, each with parameters drawn from the given ranges.
pub fn corrupt(img: &GrayImage, cfg: &DenoiserTrainConfig, seed: u64) -> Result<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sa = rng.random_range(cfg.psf_sigma.0..=cfg.psf_sigma.1);
    let sl = rng.random_range(cfg.psf_sigma.0..=cfg.psf_sigma.1);
    let ss = rng.random_range(cfg.speckle_sigma.0..=cfg.speckle_sigma.1);
    let blurred = psf_blur(img, &PsfKernel::gaussian(sa, sl)?);
    Ok(speckle(&blurred, ss, &mut rng))
}

/// Trains the denoiser on (corrupted, clean) pairs with MSE loss. The first
/// `1 - val_fraction` of `clean` trains, the rest validates with fixed
/// corruptions; training corruptions are redrawn every epoch. Returns the
/// best-validation weights.
pub fn train_denoiser(clean: &[GrayImage], cfg: &DenoiserTrainConfig) -> Result<(ModelGraph<f32>, DenoiserReport)> {
    if clean.len() < 10 {
        return Err(Error::invalid(
            "train_denoiser",
            format!("need at least 10 images, got {}", clean.len()),
        ));
    }
    if !(cfg.lr > 0.0) || cfg.epochs == 0 || cfg.batch == 0 || !(0.0 < cfg.val_fraction && cfg.val_fraction < 1.0) {
        return Err(Error::Config("denoiser training: invalid lr/epochs/batch/val_fraction".into()));
    }
    let n_val = ((clean.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, clean.len() - 1);
    let (train, val) = clean.split_at(clean.len() - n_val);
    let val_noisy = val
        .iter()
        .enumerate()
        .map(|(i, img)| corrupt(img, cfg, derive_seed(cfg.seed, &[2, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let val_mse = |model: &ModelGraph<f32>| -> Result<f64> {
        let mut total = 0.0;
        for (noisy, clean) in val_noisy.iter().zip(val) {
            total += model.forward(&noisy.to_tensor())?.data().iter().zip(clean.data()).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>()
                / clean.data().len() as f64;
        }
        Ok(total / val.len() as f64)
    };
    let mut report = DenoiserReport {
        identity_val_mse: val_noisy.iter().zip(val).map(|(n, c)| n.mse(c)).sum::<f64>() / val.len() as f64,
        ..DenoiserReport::default()
    };
    let mut model = build_denoiser::<f32>(&cfg.model, cfg.seed)?;
    let mut adam = Adam::new(&model.params);
    let mut best = (f64::INFINITY, model.params.values());
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0, epoch as u64])));
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch) {
            let noisy = idx
                .iter()
                .map(|&i| corrupt(&train[i], cfg, derive_seed(cfg.seed, &[1, epoch as u64, i as u64])))
                .collect::<Result<Vec<_>>>()?;
            let x = stack(&noisy.iter().collect::<Vec<_>>())?;
            let y = stack(&idx.iter().map(|&i| &train[i]).collect::<Vec<_>>())?;
            let mut tape = Tape::new(&model.params);
            let xv = tape.input(x);
            let out = model.forward_recorded(&mut tape, xv)?;
            let root = tape.mse_loss(out, &y)?;
            let loss = tape.value(root).item()? as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: 0,
                    samples: idx.to_vec(),
                });
            }
            let grads = tape.backward(root)?;
            model.params.accumulate(&grads)?;
            adam.step(&mut model.params, cfg.lr)?;
            total += loss * idx.len() as f64;
        }
        report.train_mse.push(total / train.len() as f64);
        let v = val_mse(&model)?;
        report.val_mse.push(v);
        info!("denoiser epoch {epoch}: train {:.6} val {v:.6}", report.train_mse[epoch]);
        if v < best.0 {
            best = (v, model.params.values());
            report.best_epoch = epoch;
        }
    }
    model.params.restore(&best.1)?;
    Ok((model, report))
}
