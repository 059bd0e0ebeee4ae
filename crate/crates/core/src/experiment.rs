//! Experiment runners behind the CLI. Every runner writes its artifacts
//! (config snapshot, environment stamp, weights, CSV/JSON results) into one
//! run directory. `results.csv` holds no wall-clock data, so two runs with
//! the same seed produce it byte for byte.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{histogram_match, AugPolicy, Augmenter, ReferenceHistogram};
use crate::bench::{count_flops, measure_model_fps, CostReport, FlopConvention, FpsReport};
use crate::error::{Error, Result};
use crate::image::{derive_seed, GrayImage, Sample};
use crate::io::{
    encode_contour, encode_mask_pgm, encode_pgm, load_weights, results_csv, save_weights, summary_csv, ResultsRow,
    RunConfig, RunDir,
};
use crate::metrics::{largest_component, mask_to_points, skeletonize, BinaryMask, MetricSummary};
use crate::model::{build_ref_unet, build_ultraunet, ModelGraph, RefUNetConfig, UltraUNetConfig, Upsampling};
use crate::synth::{gen_dataset, DomainProfile, SynthDataset};
use crate::tensor::Shape4;
use crate::train::{
    evaluate_model, run_trials, train_denoiser, worker_threads, DenoiserReport, Splits, TrialResult, TrialsReport,
};

pub const ULTRAUNET: &str = "ultraunet";
pub const REF_UNET: &str = "unet";

/// Published reference figures used by the benchmark report.
pub const TARGET_ULTRAUNET_PARAMS: f64 = 4.454e6;
pub const TARGET_UNET_PARAMS: f64 = 31.036e6;
pub const TARGET_ULTRAUNET_GFLOPS: f64 = 6.005;
pub const TARGET_UNET_GFLOPS: f64 = 36.943;

/// Where and how a run was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvStamp {
    pub version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub command: String,
}

impl EnvStamp {
    pub fn current(command: &str) -> Self {
        EnvStamp {
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: worker_threads(),
            command: command.into(),
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisable")
}

/// Creates the run directory and drops the config snapshot and env stamp.
pub fn open_run(cfg: &RunConfig, command: &str) -> Result<RunDir> {
    cfg.validate()?;
    let dir = RunDir::create(&cfg.out_dir)?;
    dir.write("config.json", cfg.to_json())?;
    dir.write("env.json", json(&EnvStamp::current(command)))?;
    Ok(dir)
}

pub fn load_dataset(cfg: &RunConfig, profile: &str) -> Result<SynthDataset> {
    let p = DomainProfile::by_name(profile)?;
    info!("generating {} x {}px samples of {}", cfg.data.count, cfg.data.size, p.name);
    gen_dataset(&p, cfg.data.count, cfg.data.seed, cfg.data.size)
}

/// Pooled intensity distribution of the training split.
pub fn train_reference(splits: &Splits) -> Result<ReferenceHistogram> {
    ReferenceHistogram::from_images(splits.train.iter().map(|s| &s.image))
}

fn train_images(splits: &Splits) -> Vec<GrayImage> {
    splits.train.iter().map(|s| s.image.clone()).collect()
}

/// Trains the denoiser on the training images and saves it under `dir`.
pub fn fit_denoiser(cfg: &RunConfig, splits: &Splits, dir: &RunDir) -> Result<(ModelGraph<f32>, DenoiserReport)> {
    let (model, report) = train_denoiser(&train_images(splits), &cfg.denoiser)?;
    save_weights(&model, &dir.path("denoiser.uunw"))?;
    dir.write("denoiser_report.json", json(&report))?;
    info!(
        "denoiser: val mse {:.6} (identity {:.6})",
        report.best_val_mse(),
        report.identity_val_mse
    );
    Ok((model, report))
}

fn needs_denoiser(policy: &AugPolicy) -> bool {
    policy.denoise && policy.p_denoise > 0.0
}

fn row(experiment: &str, variant: &str, train: &str, test: &str, t: &TrialResult, s: &MetricSummary) -> ResultsRow {
    ResultsRow {
        experiment: experiment.into(),
        model: ULTRAUNET.into(),
        variant: variant.into(),
        train_profile: train.into(),
        test_profile: test.into(),
        trial: t.trial,
        seed: t.seed,
        dice: s.dice,
        msd: s.msd,
        msd_undefined: s.msd_undefined,
        frames: s.frames,
        epochs_run: t.epochs_run,
        best_epoch: t.best_epoch,
    }
}

fn timings_csv(rows: &[(String, &TrialResult)]) -> String {
    let mut s = String::from("variant,trial,seed,epochs_run,wall_seconds\n");
    for (v, t) in rows {
        let _ = writeln!(s, "{v},{},{},{},{:.3}", t.trial, t.seed, t.epochs_run, t.wall_seconds);
    }
    s
}

fn write_results(dir: &RunDir, rows: &[ResultsRow]) -> Result<()> {
    dir.write("results.csv", results_csv(rows))?;
    dir.write("summary.csv", summary_csv(rows))?;
    Ok(())
}

fn hm_variant(on: bool) -> &'static str {
    if on {
        "hist-match"
    } else {
        "raw"
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrialsReport,
    pub rows: Vec<ResultsRow>,
    pub dir: RunDir,
}

/// Single-domain protocol: trials on the configured profile, scored on its
/// own test split.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let dir = open_run(cfg, "train")?;
    let ds = load_dataset(cfg, &cfg.data.profile)?;
    let splits = ds.splits();
    let reference = train_reference(&splits)?;
    dir.write("reference_histogram.json", json(&reference))?;
    let denoiser = if needs_denoiser(&cfg.augment) {
        Some(fit_denoiser(cfg, &splits, &dir)?.0)
    } else {
        None
    };
    let aug = Augmenter::new(cfg.augment.clone(), denoiser)?;
    let eval_ref = cfg.hist_match.then_some(&reference);
    let report = run_trials(
        |seed| build_ultraunet(&cfg.model, seed),
        &splits,
        &cfg.train,
        &aug,
        eval_ref,
        |t, model| save_weights(model, &dir.path(&format!("trial{}.uunw", t.trial))),
    )?;
    let variant = hm_variant(cfg.hist_match);
    let rows: Vec<ResultsRow> = report
        .trials
        .iter()
        .map(|t| row("train", variant, &cfg.data.profile, &cfg.data.profile, t, &t.test))
        .collect();
    write_results(&dir, &rows)?;
    let timed: Vec<_> = report.trials.iter().map(|t| (variant.to_string(), t)).collect();
    dir.write("timings.csv", timings_csv(&timed))?;
    dir.write("trials.json", json(&report))?;
    Ok(TrainOutcome { report, rows, dir })
}

/// What `run_eval` should emit besides the scores.
#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// SVG overlays for the first this-many test frames.
    pub overlays: usize,
    /// Measure throughput for the Dice-vs-FPS scatter.
    pub fps_duration: Option<Duration>,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub summary: MetricSummary,
    pub fps: Option<FpsReport>,
    pub dir: RunDir,
}

/// Scores saved UltraUNet weights on the test split of the configured profile.
pub fn run_eval(cfg: &RunConfig, weights: &Path, opts: &EvalOptions) -> Result<EvalOutcome> {
    let dir = open_run(cfg, "eval")?;
    let mut model = build_ultraunet::<f32>(&cfg.model, 0)?;
    load_weights(&mut model, weights)?;
    let splits = load_dataset(cfg, &cfg.data.profile)?.splits();
    let reference = if cfg.hist_match {
        Some(train_reference(&splits)?)
    } else {
        None
    };
    let scores = evaluate_model(&model, &splits.test, reference.as_ref(), cfg.train.batch)?;
    let mut frames = String::from("frame,dice,msd\n");
    for (s, sc) in splits.test.iter().zip(&scores) {
        let msd = sc.msd.map(|m| format!("{m:.6}")).unwrap_or_default();
        let _ = writeln!(frames, "{},{:.6},{msd}", s.name, sc.dice);
    }
    dir.write("frames.csv", frames)?;
    let summary = MetricSummary::from_frames(&scores);
    dir.write("eval.json", json(&summary))?;

    for s in splits.test.iter().take(opts.overlays) {
        let img = match &reference {
            Some(r) => histogram_match(&s.image, r),
            None => s.image.clone(),
        };
        let logits = model.forward(&img.to_tensor())?;
        dir.write(&format!("overlay_{}.svg", s.name), overlay_svg(s, &img, logits.data())?)?;
    }

    let fps = match opts.fps_duration {
        Some(d) => {
            let side = cfg.data.size;
            let r = measure_model_fps(&model, Shape4::new(1, 1, side, side), d, 10)?;
            let cost = count_flops(&model, Shape4::new(1, 1, side, side))?;
            let scatter = format!(
                "model,params,gflops,fps,dice\n{},{},{:.6},{:.3},{:.6}\n",
                ULTRAUNET,
                cost.params,
                cost.gflops(FlopConvention::MacIsOneFlop),
                r.fps,
                summary.dice
            );
            dir.write("dice_vs_fps.csv", scatter)?;
            Some(r)
        }
        None => None,
    };
    Ok(EvalOutcome { summary, fps, dir })
}

/// Frame in grey, ground-truth contour as a green polyline, predicted
/// skeleton points in red.
pub fn overlay_svg(sample: &Sample, image: &GrayImage, logits: &[f32]) -> Result<String> {
    let (h, w) = (image.h(), image.w());
    let pred = BinaryMask::threshold(h, w, logits, 0.0)?;
    let skeleton = mask_to_points(&skeletonize(&largest_component(&pred)));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" width="{}" height="{}" shape-rendering="crispEdges">"#,
        3 * w,
        3 * h
    );
    // one rect per horizontal run of equal 16-level grey
    for y in 0..h {
        let mut x = 0;
        while x < w {
            let level = (image.get(y, x).clamp(0.0, 1.0) * 15.0).round() as u32;
            let mut end = x + 1;
            while end < w && (image.get(y, end).clamp(0.0, 1.0) * 15.0).round() as u32 == level {
                end += 1;
            }
            let g = level * 17;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{}" height="1" fill="rgb({g},{g},{g})"/>"#,
                end - x
            );
            x = end;
        }
    }
    let pts: Vec<String> = sample
        .contour
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", p.x + 0.5, p.y + 0.5))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="lime" stroke-width="0.6"/>"#,
        pts.join(" ")
    );
    for p in &skeleton.points {
        let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="0.45" fill="red"/>"#, p.x + 0.5, p.y + 0.5);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// One architecture variant in the calibration report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub layout: String,
    pub params: u64,
    pub gflops: f64,
    pub params_dev: f64,
    pub gflops_dev: f64,
    pub within_tolerance: bool,
}

/// Candidate UltraUNet layouts against the published size and cost
/// (parameters within 10%, GFLOPs within 20%, one FLOP per MAC).
pub fn calibration_candidates() -> Vec<(String, UltraUNetConfig)> {
    let d = UltraUNetConfig::default();
    vec![
        ("base24-nearest-conv3x3 (default)".into(), d.clone()),
        (
            "base24-transposed-conv2x2".into(),
            UltraUNetConfig {
                upsampling: Upsampling::TransposedConv2x2,
                ..d.clone()
            },
        ),
        (
            "base24-no-se".into(),
            UltraUNetConfig {
                se_encoder_stages: Default::default(),
                se_decoder_stages: Default::default(),
                ..d.clone()
            },
        ),
        (
            "base24-gn-all-encoder".into(),
            UltraUNetConfig {
                gn_encoder_stages: (1..=5).collect(),
                ..d.clone()
            },
        ),
        (
            "base32-transposed-conv2x2".into(),
            UltraUNetConfig {
                base_channels: 32,
                upsampling: Upsampling::TransposedConv2x2,
                ..d.clone()
            },
        ),
        (
            "base20-nearest-conv3x3".into(),
            UltraUNetConfig {
                base_channels: 20,
                ..d
            },
        ),
    ]
}

pub fn calibration_report() -> Result<Vec<CalibrationRow>> {
    let input = Shape4::new(1, 1, 224, 224);
    calibration_candidates()
        .into_iter()
        .map(|(layout, cfg)| {
            let g = build_ultraunet::<f32>(&cfg, 0)?;
            let c = count_flops(&g, input)?;
            let gflops = c.gflops(FlopConvention::MacIsOneFlop);
            let params_dev = c.params as f64 / TARGET_ULTRAUNET_PARAMS - 1.0;
            let gflops_dev = gflops / TARGET_ULTRAUNET_GFLOPS - 1.0;
            Ok(CalibrationRow {
                layout,
                params: c.params,
                gflops,
                params_dev,
                gflops_dev,
                within_tolerance: params_dev.abs() <= 0.10 && gflops_dev.abs() <= 0.20,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct BenchOptions {
    /// Skip throughput when `None`.
    pub duration: Option<Duration>,
    pub warmup: usize,
    pub runs: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub ultraunet: CostReport,
    pub unet: CostReport,
    pub calibration: Vec<CalibrationRow>,
    /// `(ultraunet, unet)` per run.
    pub fps: Vec<(FpsReport, FpsReport)>,
}

fn layers_csv(reports: &[&CostReport]) -> String {
    let mut s = String::from("model,layer,stage,out_c,out_h,out_w,params,macs,other_ops\n");
    for r in reports {
        for l in &r.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.model, l.name, l.stage, l.output.c, l.output.h, l.output.w, l.params, l.macs, l.other_ops
            );
        }
    }
    s
}

/// Parameter and FLOP accounting at 1x1x224x224 for both networks, the
/// calibration table, and alternating batch-1 throughput runs.
pub fn run_bench(cfg: &RunConfig, opts: &BenchOptions) -> Result<BenchOutcome> {
    let dir = open_run(cfg, "bench")?;
    let input = Shape4::new(1, 1, 224, 224);
    let uu = build_ultraunet::<f32>(&cfg.model, cfg.train.seed)?;
    let un = build_ref_unet::<f32>(&RefUNetConfig::default(), cfg.train.seed)?;
    let (cu, cn) = (count_flops(&uu, input)?, count_flops(&un, input)?);
    let mut totals = String::from("model,params,macs,other_ops,gflops_mac1,gflops_mac2,params_target,gflops_target\n");
    for (c, pt, ft) in [
        (&cu, TARGET_ULTRAUNET_PARAMS, TARGET_ULTRAUNET_GFLOPS),
        (&cn, TARGET_UNET_PARAMS, TARGET_UNET_GFLOPS),
    ] {
        let _ = writeln!(
            totals,
            "{},{},{},{},{:.4},{:.4},{pt},{ft}",
            c.model,
            c.params,
            c.macs,
            c.other_ops,
            c.gflops(FlopConvention::MacIsOneFlop),
            c.gflops(FlopConvention::MacIsTwoFlops)
        );
    }
    dir.write("costs.csv", totals)?;
    dir.write("layers.csv", layers_csv(&[&cu, &cn]))?;
    let calibration = calibration_report()?;
    let mut cal = String::from("layout,params,gflops,params_dev,gflops_dev,within_tolerance\n");
    for r in &calibration {
        let _ = writeln!(
            cal,
            "{},{},{:.4},{:+.4},{:+.4},{}",
            r.layout, r.params, r.gflops, r.params_dev, r.gflops_dev, r.within_tolerance
        );
    }
    dir.write("calibration.csv", cal)?;

    let mut fps = Vec::new();
    if let Some(d) = opts.duration {
        for run in 0..opts.runs.max(1) {
            let a = measure_model_fps(&uu, input, d, opts.warmup)?;
            let b = measure_model_fps(&un, input, d, opts.warmup)?;
            info!("run {run}: {} {:.2} fps, {} {:.2} fps", a.model, a.fps, b.model, b.fps);
            fps.push((a, b));
        }
    }
    let out = BenchOutcome {
        ultraunet: cu,
        unet: cn,
        calibration,
        fps,
    };
    dir.write("bench.json", json(&out))?;
    Ok(out)
}

/// Writes every generated sample as image PGM, mask PGM and contour CSV,
/// plus the split membership.
pub fn run_synth(cfg: &RunConfig) -> Result<SynthDataset> {
    let dir = open_run(cfg, "synth")?;
    let ds = load_dataset(cfg, &cfg.data.profile)?;
    for s in &ds.samples {
        let n = &s.sample.name;
        dir.write(&format!("{n}.pgm"), encode_pgm(&s.sample.image))?;
        dir.write(&format!("{n}_mask.pgm"), encode_mask_pgm(&s.sample.mask))?;
        dir.write(&format!("{n}_contour.csv"), encode_contour(&s.sample.contour))?;
    }
    let names = |idx: &[usize]| idx.iter().map(|&i| ds.samples[i].sample.name.clone()).collect::<Vec<_>>();
    let splits = serde_json::json!({
        "train": names(&ds.train),
        "val": names(&ds.val),
        "test": names(&ds.test),
    });
    dir.write("splits.json", json(&splits))?;
    Ok(ds)
}

pub fn run_denoiser(cfg: &RunConfig) -> Result<DenoiserReport> {
    let dir = open_run(cfg, "denoiser")?;
    let splits = load_dataset(cfg, &cfg.data.profile)?.splits();
    Ok(fit_denoiser(cfg, &splits, &dir)?.1)
}

/// The eight {PSF, speckle, denoise} on/off cells, flip always on, in
/// binary-count order with PSF as the most significant bit.
pub fn ablation_grid() -> Vec<(bool, bool, bool)> {
    (0..8u8).map(|m| (m & 4 != 0, m & 2 != 0, m & 1 != 0)).collect()
}

pub fn ablation_variant(psf: bool, speckle: bool, denoise: bool) -> String {
    format!("psf{}-speckle{}-denoise{}", psf as u8, speckle as u8, denoise as u8)
}

/// Frequencies of sampled plans under a policy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanAudit {
    pub draws: usize,
    pub flip: usize,
    pub psf: usize,
    pub speckle: usize,
    pub denoise: usize,
    /// Plans combining denoise with PSF or speckle; must be zero.
    pub denoise_with_noise: usize,
}

pub fn audit_plans(policy: &AugPolicy, draws: usize, seed: u64) -> PlanAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = PlanAudit {
        draws,
        ..PlanAudit::default()
    };
    for _ in 0..draws {
        let p = policy.sample_plan(&mut rng);
        a.flip += p.flip as usize;
        a.psf += p.has_psf() as usize;
        a.speckle += p.has_speckle() as usize;
        a.denoise += p.has_denoise() as usize;
        a.denoise_with_noise += (p.has_denoise() && (p.has_psf() || p.has_speckle())) as usize;
    }
    a
}

#[derive(Clone, Debug)]
pub struct AblateOutcome {
    pub rows: Vec<ResultsRow>,
    pub audit: PlanAudit,
    pub dir: RunDir,
}

/// Augmentation ablation: one set of trials per grid cell, all on the same
/// data and trial seeds; the denoiser is trained once and shared.
pub fn run_ablate(cfg: &RunConfig, audit_draws: usize) -> Result<AblateOutcome> {
    let dir = open_run(cfg, "ablate")?;
    let splits = load_dataset(cfg, &cfg.data.profile)?.splits();
    let full = AugPolicy {
        flip: true,
        psf: true,
        speckle: true,
        denoise: true,
        ..cfg.augment.clone()
    };
    let audit = audit_plans(&full, audit_draws, derive_seed(cfg.train.seed, &[7]));
    dir.write("audit.json", json(&audit))?;
    let denoiser = fit_denoiser(cfg, &splits, &dir)?.0;
    let eval_ref = if cfg.hist_match {
        Some(train_reference(&splits)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (psf, speckle, denoise) in ablation_grid() {
        let variant = ablation_variant(psf, speckle, denoise);
        info!("ablation cell {variant}");
        let policy = AugPolicy {
            psf,
            speckle,
            denoise,
            ..full.clone()
        };
        let aug = Augmenter::new(policy, denoise.then(|| denoiser.clone()))?;
        let report = run_trials(
            |seed| build_ultraunet(&cfg.model, seed),
            &splits,
            &cfg.train,
            &aug,
            eval_ref.as_ref(),
            |_, _| Ok(()),
        )?;
        for t in &report.trials {
            rows.push(row("ablate", &variant, &cfg.data.profile, &cfg.data.profile, t, &t.test));
        }
        reports.push((variant, report));
    }
    write_results(&dir, &rows)?;
    let timed: Vec<_> = reports
        .iter()
        .flat_map(|(v, r)| r.trials.iter().map(move |t| (v.clone(), t)))
        .collect();
    dir.write("timings.csv", timings_csv(&timed))?;
    Ok(AblateOutcome { rows, audit, dir })
}

#[derive(Clone, Debug)]
pub struct CrossDomainOutcome {
    pub rows: Vec<ResultsRow>,
    pub dir: RunDir,
}

/// Trains on the configured profile and scores every trial on the test
/// splits of `data.test_profiles`, once per histogram-matching mode in
/// `modes`. Matching maps each input onto the pooled training-split
/// distribution.
pub fn run_crossdomain(cfg: &RunConfig, modes: &[bool]) -> Result<CrossDomainOutcome> {
    if modes.is_empty() {
        return Err(Error::Config("crossdomain: no histogram-matching mode selected".into()));
    }
    let targets: Vec<&String> = cfg.data.test_profiles.iter().filter(|p| **p != cfg.data.profile).collect();
    if targets.is_empty() {
        return Err(Error::Config("crossdomain: no test profile differs from the training profile".into()));
    }
    let dir = open_run(cfg, "crossdomain")?;
    let splits = load_dataset(cfg, &cfg.data.profile)?.splits();
    let reference = train_reference(&splits)?;
    dir.write("reference_histogram.json", json(&reference))?;
    let tests = targets
        .iter()
        .map(|p| Ok(((*p).clone(), load_dataset(cfg, p)?.splits().test)))
        .collect::<Result<Vec<_>>>()?;
    let denoiser = if needs_denoiser(&cfg.augment) {
        Some(fit_denoiser(cfg, &splits, &dir)?.0)
    } else {
        None
    };
    let aug = Augmenter::new(cfg.augment.clone(), denoiser)?;
    let mut rows = Vec::new();
    let report = run_trials(
        |seed| build_ultraunet(&cfg.model, seed),
        &splits,
        &cfg.train,
        &aug,
        None,
        |t, model| {
            save_weights(model, &dir.path(&format!("trial{}.uunw", t.trial)))?;
            for &hm in modes {
                for (name, test) in &tests {
                    let scores = evaluate_model(model, test, hm.then_some(&reference), cfg.train.batch)?;
                    let s = MetricSummary::from_frames(&scores);
                    info!("trial {} on {name} ({}): dice {:.4}", t.trial, hm_variant(hm), s.dice);
                    rows.push(row("crossdomain", hm_variant(hm), &cfg.data.profile, name, t, &s));
                }
            }
            Ok(())
        },
    )?;
    write_results(&dir, &rows)?;
    let timed: Vec<_> = report.trials.iter().map(|t| ("all".to_string(), t)).collect();
    dir.write("timings.csv", timings_csv(&timed))?;
    dir.write("trials.json", json(&report))?;
    Ok(CrossDomainOutcome { rows, dir })
}
