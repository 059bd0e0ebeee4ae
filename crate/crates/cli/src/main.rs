use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::error;
use ultraseg::experiment::{
    run_ablate, run_bench, run_crossdomain, run_denoiser, run_eval, run_synth, run_train, BenchOptions, EvalOptions,
};
use ultraseg::io::RunConfig;
use ultraseg::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "ultraseg", version, about = "UltraUNet tongue-contour segmentation on synthetic ultrasound")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// JSON run configuration; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds data generation, initialisation, shuffling and augmentation.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training (or generated) domain profile.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Number of synthetic samples.
    #[arg(long)]
    count: Option<usize>,
    /// Image side in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Maximum training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Histogram-match evaluation inputs to the training distribution.
    #[arg(long)]
    hist_match: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train and test on one profile.
    Train(Common),
    /// Score saved weights; optionally emit overlays and a Dice-vs-FPS point.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        /// SVG overlays for the first N test frames.
        #[arg(long, default_value_t = 0)]
        overlays: usize,
        /// Throughput measurement length in seconds (0 skips it).
        #[arg(long, default_value_t = 0.0)]
        fps_duration: f64,
    },
    /// Parameter/FLOP accounting, calibration table and throughput.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Seconds per throughput run (0 skips throughput).
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 3)]
        runs: usize,
    },
    /// Write a synthetic dataset as PGM images, masks and contour CSVs.
    Synth(Common),
    /// Train the denoising network used for augmentation.
    Denoiser(Common),
    /// The 8-cell {PSF, speckle, denoise} augmentation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Plans drawn for the exclusivity audit.
        #[arg(long, default_value_t = 100_000)]
        audit_draws: usize,
    },
    /// Train on one profile, test on the others.
    Crossdomain {
        #[command(flatten)]
        common: Common,
        /// Score both with and without histogram matching.
        #[arg(long)]
        compare_hist_match: bool,
    },
}

fn load_config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            e => e,
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.train.seed = s;
        cfg.data.seed = s;
        cfg.denoiser.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(p) = &c.profile {
        cfg.data.profile = p.clone();
    }
    if let Some(t) = c.trials {
        cfg.train.trials = t;
    }
    if let Some(n) = c.count {
        cfg.data.count = n;
    }
    if let Some(s) = c.size {
        cfg.data.size = s;
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs_max = e;
    }
    cfg.hist_match |= c.hist_match;
    cfg.validate()?;
    ultraseg::synth::DomainProfile::by_name(&cfg.data.profile).map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

fn seconds(s: f64) -> Option<Duration> {
    (s > 0.0).then(|| Duration::from_secs_f64(s))
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Train(c) => {
            let out = run_train(&load_config(&c)?)?;
            println!(
                "dice {:.4} ± {:.4}, msd {}  ({})",
                out.report.dice.mean,
                out.report.dice.std,
                out.report
                    .msd
                    .map(|m| format!("{:.3} ± {:.3} px", m.mean, m.std))
                    .unwrap_or_else(|| "undefined".into()),
                out.dir.root.display()
            );
        }
        Command::Eval {
            common,
            weights,
            overlays,
            fps_duration,
        } => {
            let opts = EvalOptions {
                overlays,
                fps_duration: seconds(fps_duration),
            };
            let out = run_eval(&load_config(&common)?, &weights, &opts)?;
            println!(
                "frames {}, dice {:.4}, msd {}, undefined msd {}",
                out.summary.frames,
                out.summary.dice,
                out.summary.msd.map(|m| format!("{m:.3} px")).unwrap_or_else(|| "undefined".into()),
                out.summary.msd_undefined
            );
            if let Some(f) = out.fps {
                println!("{:.2} fps over {} frames", f.fps, f.frames);
            }
        }
        Command::Bench {
            common,
            duration,
            warmup,
            runs,
        } => {
            let opts = BenchOptions {
                duration: seconds(duration),
                warmup,
                runs,
            };
            let out = run_bench(&load_config(&common)?, &opts)?;
            for c in [&out.ultraunet, &out.unet] {
                println!(
                    "{:<10} params {:>11}  GFLOPs {:.3} (MAC=1) / {:.3} (MAC=2)",
                    c.model,
                    c.params,
                    c.gflops(ultraseg::bench::FlopConvention::MacIsOneFlop),
                    c.gflops(ultraseg::bench::FlopConvention::MacIsTwoFlops)
                );
            }
            for (i, (a, b)) in out.fps.iter().enumerate() {
                println!("run {i}: {} {:.2} fps, {} {:.2} fps", a.model, a.fps, b.model, b.fps);
            }
        }
        Command::Synth(c) => {
            let ds = run_synth(&load_config(&c)?)?;
            println!("{} samples ({}/{}/{})", ds.samples.len(), ds.train.len(), ds.val.len(), ds.test.len());
        }
        Command::Denoiser(c) => {
            let r = run_denoiser(&load_config(&c)?)?;
            println!("val mse {:.6} (identity {:.6})", r.best_val_mse(), r.identity_val_mse);
        }
        Command::Ablate { common, audit_draws } => {
            let out = run_ablate(&load_config(&common)?, audit_draws)?;
            println!(
                "{} rows; audit: {} draws, {} denoise+noise combinations",
                out.rows.len(),
                out.audit.draws,
                out.audit.denoise_with_noise
            );
        }
        Command::Crossdomain {
            common,
            compare_hist_match,
        } => {
            let cfg = load_config(&common)?;
            let modes = if compare_hist_match {
                vec![false, true]
            } else {
                vec![cfg.hist_match]
            };
            let out = run_crossdomain(&cfg, &modes)?;
            for r in &out.rows {
                println!("trial {} {} -> {} [{}]: dice {:.4}", r.trial, r.train_profile, r.test_profile, r.variant, r.dice);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
