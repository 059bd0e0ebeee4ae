//! Acceptance harness: one verdict line per criterion.
//!
//! Criterion 7 at full scale (600 samples at 224 px, 3 trials of up to 50
//! epochs) needs on the order of a CPU-day here, so it only runs with
//! `ULTRASEG_ACCEPT_FULL=1`; otherwise it is reported as SKIP with a runtime
//! estimate, followed by a clearly labelled reduced-scale smoke run that
//! gates nothing.

#[macro_use]
mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{oracles, suite, TOL_F32, TOL_F64};
use ultraseg::autodiff::kernels;
use ultraseg::bench::{count_flops, count_params, measure_model_fps, FlopConvention};
use ultraseg::experiment::{
    ablation_grid, ablation_variant, calibration_report, run_ablate, run_crossdomain, run_train, TARGET_ULTRAUNET_GFLOPS,
    TARGET_ULTRAUNET_PARAMS, TARGET_UNET_GFLOPS, TARGET_UNET_PARAMS,
};
use ultraseg::io::{load_weights, save_weights, RunConfig};
use ultraseg::model::{build_ref_unet, build_ultraunet, RefUNetConfig, UltraUNetConfig};
use ultraseg::tensor::{Shape4, Tensor4};
use ultraseg::train::{lr_factor, LossConfig};

enum Status {
    Pass,
    Fail,
    Skip,
    Info,
}

struct Verdict {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        status: if ok { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value / target - 1.0).abs() <= rel
}

fn full_input() -> Shape4 {
    Shape4::new(1, 1, 224, 224)
}

fn c1() -> Verdict {
    let u = count_params(&build_ultraunet::<f32>(&UltraUNetConfig::default(), 0).unwrap());
    let r = count_params(&build_ref_unet::<f32>(&RefUNetConfig::default(), 0).unwrap());
    println!("    calibration report (params within 10%, GFLOPs within 20%, one FLOP per MAC):");
    for row in calibration_report().unwrap() {
        println!(
            "      {:<36} {:>9} params ({:+.2}%)  {:>7.3} GFLOPs ({:+.2}%)  {}",
            row.layout,
            row.params,
            100.0 * row.params_dev,
            row.gflops,
            100.0 * row.gflops_dev,
            if row.within_tolerance { "ok" } else { "out" }
        );
    }
    verdict(
        within(r as f64, TARGET_UNET_PARAMS, 0.01) && within(u as f64, TARGET_ULTRAUNET_PARAMS, 0.10),
        format!(
            "unet {r} ({:+.2}% of 31.036M), ultraunet {u} ({:+.2}% of 4.454M)",
            100.0 * (r as f64 / TARGET_UNET_PARAMS - 1.0),
            100.0 * (u as f64 / TARGET_ULTRAUNET_PARAMS - 1.0)
        ),
    )
}

fn c2() -> Verdict {
    let c = FlopConvention::MacIsOneFlop;
    let u = count_flops(&build_ultraunet::<f32>(&UltraUNetConfig::default(), 0).unwrap(), full_input())
        .unwrap()
        .gflops(c);
    let r = count_flops(&build_ref_unet::<f32>(&RefUNetConfig::default(), 0).unwrap(), full_input())
        .unwrap()
        .gflops(c);
    verdict(
        within(u, TARGET_ULTRAUNET_GFLOPS, 0.20) && within(r, TARGET_UNET_GFLOPS, 0.20),
        format!("one FLOP per MAC: ultraunet {u:.3} GFLOPs (target 6.005), unet {r:.3} (target 36.943)"),
    )
}

fn c3() -> Verdict {
    let u = build_ultraunet::<f32>(&UltraUNetConfig::default(), 0).unwrap();
    let r = build_ref_unet::<f32>(&RefUNetConfig::default(), 0).unwrap();
    let d = Duration::from_secs(10);
    let mut ok = true;
    let mut runs = Vec::new();
    for _ in 0..3 {
        let a = measure_model_fps(&u, full_input(), d, 10).unwrap();
        let b = measure_model_fps(&r, full_input(), d, 10).unwrap();
        ok &= a.fps > b.fps && a.elapsed_seconds >= 10.0 && b.elapsed_seconds >= 10.0;
        runs.push(format!("{:.2} vs {:.2}", a.fps, b.fps));
    }
    verdict(ok, format!("fps ultraunet vs unet at 224 px, batch 1, 10 warmup frames: {}", runs.join("; ")))
}

fn c4() -> Verdict {
    let start = Instant::now();
    let (mut w64, mut w32, mut cases, mut failed) = (0.0f64, 0.0f64, 0, Vec::new());
    for case in suite::ALL {
        for (name, (e64, e32)) in case() {
            cases += 1;
            w64 = w64.max(e64);
            w32 = w32.max(e32);
            if !(e64 < TOL_F64 && e32 < TOL_F32) {
                failed.push(name);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        failed.is_empty() && secs < 120.0,
        format!(
            "{cases} checks x 20 seeds, worst relative error f64 {w64:.1e}, f32 {w32:.1e}, {secs:.1}s{}",
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(", ")) }
        ),
    )
}

fn timed(limit: f64, what: &str, f: impl FnOnce()) -> Verdict {
    let start = Instant::now();
    f();
    let secs = start.elapsed().as_secs_f64();
    verdict(secs < limit, format!("{what}, {secs:.2}s"))
}

fn c5() -> Verdict {
    timed(30.0, "200 pairs: dice exact, msd to 1e-9, largest component exact", || {
        oracles::dice_matches_set_counting(200);
        oracles::msd_matches_brute_force(200);
        oracles::largest_component_matches_flood_fill(200);
    })
}

fn c6() -> Verdict {
    timed(30.0, "500 blobs idempotent, subset, connectivity kept; 9x3 bar thins to a line", || {
        oracles::skeleton_properties_on_random_blobs(500);
        oracles::thick_bar_thins_to_a_line();
    })
}

fn c7(root: &Path) -> Verdict {
    let cfg = RunConfig {
        out_dir: root.join("c7"),
        ..RunConfig::default()
    };
    if std::env::var("ULTRASEG_ACCEPT_FULL").as_deref() != Ok("1") {
        // a training step costs roughly three forward passes
        let g = build_ultraunet::<f32>(&cfg.model, 0).unwrap();
        let fwd = measure_model_fps(&g, full_input(), Duration::from_secs(2), 10).unwrap();
        let train = cfg.data.count * 8 / 10;
        let hours = 3.0 / fwd.fps * (train * cfg.train.epochs_max * cfg.train.trials) as f64 / 3600.0;
        return Verdict {
            status: Status::Skip,
            detail: format!(
                "full run estimated at ~{hours:.0} CPU-hours against a 60 min target; set ULTRASEG_ACCEPT_FULL=1 to run"
            ),
        };
    }
    let start = Instant::now();
    let out = run_train(&cfg).unwrap();
    let mins = start.elapsed().as_secs_f64() / 60.0;
    let dice = out.report.dice.mean;
    let msd = out.report.msd.map(|m| m.mean);
    verdict(
        dice >= 0.80 && msd.is_some_and(|m| m <= 2.0),
        format!("mean test dice {dice:.4}, mean msd {msd:?} px over 3 trials, {mins:.1} min (target < 60)"),
    )
}

/// Reduced-scale stand-in for criterion 7; reports, never gates.
fn c7_smoke(root: &Path) -> Verdict {
    let mut cfg = RunConfig {
        out_dir: root.join("c7-smoke"),
        ..RunConfig::default()
    };
    cfg.data.count = 120;
    cfg.data.size = 64;
    cfg.train.epochs_max = 6;
    cfg.train.trials = 1;
    cfg.denoiser.epochs = 2;
    let start = Instant::now();
    let out = run_train(&cfg).unwrap();
    Verdict {
        status: Status::Info,
        detail: format!(
            "reduced scale (120 samples, 64 px, 6 epochs, 1 trial): test dice {:.4}, msd {:?} px, {:.0}s",
            out.report.dice.mean,
            out.report.msd.map(|m| m.mean),
            start.elapsed().as_secs_f64()
        ),
    }
}

fn c8(root: &Path) -> Verdict {
    let mut cfg = RunConfig {
        out_dir: root.join("c8"),
        ..RunConfig::default()
    };
    cfg.data.count = 150;
    cfg.data.size = 64;
    cfg.train.epochs_max = 6;
    cfg.train.trials = 2;
    cfg.denoiser.epochs = 2;
    let out = run_crossdomain(&cfg, &[false, true]).unwrap();
    let mut dice: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in &out.rows {
        dice.entry((r.test_profile.clone(), r.variant.clone())).or_default().push(r.dice);
    }
    let mean = |p: &str, v: &str| {
        let d = &dice[&(p.to_string(), v.to_string())];
        d.iter().sum::<f64>() / d.len() as f64
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for p in &cfg.data.test_profiles {
        let (raw, hm) = (mean(p, "raw"), mean(p, "hist-match"));
        ok &= hm >= raw;
        parts.push(format!("{p}: raw {raw:.4} -> hist-match {hm:.4}"));
    }
    verdict(
        ok,
        format!("trained on bright-wide (150 samples, 64 px, 6 epochs, 2 trials); {}", parts.join(", ")),
    )
}

fn tiny(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        model: UltraUNetConfig::miniature(3, 8),
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.data.count = 40;
    cfg.data.size = 32;
    cfg.train.epochs_max = 1;
    cfg.train.batch = 4;
    cfg.train.trials = 1;
    cfg.denoiser.epochs = 1;
    cfg
}

fn c9(root: &Path) -> Verdict {
    let out = run_ablate(&tiny(&root.join("c9")), 100_000).unwrap();
    let mut seen: Vec<&str> = out.rows.iter().map(|r| r.variant.as_str()).collect();
    seen.sort_unstable();
    let mut grid: Vec<String> = ablation_grid().into_iter().map(|(p, s, d)| ablation_variant(p, s, d)).collect();
    grid.sort_unstable();
    let a = &out.audit;
    verdict(
        seen == grid && a.draws == 100_000 && a.denoise_with_noise == 0 && a.denoise > 0 && a.psf + a.speckle > 0,
        format!(
            "{} rows over {} cells; audit of {} draws: {} denoise, {} psf, {} speckle, {} combining denoise with noise",
            out.rows.len(),
            grid.len(),
            a.draws,
            a.denoise,
            a.psf,
            a.speckle,
            a.denoise_with_noise
        ),
    )
}

fn c10() -> Verdict {
    let t = |v: &[f64]| Tensor4::from_vec(Shape4::new(1, 1, 1, v.len()), v.to_vec()).unwrap();
    let cfg = LossConfig::default();
    let l0 = lr_factor(0, 50, 0.9).unwrap();
    let l25 = lr_factor(25, 50, 0.9).unwrap();
    let focal = kernels::focal_loss(&t(&[0.5]), &t(&[1.0]), cfg.focal()).unwrap();
    let dice = kernels::dice_loss(&t(&[1.0, 1.0]), &t(&[1.0, 0.0]), cfg.eps).unwrap();
    verdict(
        l0 == 1.0 && (l25 - 0.53589).abs() <= 1e-4 && (focal - 0.043322).abs() <= 1e-5 && (dice - 1.0 / 3.0).abs() <= 1e-6,
        format!("lr_factor(0) {l0}, lr_factor(25) {l25:.6}, focal(0.5) {focal:.7}, dice_loss {dice:.9}"),
    )
}

fn c11(root: &Path) -> Verdict {
    let cfg = UltraUNetConfig::default();
    let g = build_ultraunet::<f32>(&cfg, 3).unwrap();
    let path = root.join("c11.uunw");
    save_weights(&g, &path).unwrap();
    let mut h = build_ultraunet::<f32>(&cfg, 4).unwrap();
    load_weights(&mut h, &path).unwrap();
    let bit_exact = g.params.iter().zip(h.params.iter()).all(|((_, a), (_, b))| {
        a.name == b.name && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });

    let a = run_train(&tiny(&root.join("c11a"))).unwrap();
    let b = run_train(&tiny(&root.join("c11b"))).unwrap();
    let read = |d: &Path| std::fs::read(d.join("results.csv")).unwrap();
    let same = read(&a.dir.root) == read(&b.dir.root);
    verdict(
        bit_exact && same,
        format!("weights bit-exact: {bit_exact}; results.csv byte-identical across same-seed runs: {same}"),
    )
}

fn main() {
    let root = tempfile::tempdir().expect("temporary directory");
    let root = root.path();
    panic::set_hook(Box::new(|_| {}));

    type Criterion<'a> = (&'a str, &'a str, Box<dyn Fn() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("C1", "parameter accounting", Box::new(c1)),
        ("C2", "FLOP accounting", Box::new(c2)),
        ("C3", "throughput ordering", Box::new(c3)),
        ("C4", "gradient suite", Box::new(c4)),
        ("C5", "metric oracles", Box::new(c5)),
        ("C6", "skeleton properties", Box::new(c6)),
        ("C7", "desk-scale learning", Box::new(|| c7(root))),
        ("C7-smoke", "desk-scale learning, reduced", Box::new(|| c7_smoke(root))),
        ("C8", "cross-domain hist-match", Box::new(|| c8(root))),
        ("C9", "ablation grid", Box::new(|| c9(root))),
        ("C10", "schedule and loss points", Box::new(c10)),
        ("C11", "persistence", Box::new(|| c11(root))),
    ];

    let mut failures = 0;
    for (id, title, f) in &criteria {
        let start = Instant::now();
        let v = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = match v.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failures += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
            Status::Info => "INFO",
        };
        println!("{tag} {id:<8} {title:<30} {} [{:.1}s]", v.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {failures} failing");
    if failures > 0 {
        std::process::exit(1);
    }
}
