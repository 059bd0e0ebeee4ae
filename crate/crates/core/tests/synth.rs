use ultraseg::augment::ReferenceHistogram;
use ultraseg::metrics::{evaluate, Point};
use ultraseg::synth::{gen_dataset, gen_sample, polyline_distance, DomainProfile};

#[test]
fn same_seed_regenerates_identical_samples() {
    for p in DomainProfile::builtin() {
        let a = gen_sample(&p, 64, 99).unwrap();
        let b = gen_sample(&p, 64, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.sample.contour, gen_sample(&p, 64, 100).unwrap().sample.contour);
    }
}

#[test]
fn arc_length_spacing_is_uniform() {
    for p in DomainProfile::builtin() {
        for seed in 0..20 {
            let c = gen_sample(&p, 224, seed).unwrap().sample.contour;
            let gaps: Vec<f64> = c.points.windows(2).map(|w| w[0].dist(w[1])).collect();
            let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
            for g in &gaps {
                assert!((g - mean).abs() <= 0.1 * mean, "{}: gap {g} vs mean {mean}", p.name);
            }
        }
    }
}

#[test]
fn mask_is_the_half_thickness_band() {
    let p = DomainProfile::dim_narrow();
    let s = gen_sample(&p, 96, 5).unwrap();
    let d = polyline_distance(&s.sample.contour, 96, 10.0);
    for y in 0..96 {
        for x in 0..96 {
            assert_eq!(s.sample.mask.get(y, x), d[y * 96 + x] <= s.half_thickness);
        }
    }
    assert!((2.0..=3.0).contains(&s.half_thickness));
}

#[test]
fn band_is_brighter_than_background_and_mask_connected() {
    for p in DomainProfile::builtin() {
        for seed in 0..10 {
            let s = gen_sample(&p, 128, seed).unwrap().sample;
            let (mut band, mut nb, mut bg, mut nbg) = (0.0, 0, 0.0, 0);
            for y in 0..128 {
                for x in 0..128 {
                    if !p.in_fan(128, Point::new(x as f64, y as f64)) {
                        continue;
                    }
                    if s.mask.get(y, x) {
                        band += s.image.get(y, x) as f64;
                        nb += 1;
                    } else {
                        bg += s.image.get(y, x) as f64;
                        nbg += 1;
                    }
                }
            }
            let (band, bg) = (band / nb as f64, bg / nbg as f64);
            assert!(band > 2.0 * bg, "{} seed {seed}: band {band} bg {bg}", p.name);
            assert!(!s.mask.is_empty());
            assert_eq!(ultraseg::metrics::largest_component(&s.mask), s.mask);
        }
    }
}

#[test]
fn perfect_prediction_recovers_the_contour() {
    for p in DomainProfile::builtin() {
        for size in [64, 224] {
            for seed in 0..8 {
                let s = gen_sample(&p, size, seed).unwrap().sample;
                let logits: Vec<f32> = s.mask.bits().iter().map(|&b| if b { 10.0 } else { -10.0 }).collect();
                let score = evaluate(&logits, &s.mask, &s.contour).unwrap();
                assert_eq!(score.dice, 1.0);
                let msd = score.msd.unwrap();
                assert!(msd <= 1.5, "{} size {size} seed {seed}: msd {msd}", p.name);
            }
        }
    }
}

#[test]
fn profiles_are_statistically_separable() {
    let hist = |p: &DomainProfile| {
        let d = gen_dataset(p, 20, 1, 96).unwrap();
        ReferenceHistogram::from_images(d.samples.iter().map(|s| &s.sample.image)).unwrap()
    };
    let all: Vec<_> = DomainProfile::builtin().iter().map(hist).collect();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let d = all[i].sup_distance(&all[j]);
            assert!(d > 0.05, "profiles {i} and {j}: sup distance {d}");
        }
    }
}

#[test]
fn datasets_are_reproducible() {
    let p = DomainProfile::noisy_broad();
    let a = gen_dataset(&p, 12, 8, 32).unwrap();
    let b = gen_dataset(&p, 12, 8, 32).unwrap();
    assert_eq!((a.train.clone(), a.val.clone(), a.test.clone()), (b.train, b.val, b.test));
    for (x, y) in a.samples.iter().zip(&b.samples) {
        assert_eq!(x.sample.image.data(), y.sample.image.data());
        assert_eq!(x.sample.mask, y.sample.mask);
    }
}
