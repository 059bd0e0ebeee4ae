//! Brute-force oracles and property checks for the contour metrics, shared
//! by the metric tests and the acceptance harness.

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ultraseg::metrics::{dice_score, largest_component, mask_to_points, msd, skeletonize, BinaryMask, Contour, Point};

pub fn random_mask(r: &mut ChaCha8Rng) -> BinaryMask {
    let h = r.random_range(1..=16);
    let w = r.random_range(1..=16);
    let density = r.random_range(0.0..0.8);
    BinaryMask::from_fn(h, w, |_, _| r.random_bool(density))
}

pub fn pair(r: &mut ChaCha8Rng) -> (BinaryMask, BinaryMask) {
    let a = random_mask(r);
    let density = r.random_range(0.0..0.8);
    let b = BinaryMask::from_fn(a.h(), a.w(), |_, _| r.random_bool(density));
    (a, b)
}

pub fn pixel_set(m: &BinaryMask) -> HashSet<(usize, usize)> {
    (0..m.h())
        .flat_map(|y| (0..m.w()).map(move |x| (y, x)))
        .filter(|&(y, x)| m.get(y, x))
        .collect()
}

pub fn brute_msd(u: &[Point], v: &[Point]) -> Option<f64> {
    if u.is_empty() || v.is_empty() {
        return None;
    }
    let nearest = |p: &Point, set: &[Point]| set.iter().map(|q| p.dist(*q)).fold(f64::INFINITY, f64::min);
    let total: f64 = u.iter().map(|p| nearest(p, v)).sum::<f64>() + v.iter().map(|p| nearest(p, u)).sum::<f64>();
    Some(total / (u.len() + v.len()) as f64)
}

/// 8-connected components by breadth-first flood fill, in order of their
/// first pixel in scan order.
pub fn components(m: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (m.h(), m.w());
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m.get(y, x) || seen[y * w + x] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([(y, x)]);
            seen[y * w + x] = true;
            while let Some((cy, cx)) = queue.pop_front() {
                comp.push((cy, cx));
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (ny, nx) = (cy as isize + dy, cx as isize + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if m.get(ny, nx) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            queue.push_back((ny, nx));
                        }
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

pub fn flood_largest(m: &BinaryMask) -> BinaryMask {
    let mut best: Option<Vec<(usize, usize)>> = None;
    for c in components(m) {
        if best.as_ref().is_none_or(|b| c.len() > b.len()) {
            best = Some(c);
        }
    }
    let mut out = BinaryMask::new(m.h(), m.w());
    for (y, x) in best.unwrap_or_default() {
        out.set(y, x, true);
    }
    out
}

/// Dice against set-arithmetic counting, exactly, on `n` random pairs.
pub fn dice_matches_set_counting(n: usize) {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..n {
        let (a, b) = pair(&mut r);
        let (sa, sb) = (pixel_set(&a), pixel_set(&b));
        let expected = if sa.is_empty() && sb.is_empty() {
            1.0
        } else {
            2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
        };
        assert_eq!(dice_score(&a, &b).unwrap(), expected);
    }
}

/// MSD against the quadratic oracle to 1e-9: `n` mask pairs, then `n`
/// sub-pixel point clouds.
pub fn msd_matches_brute_force(n: usize) {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..n {
        let (a, b) = pair(&mut r);
        let (u, v) = (mask_to_points(&a), mask_to_points(&b));
        match (msd(&u, &v), brute_msd(&u.points, &v.points)) {
            (None, None) => {}
            (Some(x), Some(y)) => assert!((x - y).abs() < 1e-9, "{x} vs {y}"),
            other => panic!("definedness differs: {other:?}"),
        }
    }
    // sub-pixel contours, as used for ground truth
    for _ in 0..n {
        let n = r.random_range(1..40);
        let m = r.random_range(1..40);
        let mut pts = |k| (0..k).map(|_| Point::new(r.random_range(0.0..20.0), r.random_range(0.0..20.0))).collect::<Vec<_>>();
        let (u, v) = (pts(n), pts(m));
        let got = msd(&Contour::new(u.clone()), &Contour::new(v.clone())).unwrap();
        assert!((got - brute_msd(&u, &v).unwrap()).abs() < 1e-9);
    }
}

pub fn largest_component_matches_flood_fill(n: usize) {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..n {
        let m = random_mask(&mut r);
        assert_eq!(largest_component(&m), flood_largest(&m));
    }
}

/// A union of random discs, bars and random walks.
pub fn blob(r: &mut ChaCha8Rng) -> BinaryMask {
    let (h, w) = (r.random_range(8..=28), r.random_range(8..=28));
    let mut m = BinaryMask::new(h, w);
    for _ in 0..r.random_range(1..=4) {
        match r.random_range(0..3) {
            0 => {
                let (cy, cx) = (r.random_range(0.0..h as f64), r.random_range(0.0..w as f64));
                let rad = r.random_range(1.0..6.0f64);
                for y in 0..h {
                    for x in 0..w {
                        if (y as f64 - cy).hypot(x as f64 - cx) <= rad {
                            m.set(y, x, true);
                        }
                    }
                }
            }
            1 => {
                let (y0, x0) = (r.random_range(0..h), r.random_range(0..w));
                let (bh, bw) = (r.random_range(1..=6), r.random_range(1..=12));
                for y in y0..(y0 + bh).min(h) {
                    for x in x0..(x0 + bw).min(w) {
                        m.set(y, x, true);
                    }
                }
            }
            _ => {
                let (mut y, mut x) = (r.random_range(0..h) as isize, r.random_range(0..w) as isize);
                for _ in 0..r.random_range(5..60) {
                    m.set(y as usize, x as usize, true);
                    y = (y + r.random_range(-1i64..=1) as isize).clamp(0, h as isize - 1);
                    x = (x + r.random_range(-1i64..=1) as isize).clamp(0, w as isize - 1);
                }
            }
        }
    }
    m
}

/// Idempotence, subset and per-component connectivity on `n` blobs.
pub fn skeleton_properties_on_random_blobs(n: usize) {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for i in 0..n {
        let m = blob(&mut r);
        let s = skeletonize(&m);
        assert_eq!(skeletonize(&s), s, "blob {i}: not idempotent");
        let (pm, ps) = (pixel_set(&m), pixel_set(&s));
        assert!(ps.is_subset(&pm), "blob {i}: skeleton leaves the input");
        // every input component keeps exactly one connected skeleton piece
        let comps = components(&m);
        let skel_comps = components(&s);
        assert_eq!(comps.len(), skel_comps.len(), "blob {i}: component count changed");
        for c in &comps {
            let members: HashSet<_> = c.iter().copied().collect();
            let inside = skel_comps.iter().filter(|sc| sc.iter().all(|p| members.contains(p))).count();
            assert_eq!(inside, 1, "blob {i}: component split or lost");
        }
    }
}

/// A 3x9 bar thins to a line one pixel thick.
pub fn thick_bar_thins_to_a_line() {
    let m = BinaryMask::from_fn(7, 13, |y, x| (2..5).contains(&y) && (2..11).contains(&x));
    let s = skeletonize(&m);
    assert!(s.count() > 0);
    for x in 0..13 {
        assert!((0..7).filter(|&y| s.get(y, x)).count() <= 1, "column {x} thicker than one pixel");
    }
    assert_eq!(components(&s).len(), 1);
}
