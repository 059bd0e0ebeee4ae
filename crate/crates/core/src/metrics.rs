//! Overlap and contour-distance metrics.
//!
//! The contour pipeline is: threshold → largest 8-connected component →
//! thinning → pixel centres → symmetric mean surface distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape4;

/// Row-major binary image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize) -> Self {
        BinaryMask {
            h,
            w,
            bits: vec![false; h * w],
        }
    }

    pub fn from_bits(h: usize, w: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != h * w {
            return Err(Error::invalid(
                "BinaryMask::from_bits",
                format!("{h}x{w} mask needs {} bits, got {}", h * w, bits.len()),
            ));
        }
        Ok(BinaryMask { h, w, bits })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                bits.push(f(y, x));
            }
        }
        BinaryMask { h, w, bits }
    }

    /// Foreground where `values[i] > threshold`.
    pub fn threshold(h: usize, w: usize, values: &[f32], threshold: f32) -> Result<Self> {
        Self::from_bits(h, w, values.iter().map(|&v| v > threshold).collect())
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.w + x]
    }

    /// Out-of-range coordinates read as background.
    pub fn get_signed(&self, y: isize, x: isize) -> bool {
        y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w && self.get(y as usize, x as usize)
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.w + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    /// `1.0` for foreground, `0.0` for background.
    pub fn to_f32(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::ShapeMismatch {
                op,
                left: Shape4::new(1, 1, self.h, self.w),
                right: Shape4::new(1, 1, other.h, other.w),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// Ordered contour points in pixel coordinates (`x` = column, `y` = row,
/// pixel centres at integers).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<Point>,
}

impl Contour {
    pub fn new(points: Vec<Point>) -> Self {
        Contour { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `2|P∩G| / (|P| + |G|)`; two empty masks score 1.
pub fn dice_score(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.check_same(gt, "dice_score")?;
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.bits.iter().zip(&gt.bits) {
        p += a as usize;
        g += b as usize;
        inter += (a && b) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Keeps the largest 8-connected component. Equal areas go to the component
/// whose first pixel comes first in scan order.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.h, mask.w);
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let i = y * w + x;
            // already-visited neighbours: W, NW, N, NE
            let mut neigh = [None; 4];
            if x > 0 {
                neigh[0] = Some(i - 1);
            }
            if y > 0 {
                neigh[2] = Some(i - w);
                if x > 0 {
                    neigh[1] = Some(i - w - 1);
                }
                if x + 1 < w {
                    neigh[3] = Some(i - w + 1);
                }
            }
            for j in neigh.into_iter().flatten() {
                if mask.bits[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        // keep the smaller index as root so roots are first pixels
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut area = vec![0usize; h * w];
    for i in 0..h * w {
        if mask.bits[i] {
            let r = find(&mut parent, i);
            area[r] += 1;
        }
    }
    // roots are first pixels, so scanning in order gives the tie-break for free
    let best = (0..h * w).filter(|&i| area[i] > 0).fold(None, |best: Option<usize>, i| match best {
        Some(b) if area[b] >= area[i] => Some(b),
        _ => Some(i),
    });
    let mut out = BinaryMask::new(h, w);
    if let Some(root) = best {
        for i in 0..h * w {
            if mask.bits[i] && find(&mut parent, i) == root {
                out.bits[i] = true;
            }
        }
    }
    out
}

// P2..P9 clockwise from north
const RING: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

fn ring(mask: &BinaryMask, y: usize, x: usize) -> [bool; 8] {
    let mut r = [false; 8];
    for (k, (dy, dx)) in RING.iter().enumerate() {
        r[k] = mask.get_signed(y as isize + dy, x as isize + dx);
    }
    r
}

fn zs_removable(n: &[bool; 8], first: bool) -> bool {
    let b = n.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
    if first {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Zhang–Suen thinning, iterated until a full pass removes nothing.
///
/// Candidates for each sub-iteration are found on a snapshot as usual, but
/// are deleted in scan order only if they still satisfy the deletion
/// conditions on the partially thinned image. Plain parallel deletion erases
/// 2-pixel-thick diagonals and 2x2 blocks entirely; the re-check only ever
/// deletes pixels whose neighbourhood forms a single run (a simple point), so
/// every 8-connected component survives with its connectivity intact.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut m = mask.clone();
    let mut candidates = Vec::new();
    loop {
        let mut changed = false;
        for first in [true, false] {
            candidates.clear();
            for y in 0..m.h {
                for x in 0..m.w {
                    if m.get(y, x) && zs_removable(&ring(&m, y, x), first) {
                        candidates.push((y, x));
                    }
                }
            }
            for &(y, x) in &candidates {
                if zs_removable(&ring(&m, y, x), first) {
                    m.set(y, x, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return m;
        }
    }
}

/// Foreground pixel centres in scan order.
pub fn mask_to_points(mask: &BinaryMask) -> Contour {
    let mut pts = Vec::new();
    for y in 0..mask.h {
        for x in 0..mask.w {
            if mask.get(y, x) {
                pts.push(Point::new(x as f64, y as f64));
            }
        }
    }
    Contour::new(pts)
}

/// Sum over `from` of the distance to the nearest point of `to`, which must
/// be sorted by `x`.
fn sum_nearest(from: &[Point], to: &[Point]) -> f64 {
    let mut total = 0.0;
    for &p in from {
        let start = to.partition_point(|q| q.x < p.x);
        let mut best = f64::INFINITY;
        for q in &to[start..] {
            if q.x - p.x >= best {
                break;
            }
            best = best.min(p.dist(*q));
        }
        for q in to[..start].iter().rev() {
            if p.x - q.x >= best {
                break;
            }
            best = best.min(p.dist(*q));
        }
        total += best;
    }
    total
}

/// Symmetric mean nearest-point distance
/// `(Σ_v min_u |v-u| + Σ_u min_v |u-v|) / (|U| + |V|)`.
/// `None` when either contour is empty: the distance is undefined, not zero.
pub fn msd(u: &Contour, v: &Contour) -> Option<f64> {
    if u.is_empty() || v.is_empty() {
        return None;
    }
    let sorted = |c: &Contour| {
        let mut p = c.points.clone();
        p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        p
    };
    let (su, sv) = (sorted(u), sorted(v));
    let total = sum_nearest(&u.points, &sv) + sum_nearest(&v.points, &su);
    Some(total / (u.len() + v.len()) as f64)
}

/// Per-frame metric result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub dice: f64,
    /// `None` when the prediction is empty after post-processing.
    pub msd: Option<f64>,
}

/// Logits are thresholded at 0 (probability 0.5). Dice is computed on the
/// raw thresholded mask; MSD on the skeleton of its largest component
/// against `gt_contour`.
pub fn evaluate(logits: &[f32], gt_mask: &BinaryMask, gt_contour: &Contour) -> Result<FrameScore> {
    let pred = BinaryMask::threshold(gt_mask.h, gt_mask.w, logits, 0.0)?;
    let dice = dice_score(&pred, gt_mask)?;
    let skeleton = skeletonize(&largest_component(&pred));
    Ok(FrameScore {
        dice,
        msd: msd(&mask_to_points(&skeleton), gt_contour),
    })
}

/// Mean Dice and MSD over frames; frames with undefined MSD are counted
/// separately and left out of the MSD mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub frames: usize,
    pub dice: f64,
    pub msd: Option<f64>,
    pub msd_undefined: usize,
}

impl MetricSummary {
    pub fn from_frames(scores: &[FrameScore]) -> Self {
        let frames = scores.len();
        let dice = if frames == 0 {
            0.0
        } else {
            scores.iter().map(|s| s.dice).sum::<f64>() / frames as f64
        };
        let defined: Vec<f64> = scores.iter().filter_map(|s| s.msd).collect();
        MetricSummary {
            frames,
            dice,
            msd: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            msd_undefined: frames - defined.len(),
        }
    }
}
