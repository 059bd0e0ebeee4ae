//! Procedural tongue-like ultrasound frames with exact labels.
//!
//! A frame is a dark fan-shaped field with faint curved tissue strata and a
//! bright band along a quadratic Bézier arc (the tongue surface). The band's
//! cross-profile is Gaussian with its half-maximum at the half-thickness, and
//! the mask is exactly the set of pixels within that distance of the arc.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::{psf_blur, PsfKernel};
use crate::error::{Error, Result};
use crate::image::{derive_seed, GrayImage, Sample};
use crate::metrics::{BinaryMask, Contour, Point};
use crate::train::Splits;

/// Imaging conditions of one simulated acquisition setup. Geometric values
/// are fractions of the image side so a profile renders at any size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainProfile {
    pub name: String,
    /// Apex row as a fraction of the side (negative: above the image).
    pub apex_y: f64,
    /// Half of the fan's angular span, degrees.
    pub half_angle_deg: f64,
    /// Near and far radius of the fan, fractions of the side.
    pub radius: (f64, f64),
    pub background: f64,
    pub speckle_sigma: f64,
    pub layer_count: usize,
    pub layer_brightness: f64,
    pub contour_gain: f64,
    pub gamma: f64,
    pub blur_sigma: f64,
    /// Band half-thickness range in pixels.
    pub half_thickness: (f64, f64),
    /// Depth of the arc's endpoints, fractions of the side.
    pub depth: (f64, f64),
    /// Height of the Bézier control point above the endpoints, fractions of the side.
    pub arch: (f64, f64),
}

impl DomainProfile {
    pub fn bright_wide() -> Self {
        DomainProfile {
            name: "bright-wide".into(),
            apex_y: -0.15,
            half_angle_deg: 40.0,
            radius: (0.25, 1.1),
            background: 0.2,
            speckle_sigma: 0.35,
            layer_count: 3,
            layer_brightness: 0.12,
            contour_gain: 0.75,
            gamma: 0.8,
            blur_sigma: 0.8,
            half_thickness: (3.0, 4.0),
            depth: (0.5, 0.7),
            arch: (0.15, 0.35),
        }
    }

    pub fn dim_narrow() -> Self {
        DomainProfile {
            name: "dim-narrow".into(),
            apex_y: -0.05,
            half_angle_deg: 32.0,
            radius: (0.2, 1.0),
            background: 0.08,
            speckle_sigma: 0.25,
            layer_count: 2,
            layer_brightness: 0.06,
            contour_gain: 0.5,
            gamma: 1.4,
            blur_sigma: 1.2,
            half_thickness: (2.0, 3.0),
            depth: (0.45, 0.65),
            arch: (0.1, 0.3),
        }
    }

    pub fn noisy_broad() -> Self {
        DomainProfile {
            name: "noisy-broad".into(),
            apex_y: -0.25,
            half_angle_deg: 45.0,
            radius: (0.3, 1.25),
            background: 0.25,
            speckle_sigma: 0.6,
            layer_count: 4,
            layer_brightness: 0.15,
            contour_gain: 0.65,
            gamma: 1.0,
            blur_sigma: 0.6,
            half_thickness: (2.0, 4.0),
            depth: (0.5, 0.72),
            arch: (0.12, 0.32),
        }
    }

    pub fn builtin() -> Vec<DomainProfile> {
        vec![Self::bright_wide(), Self::dim_narrow(), Self::noisy_broad()]
    }

    pub fn by_name(name: &str) -> Result<DomainProfile> {
        Self::builtin().into_iter().find(|p| p.name == name).ok_or_else(|| {
            let known: Vec<String> = Self::builtin().into_iter().map(|p| p.name).collect();
            Error::Config(format!("unknown profile {name:?}; known: {}", known.join(", ")))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("profile {}: {m}", self.name)));
        if !(-0.5..=0.0).contains(&self.apex_y) {
            return bad("apex_y outside [-0.5, 0]");
        }
        if !(10.0..=60.0).contains(&self.half_angle_deg) {
            return bad("half_angle_deg outside [10, 60]");
        }
        if !(0.0 <= self.radius.0 && self.radius.0 < self.radius.1 && self.radius.1 <= 2.0) {
            return bad("radius range must satisfy 0 <= near < far <= 2");
        }
        let unit = [self.background, self.layer_brightness, self.contour_gain];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("intensities must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.speckle_sigma) || !(0.25..=4.0).contains(&self.gamma) {
            return bad("speckle_sigma must lie in [0, 1] and gamma in [0.25, 4]");
        }
        if !(0.0..=3.0).contains(&self.blur_sigma) {
            return bad("blur_sigma outside [0, 3]");
        }
        if !(1.0 <= self.half_thickness.0 && self.half_thickness.0 <= self.half_thickness.1 && self.half_thickness.1 <= 8.0) {
            return bad("half_thickness range must lie in [1, 8] px");
        }
        if !(0.2 <= self.depth.0 && self.depth.0 <= self.depth.1 && self.depth.1 <= 0.85) {
            return bad("depth range must lie in [0.2, 0.85]");
        }
        if !(0.0 <= self.arch.0 && self.arch.0 <= self.arch.1 && self.arch.1 <= 0.5) {
            return bad("arch range must lie in [0, 0.5]");
        }
        Ok(())
    }

    fn apex(&self, size: usize) -> Point {
        Point::new((size as f64 - 1.0) / 2.0, self.apex_y * size as f64)
    }

    /// True inside the fan sector (and the image).
    pub fn in_fan(&self, size: usize, p: Point) -> bool {
        let s = size as f64;
        if p.x < 0.0 || p.y < 0.0 || p.x > s - 1.0 || p.y > s - 1.0 {
            return false;
        }
        let a = self.apex(size);
        let (dx, dy) = (p.x - a.x, p.y - a.y);
        let r = dx.hypot(dy);
        let angle = dx.atan2(dy).abs().to_degrees();
        angle <= self.half_angle_deg && r >= self.radius.0 * s && r <= self.radius.1 * s
    }

    fn fan_half_width(&self, size: usize, y: f64) -> f64 {
        (y - self.apex(size).y) * self.half_angle_deg.to_radians().tan()
    }
}

/// Minimum number of points on a generated contour.
pub const MIN_CONTOUR_POINTS: usize = 64;

fn bezier(p0: Point, p1: Point, p2: Point, t: f64) -> Point {
    let u = 1.0 - t;
    Point::new(
        u * u * p0.x + 2.0 * u * t * p1.x + t * t * p2.x,
        u * u * p0.y + 2.0 * u * t * p1.y + t * t * p2.y,
    )
}

/// Resamples a dense polyline to `n` points equally spaced in arc length.
fn resample(dense: &[Point], n: usize) -> Vec<Point> {
    let mut cum = vec![0.0];
    for w in dense.windows(2) {
        cum.push(cum.last().unwrap() + w[0].dist(w[1]));
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let s = total * i as f64 / (n - 1) as f64;
        while j + 2 < cum.len() && cum[j + 1] < s {
            j += 1;
        }
        let seg = cum[j + 1] - cum[j];
        let f = if seg > 0.0 { ((s - cum[j]) / seg).clamp(0.0, 1.0) } else { 0.0 };
        out.push(Point::new(
            dense[j].x + f * (dense[j + 1].x - dense[j].x),
            dense[j].y + f * (dense[j + 1].y - dense[j].y),
        ));
    }
    out
}

/// Random arch-shaped arc spanning 40–80% of the fan width at its depth,
/// monotone in `x`, resampled to roughly one point per pixel of arc length
/// (at least [`MIN_CONTOUR_POINTS`]). `margin` keeps every point that far
/// inside the fan.
pub fn gen_contour<R: Rng + ?Sized>(profile: &DomainProfile, size: usize, margin: f64, rng: &mut R) -> Contour {
    let s = size as f64;
    let cx = (s - 1.0) / 2.0;
    let mut shrink = 1.0;
    loop {
        for _ in 0..32 {
            let y_base = rng.random_range(profile.depth.0..=profile.depth.1) * s;
            let fan_w = 2.0 * profile.fan_half_width(size, y_base).min(cx);
            let span = rng.random_range(0.4..=0.8) * fan_w * shrink;
            let shift = rng.random_range(-0.5..=0.5) * (fan_w - span) * 0.5;
            let tilt = rng.random_range(-0.08..=0.08) * s;
            let arch = rng.random_range(profile.arch.0..=profile.arch.1) * s * shrink;
            let p0 = Point::new(cx + shift - span / 2.0, y_base + tilt);
            let p2 = Point::new(cx + shift + span / 2.0, y_base - tilt);
            let p1 = Point::new(cx + shift + rng.random_range(-0.25..=0.25) * span, y_base - arch);
            let dense: Vec<Point> = (0..=1024).map(|i| bezier(p0, p1, p2, i as f64 / 1024.0)).collect();
            let length: f64 = dense.windows(2).map(|w| w[0].dist(w[1])).sum();
            let n = (length.ceil() as usize + 1).max(MIN_CONTOUR_POINTS);
            let points = resample(&dense, n);
            let inside = points.iter().all(|&p| {
                profile.in_fan(size, p)
                    && [(-margin, 0.0), (margin, 0.0), (0.0, -margin), (0.0, margin)]
                        .iter()
                        .all(|&(dx, dy)| profile.in_fan(size, Point::new(p.x + dx, p.y + dy)))
            });
            if inside {
                return Contour::new(points);
            }
        }
        shrink *= 0.8;
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(Point::new(a.x + t * vx, a.y + t * vy))
}

/// Distance from every pixel centre to the polyline, computed only within
/// `reach` of its bounding box (`INFINITY` elsewhere).
pub fn polyline_distance(contour: &Contour, size: usize, reach: f64) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; size * size];
    let pts = &contour.points;
    if pts.is_empty() {
        return out;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let lo = |v: f64| (v - reach).floor().max(0.0) as usize;
    let hi = |v: f64| ((v + reach).ceil().max(0.0) as usize).min(size - 1);
    for y in lo(y0)..=hi(y1) {
        for x in lo(x0)..=hi(x1) {
            let p = Point::new(x as f64, y as f64);
            let d = if pts.len() == 1 {
                p.dist(pts[0])
            } else {
                pts.windows(2).map(|w| segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min)
            };
            out[y * size + x] = d;
        }
    }
    out
}

/// A generated frame with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub sample: Sample,
    pub seed: u64,
    pub profile: String,
    pub half_thickness: f64,
}

/// Renders a frame around `contour`.
pub fn render_frame<R: Rng + ?Sized>(
    contour: &Contour,
    profile: &DomainProfile,
    size: usize,
    half_thickness: f64,
    rng: &mut R,
) -> Result<(GrayImage, BinaryMask)> {
    let s = size as f64;
    let apex = profile.apex(size);
    let band_sigma = half_thickness / (2.0 * std::f64::consts::LN_2).sqrt();
    let dist = polyline_distance(contour, size, 4.0 * band_sigma + half_thickness);
    let mask = BinaryMask::from_fn(size, size, |y, x| dist[y * size + x] <= half_thickness);

    let strata: Vec<(f64, f64)> = (0..profile.layer_count)
        .map(|_| {
            let r = rng.random_range(profile.radius.0..=profile.radius.1) * s;
            let width = rng.random_range(0.01..=0.03) * s;
            (r, width)
        })
        .collect();
    let mut fan = vec![false; size * size];
    let mut clean = GrayImage::from_fn(size, size, |y, x| {
        let p = Point::new(x as f64, y as f64);
        if !profile.in_fan(size, p) {
            return 0.0;
        }
        fan[y * size + x] = true;
        let r = p.dist(apex);
        // mild attenuation with depth
        let mut v = profile.background * (1.0 - 0.4 * (r / (profile.radius.1 * s)).min(1.0));
        for &(rk, wk) in &strata {
            v += profile.layer_brightness * (-0.5 * ((r - rk) / wk).powi(2)).exp();
        }
        let d = dist[y * size + x];
        if d.is_finite() {
            v += profile.contour_gain * (-0.5 * (d / band_sigma).powi(2)).exp();
        }
        v.clamp(0.0, 1.0) as f32
    });
    if profile.blur_sigma > 0.0 {
        clean = psf_blur(&clean, &PsfKernel::gaussian(profile.blur_sigma, profile.blur_sigma)?);
    }
    for (i, v) in clean.data_mut().iter_mut().enumerate() {
        if !fan[i] {
            *v = 0.0;
            continue;
        }
        let n: f64 = StandardNormal.sample(rng);
        let noisy = (*v as f64 * (1.0 + profile.speckle_sigma * n)).clamp(0.0, 1.0);
        *v = noisy.powf(profile.gamma) as f32;
    }
    Ok((clean, mask))
}

/// One complete sample from `seed`.
pub fn gen_sample(profile: &DomainProfile, size: usize, seed: u64) -> Result<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ht = rng.random_range(profile.half_thickness.0..=profile.half_thickness.1);
    let contour = gen_contour(profile, size, ht + 1.0, &mut rng);
    let (image, mask) = render_frame(&contour, profile, size, ht, &mut rng)?;
    Ok(SynthSample {
        sample: Sample {
            name: format!("{}-{seed:016x}", profile.name),
            image,
            mask,
            contour,
        },
        seed,
        profile: profile.name.clone(),
        half_thickness: ht,
    })
}

/// Generated samples plus a seeded 80/10/10 partition of their indices.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub samples: Vec<SynthSample>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SynthDataset {
    pub fn splits(&self) -> Splits {
        let take = |idx: &[usize]| idx.iter().map(|&i| self.samples[i].sample.clone()).collect();
        Splits {
            train: take(&self.train),
            val: take(&self.val),
            test: take(&self.test),
        }
    }
}

/// Sample `i` uses seed `derive_seed(seed, [i])`; the split is a seeded
/// shuffle with `count/10` validation and test samples each.
pub fn gen_dataset(profile: &DomainProfile, count: usize, seed: u64, size: usize) -> Result<SynthDataset> {
    profile.validate()?;
    if count < 10 {
        return Err(Error::invalid("gen_dataset", format!("need at least 10 samples, got {count}")));
    }
    if size < 32 {
        return Err(Error::invalid("gen_dataset", format!("image size {size} below 32")));
    }
    let samples = (0..count)
        .map(|i| gen_sample(profile, size, derive_seed(seed, &[i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX])));
    let n_hold = count / 10;
    let test = order.split_off(count - n_hold);
    let val = order.split_off(count - 2 * n_hold);
    Ok(SynthDataset {
        samples,
        train: order,
        val,
        test,
    })
}
