//! Preprocessing and training-time augmentation.
//!
//! A plan is sampled per sample as `flip → (PSF → speckle | denoise | none)`;
//! the denoise branch never co-occurs with PSF or speckle. Geometric steps
//! (flip) move mask and contour with the image; intensity steps touch only
//! the image.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{derive_seed, GrayImage, RawImage, Sample};
use crate::metrics::{BinaryMask, Contour, Point};
use crate::model::ModelGraph;

/// Bilinear resize (half-pixel centres, edge clamped) to `size x size`, then
/// division by the bit-depth maximum.
pub fn preprocess(raw: &RawImage, size: usize) -> Result<GrayImage> {
    if raw.h == 0 || raw.w == 0 || size == 0 {
        return Err(Error::invalid("preprocess", format!("zero-sized image {}x{}", raw.h, raw.w)));
    }
    if raw.pixels.len() != raw.h * raw.w {
        return Err(Error::invalid("preprocess", "pixel count does not match dimensions"));
    }
    let scale = 1.0 / raw.max_value.max(1) as f32;
    let src = GrayImage::from_vec(raw.h, raw.w, raw.pixels.iter().map(|&p| p as f32 * scale).collect())?;
    let mut out = resize_bilinear(&src, size, size);
    out.clamp01();
    Ok(out)
}

pub fn resize_bilinear(img: &GrayImage, h: usize, w: usize) -> GrayImage {
    if (img.h(), img.w()) == (h, w) {
        return img.clone();
    }
    let sy = img.h() as f64 / h as f64;
    let sx = img.w() as f64 / w as f64;
    let coord = |dst: usize, s: f64, n: usize| {
        let c = ((dst as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        (i0, (i0 + 1).min(n - 1), (c - i0 as f64) as f32)
    };
    GrayImage::from_fn(h, w, |y, x| {
        let (y0, y1, fy) = coord(y, sy, img.h());
        let (x0, x1, fx) = coord(x, sx, img.w());
        let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
        let bot = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Mirrors image, mask and contour about the vertical axis (`x ↦ w - 1 - x`).
pub fn hflip(img: &GrayImage, mask: &BinaryMask, contour: &Contour) -> (GrayImage, BinaryMask, Contour) {
    let w = img.w();
    let img = GrayImage::from_fn(img.h(), w, |y, x| img.get(y, w - 1 - x));
    let mw = mask.w();
    let mask = BinaryMask::from_fn(mask.h(), mw, |y, x| mask.get(y, mw - 1 - x));
    let contour = Contour::new(
        contour
            .points
            .iter()
            .map(|p| Point::new((w - 1) as f64 - p.x, p.y))
            .collect(),
    );
    (img, mask, contour)
}

/// Multiplicative speckle `clamp(img · (1 + σ n))`, `n ~ N(0, 1)` per pixel.
pub fn speckle<R: Rng + ?Sized>(img: &GrayImage, sigma: f64, rng: &mut R) -> GrayImage {
    let mut out = img.clone();
    for v in out.data_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v = (*v as f64 * (1.0 + sigma * n)).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Normalised blur kernel; `k` is odd.
#[derive(Clone, Debug, PartialEq)]
pub struct PsfKernel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub sigma_axial: f64,
    pub sigma_lateral: f64,
}

impl PsfKernel {
    /// Arbitrary weights, rescaled to unit sum.
    pub fn from_weights(k: usize, weights: Vec<f64>) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::invalid("PsfKernel", format!("kernel size must be odd, got {k}")));
        }
        if weights.len() != k * k || weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("PsfKernel", "need k*k finite non-negative weights"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("PsfKernel", "weights sum to zero"));
        }
        Ok(PsfKernel {
            k,
            weights: weights.into_iter().map(|w| w / total).collect(),
            sigma_axial: 0.0,
            sigma_lateral: 0.0,
        })
    }

    pub fn delta() -> Self {
        Self::from_weights(1, vec![1.0]).expect("valid")
    }

    /// Axis-aligned Gaussian: `sigma_axial` along rows (depth), `sigma_lateral`
    /// along columns. Size `2·ceil(3·σmax) + 1`.
    pub fn gaussian(sigma_axial: f64, sigma_lateral: f64) -> Result<Self> {
        if !(sigma_axial > 0.0 && sigma_lateral > 0.0) {
            return Err(Error::invalid("PsfKernel::gaussian", "sigmas must be positive"));
        }
        let r = (3.0 * sigma_axial.max(sigma_lateral)).ceil() as usize;
        let k = 2 * r + 1;
        let mut w = Vec::with_capacity(k * k);
        for dy in 0..k {
            for dx in 0..k {
                let (y, x) = (dy as f64 - r as f64, dx as f64 - r as f64);
                w.push((-0.5 * (y * y / (sigma_axial * sigma_axial) + x * x / (sigma_lateral * sigma_lateral))).exp());
            }
        }
        let mut kernel = Self::from_weights(k, w)?;
        kernel.sigma_axial = sigma_axial;
        kernel.sigma_lateral = sigma_lateral;
        Ok(kernel)
    }
}

/// 2-D convolution with edge-replicate padding.
pub fn psf_blur(img: &GrayImage, kernel: &PsfKernel) -> GrayImage {
    let r = (kernel.k / 2) as isize;
    let mut out = GrayImage::from_fn(img.h(), img.w(), |y, x| {
        let mut acc = 0.0f64;
        for dy in -r..=r {
            let row = (dy + r) as usize * kernel.k;
            for dx in -r..=r {
                let w = kernel.weights[row + (dx + r) as usize];
                acc += w * img.get_clamped(y as isize + dy, x as isize + dx) as f64;
            }
        }
        acc as f32
    });
    out.clamp01();
    out
}

pub const HIST_BINS: usize = 256;

fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * HIST_BINS as f32) as usize).min(HIST_BINS - 1)
}

/// Cumulative intensity distribution on 256 equal bins over `[0, 1]`.
/// `cdf[k]` is the fraction of pixels below the upper edge of bin `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ReferenceHistogram {
    cdf: Vec<f64>,
}

impl TryFrom<Vec<f64>> for ReferenceHistogram {
    type Error = Error;

    fn try_from(cdf: Vec<f64>) -> Result<Self> {
        if cdf.len() != HIST_BINS {
            return Err(Error::Config(format!("histogram needs {HIST_BINS} values, got {}", cdf.len())));
        }
        if cdf.iter().any(|v| !v.is_finite()) || cdf.windows(2).any(|w| w[1] < w[0]) || cdf[0] < 0.0 {
            return Err(Error::Config("histogram CDF must be finite and non-decreasing".into()));
        }
        if (cdf[HIST_BINS - 1] - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("histogram CDF must end at 1, got {}", cdf[HIST_BINS - 1])));
        }
        Ok(ReferenceHistogram { cdf })
    }
}

impl From<ReferenceHistogram> for Vec<f64> {
    fn from(h: ReferenceHistogram) -> Self {
        h.cdf
    }
}

impl ReferenceHistogram {
    /// Pooled histogram of all pixels of `images`.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a GrayImage>) -> Result<Self> {
        let mut counts = [0u64; HIST_BINS];
        for img in images {
            for &v in img.data() {
                counts[bin_of(v)] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("ReferenceHistogram", "no pixels"));
        }
        let mut acc = 0u64;
        let cdf = counts
            .iter()
            .map(|&c| {
                acc += c;
                acc as f64 / total as f64
            })
            .collect();
        Ok(ReferenceHistogram { cdf })
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    fn below(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.cdf[k - 1]
        }
    }

    /// Piecewise-linear CDF through the bin edges.
    pub fn eval(&self, v: f64) -> f64 {
        let t = v.clamp(0.0, 1.0) * HIST_BINS as f64;
        let k = (t as usize).min(HIST_BINS - 1);
        let lo = self.below(k);
        lo + (t - k as f64) * (self.cdf[k] - lo)
    }

    /// Smallest intensity whose CDF reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        let k = self
            .cdf
            .iter()
            .position(|&c| c >= q && c > 0.0)
            .unwrap_or(HIST_BINS - 1);
        let lo = self.below(k);
        let span = self.cdf[k] - lo;
        let frac = if span > 0.0 { ((q - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        (k as f64 + frac) / HIST_BINS as f64
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// Largest absolute CDF difference over the bin edges.
    pub fn sup_distance(&self, other: &ReferenceHistogram) -> f64 {
        self.cdf
            .iter()
            .zip(&other.cdf)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out = ref⁻¹(src(img))`. A constant source image maps to the reference
/// median.
pub fn histogram_match(img: &GrayImage, reference: &ReferenceHistogram) -> GrayImage {
    let (lo, hi) = img
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if img.data().is_empty() || lo == hi {
        let m = reference.median() as f32;
        return GrayImage::from_fn(img.h(), img.w(), |_, _| m);
    }
    let src = ReferenceHistogram::from_images([img]).expect("non-empty");
    // one lookup per distinct value would be cheaper, but images are small
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = reference.quantile(src.eval(*v as f64)) as f32;
    }
    out.clamp01();
    out
}

/// Forward pass of a single-channel image-to-image network, clamped to `[0, 1]`.
pub fn denoise_augment(img: &GrayImage, denoiser: &ModelGraph<f32>) -> Result<GrayImage> {
    let y = denoiser.forward(&img.to_tensor())?;
    let mut out = GrayImage::from_tensor(&y, 0);
    out.clamp01();
    Ok(out)
}

/// Augmentation probabilities. The top-level branch is noise with
/// `p_noise`, denoise with `p_denoise`, nothing otherwise. Inside the noise
/// branch PSF and speckle are drawn independently. Disabled augmentations
/// keep their branch probability but contribute nothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugPolicy {
    pub p_flip: f64,
    pub p_noise: f64,
    pub p_denoise: f64,
    pub p_speckle: f64,
    pub p_psf: f64,
    pub speckle_sigma: (f64, f64),
    pub psf_sigma: (f64, f64),
    pub flip: bool,
    pub speckle: bool,
    pub psf: bool,
    pub denoise: bool,
}

impl Default for AugPolicy {
    fn default() -> Self {
        AugPolicy {
            p_flip: 0.5,
            p_noise: 0.25,
            p_denoise: 0.25,
            p_speckle: 0.5,
            p_psf: 0.5,
            speckle_sigma: (0.05, 0.4),
            psf_sigma: (0.5, 2.5),
            flip: true,
            speckle: true,
            psf: true,
            denoise: true,
        }
    }
}

impl AugPolicy {
    /// No stochastic augmentation at all (validation / test path).
    pub fn disabled() -> Self {
        AugPolicy {
            flip: false,
            speckle: false,
            psf: false,
            denoise: false,
            ..Self::default()
        }
    }

    /// Flip on, the three intensity augmentations toggled individually.
    pub fn with_toggles(psf: bool, speckle: bool, denoise: bool) -> Self {
        AugPolicy {
            psf,
            speckle,
            denoise,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_flip, self.p_noise, self.p_denoise, self.p_speckle, self.p_psf];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if self.p_noise + self.p_denoise > 1.0 + 1e-12 {
            return Err(Error::Config("p_noise + p_denoise must not exceed 1".into()));
        }
        for (lo, hi) in [self.speckle_sigma, self.psf_sigma] {
            if !(lo >= 0.0 && hi >= lo) {
                return Err(Error::Config(format!("invalid sigma range ({lo}, {hi})")));
            }
        }
        if self.psf && self.psf_sigma.0 <= 0.0 {
            return Err(Error::Config("PSF sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn sample_plan<R: Rng + ?Sized>(&self, rng: &mut R) -> AugPlan {
        // every draw is taken unconditionally so toggles do not shift the stream
        let flip = rng.random::<f64>() < self.p_flip;
        let branch_u = rng.random::<f64>();
        let want_psf = rng.random::<f64>() < self.p_psf;
        let want_speckle = rng.random::<f64>() < self.p_speckle;
        let sa = rng.random_range(self.psf_sigma.0..=self.psf_sigma.1);
        let sl = rng.random_range(self.psf_sigma.0..=self.psf_sigma.1);
        let ss = rng.random_range(self.speckle_sigma.0..=self.speckle_sigma.1);
        let branch = if branch_u < self.p_noise {
            Branch::Noise {
                psf: (self.psf && want_psf).then_some((sa, sl)),
                speckle: (self.speckle && want_speckle).then_some(ss),
            }
        } else if branch_u < self.p_noise + self.p_denoise {
            if self.denoise {
                Branch::Denoise
            } else {
                Branch::None
            }
        } else {
            Branch::None
        };
        AugPlan {
            flip: self.flip && flip,
            branch,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Branch {
    None,
    Noise {
        /// `(σ_axial, σ_lateral)`.
        psf: Option<(f64, f64)>,
        speckle: Option<f64>,
    },
    Denoise,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugPlan {
    pub flip: bool,
    pub branch: Branch,
}

impl AugPlan {
    pub fn has_psf(&self) -> bool {
        matches!(self.branch, Branch::Noise { psf: Some(_), .. })
    }

    pub fn has_speckle(&self) -> bool {
        matches!(self.branch, Branch::Noise { speckle: Some(_), .. })
    }

    pub fn has_denoise(&self) -> bool {
        self.branch == Branch::Denoise
    }
}

/// Applies sampled plans; owns the (optional) denoiser.
#[derive(Clone, Debug)]
pub struct Augmenter {
    pub policy: AugPolicy,
    pub denoiser: Option<ModelGraph<f32>>,
}

impl Augmenter {
    pub fn new(policy: AugPolicy, denoiser: Option<ModelGraph<f32>>) -> Result<Self> {
        policy.validate()?;
        Ok(Augmenter { policy, denoiser })
    }

    pub fn disabled() -> Self {
        Augmenter {
            policy: AugPolicy::disabled(),
            denoiser: None,
        }
    }

    /// Augments one sample; `seed` fixes both the plan and the noise.
    pub fn augment(&self, sample: &Sample, seed: u64) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = self.policy.sample_plan(&mut rng);
        self.apply(sample, &plan, &mut rng)
    }

    pub fn apply<R: Rng + ?Sized>(&self, sample: &Sample, plan: &AugPlan, rng: &mut R) -> Result<Sample> {
        let mut out = sample.clone();
        if plan.flip {
            let (i, m, c) = hflip(&out.image, &out.mask, &out.contour);
            out.image = i;
            out.mask = m;
            out.contour = c;
        }
        match plan.branch {
            Branch::None => {}
            Branch::Noise { psf, speckle: sp } => {
                if let Some((sa, sl)) = psf {
                    out.image = psf_blur(&out.image, &PsfKernel::gaussian(sa, sl)?);
                }
                if let Some(s) = sp {
                    out.image = speckle(&out.image, s, rng);
                }
            }
            Branch::Denoise => match &self.denoiser {
                Some(d) => out.image = denoise_augment(&out.image, d)?,
                None => warn!("denoise augmentation requested without a denoiser; skipped"),
            },
        }
        Ok(out)
    }
}

/// Seed for sample `index` of `epoch` under `base`.
pub fn sample_seed(base: u64, epoch: usize, index: usize) -> u64 {
    derive_seed(base, &[epoch as u64, index as u64])
}
