//! Grayscale images and seed plumbing shared by the data pipeline.

use crate::error::{Error, Result};
use crate::metrics::{BinaryMask, Contour};
use crate::tensor::{Shape4, Tensor4};

/// Row-major float image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(h: usize, w: usize) -> Self {
        GrayImage {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::invalid(
                "GrayImage::from_vec",
                format!("{h}x{w} image needs {} values, got {}", h * w, data.len()),
            ));
        }
        Ok(GrayImage { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        GrayImage { h, w, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    /// Reads with coordinates clamped into the image (edge replication).
    pub fn get_clamped(&self, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.get(y, x)
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.w + x] = v;
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn to_tensor(&self) -> Tensor4<f32> {
        Tensor4::from_vec(Shape4::new(1, 1, self.h, self.w), self.data.clone()).expect("matching size")
    }

    /// Takes channel 0 of sample `n`.
    pub fn from_tensor(t: &Tensor4<f32>, n: usize) -> Self {
        let s = t.shape();
        GrayImage {
            h: s.h,
            w: s.w,
            data: t.sample(n)[..s.plane()].to_vec(),
        }
    }

    pub fn mse(&self, other: &GrayImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / self.data.len().max(1) as f64
    }
}

/// Integer image as read from disk, with the maximum representable value of
/// its bit depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub h: usize,
    pub w: usize,
    pub max_value: u16,
    pub pixels: Vec<u16>,
}

/// An image with its ground-truth mask and contour.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub contour: Contour,
}

/// Stacks images into an `N x 1 x H x W` batch.
pub fn stack(images: &[&GrayImage]) -> Result<Tensor4<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("stack", "empty batch"))?;
    let (h, w) = (first.h, first.w);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if (img.h, img.w) != (h, w) {
            return Err(Error::invalid(
                "stack",
                format!("image {}x{} in a {h}x{w} batch", img.h, img.w),
            ));
        }
        data.extend_from_slice(&img.data);
    }
    Tensor4::from_vec(Shape4::new(images.len(), 1, h, w), data)
}

/// SplitMix64 finaliser; derives independent stream seeds from a base seed
/// and a path of indices (trial, epoch, sample, ...).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut s = base;
    for &p in path {
        s = mix(s ^ mix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    s
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_path() {
        let a = derive_seed(7, &[0, 1]);
        assert_ne!(a, derive_seed(7, &[1, 0]));
        assert_ne!(a, derive_seed(8, &[0, 1]));
        assert_eq!(a, derive_seed(7, &[0, 1]));
    }

    #[test]
    fn stack_rejects_mixed_sizes() {
        let a = GrayImage::new(4, 4);
        let b = GrayImage::new(4, 8);
        assert!(stack(&[&a, &b]).is_err());
        assert_eq!(stack(&[&a, &a]).unwrap().shape(), Shape4::new(2, 1, 4, 4));
    }
}
