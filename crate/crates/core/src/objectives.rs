//! Image losses, smoothing priors, the opacity-entropy viewpoint score and
//! quality metrics.
//!
//! Every differentiable objective returns its value together with the
//! gradient with respect to its input, ready to seed an adjoint render.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DensityVolume, TransferFunction};
use crate::renderer::ImageRGBA;

/// Finite stand-in for the unbounded entropy gradient at zero opacity.
pub const ENTROPY_GRADIENT_BOUND: f64 = 1e6;

/// A regularized loss `total = data + lambda * prior` with its image seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub data: f64,
    pub prior: f64,
    pub lambda: f64,
    /// d(total)/d(image) for each image of the batch.
    pub seeds: Vec<ImageRGBA>,
}

impl LossValue {
    pub fn new(data: f64, prior: f64, lambda: f64, seeds: Vec<ImageRGBA>) -> Self {
        Self {
            total: data + lambda * prior,
            data,
            prior,
            lambda,
            seeds,
        }
    }
}

fn check_pairs(images: &[ImageRGBA], refs: &[ImageRGBA]) -> Result<()> {
    if images.len() != refs.len() {
        return Err(Error::InvalidInput(format!(
            "{} images but {} references",
            images.len(),
            refs.len()
        )));
    }
    if images.is_empty() {
        return Err(Error::InvalidInput("no images given".into()));
    }
    for (i, (a, b)) in images.iter().zip(refs).enumerate() {
        if !a.same_shape(b) {
            return Err(Error::InvalidInput(format!(
                "image {i} is {}x{} but its reference is {}x{}",
                a.width, a.height, b.width, b.height
            )));
        }
    }
    Ok(())
}

/// Mean absolute difference over images, pixels and the 4 channels, with
/// its subgradient (`sign(0) = 0`).
pub fn l1_loss(images: &[ImageRGBA], refs: &[ImageRGBA]) -> Result<(f64, Vec<ImageRGBA>)> {
    check_pairs(images, refs)?;
    let count: usize = images.iter().map(|i| i.data.len() * 4).sum();
    let c = 1.0 / count as f64;
    let mut sum = 0.0;
    let mut seeds = Vec::with_capacity(images.len());
    for (a, b) in images.iter().zip(refs) {
        let mut seed = ImageRGBA::new(a.width, a.height);
        for ((pa, pb), s) in a.data.iter().zip(&b.data).zip(seed.data.iter_mut()) {
            for k in 0..4 {
                let d = pa[k] - pb[k];
                sum += d.abs();
                s[k] = if d > 0.0 {
                    c
                } else if d < 0.0 {
                    -c
                } else {
                    0.0
                };
            }
        }
        seeds.push(seed);
    }
    Ok((sum * c, seeds))
}

/// Mean squared difference over images, pixels and channels.
pub fn l2_loss(images: &[ImageRGBA], refs: &[ImageRGBA]) -> Result<(f64, Vec<ImageRGBA>)> {
    check_pairs(images, refs)?;
    let count: usize = images.iter().map(|i| i.data.len() * 4).sum();
    let c = 1.0 / count as f64;
    let mut sum = 0.0;
    let mut seeds = Vec::with_capacity(images.len());
    for (a, b) in images.iter().zip(refs) {
        let mut seed = ImageRGBA::new(a.width, a.height);
        for ((pa, pb), s) in a.data.iter().zip(&b.data).zip(seed.data.iter_mut()) {
            for k in 0..4 {
                let d = pa[k] - pb[k];
                sum += d * d;
                s[k] = 2.0 * c * d;
            }
        }
        seeds.push(seed);
    }
    Ok((sum * c, seeds))
}

/// `1/(4(R-1)) * sum_c sum_r (T[r+1][c] - T[r][c])^2`; zero when `R < 2`.
pub fn smoothness_prior_tf(tf: &TransferFunction) -> (f64, Vec<[f64; 4]>) {
    let r = tf.resolution();
    let mut grad = vec![[0.0; 4]; r];
    if r < 2 {
        return (0.0, grad);
    }
    let norm = 1.0 / (4.0 * (r - 1) as f64);
    let mut sum = 0.0;
    for i in 0..r - 1 {
        for c in 0..4 {
            let d = tf.texels[i + 1][c] - tf.texels[i][c];
            sum += d * d;
            grad[i + 1][c] += 2.0 * norm * d;
            grad[i][c] -= 2.0 * norm * d;
        }
    }
    (sum * norm, grad)
}

/// Mean squared forward difference along every axis that has at least two voxels.
pub fn smoothness_prior_volume(volume: &DensityVolume) -> (f64, Vec<f64>) {
    smoothness_prior_grid(volume.dims, &volume.data, 1)
}

/// Same prior on a grid with `channels` interleaved values per voxel; the
/// normalizer counts every channel's differences.
pub fn smoothness_prior_grid(dims: [usize; 3], data: &[f64], channels: usize) -> (f64, Vec<f64>) {
    let [nx, ny, nz] = dims;
    let mut grad = vec![0.0; data.len()];
    let strides = [1, nx, nx * ny];
    let mut count = 0usize;
    let mut sum = 0.0;
    for (axis, &stride) in strides.iter().enumerate() {
        if dims[axis] < 2 {
            continue;
        }
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let pos = [x, y, z];
                    if pos[axis] + 1 >= dims[axis] {
                        continue;
                    }
                    let i = x + nx * (y + ny * z);
                    for ch in 0..channels {
                        let a = i * channels + ch;
                        let b = (i + stride) * channels + ch;
                        let d = data[b] - data[a];
                        sum += d * d;
                        grad[b] += 2.0 * d;
                        grad[a] -= 2.0 * d;
                        count += 1;
                    }
                }
            }
        }
    }
    if count == 0 {
        return (0.0, grad);
    }
    let norm = 1.0 / count as f64;
    grad.iter_mut().for_each(|g| *g *= norm);
    (sum * norm, grad)
}

/// Opacity entropy and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Entropy {
    /// Normalized entropy in `[0, 1]`.
    pub value: f64,
    /// Gradient on the alpha channel; color channels are zero.
    pub seed: ImageRGBA,
    /// Set when the image has no opacity at all.
    pub degenerate: bool,
}

/// `H = -(1/log2 N) sum p_i log2 p_i` with `p_i = alpha_i / sum alpha` and
/// `0 log 0 = 0`. Maximized by spread-out opacity.
pub fn opacity_entropy(image: &ImageRGBA) -> Entropy {
    let n = image.data.len();
    let mut seed = ImageRGBA::new(image.width, image.height);
    let total: f64 = image.alpha().sum();
    if !(total > 0.0) || n < 2 {
        return Entropy {
            value: 0.0,
            seed,
            degenerate: !(total > 0.0),
        };
    }
    let ln_n = (n as f64).ln();
    let plogp: f64 = image
        .alpha()
        .map(|a| {
            let p = a / total;
            if p > 0.0 {
                p * p.ln()
            } else {
                0.0
            }
        })
        .sum();
    let value = -plogp / ln_n;
    // dH/d alpha_j = -(ln p_j - sum p ln p) / (S ln N)
    for (s, a) in seed.data.iter_mut().zip(image.alpha()) {
        let p = a / total;
        let g = if p > 0.0 {
            -(p.ln() - plogp) / (total * ln_n)
        } else {
            ENTROPY_GRADIENT_BOUND
        };
        s[3] = g.clamp(-ENTROPY_GRADIENT_BOUND, ENTROPY_GRADIENT_BOUND);
    }
    Entropy {
        value,
        seed,
        degenerate: false,
    }
}

/// Peak signal-to-noise ratio with peak 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    /// Decibels, with `Identical` mapped to infinity.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Identical => f64::INFINITY,
            Psnr::Db(v) => v,
        }
    }
}

pub fn psnr(a: &[f64], b: &[f64]) -> Result<Psnr> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput(format!(
            "cannot compare {} values with {}",
            a.len(),
            b.len()
        )));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Db(-10.0 * mse.log10())
    })
}

pub fn psnr_volume(a: &DensityVolume, b: &DensityVolume) -> Result<Psnr> {
    if a.dims != b.dims {
        return Err(Error::InvalidInput(format!("volume dims {:?} vs {:?}", a.dims, b.dims)));
    }
    psnr(&a.data, &b.data)
}

pub fn psnr_image(a: &ImageRGBA, b: &ImageRGBA) -> Result<Psnr> {
    if !a.same_shape(b) {
        return Err(Error::InvalidInput("image shapes differ".into()));
    }
    let fa: Vec<f64> = a.data.iter().flatten().copied().collect();
    let fb: Vec<f64> = b.data.iter().flatten().copied().collect();
    psnr(&fa, &fb)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn luminance(img: &ImageRGBA) -> Vec<f64> {
    img.data
        .iter()
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

fn ssim_from_moments(ma: f64, mb: f64, va: f64, vb: f64, cov: f64) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Single-scale SSIM on the luminance of the rgb channels.
///
/// Uses an 11x11 Gaussian window (sigma 1.5) over all fully contained
/// window positions. Images smaller than the window fall back to one
/// window covering the whole image with uniform weights.
pub fn ssim(a: &ImageRGBA, b: &ImageRGBA) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::InvalidInput("image shapes differ".into()));
    }
    let la = luminance(a);
    let lb = luminance(b);
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        let n = la.len() as f64;
        let ma = la.iter().sum::<f64>() / n;
        let mb = lb.iter().sum::<f64>() / n;
        let mut va = 0.0;
        let mut vb = 0.0;
        let mut cov = 0.0;
        for (x, y) in la.iter().zip(&lb) {
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
            cov += (x - ma) * (y - mb);
        }
        return Ok(ssim_from_moments(ma, mb, va / n, vb / n, cov / n));
    }

    let half = (SSIM_WINDOW / 2) as f64;
    let g1: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let norm: f64 = g1.iter().sum();
    let g1: Vec<f64> = g1.iter().map(|v| v / norm).collect();

    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (j, gy) in g1.iter().enumerate() {
                for (i, gx) in g1.iter().enumerate() {
                    let wgt = gx * gy;
                    let idx = (y0 + j) * w + x0 + i;
                    let (x, y) = (la[idx], lb[idx]);
                    ma += wgt * x;
                    mb += wgt * y;
                    saa += wgt * x * x;
                    sbb += wgt * y * y;
                    sab += wgt * x * y;
                }
            }
            total += ssim_from_moments(ma, mb, saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}
