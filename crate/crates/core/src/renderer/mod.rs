//! Emission-absorption ray marcher with forward-mode and adjoint gradients.
//!
//! Every ray starts where it enters the volume box and takes
//! `ceil(len / step)` equidistant samples. Sample color is opacity-weighted
//! and composited front to back; the background is transparent black.

mod adjoint;
pub(crate) mod blend;
mod march;
mod medium;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adjoint::{render_adjoint, AdjointStats};
pub use blend::{blend, blend_adjoint, blend_invert, Rgba};
pub use march::{
    ray_sample_counts, render, render_forward_grad, render_seeded, render_with, sample_count, slab, SlabHit,
    EARLY_TERMINATION_ALPHA,
};
pub use medium::{ColorMedium, DensityMedium, GradSink, Medium, Want};

/// Premultiplied `(r, g, b, alpha)` image, row-major with row 0 at the top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRGBA {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 4]>,
}

impl ImageRGBA {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 4]; width * height],
        }
    }

    pub(crate) fn from_rows(width: usize, height: usize, rows: Vec<Vec<[f64; 4]>>) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in rows {
            data.extend(r);
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 4] {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &ImageRGBA) -> bool {
        self.width == other.width && self.height == other.height && self.data.len() == other.data.len()
    }

    pub fn alpha(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(|p| p[3])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// Per-pixel Jacobian stored as `[pixel][channel][param]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageJacobian {
    pub width: usize,
    pub height: usize,
    pub params: usize,
    pub data: Vec<f64>,
}

impl ImageJacobian {
    pub fn new(width: usize, height: usize, params: usize) -> Self {
        Self {
            width,
            height,
            params,
            data: vec![0.0; width * height * 4 * params],
        }
    }

    #[inline]
    pub fn get(&self, pixel: usize, channel: usize, param: usize) -> f64 {
        self.data[(pixel * 4 + channel) * self.params + param]
    }

    #[inline]
    pub fn get_mut(&mut self, pixel: usize, channel: usize, param: usize) -> &mut f64 {
        &mut self.data[(pixel * 4 + channel) * self.params + param]
    }

    /// Contracts the Jacobian with an image-shaped seed: `sum seed * dI/dp`.
    pub fn contract(&self, seed: &ImageRGBA) -> Vec<f64> {
        let mut out = vec![0.0; self.params];
        for (i, s) in seed.data.iter().enumerate() {
            for c in 0..4 {
                for (p, o) in out.iter_mut().enumerate() {
                    *o += s[c] * self.get(i, c, p);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffTarget {
    #[default]
    None,
    Camera,
    Stepsize,
    Tf,
    Volume,
}

/// How the adjoint pass recovers intermediate compositing states.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointMemory {
    /// Reconstruct each state by inverting the blend step.
    #[default]
    Inversion,
    /// Keep all states of a ray from the forward pass.
    Stored,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub step: f64,
    pub target: DiffTarget,
    pub memory: AdjointMemory,
    /// Only honored by the plain renderer.
    pub early_termination: bool,
}

impl RenderConfig {
    pub fn new(step: f64) -> Self {
        Self {
            step,
            target: DiffTarget::None,
            memory: AdjointMemory::Inversion,
            early_termination: false,
        }
    }

    pub fn with_target(mut self, target: DiffTarget) -> Self {
        self.target = target;
        self
    }

    pub fn with_memory(mut self, memory: AdjointMemory) -> Self {
        self.memory = memory;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {}", self.step)));
        }
        Ok(())
    }
}

/// Gradients of a scalar loss. Entries of targets that were not selected are zero or empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub stepsize: f64,
    /// Per degree of `(longitude, latitude)`.
    pub camera: [f64; 2],
    pub tf: Vec<[f64; 4]>,
    pub volume: Vec<f64>,
}

impl GradientSet {
    pub fn is_finite(&self) -> bool {
        self.stepsize.is_finite()
            && self.camera.iter().all(|v| v.is_finite())
            && self.tf.iter().flatten().all(|v| v.is_finite())
            && self.volume.iter().all(|v| v.is_finite())
    }

    pub fn tf_flat(&self) -> Vec<f64> {
        self.tf.iter().flatten().copied().collect()
    }
}
