//! What the ray marcher samples: a density grid mapped through a transfer
//! function, or a pre-shaded color grid.

use std::collections::HashMap;

use crate::autodiff::Scalar;
use crate::field::{CellLocation, ColorVolume, DensityVolume, TfGradients, Transfer, TrilinearGradients};
use crate::math::{Aabb, Vec3};

/// Which parameter adjoints a backward step should produce.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Want {
    pub tf: bool,
    pub voxels: bool,
    pub position: bool,
}

/// Per-chunk gradient accumulator.
///
/// Voxel adjoints of one ray are collected while the ray stays in the same
/// cell and flushed into the chunk map when it leaves, so the map sees one
/// update per visited cell instead of one per sample.
#[derive(Debug, Default)]
pub struct GradSink {
    pub tf: Vec<[f64; 4]>,
    pub voxels: HashMap<usize, f64>,
    cell: Option<usize>,
    pending: Vec<(usize, f64)>,
}

impl GradSink {
    pub fn new(texels: usize) -> Self {
        Self {
            tf: vec![[0.0; 4]; texels],
            ..Default::default()
        }
    }

    #[inline]
    fn add_tf(&mut self, texel: usize, weight: f64, adj: &[f64; 4]) {
        if weight == 0.0 {
            return;
        }
        let t = &mut self.tf[texel];
        for c in 0..4 {
            t[c] += weight * adj[c];
        }
    }

    #[inline]
    fn enter_cell(&mut self, cell: usize) {
        if self.cell != Some(cell) {
            self.flush();
            self.cell = Some(cell);
        }
    }

    #[inline]
    fn add_voxel(&mut self, index: usize, value: f64) {
        match self.pending.iter_mut().find(|(i, _)| *i == index) {
            Some(e) => e.1 += value,
            None => self.pending.push((index, value)),
        }
    }

    /// Moves pending per-cell voxel adjoints into the chunk map.
    pub fn flush(&mut self) {
        for (i, v) in self.pending.drain(..) {
            *self.voxels.entry(i).or_insert(0.0) += v;
        }
        self.cell = None;
    }
}

/// A differentiable participating medium.
pub trait Medium: Sync {
    /// Per-sample intermediates kept between forward recomputation and the backward step.
    type Cache;

    fn bounds(&self) -> Aabb;

    /// `(r, g, b, tau)` at `x`.
    fn optical<S: Scalar>(&self, x: &Vec3<S>) -> [S; 4];

    /// Same value as `optical::<f64>` plus what the backward step needs.
    fn eval(&self, x: &Vec3<f64>) -> ([f64; 4], Self::Cache);

    /// Scatters the adjoint of `(r, g, b, tau)` into parameter adjoints and
    /// returns the adjoint of the sample position.
    fn backward(&self, cache: &Self::Cache, adj: &[f64; 4], want: Want, sink: &mut GradSink) -> Vec3<f64>;

    /// Number of transfer-function texels with gradients.
    fn texel_count(&self) -> usize;

    /// Length of the flat per-voxel parameter vector.
    fn voxel_param_count(&self) -> usize;
}

#[derive(Clone, Copy, Debug)]
pub struct DensityMedium<'a> {
    pub volume: &'a DensityVolume,
    pub transfer: &'a Transfer,
}

impl<'a> DensityMedium<'a> {
    pub fn new(volume: &'a DensityVolume, transfer: &'a Transfer) -> Self {
        Self { volume, transfer }
    }
}

impl Medium for DensityMedium<'_> {
    type Cache = (TrilinearGradients, TfGradients);

    fn bounds(&self) -> Aabb {
        self.volume.bounds
    }

    #[inline]
    fn optical<S: Scalar>(&self, x: &Vec3<S>) -> [S; 4] {
        self.transfer.sample(self.volume.sample(x))
    }

    #[inline]
    fn eval(&self, x: &Vec3<f64>) -> ([f64; 4], Self::Cache) {
        let tri = self.volume.trilinear_gradients(*x);
        let tf = self.transfer.gradients(tri.value);
        (tf.value, (tri, tf))
    }

    fn backward(&self, cache: &Self::Cache, adj: &[f64; 4], want: Want, sink: &mut GradSink) -> Vec3<f64> {
        let (tri, tf) = cache;
        if want.tf && self.transfer.table().is_some() {
            sink.add_tf(tf.texels[0], tf.weights[0], adj);
            sink.add_tf(tf.texels[1], tf.weights[1], adj);
        }
        let d_hat: f64 = (0..4).map(|c| adj[c] * tf.d_density[c]).sum();
        if d_hat == 0.0 {
            return Vec3::zero();
        }
        if want.voxels && tri.weights.iter().any(|w| *w != 0.0) {
            sink.enter_cell(tri.corners[0]);
            for c in 0..8 {
                if tri.weights[c] != 0.0 {
                    sink.add_voxel(tri.corners[c], tri.weights[c] * d_hat);
                }
            }
        }
        if want.position {
            Vec3::from_array(tri.d_pos).scale(d_hat)
        } else {
            Vec3::zero()
        }
    }

    fn texel_count(&self) -> usize {
        self.transfer.texel_count()
    }

    fn voxel_param_count(&self) -> usize {
        self.volume.voxel_count()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ColorMedium<'a> {
    pub volume: &'a ColorVolume,
}

#[derive(Clone, Copy, Debug)]
pub struct ColorCache {
    cell: Option<CellLocation<f64>>,
    corners: [usize; 8],
    weights: [f64; 8],
}

impl Medium for ColorMedium<'_> {
    type Cache = ColorCache;

    fn bounds(&self) -> Aabb {
        self.volume.bounds
    }

    #[inline]
    fn optical<S: Scalar>(&self, x: &Vec3<S>) -> [S; 4] {
        self.volume.sample(x)
    }

    fn eval(&self, x: &Vec3<f64>) -> ([f64; 4], Self::Cache) {
        let v = self.volume;
        let Some(cell) = CellLocation::find(v.dims, &v.bounds, x) else {
            return (
                [0.0; 4],
                ColorCache {
                    cell: None,
                    corners: [0; 8],
                    weights: [0.0; 8],
                },
            );
        };
        let corners = cell.corners(v.dims);
        let weights = cell.weights();
        let mut acc = [0.0; 4];
        for c in 0..8 {
            let d = &v.data[corners[c]];
            for ch in 0..4 {
                acc[ch] += weights[c] * d[ch];
            }
        }
        (
            acc,
            ColorCache {
                cell: Some(cell),
                corners,
                weights,
            },
        )
    }

    fn backward(&self, cache: &Self::Cache, adj: &[f64; 4], want: Want, sink: &mut GradSink) -> Vec3<f64> {
        let Some(cell) = &cache.cell else {
            return Vec3::zero();
        };
        if want.voxels {
            sink.enter_cell(cache.corners[0]);
            for c in 0..8 {
                let w = cache.weights[c];
                if w != 0.0 {
                    for ch in 0..4 {
                        if adj[ch] != 0.0 {
                            sink.add_voxel(cache.corners[c] * 4 + ch, w * adj[ch]);
                        }
                    }
                }
            }
        }
        if !want.position {
            return Vec3::zero();
        }
        let slopes = cell.weight_slopes();
        let mut g = [0.0; 3];
        for (k, gk) in g.iter_mut().enumerate() {
            if cell.grid_scale[k] == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for c in 0..8 {
                let d = &self.volume.data[cache.corners[c]];
                let dot = adj[0] * d[0] + adj[1] * d[1] + adj[2] * d[2] + adj[3] * d[3];
                s += slopes[c][k] * dot;
            }
            *gk = s * cell.grid_scale[k];
        }
        Vec3::from_array(g)
    }

    fn texel_count(&self) -> usize {
        0
    }

    fn voxel_param_count(&self) -> usize {
        self.volume.voxel_count() * 4
    }
}
