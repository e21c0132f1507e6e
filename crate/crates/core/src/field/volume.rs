use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};

/// Points this far outside the box (relative to its extent) still count as
/// inside, so samples placed exactly on a face survive rounding.
pub const BOX_TOLERANCE: f64 = 1e-9;

/// Where a world point falls in a cell-centered grid.
///
/// Voxel `k` along an axis of `n` voxels sits at the center of the `k`-th
/// slab, i.e. at normalized coordinate `(k + 0.5) / n`. Points between the
/// box face and the outermost voxel center are clamped to the edge voxel, the
/// way a clamp-to-edge 3D texture behaves.
#[derive(Clone, Copy, Debug)]
pub struct CellLocation<S> {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub frac: [S; 3],
    /// d(grid coordinate)/d(world coordinate) per axis; zero where clamped.
    pub grid_scale: [f64; 3],
}

impl<S: Scalar> CellLocation<S> {
    /// Locates `x` in a grid of `dims` spanning `bounds`; `None` outside the box.
    pub fn find(dims: [usize; 3], bounds: &Aabb, x: &Vec3<S>) -> Option<Self> {
        let extent = bounds.extent();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [S::cst(0.0); 3];
        let mut grid_scale = [0.0; 3];
        for k in 0..3 {
            let xk = x.get(k);
            let v = xk.value();
            let tol = BOX_TOLERANCE * extent[k];
            if !(v >= bounds.min[k] - tol && v <= bounds.max[k] + tol) {
                return None;
            }
            let n = dims[k];
            if n == 1 {
                continue;
            }
            let scale = n as f64 / extent[k];
            let g = (xk - S::cst(bounds.min[k])) * S::cst(scale) - S::cst(0.5);
            let gv = g.value();
            let last = (n - 1) as f64;
            if gv <= 0.0 {
                lo[k] = 0;
                hi[k] = 1;
            } else if gv >= last {
                lo[k] = n - 2;
                hi[k] = n - 1;
                frac[k] = S::cst(1.0);
            } else {
                let base = (gv.floor() as usize).min(n - 2);
                lo[k] = base;
                hi[k] = base + 1;
                frac[k] = g - S::cst(base as f64);
                grid_scale[k] = scale;
            }
        }
        Some(Self {
            lo,
            hi,
            frac,
            grid_scale,
        })
    }

    /// Flat indices of the 8 corners; bit 0/1/2 of the corner id selects hi along x/y/z.
    pub fn corners(&self, dims: [usize; 3]) -> [usize; 8] {
        let mut out = [0usize; 8];
        for (c, o) in out.iter_mut().enumerate() {
            let ix = if c & 1 != 0 { self.hi[0] } else { self.lo[0] };
            let iy = if c & 2 != 0 { self.hi[1] } else { self.lo[1] };
            let iz = if c & 4 != 0 { self.hi[2] } else { self.lo[2] };
            *o = ix + dims[0] * (iy + dims[1] * iz);
        }
        out
    }

    pub fn weights(&self) -> [S; 8] {
        let one = S::cst(1.0);
        let [fx, fy, fz] = self.frac;
        let (gx, gy, gz) = (one - fx, one - fy, one - fz);
        [
            gx * gy * gz,
            fx * gy * gz,
            gx * fy * gz,
            fx * fy * gz,
            gx * gy * fz,
            fx * gy * fz,
            gx * fy * fz,
            fx * fy * fz,
        ]
    }

    /// Derivatives of the 8 weights with respect to the three fractions.
    pub fn weight_slopes(&self) -> [[f64; 3]; 8] {
        let [fx, fy, fz] = [
            self.frac[0].value(),
            self.frac[1].value(),
            self.frac[2].value(),
        ];
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        [
            [-gy * gz, -gx * gz, -gx * gy],
            [gy * gz, -fx * gz, -fx * gy],
            [-fy * gz, gx * gz, -gx * fy],
            [fy * gz, fx * gz, -fx * fy],
            [-gy * fz, -gx * fz, gx * gy],
            [gy * fz, -fx * fz, fx * gy],
            [-fy * fz, gx * fz, gx * fy],
            [fy * fz, fx * fz, fx * fy],
        ]
    }
}

/// Scalar density grid; the optimizable parameter of density reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityVolume {
    pub dims: [usize; 3],
    /// x-fastest voxel values.
    pub data: Vec<f64>,
    pub bounds: Aabb,
}

/// Output of [`DensityVolume::trilinear_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct TrilinearGradients {
    /// Clamped sample, identical to `trilinear_sample`.
    pub value: f64,
    pub d_pos: [f64; 3],
    pub corners: [usize; 8],
    pub weights: [f64; 8],
}

impl DensityVolume {
    pub fn new(dims: [usize; 3], data: Vec<f64>, bounds: Aabb) -> Result<Self> {
        let v = Self { dims, data, bounds };
        v.validate()?;
        Ok(v)
    }

    pub fn constant(dims: [usize; 3], value: f64, bounds: Aabb) -> Self {
        Self {
            dims,
            data: vec![value; dims[0] * dims[1] * dims[2]],
            bounds,
        }
    }

    /// Evaluates `f` at every voxel center.
    pub fn from_fn(dims: [usize; 3], bounds: Aabb, f: impl Fn(Vec3<f64>) -> f64) -> Self {
        let mut v = Self::constant(dims, 0.0, bounds);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let idx = v.index(i, j, k);
                    v.data[idx] = f(v.voxel_center(i, j, k));
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "volume dims must be >= 1, got {:?}",
                self.dims
            )));
        }
        if self.data.len() != self.voxel_count() {
            return Err(Error::InvalidParameter(format!(
                "volume data has {} entries, dims {:?} need {}",
                self.data.len(),
                self.dims,
                self.voxel_count()
            )));
        }
        if !self.bounds.is_valid() {
            return Err(Error::InvalidParameter(format!(
                "volume box {:?} has non-positive extent",
                self.bounds
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("voxel {i} is not finite")));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        let e = self.bounds.extent();
        [
            e[0] / self.dims[0] as f64,
            e[1] / self.dims[1] as f64,
            e[2] / self.dims[2] as f64,
        ]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3<f64> {
        let s = self.voxel_size();
        Vec3::new(
            self.bounds.min[0] + (i as f64 + 0.5) * s[0],
            self.bounds.min[1] + (j as f64 + 0.5) * s[1],
            self.bounds.min[2] + (k as f64 + 0.5) * s[2],
        )
    }

    /// Unclamped interpolant; `None` outside the box.
    pub fn interpolate_raw<S: Scalar>(&self, x: &Vec3<S>) -> Option<S> {
        let cell = CellLocation::find(self.dims, &self.bounds, x)?;
        let corners = cell.corners(self.dims);
        let w = cell.weights();
        let mut acc = S::cst(0.0);
        for c in 0..8 {
            acc = acc + w[c] * S::cst(self.data[corners[c]]);
        }
        Some(acc)
    }

    /// Density at `x`: trilinear, zero outside the box, clamped to `[0, 1]`.
    pub fn sample<S: Scalar>(&self, x: &Vec3<S>) -> S {
        match self.interpolate_raw(x) {
            Some(d) => d.clamp_s(0.0, 1.0),
            None => S::cst(0.0),
        }
    }

    pub fn trilinear_sample(&self, x: Vec3<f64>) -> f64 {
        self.sample(&x)
    }

    /// Spatial gradient and voxel weights of the clamped sampler. All zero
    /// outside the box or where the clamp is active.
    pub fn trilinear_gradients(&self, x: Vec3<f64>) -> TrilinearGradients {
        let mut out = TrilinearGradients {
            value: 0.0,
            d_pos: [0.0; 3],
            corners: [0; 8],
            weights: [0.0; 8],
        };
        let Some(cell) = CellLocation::find(self.dims, &self.bounds, &x) else {
            return out;
        };
        out.corners = cell.corners(self.dims);
        let w = cell.weights();
        let raw: f64 = (0..8).map(|c| w[c] * self.data[out.corners[c]]).sum();
        out.value = raw.clamp_s(0.0, 1.0);
        if !(0.0..=1.0).contains(&raw) {
            return out;
        }
        out.weights = w;
        let slopes = cell.weight_slopes();
        for k in 0..3 {
            let mut g = 0.0;
            for c in 0..8 {
                g += slopes[c][k] * self.data[out.corners[c]];
            }
            out.d_pos[k] = g * cell.grid_scale[k];
        }
        out
    }
}

/// Pre-shaded volume holding rgb emission and absorption per voxel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorVolume {
    pub dims: [usize; 3],
    /// x-fastest `(r, g, b, tau)` per voxel.
    pub data: Vec<[f64; 4]>,
    pub bounds: Aabb,
}

impl ColorVolume {
    pub fn constant(dims: [usize; 3], value: [f64; 4], bounds: Aabb) -> Self {
        Self {
            dims,
            data: vec![value; dims[0] * dims[1] * dims[2]],
            bounds,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Interpolated `(r, g, b, tau)`; zero outside the box. No clamping.
    pub fn sample<S: Scalar>(&self, x: &Vec3<S>) -> [S; 4] {
        let zero = S::cst(0.0);
        let Some(cell) = CellLocation::find(self.dims, &self.bounds, x) else {
            return [zero; 4];
        };
        let corners = cell.corners(self.dims);
        let w = cell.weights();
        let mut acc = [zero; 4];
        for c in 0..8 {
            let v = &self.data[corners[c]];
            for ch in 0..4 {
                acc[ch] = acc[ch] + w[c] * S::cst(v[ch]);
            }
        }
        acc
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.data.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        for (v, c) in self.data.iter_mut().zip(flat.chunks_exact(4)) {
            v.copy_from_slice(c);
        }
    }
}
