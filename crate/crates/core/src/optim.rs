//! First-order optimizers, parameter projection and grid resampling for
//! coarse-to-fine schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DensityVolume;

/// Default upper bound for absorption coefficients after projection.
pub const DEFAULT_TAU_MAX: f64 = 100.0;

fn check(params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidInput(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            grads.len()
        )));
    }
    if let Some((index, value)) = grads.iter().copied().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index, value });
    }
    Ok(())
}

/// `params -= lr * grads`.
pub fn gd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    check(params, grads)?;
    if !(lr > 0.0) {
        return Err(Error::InvalidParameter(format!("learning rate must be positive, got {lr}")));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check(params, grads)?;
        if params.len() != self.m.len() {
            return Err(Error::InvalidInput(format!(
                "optimizer holds {} moments but got {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Which constraint set a flat parameter vector lives in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Interleaved `(r, g, b, tau)`: emission `>= 0`, absorption in `[0, tau_max]`.
    /// Also used for per-voxel color volumes.
    Rgbt { tau_max: f64 },
    /// Densities in `[0, 1]`.
    Density,
}

pub fn project_params(params: &mut [f64], kind: ParamKind) {
    match kind {
        ParamKind::Rgbt { tau_max } => {
            for (i, p) in params.iter_mut().enumerate() {
                *p = if i % 4 == 3 { p.clamp(0.0, tau_max) } else { p.max(0.0) };
            }
        }
        ParamKind::Density => params.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0)),
    }
}

/// Doubles a cell-centered grid along every axis by trilinear interpolation
/// at the fine voxel centers. Fine centers outside the outermost coarse
/// centers are linearly extrapolated from the edge cell, so linear fields
/// stay linear up to the boundary.
pub fn upsample_grid(dims: [usize; 3], data: &[f64], channels: usize) -> ([usize; 3], Vec<f64>) {
    let fine = dims.map(|n| 2 * n);
    // per axis and fine index: (lo, frac) on the coarse grid
    let axis_weights = |n: usize| -> Vec<(usize, f64)> {
        (0..2 * n)
            .map(|j| {
                if n == 1 {
                    return (0, 0.0);
                }
                let g = j as f64 * 0.5 - 0.25;
                let lo = (g.floor().max(0.0) as usize).min(n - 2);
                (lo, g - lo as f64)
            })
            .collect()
    };
    let wx = axis_weights(dims[0]);
    let wy = axis_weights(dims[1]);
    let wz = axis_weights(dims[2]);
    let step = |n: usize| usize::from(n > 1);
    let (sx, sy, sz) = (step(dims[0]), step(dims[1]), step(dims[2]));
    let idx = |x: usize, y: usize, z: usize| (x + dims[0] * (y + dims[1] * z)) * channels;
    let mut out = Vec::with_capacity(fine.iter().product::<usize>() * channels);
    for &(z0, fz) in &wz {
        for &(y0, fy) in &wy {
            for &(x0, fx) in &wx {
                for ch in 0..channels {
                    let mut acc = 0.0;
                    for c in 0..8 {
                        let (bx, by, bz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
                        let w = (if bx == 1 { fx } else { 1.0 - fx })
                            * (if by == 1 { fy } else { 1.0 - fy })
                            * (if bz == 1 { fz } else { 1.0 - fz });
                        if w != 0.0 {
                            acc += w * data[idx(x0 + bx * sx, y0 + by * sy, z0 + bz * sz) + ch];
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    (fine, out)
}

/// Halves a grid with even dims by averaging each 2x2x2 block.
pub fn downsample_grid(dims: [usize; 3], data: &[f64], channels: usize) -> Result<([usize; 3], Vec<f64>)> {
    if dims.iter().any(|n| n % 2 != 0) {
        return Err(Error::InvalidInput(format!("cannot halve dims {dims:?}")));
    }
    let coarse = dims.map(|n| n / 2);
    let mut out = vec![0.0; coarse.iter().product::<usize>() * channels];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let src = (x + dims[0] * (y + dims[1] * z)) * channels;
                let dst = (x / 2 + coarse[0] * (y / 2 + coarse[1] * (z / 2))) * channels;
                for ch in 0..channels {
                    out[dst + ch] += 0.125 * data[src + ch];
                }
            }
        }
    }
    Ok((coarse, out))
}

/// Doubles the resolution of a density volume; the world box is unchanged.
pub fn upsample_volume(volume: &DensityVolume) -> DensityVolume {
    let (dims, data) = upsample_grid(volume.dims, &volume.data, 1);
    DensityVolume {
        dims,
        data,
        bounds: volume.bounds,
    }
}

pub fn downsample_volume(volume: &DensityVolume) -> Result<DensityVolume> {
    let (dims, data) = downsample_grid(volume.dims, &volume.data, 1)?;
    Ok(DensityVolume {
        dims,
        data,
        bounds: volume.bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Aabb;
    use proptest::prelude::*;

    #[test]
    fn gd_examples() {
        let mut p = vec![1.0, -3.0];
        gd_step(&mut p, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(p, vec![1.0, -3.0]);
        let mut p = vec![1.0];
        gd_step(&mut p, &[2.0], 0.1).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);

        let mut a = vec![0.3, 0.7];
        let mut b = a.clone();
        let g = [0.2, -0.4];
        gd_step(&mut a, &g, 0.1).unwrap();
        gd_step(&mut a, &g, 0.1).unwrap();
        gd_step(&mut b, &[0.4, -0.8], 0.1).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);

        assert!(matches!(
            gd_step(&mut p, &[f64::NAN], 0.1),
            Err(Error::NonFiniteGradient { index: 0, .. })
        ));
        assert!(gd_step(&mut p, &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn adam_first_steps() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![1.0, 2.0];
        adam.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);

        let mut adam = Adam::new(3, 0.1);
        let mut p = vec![0.0; 3];
        adam.step(&mut p, &[3.0, -0.002, 50.0]).unwrap();
        for (v, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - 0.1 * s).abs() < 1e-5);
        }

        let mut a1 = Adam::new(2, 0.05);
        let mut a2 = Adam::new(2, 0.05);
        let mut p1 = vec![0.0; 2];
        let mut p2 = vec![0.0; 2];
        a1.step(&mut p1, &[0.3, -0.7]).unwrap();
        a2.step(&mut p2, &[30.0, -70.0]).unwrap();
        assert!((p1[0] - p2[0]).abs() < 1e-6 && (p1[1] - p2[1]).abs() < 1e-6);
    }

    #[test]
    fn adam_matches_hand_rolled_quadratic() {
        // minimize x^2 from x = 1 with a plain scalar transcription of Adam
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut adam = Adam::new(1, lr);
        let mut p = vec![1.0];
        for t in 1..=100 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);

            let grad = [2.0 * p[0]];
            adam.step(&mut p, &grad).unwrap();
            assert!((p[0] - x).abs() <= 1e-12);
        }
        assert!(x < 1.0);
    }

    #[test]
    fn projection_examples() {
        let mut tf = vec![0.2, 0.3, 0.4, 5.0];
        project_params(&mut tf, ParamKind::Rgbt { tau_max: DEFAULT_TAU_MAX });
        assert_eq!(tf, vec![0.2, 0.3, 0.4, 5.0]);
        let mut tf = vec![-0.1, 0.3, 0.4, -0.5, 0.0, 0.0, 0.0, 150.0];
        project_params(&mut tf, ParamKind::Rgbt { tau_max: DEFAULT_TAU_MAX });
        assert_eq!(tf, vec![0.0, 0.3, 0.4, 0.0, 0.0, 0.0, 0.0, 100.0]);
        let mut v = vec![1.2, -0.1, 0.5];
        project_params(&mut v, ParamKind::Density);
        assert_eq!(v, vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn upsample_contract() {
        let b = Aabb::new([-1.0, 0.0, 0.0], [1.0, 2.0, 0.5]);
        let v = DensityVolume::constant([4, 4, 4], 0.37, b);
        let u = upsample_volume(&v);
        assert_eq!(u.dims, [8, 8, 8]);
        assert_eq!(u.bounds, b);
        assert!(u.data.iter().all(|x| (x - 0.37).abs() < 1e-15));

        let ramp = DensityVolume::from_fn([4, 3, 2], b, |p| 0.3 * p.x + 0.2);
        let u = upsample_volume(&ramp);
        for k in 0..u.dims[2] {
            for j in 0..u.dims[1] {
                for i in 0..u.dims[0] {
                    let c = u.voxel_center(i, j, k);
                    assert!((u.data[u.index(i, j, k)] - (0.3 * c.x + 0.2)).abs() < 1e-12);
                }
            }
        }

        let single = DensityVolume::constant([1, 1, 1], 0.5, b);
        assert_eq!(upsample_volume(&single).data, vec![0.5; 8]);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(mut p in prop::collection::vec(-200.0f64..200.0, 16)) {
            for kind in [ParamKind::Density, ParamKind::Rgbt { tau_max: 50.0 }] {
                let mut q = p.clone();
                project_params(&mut q, kind);
                let once = q.clone();
                project_params(&mut q, kind);
                prop_assert_eq!(&q, &once);
            }
            project_params(&mut p, ParamKind::Density);
            prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn upsample_then_average_returns_trilinear_fields(
            c in prop::array::uniform8(-1.0f64..1.0),
            dims in prop::array::uniform3(2usize..6),
        ) {
            let b = Aabb::centered_cube(0.5);
            let f = |p: crate::math::Vec3<f64>| {
                c[0] + c[1] * p.x + c[2] * p.y + c[3] * p.z
                    + c[4] * p.x * p.y + c[5] * p.y * p.z + c[6] * p.x * p.z + c[7] * p.x * p.y * p.z
            };
            let v = DensityVolume::from_fn(dims, b, f);
            let back = downsample_volume(&upsample_volume(&v)).unwrap();
            prop_assert_eq!(back.dims, v.dims);
            for (a, b) in back.data.iter().zip(&v.data) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
