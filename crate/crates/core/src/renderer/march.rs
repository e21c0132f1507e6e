//! Ray setup and the forward ray-marching kernel.

use rayon::prelude::*;

use super::blend::blend_s;
use super::medium::Medium;
use super::{DiffTarget, ImageJacobian, ImageRGBA, RenderConfig};
use crate::autodiff::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::field::{opacity_s, SphericalCamera};
use crate::math::{Aabb, Vec3};

/// Opacity above which the plain renderer may stop marching.
pub const EARLY_TERMINATION_ALPHA: f64 = 1.0 - 1e-4;

/// Entry/exit of a ray with the volume box.
#[derive(Clone, Copy, Debug)]
pub struct SlabHit<S> {
    pub t_near: S,
    pub t_far: S,
    /// Axis and plane coordinate of the entry face; `None` when the ray
    /// starts inside the box.
    pub entry_face: Option<(usize, f64)>,
}

pub fn slab<S: Scalar>(bounds: &Aabb, origin: &Vec3<S>, dir: &Vec3<S>) -> Option<SlabHit<S>> {
    let mut near: Option<(S, usize, f64)> = None;
    let mut far: Option<S> = None;
    for k in 0..3 {
        let o = origin.get(k);
        let d = dir.get(k);
        if d.value().abs() < 1e-12 {
            if o.value() < bounds.min[k] || o.value() > bounds.max[k] {
                return None;
            }
            continue;
        }
        let t1 = (S::cst(bounds.min[k]) - o) / d;
        let t2 = (S::cst(bounds.max[k]) - o) / d;
        let (lo, plane, hi) = if t1.value() <= t2.value() {
            (t1, bounds.min[k], t2)
        } else {
            (t2, bounds.max[k], t1)
        };
        near = match near {
            Some(cur) if cur.0.value() >= lo.value() => Some(cur),
            _ => Some((lo, k, plane)),
        };
        far = Some(match far {
            Some(cur) => cur.min_s(hi),
            None => hi,
        });
    }
    let far = far?;
    let (t_near, entry_face) = match near {
        Some((t, k, plane)) if t.value() >= 0.0 => (t, Some((k, plane))),
        _ => (S::cst(0.0), None),
    };
    if far.value() <= t_near.value() {
        return None;
    }
    Some(SlabHit {
        t_near,
        t_far: far,
        entry_face,
    })
}

/// Number of equidistant samples covering a segment of length `len`.
#[inline]
pub fn sample_count(len: f64, step: f64) -> usize {
    if len <= 0.0 {
        0
    } else {
        (len / step - 1e-9).ceil().max(0.0) as usize
    }
}

/// Marches one ray front to back and returns premultiplied `(r, g, b, alpha)`.
pub(crate) fn march<S: Scalar, M: Medium>(
    medium: &M,
    eye: Vec3<S>,
    dir: Vec3<S>,
    step: S,
    early_termination: bool,
) -> [S; 4] {
    let mut acc = [S::cst(0.0); 4];
    let Some(hit) = slab(&medium.bounds(), &eye, &dir) else {
        return acc;
    };
    let n = sample_count(hit.t_far.value() - hit.t_near.value(), step.value());
    let start = eye + dir.scale(hit.t_near);
    for i in 0..n {
        let x = start + dir.scale(step * S::cst(i as f64));
        let [r, g, b, tau] = medium.optical(&x);
        let alpha = opacity_s(tau, step);
        blend_s(&mut acc, [r * alpha, g * alpha, b * alpha], alpha);
        if early_termination && acc[3].value() > EARLY_TERMINATION_ALPHA {
            break;
        }
    }
    acc
}

/// Samples per ray for every pixel, row-major. Useful to detect when a
/// parameter perturbation changes the discrete sample set.
pub fn ray_sample_counts<M: Medium>(medium: &M, cam: &SphericalCamera, step: f64) -> Vec<usize> {
    let bounds = medium.bounds();
    (0..cam.height)
        .flat_map(|y| (0..cam.width).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (eye, dir) = cam.ray_generic(cam.longitude, cam.latitude, pixel_center(x, y));
            slab(&bounds, &eye, &dir)
                .map_or(0, |h| sample_count(h.t_far - h.t_near, step))
        })
        .collect()
}

#[inline]
pub(crate) fn pixel_center(x: usize, y: usize) -> [f64; 2] {
    [x as f64 + 0.5, y as f64 + 0.5]
}

/// Renders with the scalar type `S` (`f64` or `f32`).
pub fn render_with<S: Scalar, M: Medium>(
    medium: &M,
    cam: &SphericalCamera,
    cfg: &RenderConfig,
) -> Result<ImageRGBA> {
    cam.validate()?;
    cfg.validate()?;
    let w = cam.width;
    let rows: Vec<Vec<[f64; 4]>> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (eye, dir) = cam.ray_generic(
                        S::cst(cam.longitude),
                        S::cst(cam.latitude),
                        pixel_center(x, y),
                    );
                    let px = march(medium, eye, dir, S::cst(cfg.step), cfg.early_termination);
                    px.map(|v| v.value())
                })
                .collect()
        })
        .collect();
    Ok(ImageRGBA::from_rows(w, cam.height, rows))
}

/// Double-precision render.
pub fn render<M: Medium>(medium: &M, cam: &SphericalCamera, cfg: &RenderConfig) -> Result<ImageRGBA> {
    render_with::<f64, M>(medium, cam, cfg)
}

/// Forward-mode render with caller-chosen seeds: each parameter slot `p`
/// perturbs longitude, latitude and step size by `lon[p]`, `lat[p]`, `step[p]`.
pub fn render_seeded<M: Medium, const P: usize>(
    medium: &M,
    cam: &SphericalCamera,
    cfg: &RenderConfig,
    lon: [f64; P],
    lat: [f64; P],
    step: [f64; P],
) -> Result<(ImageRGBA, ImageJacobian)> {
    cam.validate()?;
    cfg.validate()?;
    let w = cam.width;
    let lon_d = Dual::<f64, P>::new(cam.longitude, lon);
    let lat_d = Dual::<f64, P>::new(cam.latitude, lat);
    let step_d = Dual::<f64, P>::new(cfg.step, step);
    let rows: Vec<Vec<[Dual<f64, P>; 4]>> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (eye, dir) = cam.ray_generic(lon_d, lat_d, pixel_center(x, y));
                    march(medium, eye, dir, step_d, false)
                })
                .collect()
        })
        .collect();
    let mut image = ImageRGBA::new(w, cam.height);
    let mut jac = ImageJacobian::new(w, cam.height, P);
    for (i, px) in rows.into_iter().flatten().enumerate() {
        for c in 0..4 {
            image.data[i][c] = px[c].value;
            for p in 0..P {
                *jac.get_mut(i, c, p) = px[c].deriv[p];
            }
        }
    }
    Ok((image, jac))
}

/// Image and its Jacobian with respect to the camera angles (2 parameters,
/// per degree) or the step size (1 parameter), by forward-mode differentiation.
pub fn render_forward_grad<M: Medium>(
    medium: &M,
    cam: &SphericalCamera,
    cfg: &RenderConfig,
    target: DiffTarget,
) -> Result<(ImageRGBA, ImageJacobian)> {
    match target {
        DiffTarget::Camera => render_seeded::<M, 2>(medium, cam, cfg, [1.0, 0.0], [0.0, 1.0], [0.0; 2]),
        DiffTarget::Stepsize => render_seeded::<M, 1>(medium, cam, cfg, [0.0], [0.0], [1.0]),
        other => Err(Error::Unsupported(format!(
            "forward-mode gradients are only provided for camera and step size, not {other:?}"
        ))),
    }
}
