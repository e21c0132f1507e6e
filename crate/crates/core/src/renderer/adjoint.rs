//! Reverse pass: walks every ray back to front and scatters the image
//! adjoint into step size, camera, transfer-function and voxel gradients.

use rayon::prelude::*;

use super::blend::{blend, blend_adjoint, invert_unchecked, Rgba};
use super::march::{pixel_center, sample_count, slab};
use super::medium::{GradSink, Medium, Want};
use super::{AdjointMemory, DiffTarget, GradientSet, ImageRGBA, RenderConfig};
use crate::error::{Error, Result};
use crate::field::{opacity_from_density, SphericalCamera};
use crate::math::Vec3;

/// Image rows per reduction chunk. Fixed so the summation order does not
/// depend on the number of worker threads.
const ROWS_PER_CHUNK: usize = 4;

/// Bookkeeping from one adjoint pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AdjointStats {
    pub rays: usize,
    pub samples: usize,
    /// Largest number of compositing states held at once for a single ray.
    pub max_states_per_ray: usize,
}

#[derive(Default)]
struct ChunkResult {
    sink: GradSink,
    camera: [f64; 2],
    stepsize: f64,
    stats: AdjointStats,
}

/// Gradient of `sum(seed * image)` with respect to the parameters selected by `cfg.target`.
pub fn render_adjoint<M: Medium>(
    medium: &M,
    cam: &SphericalCamera,
    cfg: &RenderConfig,
    seed: &ImageRGBA,
) -> Result<(GradientSet, AdjointStats)> {
    cam.validate()?;
    cfg.validate()?;
    if seed.width != cam.width || seed.height != cam.height || seed.data.len() != cam.pixel_count() {
        return Err(Error::InvalidInput(format!(
            "seed is {}x{} but the camera renders {}x{}",
            seed.width, seed.height, cam.width, cam.height
        )));
    }
    let want = Want {
        tf: cfg.target == DiffTarget::Tf,
        voxels: cfg.target == DiffTarget::Volume,
        position: matches!(cfg.target, DiffTarget::Camera | DiffTarget::Stepsize),
    };
    let texels = if want.tf { medium.texel_count() } else { 0 };

    let chunks: Vec<ChunkResult> = (0..cam.height.div_ceil(ROWS_PER_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut out = ChunkResult {
                sink: GradSink::new(texels),
                ..Default::default()
            };
            let mut states: Vec<Rgba> = Vec::new();
            let rows = chunk * ROWS_PER_CHUNK..((chunk + 1) * ROWS_PER_CHUNK).min(cam.height);
            for y in rows {
                for x in 0..cam.width {
                    let s = seed.data[y * cam.width + x];
                    if s == [0.0; 4] {
                        continue;
                    }
                    backprop_ray(medium, cam, cfg, want, pixel_center(x, y), s, &mut states, &mut out);
                }
            }
            out.sink.flush();
            out
        })
        .collect();

    let mut grads = GradientSet {
        tf: vec![[0.0; 4]; texels],
        volume: if want.voxels {
            vec![0.0; medium.voxel_param_count()]
        } else {
            Vec::new()
        },
        ..Default::default()
    };
    let mut stats = AdjointStats::default();
    for c in chunks {
        for (g, t) in grads.tf.iter_mut().zip(&c.sink.tf) {
            for k in 0..4 {
                g[k] += t[k];
            }
        }
        for (i, v) in c.sink.voxels {
            grads.volume[i] += v;
        }
        grads.camera[0] += c.camera[0];
        grads.camera[1] += c.camera[1];
        grads.stepsize += c.stepsize;
        stats.rays += c.stats.rays;
        stats.samples += c.stats.samples;
        stats.max_states_per_ray = stats.max_states_per_ray.max(c.stats.max_states_per_ray);
    }
    if cfg.target != DiffTarget::Camera {
        grads.camera = [0.0; 2];
    }
    if cfg.target != DiffTarget::Stepsize {
        grads.stepsize = 0.0;
    }
    Ok((grads, stats))
}

#[inline]
fn sample_at<M: Medium>(medium: &M, x: &Vec3<f64>, step: f64) -> ([f64; 4], Rgba, M::Cache, f64, f64) {
    let (optical, cache) = medium.eval(x);
    let op = opacity_from_density(optical[3], step);
    let a = op.alpha;
    let sample = [optical[0] * a, optical[1] * a, optical[2] * a, a];
    (optical, sample, cache, op.d_tau, op.d_step)
}

#[allow(clippy::too_many_arguments)]
fn backprop_ray<M: Medium>(
    medium: &M,
    cam: &SphericalCamera,
    cfg: &RenderConfig,
    want: Want,
    pixel: [f64; 2],
    seed: Rgba,
    states: &mut Vec<Rgba>,
    out: &mut ChunkResult,
) {
    let (eye, dir) = cam.ray_generic(cam.longitude, cam.latitude, pixel);
    let Some(hit) = slab(&medium.bounds(), &eye, &dir) else {
        return;
    };
    let step = cfg.step;
    let n = sample_count(hit.t_far - hit.t_near, step);
    let start = eye + dir.scale(hit.t_near);
    let position = |i: usize| start + dir.scale(step * i as f64);
    out.stats.rays += 1;
    out.stats.samples += n;

    // forward pass
    let stored = cfg.memory == AdjointMemory::Stored;
    states.clear();
    let mut state: Rgba = [0.0; 4];
    if stored {
        states.reserve(n + 1);
        states.push(state);
    }
    for i in 0..n {
        let (_, sample, _, _, _) = sample_at(medium, &position(i), step);
        state = blend(state, sample);
        if stored {
            states.push(state);
        }
    }
    let held = if stored { states.len() } else { 1 };
    out.stats.max_states_per_ray = out.stats.max_states_per_ray.max(held);

    // reverse pass
    let mut state_hat = seed;
    let mut eye_hat = Vec3::<f64>::zero();
    let mut dir_hat = Vec3::<f64>::zero();
    let mut t_near_hat = 0.0;
    let mut step_hat = 0.0;
    for i in (0..n).rev() {
        let x = position(i);
        let (optical, sample, cache, d_tau, d_step) = sample_at(medium, &x, step);
        let prev = if stored { states[i] } else { invert_unchecked(state, sample) };
        let (prev_hat, sample_hat) = blend_adjoint(prev, sample, state_hat);

        let a = sample[3];
        let alpha_hat = sample_hat[3]
            + sample_hat[0] * optical[0]
            + sample_hat[1] * optical[1]
            + sample_hat[2] * optical[2];
        let adj = [
            a * sample_hat[0],
            a * sample_hat[1],
            a * sample_hat[2],
            alpha_hat * d_tau,
        ];
        step_hat += alpha_hat * d_step;
        let x_hat = medium.backward(&cache, &adj, want, &mut out.sink);
        if want.position {
            let fi = i as f64;
            eye_hat += x_hat;
            dir_hat += x_hat.scale(hit.t_near + step * fi);
            let proj = dir.dot(&x_hat);
            t_near_hat += proj;
            step_hat += fi * proj;
        }
        state = prev;
        state_hat = prev_hat;
    }

    match cfg.target {
        DiffTarget::Stepsize => out.stepsize += step_hat,
        DiffTarget::Camera => {
            if let Some((k, _)) = hit.entry_face {
                let dk = dir.get(k);
                let mut e = eye_hat.to_array();
                let mut d = dir_hat.to_array();
                e[k] -= t_near_hat / dk;
                d[k] -= t_near_hat * hit.t_near / dk;
                eye_hat = Vec3::from_array(e);
                dir_hat = Vec3::from_array(d);
            }
            let jac = cam
                .camera_gradients(pixel)
                .expect("camera validated before the adjoint pass");
            for a in 0..2 {
                out.camera[a] += eye_hat.dot(&jac.d_eye[a]) + dir_hat.dot(&jac.d_dir[a]);
            }
        }
        _ => {}
    }
}
