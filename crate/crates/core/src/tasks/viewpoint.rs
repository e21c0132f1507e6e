//! Best-viewpoint search by gradient ascent on the opacity entropy.

use serde::{Deserialize, Serialize};

use super::{timed, CameraSetup, SpotCheck, TaskReport, ViewSet};
use crate::error::{Error, Result};
use crate::io::TraceRow;
use crate::objectives::opacity_entropy;
use crate::renderer::{render, render_forward_grad, DiffTarget, Medium, RenderConfig};

/// Latitudes proposed beyond this are clamped back.
pub const LATITUDE_LIMIT: f64 = 89.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewpointConfig {
    /// Starting `(longitude, latitude)` pairs in degrees.
    pub restarts: Vec<[f64; 2]>,
    pub iterations: usize,
    /// Angular length of the first step along the normalized gradient.
    pub initial_step_deg: f64,
    pub step: f64,
    pub camera: CameraSetup,
    pub seed: u64,
}

impl Default for ViewpointConfig {
    fn default() -> Self {
        let mut restarts = Vec::new();
        for lat in [45.0, -45.0] {
            for lon in [45.0, 135.0, 225.0, 315.0] {
                restarts.push([lon, lat]);
            }
        }
        Self {
            restarts,
            iterations: 20,
            initial_step_deg: 15.0,
            step: 1.0 / 64.0,
            camera: CameraSetup::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Pose after each iteration, starting with the initial pose.
    pub poses: Vec<[f64; 2]>,
    pub entropies: Vec<f64>,
    pub pole_clamps: usize,
}

impl Trajectory {
    pub fn final_entropy(&self) -> f64 {
        *self.entropies.last().expect("trajectories start with the initial pose")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewpointOutcome {
    pub report: TaskReport,
    pub trajectories: Vec<Trajectory>,
    pub best_pose: [f64; 2],
    pub best_entropy: f64,
}

/// Entropy and its per-degree gradient with respect to (longitude, latitude).
fn entropy_and_gradient<M: Medium>(
    medium: &M,
    setup: &CameraSetup,
    pose: [f64; 2],
    cfg: &RenderConfig,
) -> Result<(f64, [f64; 2])> {
    let cam = setup.at(pose[0], pose[1]);
    let (img, jac) = render_forward_grad(medium, &cam, cfg, DiffTarget::Camera)?;
    let e = opacity_entropy(&img);
    let g = jac.contract(&e.seed);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { index: 0, value: g[0] });
    }
    Ok((e.value, [g[0], g[1]]))
}

pub fn optimize_viewpoint<M: Medium>(medium: &M, cfg: &ViewpointConfig) -> Result<ViewpointOutcome> {
    if cfg.restarts.is_empty() {
        return Err(Error::InvalidParameter("at least one restart pose is required".into()));
    }
    let rcfg = RenderConfig::new(cfg.step);
    let mut report = TaskReport::new("viewpoint", cfg.seed, cfg);
    let (trajectories, secs) = timed(|| {
        let mut trajectories = Vec::with_capacity(cfg.restarts.len());
        for &start in &cfg.restarts {
            let mut pose = [start[0].rem_euclid(360.0), start[1].clamp(-LATITUDE_LIMIT, LATITUDE_LIMIT)];
            let (mut e, mut g) = entropy_and_gradient(medium, &cfg.camera, pose, &rcfg)?;
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            let mut lr = if gn > 0.0 { cfg.initial_step_deg / gn } else { 0.0 };
            let mut traj = Trajectory {
                poses: vec![pose],
                entropies: vec![e],
                pole_clamps: 0,
            };
            for _ in 0..cfg.iterations {
                let mut lat = pose[1] + lr * g[1];
                if lat.abs() > LATITUDE_LIMIT {
                    lat = lat.clamp(-LATITUDE_LIMIT, LATITUDE_LIMIT);
                    traj.pole_clamps += 1;
                }
                let cand = [(pose[0] + lr * g[0]).rem_euclid(360.0), lat];
                let (ec, gc) = entropy_and_gradient(medium, &cfg.camera, cand, &rcfg)?;
                if ec >= e {
                    pose = cand;
                    e = ec;
                    g = gc;
                } else {
                    lr *= 0.5;
                }
                traj.poses.push(pose);
                traj.entropies.push(e);
            }
            trajectories.push(traj);
        }
        Ok(trajectories)
    })?;
    report.add_time("optimize", secs);

    for it in 0..=cfg.iterations {
        let best = trajectories
            .iter()
            .map(|t| t.entropies[it])
            .fold(f64::NEG_INFINITY, f64::max);
        report.trace.push(TraceRow {
            iter: it,
            total: best,
            data: best,
            prior: 0.0,
        });
    }
    report
        .notes
        .push("trace holds the best entropy across restarts after each iteration".into());
    let clamps: usize = trajectories.iter().map(|t| t.pole_clamps).sum();
    if clamps > 0 {
        report
            .notes
            .push(format!("latitude clamped to +-{LATITUDE_LIMIT} degrees {clamps} times"));
    }

    let (bi, best) = trajectories
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.final_entropy().total_cmp(&b.1.final_entropy()))
        .expect("restarts are non-empty");
    let best_pose = *best.poses.last().unwrap();
    let best_entropy = best.final_entropy();
    report.metrics.insert("best_entropy".into(), best_entropy);
    report.metrics.insert("best_restart".into(), bi as f64);
    let start_best = trajectories.iter().map(|t| t.entropies[0]).fold(f64::NEG_INFINITY, f64::max);
    report.metrics.insert("best_initial_entropy".into(), start_best);

    // forward-mode gradient against central differences of the entropy
    let h = 1e-4;
    let (_, g) = entropy_and_gradient(medium, &cfg.camera, best_pose, &rcfg)?;
    let entropy_at = |p: [f64; 2]| -> Result<f64> {
        Ok(opacity_entropy(&render(medium, &cfg.camera.at(p[0], p[1]), &rcfg)?).value)
    };
    let check = SpotCheck::run("camera_longitude", 0, g[0], h, |d| {
        entropy_at([best_pose[0] + d, best_pose[1]])
    })?;
    report.gradient_checks.push(check);
    report.final_params = serde_json::json!({
        "longitude": best_pose[0],
        "latitude": best_pose[1],
    });

    Ok(ViewpointOutcome {
        report,
        trajectories,
        best_pose,
        best_entropy,
    })
}

/// Entropy of `n` Fibonacci-distributed views: `(longitude, latitude, entropy)`.
pub fn entropy_sweep<M: Medium>(medium: &M, setup: &CameraSetup, n: usize, step: f64) -> Result<Vec<[f64; 3]>> {
    let views = ViewSet::fibonacci(n, setup)?;
    let cfg = RenderConfig::new(step);
    views
        .cameras
        .iter()
        .map(|cam| Ok([cam.longitude, cam.latitude, opacity_entropy(&render(medium, cam, &cfg)?).value]))
        .collect()
}
