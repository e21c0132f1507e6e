//! End-to-end optimization pipelines built on the renderer.

mod demo;
mod density;
mod estimate;
mod tf_recon;
mod viewpoint;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SphericalCamera;
use crate::io::TraceRow;
use crate::renderer::{render, ImageRGBA, Medium, RenderConfig};

pub use demo::{gaussian_1d_demo, DemoConfig, DemoRow, DemoTable};
pub use density::{
    reconstruct_color_volume, reconstruct_density_absorption, reconstruct_density_emission_absorption,
    random_density, refine_density, AbsorptionConfig, AbsorptionOutcome, ColorReconConfig, ColorReconOutcome, EmissionAbsorptionConfig,
    EmissionAbsorptionOutcome, MultiRes, RefineConfig, RefineOutcome,
};
pub use estimate::{estimate_density_from_colors, EstimateConfig, EstimateInfo};
pub use tf_recon::{random_tf, reconstruct_tf, reconstruct_tf_from, TfReconConfig, TfReconOutcome};
pub use viewpoint::{entropy_sweep, optimize_viewpoint, Trajectory, ViewpointConfig, ViewpointOutcome, LATITUDE_LIMIT};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Shared camera parameters for every view of a task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSetup {
    pub radius: f64,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub center: [f64; 3],
}

impl Default for CameraSetup {
    fn default() -> Self {
        Self {
            radius: 2.2,
            fov_y: 45.0,
            width: 64,
            height: 64,
            center: [0.0; 3],
        }
    }
}

impl CameraSetup {
    pub fn at(&self, longitude: f64, latitude: f64) -> SphericalCamera {
        SphericalCamera::new(longitude, latitude, self.radius, self.width, self.height)
            .with_fov(self.fov_y)
            .with_center(self.center)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRule {
    Fibonacci,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSet {
    pub rule: ViewRule,
    pub cameras: Vec<SphericalCamera>,
}

impl ViewSet {
    /// `n` views spread evenly over the sphere by the Fibonacci rule.
    pub fn fibonacci(n: usize, setup: &CameraSetup) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("a view set needs at least one view".into()));
        }
        let golden = 180.0 * (3.0 - 5f64.sqrt());
        let cameras = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let lat = y.asin().to_degrees();
                let lon = (i as f64 * golden).rem_euclid(360.0);
                setup.at(lon, lat)
            })
            .collect();
        Ok(Self {
            rule: ViewRule::Fibonacci,
            cameras,
        })
    }

    pub fn explicit(cameras: Vec<SphericalCamera>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::InvalidParameter("a view set needs at least one view".into()));
        }
        for c in &cameras {
            c.validate()?;
        }
        Ok(Self {
            rule: ViewRule::Explicit,
            cameras,
        })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// Result of comparing one adjoint gradient entry with central differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub target: String,
    pub index: usize,
    pub adjoint: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
    pub passed: bool,
}

pub const SPOT_CHECK_TOLERANCE: f64 = 1e-3;

impl SpotCheck {
    /// `loss(delta)` evaluates the loss with the checked parameter shifted by `delta`.
    pub fn run(
        target: &str,
        index: usize,
        adjoint: f64,
        h: f64,
        loss: impl Fn(f64) -> Result<f64>,
    ) -> Result<Self> {
        let fd = (loss(h)? - loss(-h)?) / (2.0 * h);
        let rel_error = (adjoint - fd).abs() / adjoint.abs().max(fd.abs()).max(1e-12);
        Ok(Self {
            target: target.to_string(),
            index,
            adjoint,
            finite_difference: fd,
            rel_error,
            passed: rel_error <= SPOT_CHECK_TOLERANCE || (adjoint - fd).abs() < 1e-10,
        })
    }
}

/// Everything a pipeline run produces besides its parameter arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub schema_version: u32,
    pub task: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub trace: Vec<TraceRow>,
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub gradient_checks: Vec<SpotCheck>,
    pub notes: Vec<String>,
    pub final_params: serde_json::Value,
}

impl TaskReport {
    pub fn new(task: &str, seed: u64, config: &impl Serialize) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            task: task.to_string(),
            seed,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            trace: Vec::new(),
            metrics: BTreeMap::new(),
            timings: BTreeMap::new(),
            gradient_checks: Vec::new(),
            notes: Vec::new(),
            final_params: serde_json::Value::Null,
        }
    }

    pub fn add_time(&mut self, phase: &str, seconds: f64) {
        *self.timings.entry(phase.to_string()).or_insert(0.0) += seconds;
    }

    pub fn losses(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.total).collect()
    }
}

/// Runs `f` and returns its value with the elapsed wall-clock seconds.
pub(crate) fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

pub fn render_views<M: Medium>(medium: &M, views: &[SphericalCamera], cfg: &RenderConfig) -> Result<Vec<ImageRGBA>> {
    views.iter().map(|cam| render(medium, cam, cfg)).collect()
}

pub(crate) fn check_refs(views: &[SphericalCamera], refs: &[ImageRGBA]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::InvalidInput("no views given".into()));
    }
    if views.len() != refs.len() {
        return Err(Error::InvalidInput(format!(
            "{} views but {} reference images",
            views.len(),
            refs.len()
        )));
    }
    for (i, (v, r)) in views.iter().zip(refs).enumerate() {
        if v.width != r.width || v.height != r.height {
            return Err(Error::InvalidInput(format!(
                "reference {i} is {}x{} but view {i} renders {}x{}",
                r.width, r.height, v.width, v.height
            )));
        }
    }
    Ok(())
}

/// Splits view indices into batches; the order is reshuffled by `rng` for every pass.
pub(crate) struct Batcher {
    order: Vec<usize>,
    batch: usize,
    cursor: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl Batcher {
    pub(crate) fn new(views: usize, batch: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            order: (0..views).collect(),
            batch: batch.clamp(1, views.max(1)),
            cursor: views,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn next_batch(&mut self) -> Vec<usize> {
        use rand::seq::SliceRandom;
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let b = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        b
    }

    pub(crate) fn batches_per_pass(&self) -> usize {
        self.order.len() / self.batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fibonacci_views_are_spread_and_legal() {
        let setup = CameraSetup::default();
        let vs = ViewSet::fibonacci(256, &setup).unwrap();
        assert_eq!(vs.len(), 256);
        for c in &vs.cameras {
            c.validate().unwrap();
        }
        let north = vs.cameras.iter().filter(|c| c.latitude > 0.0).count();
        assert_eq!(north, 128);
        assert!(ViewSet::fibonacci(0, &setup).is_err());
    }

    #[test]
    fn batcher_covers_every_view_per_pass() {
        let mut b = Batcher::new(16, 8, 3);
        let mut seen: Vec<usize> = b.next_batch();
        seen.extend(b.next_batch());
        seen.sort();
        assert_eq!(seen, (0..16).collect::<Vec<_>>());
        let mut b = Batcher::new(3, 8, 3);
        assert_eq!(b.next_batch().len(), 3);
    }
}
