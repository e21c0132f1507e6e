//! Per-voxel reconstruction: absorption-only tomography, pre-shaded color
//! volumes, and the staged emission-absorption density pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::estimate::{estimate_density_from_colors, EstimateConfig, EstimateInfo};
use super::tf_recon::linear;
use super::{check_refs, timed, Batcher, SpotCheck, TaskReport};
use crate::error::{Error, Result};
use crate::field::{ColorVolume, DensityVolume, SphericalCamera, Transfer, TransferFunction};
use crate::io::TraceRow;
use crate::math::Aabb;
use crate::objectives::{l1_loss, psnr_volume, smoothness_prior_grid};
use crate::optim::{project_params, upsample_grid, Adam, ParamKind, DEFAULT_TAU_MAX};
use crate::renderer::{
    render, render_adjoint, ColorMedium, DensityMedium, DiffTarget, ImageRGBA, Medium, RenderConfig,
};

/// Coarse-to-fine schedule: the grid starts at `start_res` per axis and
/// doubles after `iters_per_level` steps until it reaches `final_res`,
/// where it runs `final_iters` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiRes {
    pub start_res: usize,
    pub final_res: usize,
    pub iters_per_level: usize,
    pub final_iters: usize,
}

impl Default for MultiRes {
    fn default() -> Self {
        Self {
            start_res: 4,
            final_res: 16,
            iters_per_level: 10,
            final_iters: 50,
        }
    }
}

impl MultiRes {
    pub fn single(res: usize, iters: usize) -> Self {
        Self {
            start_res: res,
            final_res: res,
            iters_per_level: 0,
            final_iters: iters,
        }
    }

    /// `(resolution, iterations)` per level.
    pub fn levels(&self) -> Result<Vec<(usize, usize)>> {
        if self.start_res == 0 || self.final_res < self.start_res {
            return Err(Error::InvalidParameter(format!(
                "bad resolution schedule {} -> {}",
                self.start_res, self.final_res
            )));
        }
        let mut levels = Vec::new();
        let mut r = self.start_res;
        while r < self.final_res {
            levels.push((r, self.iters_per_level));
            r *= 2;
        }
        if r != self.final_res {
            return Err(Error::InvalidParameter(format!(
                "final resolution {} is not start resolution {} times a power of two",
                self.final_res, self.start_res
            )));
        }
        levels.push((r, self.final_iters));
        Ok(levels)
    }

    pub fn total_iterations(&self) -> Result<usize> {
        Ok(self.levels()?.iter().map(|l| l.1).sum())
    }
}

/// How grid parameters turn into images and back into gradients.
trait GridModel: Sync {
    fn channels(&self) -> usize;
    fn kind(&self) -> ParamKind;
    fn images(&self, dims: [usize; 3], data: &[f64], cams: &[SphericalCamera], rcfg: &RenderConfig) -> Result<Vec<ImageRGBA>>;
    fn gradient(
        &self,
        dims: [usize; 3],
        data: &[f64],
        cams: &[SphericalCamera],
        seeds: &[ImageRGBA],
        rcfg: &RenderConfig,
    ) -> Result<Vec<f64>>;
}

fn images_of<M: Medium>(medium: &M, cams: &[SphericalCamera], rcfg: &RenderConfig) -> Result<Vec<ImageRGBA>> {
    cams.iter().map(|c| render(medium, c, rcfg)).collect()
}

fn gradient_of<M: Medium>(
    medium: &M,
    cams: &[SphericalCamera],
    seeds: &[ImageRGBA],
    rcfg: &RenderConfig,
) -> Result<Vec<f64>> {
    let acfg = rcfg.with_target(DiffTarget::Volume);
    let mut grad = vec![0.0; medium.voxel_param_count()];
    for (cam, seed) in cams.iter().zip(seeds) {
        let (g, _) = render_adjoint(medium, cam, &acfg, seed)?;
        for (a, b) in grad.iter_mut().zip(&g.volume) {
            *a += b;
        }
    }
    Ok(grad)
}

struct DensityModel<'a> {
    transfer: &'a Transfer,
    bounds: Aabb,
}

impl DensityModel<'_> {
    fn volume(&self, dims: [usize; 3], data: &[f64]) -> DensityVolume {
        DensityVolume {
            dims,
            data: data.to_vec(),
            bounds: self.bounds,
        }
    }
}

impl GridModel for DensityModel<'_> {
    fn channels(&self) -> usize {
        1
    }

    fn kind(&self) -> ParamKind {
        ParamKind::Density
    }

    fn images(&self, dims: [usize; 3], data: &[f64], cams: &[SphericalCamera], rcfg: &RenderConfig) -> Result<Vec<ImageRGBA>> {
        let v = self.volume(dims, data);
        images_of(&DensityMedium::new(&v, self.transfer), cams, rcfg)
    }

    fn gradient(
        &self,
        dims: [usize; 3],
        data: &[f64],
        cams: &[SphericalCamera],
        seeds: &[ImageRGBA],
        rcfg: &RenderConfig,
    ) -> Result<Vec<f64>> {
        let v = self.volume(dims, data);
        gradient_of(&DensityMedium::new(&v, self.transfer), cams, seeds, rcfg)
    }
}

struct ColorModel {
    bounds: Aabb,
    tau_max: f64,
}

impl ColorModel {
    fn volume(&self, dims: [usize; 3], data: &[f64]) -> ColorVolume {
        let mut v = ColorVolume::constant(dims, [0.0; 4], self.bounds);
        v.set_flat(data);
        v
    }
}

impl GridModel for ColorModel {
    fn channels(&self) -> usize {
        4
    }

    fn kind(&self) -> ParamKind {
        ParamKind::Rgbt { tau_max: self.tau_max }
    }

    fn images(&self, dims: [usize; 3], data: &[f64], cams: &[SphericalCamera], rcfg: &RenderConfig) -> Result<Vec<ImageRGBA>> {
        let v = self.volume(dims, data);
        images_of(&ColorMedium { volume: &v }, cams, rcfg)
    }

    fn gradient(
        &self,
        dims: [usize; 3],
        data: &[f64],
        cams: &[SphericalCamera],
        seeds: &[ImageRGBA],
        rcfg: &RenderConfig,
    ) -> Result<Vec<f64>> {
        let v = self.volume(dims, data);
        gradient_of(&ColorMedium { volume: &v }, cams, seeds, rcfg)
    }
}

struct GridRun {
    dims: [usize; 3],
    data: Vec<f64>,
    trace: Vec<TraceRow>,
    initial_l1: f64,
    final_l1: f64,
}

struct GridProblem<'a> {
    views: &'a [SphericalCamera],
    refs: &'a [ImageRGBA],
    rcfg: RenderConfig,
    lr: f64,
    lambda: f64,
    batch: usize,
    seed: u64,
}

/// Projected Adam on a voxel grid with a coarse-to-fine schedule. Adam
/// moments are carried across levels by the same upsampling as the grid.
fn optimize_grid(
    model: &dyn GridModel,
    problem: &GridProblem,
    levels: &[(usize, usize)],
    init_dims: [usize; 3],
    init: Vec<f64>,
) -> Result<GridRun> {
    let ch = model.channels();
    let kind = model.kind();
    let (views, refs, rcfg) = (problem.views, problem.refs, &problem.rcfg);
    let mut dims = init_dims;
    let mut data = init;
    project_params(&mut data, kind);
    let mut adam = Adam::new(data.len(), problem.lr);
    let mut batcher = Batcher::new(views.len(), problem.batch, problem.seed ^ 0xba7c);
    let mut trace = Vec::new();
    let mut iter = 0;
    let initial_l1 = l1_loss(&model.images(dims, &data, views, rcfg)?, refs)?.0;

    for &(res, iters) in levels {
        let target = [res; 3];
        while dims != target {
            if dims.iter().zip(&target).any(|(a, b)| a * 2 > *b) {
                return Err(Error::InvalidParameter(format!("cannot grow grid {dims:?} to {target:?}")));
            }
            let (d, up) = upsample_grid(dims, &data, ch);
            data = up;
            project_params(&mut data, kind);
            adam.m = upsample_grid(dims, &adam.m, ch).1;
            adam.v = upsample_grid(dims, &adam.v, ch).1.into_iter().map(|v| v.max(0.0)).collect();
            dims = d;
        }
        for _ in 0..iters {
            let images = model.images(dims, &data, views, rcfg)?;
            let (full, _) = l1_loss(&images, refs)?;
            let batch = batcher.next_batch();
            let bimgs: Vec<ImageRGBA> = batch.iter().map(|&i| images[i].clone()).collect();
            let brefs: Vec<ImageRGBA> = batch.iter().map(|&i| refs[i].clone()).collect();
            let bcams: Vec<SphericalCamera> = batch.iter().map(|&i| views[i].clone()).collect();
            let (_, seeds) = l1_loss(&bimgs, &brefs)?;
            let (prior, prior_grad) = smoothness_prior_grid(dims, &data, ch);
            let mut grad = model.gradient(dims, &data, &bcams, &seeds, rcfg)?;
            for (g, p) in grad.iter_mut().zip(&prior_grad) {
                *g += problem.lambda * p;
            }
            trace.push(TraceRow {
                iter,
                total: full + problem.lambda * prior,
                data: full,
                prior,
            });
            adam.step(&mut data, &grad)?;
            project_params(&mut data, kind);
            iter += 1;
        }
    }
    let final_l1 = l1_loss(&model.images(dims, &data, views, rcfg)?, refs)?.0;
    Ok(GridRun {
        dims,
        data,
        trace,
        initial_l1,
        final_l1,
    })
}

/// Compares the adjoint voxel gradient of `sum(seed * image)` for view 0
/// with central differences at a seeded random interior voxel.
fn grid_spot_check(
    model: &dyn GridModel,
    run: &GridRun,
    problem: &GridProblem,
    target: &str,
    seed: u64,
) -> Result<SpotCheck> {
    let cam = &problem.views[..1];
    let img = model.images(run.dims, &run.data, cam, &problem.rcfg)?;
    let (_, seeds) = l1_loss(&img, &problem.refs[..1])?;
    let grad = model.gradient(run.dims, &run.data, cam, &seeds, &problem.rcfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc4ec);
    // prefer a coordinate the view actually sees and that is not sitting on a projection bound
    let candidates: Vec<usize> = (0..grad.len())
        .filter(|&i| grad[i] != 0.0 && run.data[i] > 1e-3 && run.data[i] < 0.999)
        .collect();
    let index = if candidates.is_empty() {
        rng.random_range(0..grad.len())
    } else {
        candidates[rng.random_range(0..candidates.len())]
    };
    let h = 1e-6;
    SpotCheck::run(target, index, grad[index], h, |d| {
        let mut p = run.data.clone();
        p[index] += d;
        let img = model.images(run.dims, &p, cam, &problem.rcfg)?;
        Ok(linear(&img[0], &seeds[0]))
    })
}

fn step_for(bounds: &Aabb, res: usize, step_voxels: f64) -> f64 {
    step_voxels * bounds.extent()[0] / res as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbsorptionConfig {
    pub multires: MultiRes,
    pub lr: f64,
    pub batch: usize,
    /// Ray step as a fraction of the finest voxel width.
    pub step_voxels: f64,
    pub lambda: f64,
    /// Slope of the absorption ramp `tau = scale * density`.
    pub absorption_scale: f64,
    pub init_density: f64,
    pub seed: u64,
}

impl Default for AbsorptionConfig {
    fn default() -> Self {
        Self {
            multires: MultiRes::default(),
            lr: 0.3,
            batch: 8,
            step_voxels: 0.2,
            lambda: 0.5,
            absorption_scale: 4.0,
            init_density: 0.5,
            seed: 0,
        }
    }
}

impl AbsorptionConfig {
    pub fn transfer(&self) -> Transfer {
        Transfer::AbsorptionRamp {
            scale: self.absorption_scale,
        }
    }

    /// World-space step used both for references and reconstruction.
    pub fn step(&self, bounds: &Aabb) -> f64 {
        step_for(bounds, self.multires.final_res, self.step_voxels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionOutcome {
    pub report: TaskReport,
    pub volume: DensityVolume,
    pub initial_psnr: Option<f64>,
    pub final_psnr: Option<f64>,
}

pub fn reconstruct_density_absorption(
    refs: &[ImageRGBA],
    views: &[SphericalCamera],
    bounds: Aabb,
    cfg: &AbsorptionConfig,
    truth: Option<&DensityVolume>,
) -> Result<AbsorptionOutcome> {
    check_refs(views, refs)?;
    let levels = cfg.multires.levels()?;
    let transfer = cfg.transfer();
    let model = DensityModel {
        transfer: &transfer,
        bounds,
    };
    let problem = GridProblem {
        views,
        refs,
        rcfg: RenderConfig::new(cfg.step(&bounds)),
        lr: cfg.lr,
        lambda: cfg.lambda,
        batch: cfg.batch,
        seed: cfg.seed,
    };
    let mut report = TaskReport::new("density_absorption", cfg.seed, cfg);
    if views.len() < cfg.batch {
        report.notes.push(format!("only {} views, batch uses all of them", views.len()));
    }
    let start = [cfg.multires.start_res; 3];
    let init = vec![cfg.init_density; start.iter().product()];
    let (run, secs) = timed(|| optimize_grid(&model, &problem, &levels, start, init))?;
    report.add_time("optimize", secs);
    let volume = model.volume(run.dims, &run.data);

    let (initial_psnr, final_psnr) = match truth {
        Some(t) => {
            let init = DensityVolume::constant(t.dims, cfg.init_density, bounds);
            (Some(psnr_volume(&init, t)?.db()), Some(psnr_volume(&volume, t)?.db()))
        }
        None => (None, None),
    };
    if let (Some(a), Some(b)) = (initial_psnr, final_psnr) {
        report.metrics.insert("initial_psnr_db".into(), a);
        report.metrics.insert("final_psnr_db".into(), b);
    }
    report.metrics.insert("initial_l1".into(), run.initial_l1);
    report.metrics.insert("final_l1".into(), run.final_l1);
    let (check, secs) = timed(|| grid_spot_check(&model, &run, &problem, "volume", cfg.seed))?;
    report.add_time("gradient_check", secs);
    report.gradient_checks.push(check);
    report.trace = run.trace;
    report.final_params = serde_json::json!({ "dims": volume.dims });
    Ok(AbsorptionOutcome {
        report,
        volume,
        initial_psnr,
        final_psnr,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColorReconConfig {
    pub multires: MultiRes,
    pub lr: f64,
    pub batch: usize,
    pub step_voxels: f64,
    pub lambda: f64,
    /// Initial `(r, g, b, tau)` of every voxel.
    pub init: [f64; 4],
    pub tau_max: f64,
    pub seed: u64,
}

impl Default for ColorReconConfig {
    fn default() -> Self {
        Self {
            multires: MultiRes::default(),
            lr: 0.3,
            batch: 8,
            step_voxels: 0.2,
            lambda: 0.5,
            init: [0.5, 0.5, 0.5, 2.0],
            tau_max: DEFAULT_TAU_MAX,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorReconOutcome {
    pub report: TaskReport,
    pub volume: ColorVolume,
}

/// Fits a pre-shaded `(r, g, b, tau)` volume to the references.
pub fn reconstruct_color_volume(
    refs: &[ImageRGBA],
    views: &[SphericalCamera],
    bounds: Aabb,
    cfg: &ColorReconConfig,
) -> Result<ColorReconOutcome> {
    check_refs(views, refs)?;
    let levels = cfg.multires.levels()?;
    let model = ColorModel {
        bounds,
        tau_max: cfg.tau_max,
    };
    let problem = GridProblem {
        views,
        refs,
        rcfg: RenderConfig::new(step_for(&bounds, cfg.multires.final_res, cfg.step_voxels)),
        lr: cfg.lr,
        lambda: cfg.lambda,
        batch: cfg.batch,
        seed: cfg.seed,
    };
    let mut report = TaskReport::new("color_recon", cfg.seed, cfg);
    let start = [cfg.multires.start_res; 3];
    let init: Vec<f64> = (0..start.iter().product::<usize>()).flat_map(|_| cfg.init).collect();
    let (run, secs) = timed(|| optimize_grid(&model, &problem, &levels, start, init))?;
    report.add_time("optimize", secs);
    report.metrics.insert("initial_l1".into(), run.initial_l1);
    report.metrics.insert("final_l1".into(), run.final_l1);
    let (check, secs) = timed(|| grid_spot_check(&model, &run, &problem, "color_volume", cfg.seed))?;
    report.add_time("gradient_check", secs);
    report.gradient_checks.push(check);
    let volume = model.volume(run.dims, &run.data);
    report.trace = run.trace;
    report.final_params = serde_json::json!({ "dims": volume.dims });
    Ok(ColorReconOutcome { report, volume })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub iterations: usize,
    pub lr: f64,
    pub batch: usize,
    pub step_voxels: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            lr: 0.05,
            batch: 8,
            step_voxels: 0.2,
            lambda: 20.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub report: TaskReport,
    pub volume: DensityVolume,
    pub initial_l1: f64,
    pub final_l1: f64,
}

/// Density optimization through a fixed transfer function, at the
/// resolution of `init`.
pub fn refine_density(
    refs: &[ImageRGBA],
    views: &[SphericalCamera],
    tf: &TransferFunction,
    init: &DensityVolume,
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    check_refs(views, refs)?;
    if init.dims[0] != init.dims[1] || init.dims[1] != init.dims[2] {
        return Err(Error::InvalidInput(format!("refinement expects a cubic grid, got {:?}", init.dims)));
    }
    let transfer = Transfer::Table(tf.clone());
    let model = DensityModel {
        transfer: &transfer,
        bounds: init.bounds,
    };
    let problem = GridProblem {
        views,
        refs,
        rcfg: RenderConfig::new(step_for(&init.bounds, init.dims[0], cfg.step_voxels)),
        lr: cfg.lr,
        lambda: cfg.lambda,
        batch: cfg.batch,
        seed: cfg.seed,
    };
    let mut report = TaskReport::new("density_refine", cfg.seed, cfg);
    let levels = [(init.dims[0], cfg.iterations)];
    let (run, secs) = timed(|| optimize_grid(&model, &problem, &levels, init.dims, init.data.clone()))?;
    report.add_time("optimize", secs);
    report.metrics.insert("initial_l1".into(), run.initial_l1);
    report.metrics.insert("final_l1".into(), run.final_l1);
    let (check, secs) = timed(|| grid_spot_check(&model, &run, &problem, "volume", cfg.seed))?;
    report.add_time("gradient_check", secs);
    report.gradient_checks.push(check);
    let volume = model.volume(run.dims, &run.data);
    report.trace = run.trace;
    report.final_params = serde_json::json!({ "dims": volume.dims });
    Ok(RefineOutcome {
        report,
        volume,
        initial_l1: run.initial_l1,
        final_l1: run.final_l1,
    })
}

/// Uniform random densities in `[0, 1]`.
pub fn random_density(dims: [usize; 3], bounds: Aabb, seed: u64) -> DensityVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DensityVolume {
        dims,
        data: (0..dims.iter().product::<usize>()).map(|_| rng.random_range(0.0..1.0)).collect(),
        bounds,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmissionAbsorptionConfig {
    pub color: ColorReconConfig,
    pub estimate: EstimateConfig,
    pub refine: RefineConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionAbsorptionOutcome {
    pub report: TaskReport,
    pub color: ColorVolume,
    pub estimate: EstimateInfo,
    pub initial_density: DensityVolume,
    pub volume: DensityVolume,
    pub final_l1: f64,
    pub stage_reports: Vec<TaskReport>,
}

/// Color volume, then density estimation from colors, then density
/// refinement through the transfer function.
pub fn reconstruct_density_emission_absorption(
    refs: &[ImageRGBA],
    views: &[SphericalCamera],
    tf: &TransferFunction,
    bounds: Aabb,
    cfg: &EmissionAbsorptionConfig,
    truth: Option<&DensityVolume>,
) -> Result<EmissionAbsorptionOutcome> {
    check_refs(views, refs)?;
    let mut report = TaskReport::new("density_emission_absorption", cfg.seed, cfg);

    let stage1 = reconstruct_color_volume(refs, views, bounds, &cfg.color)?;
    let (estimated, secs) = timed(|| estimate_density_from_colors(&stage1.volume, tf, &cfg.estimate))?;
    let (initial_density, info) = estimated;
    let stage3 = refine_density(refs, views, tf, &initial_density, &cfg.refine)?;

    let mut iter = 0;
    for (stage, r) in [("color", &stage1.report), ("refine", &stage3.report)] {
        for row in &r.trace {
            report.trace.push(TraceRow { iter, ..*row });
            iter += 1;
        }
        for (k, v) in &r.timings {
            report.add_time(&format!("{stage}_{k}"), *v);
        }
        for (k, v) in &r.metrics {
            report.metrics.insert(format!("{stage}_{k}"), *v);
        }
        report.gradient_checks.extend(r.gradient_checks.iter().cloned());
    }
    report.add_time("estimate", secs);
    report.metrics.insert("estimate_sweeps".into(), info.sweeps as f64);
    report.metrics.insert("final_l1".into(), stage3.final_l1);
    if let Some(t) = truth {
        report.metrics.insert("final_psnr_db".into(), psnr_volume(&stage3.volume, t)?.db());
        report
            .metrics
            .insert("estimate_psnr_db".into(), psnr_volume(&initial_density, t)?.db());
    }
    if info.degenerate {
        report.notes.push("color volume has no absorption; estimation used alpha weight 1".into());
    }
    report
        .notes
        .push("trace concatenates the color stage and the refinement stage".into());
    report.final_params = serde_json::json!({ "dims": stage3.volume.dims });
    Ok(EmissionAbsorptionOutcome {
        final_l1: stage3.final_l1,
        color: stage1.volume,
        estimate: info,
        initial_density,
        volume: stage3.volume,
        stage_reports: vec![stage1.report, stage3.report],
        report,
    })
}
