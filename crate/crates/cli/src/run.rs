//! One function per subcommand. Each resolves its config, runs the task and
//! writes its artifacts; the resolved config and seed travel in every report.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voldiff::field::{DensityVolume, SphericalCamera, Transfer};
use voldiff::io::TraceRow;
use voldiff::objectives::{opacity_entropy, psnr_image, ssim};
use voldiff::renderer::{
    ray_sample_counts, render, render_adjoint, render_forward_grad, render_with, ColorMedium, DensityMedium,
    DiffTarget, ImageRGBA, RenderConfig,
};
use voldiff::tasks::{
    estimate_density_from_colors, gaussian_1d_demo, optimize_viewpoint, random_tf, reconstruct_color_volume,
    reconstruct_density_absorption, reconstruct_density_emission_absorption, reconstruct_tf, render_views, TaskReport,
    ViewSet,
};

use crate::config::*;
use crate::error::CliError;
use crate::output::OutDir;

fn double_only(p: Precision, task: &str) -> Result<(), CliError> {
    if p == Precision::Single {
        return Err(CliError::Schema(format!(
            "precision \"single\" is only available for render; {task} runs in double precision"
        )));
    }
    Ok(())
}

fn views(n: usize, camera: &voldiff::tasks::CameraSetup) -> Result<Vec<SphericalCamera>, CliError> {
    Ok(ViewSet::fibonacci(n, camera)?.cameras)
}

fn image_metrics(report: &mut TaskReport, prefix: &str, img: &ImageRGBA, reference: &ImageRGBA) -> Result<(), CliError> {
    report.metrics.insert(format!("{prefix}_psnr_db"), psnr_image(img, reference)?.db());
    report.metrics.insert(format!("{prefix}_ssim"), ssim(img, reference)?);
    Ok(())
}

pub fn render_cmd(cfg: &RenderRun, out: &mut OutDir) -> Result<(), CliError> {
    let volume = cfg.volume.load()?;
    let transfer = cfg.tf.build()?;
    let m = DensityMedium::new(&volume, &transfer);
    let cam = cfg.camera.at(cfg.longitude, cfg.latitude);
    let rcfg = RenderConfig::new(cfg.step);
    let start = Instant::now();
    let img = match cfg.precision {
        Precision::Double => render(&m, &cam, &rcfg)?,
        Precision::Single => render_with::<f32, _>(&m, &cam, &rcfg)?,
    };
    let mut report = TaskReport::new("render", cfg.seed, cfg);
    report.add_time("render", start.elapsed().as_secs_f64());
    report.metrics.insert("opacity_entropy".into(), opacity_entropy(&img).value);
    report
        .metrics
        .insert("mean_alpha".into(), img.alpha().sum::<f64>() / img.data.len() as f64);
    out.ppm("render.ppm", &img)?;
    out.rgba("render.rgba", &img)?;
    out.json("report.json", &report)
}

struct CheckRow {
    target: &'static str,
    index: usize,
    forward: Option<f64>,
    adjoint: f64,
    fd: Option<f64>,
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Forward-mode, adjoint and central-difference gradients of a seeded
/// linear image loss, for every differentiable parameter class.
pub fn gradcheck_cmd(cfg: &GradcheckRun, out: &mut OutDir) -> Result<(), CliError> {
    double_only(cfg.precision, "gradcheck")?;
    let volume = cfg.volume.load()?;
    let transfer = cfg.tf.build()?;
    let m = DensityMedium::new(&volume, &transfer);
    let cam = cfg.camera.at(cfg.longitude, cfg.latitude);
    let rcfg = RenderConfig::new(cfg.step);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = ImageRGBA::new(cam.width, cam.height);
    for p in weights.data.iter_mut() {
        for c in p.iter_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
    }
    let loss = |v: &DensityVolume, t: &Transfer, c: &SphericalCamera, step: f64| -> Result<f64, CliError> {
        let img = render(&DensityMedium::new(v, t), c, &RenderConfig::new(step))?;
        Ok(img
            .data
            .iter()
            .zip(&weights.data)
            .map(|(a, w)| (0..4).map(|k| a[k] * w[k]).sum::<f64>())
            .sum())
    };
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let base_counts = ray_sample_counts(&m, &cam, cfg.step);

    let h_deg = 1e-5;
    let (g, _) = render_adjoint(&m, &cam, &rcfg.with_target(DiffTarget::Camera), &weights)?;
    let (_, jac) = render_forward_grad(&m, &cam, &rcfg, DiffTarget::Camera)?;
    let fw = jac.contract(&weights);
    for axis in 0..2 {
        let shift = |d: f64| {
            let mut c = cam.clone();
            if axis == 0 {
                c.longitude += d;
            } else {
                c.latitude += d;
            }
            c
        };
        let (p, q) = (shift(h_deg), shift(-h_deg));
        let stable = ray_sample_counts(&m, &p, cfg.step) == base_counts && ray_sample_counts(&m, &q, cfg.step) == base_counts;
        let fd = if stable {
            Some((loss(&volume, &transfer, &p, cfg.step)? - loss(&volume, &transfer, &q, cfg.step)?) / (2.0 * h_deg))
        } else {
            notes.push(format!("camera axis {axis}: a ray changes its sample count under +-{h_deg} deg, no finite difference"));
            None
        };
        rows.push(CheckRow {
            target: "camera",
            index: axis,
            forward: Some(fw[axis]),
            adjoint: g.camera[axis],
            fd,
        });
    }

    let h_step = 1e-7;
    let (g, _) = render_adjoint(&m, &cam, &rcfg.with_target(DiffTarget::Stepsize), &weights)?;
    let (_, jac) = render_forward_grad(&m, &cam, &rcfg, DiffTarget::Stepsize)?;
    let stable = ray_sample_counts(&m, &cam, cfg.step + h_step) == base_counts
        && ray_sample_counts(&m, &cam, cfg.step - h_step) == base_counts;
    let fd = if stable {
        Some((loss(&volume, &transfer, &cam, cfg.step + h_step)? - loss(&volume, &transfer, &cam, cfg.step - h_step)?) / (2.0 * h_step))
    } else {
        notes.push("stepsize: a ray changes its sample count, no finite difference".into());
        None
    };
    rows.push(CheckRow {
        target: "stepsize",
        index: 0,
        forward: Some(jac.contract(&weights)[0]),
        adjoint: g.stepsize,
        fd,
    });

    let h = 1e-6;
    if let Some(table) = transfer.table() {
        let (g, _) = render_adjoint(&m, &cam, &rcfg.with_target(DiffTarget::Tf), &weights)?;
        let flat = table.to_flat();
        let grad = g.tf_flat();
        for i in 0..flat.len() {
            let shifted = |d: f64| {
                let mut p = flat.clone();
                p[i] += d;
                let mut t = table.clone();
                t.set_flat(&p);
                loss(&volume, &Transfer::Table(t), &cam, cfg.step)
            };
            rows.push(CheckRow {
                target: "tf",
                index: i,
                forward: None,
                adjoint: grad[i],
                fd: Some((shifted(h)? - shifted(-h)?) / (2.0 * h)),
            });
        }
    }

    let (g, _) = render_adjoint(&m, &cam, &rcfg.with_target(DiffTarget::Volume), &weights)?;
    // skip voxels sitting on the density clamp, where the loss has a kink
    let interior: Vec<usize> = (0..volume.data.len())
        .filter(|&i| volume.data[i] > 1e-3 && volume.data[i] < 1.0 - 1e-3)
        .collect();
    for _ in 0..cfg.voxel_samples.min(interior.len()) {
        let i = interior[rng.random_range(0..interior.len())];
        let shifted = |d: f64| {
            let mut v = volume.clone();
            v.data[i] += d;
            loss(&v, &transfer, &cam, cfg.step)
        };
        rows.push(CheckRow {
            target: "volume",
            index: i,
            forward: None,
            adjoint: g.volume[i],
            fd: Some((shifted(h)? - shifted(-h)?) / (2.0 * h)),
        });
    }

    let mut report = TaskReport::new("gradcheck", cfg.seed, cfg);
    report.add_time("check", start.elapsed().as_secs_f64());
    let mut table = String::from("target,index,forward,adjoint,finite_difference,rel_error\n");
    let mut worst: f64 = 0.0;
    for target in ["camera", "stepsize", "tf", "volume"] {
        let sel: Vec<&CheckRow> = rows.iter().filter(|r| r.target == target && r.fd.is_some()).collect();
        if sel.is_empty() {
            continue;
        }
        let ad: Vec<f64> = sel.iter().map(|r| r.adjoint).collect();
        let fd: Vec<f64> = sel.iter().map(|r| r.fd.unwrap()).collect();
        let e = rel(&ad, &fd);
        worst = worst.max(e);
        report.metrics.insert(format!("{target}_rel_error"), e);
        let fw: Vec<(f64, f64)> = sel.iter().filter_map(|r| r.forward.map(|f| (f, r.adjoint))).collect();
        if !fw.is_empty() {
            let (f, a): (Vec<f64>, Vec<f64>) = fw.into_iter().unzip();
            report.metrics.insert(format!("{target}_forward_vs_adjoint"), rel(&f, &a));
        }
    }
    for r in &rows {
        let e = r.fd.map(|fd| rel(&[r.adjoint], &[fd]));
        table.push_str(&format!(
            "{},{},{},{:?},{},{}\n",
            r.target,
            r.index,
            r.forward.map(|v| format!("{v:?}")).unwrap_or_default(),
            r.adjoint,
            r.fd.map(|v| format!("{v:?}")).unwrap_or_default(),
            e.map(|v| format!("{v:?}")).unwrap_or_default(),
        ));
    }
    report.metrics.insert("max_rel_error".into(), worst);
    report.notes = notes;
    out.text("gradcheck.csv", &table)?;
    out.json("report.json", &report)?;
    if !(worst < 1e-3) {
        return Err(CliError::Numerical(format!("gradient check failed: max relative error {worst:e}")));
    }
    Ok(())
}

pub fn viewpoint_cmd(cfg: &ViewpointRun, out: &mut OutDir) -> Result<(), CliError> {
    double_only(cfg.precision, "viewpoint")?;
    let volume = cfg.volume.load()?;
    let transfer = cfg.tf.build()?;
    let m = DensityMedium::new(&volume, &transfer);
    let mut vcfg = cfg.viewpoint.clone();
    vcfg.seed = cfg.seed;
    let result = optimize_viewpoint(&m, &vcfg)?;
    let mut report = result.report.clone();
    report.config = serde_json::to_value(cfg)?;
    report.final_params["trajectories"] = serde_json::to_value(&result.trajectories)?;
    let rcfg = RenderConfig::new(vcfg.step);
    let first = result
        .trajectories
        .iter()
        .max_by(|a, b| a.entropies[0].total_cmp(&b.entropies[0]))
        .expect("at least one restart");
    let before = render(&m, &vcfg.camera.at(first.poses[0][0], first.poses[0][1]), &rcfg)?;
    let after = render(&m, &vcfg.camera.at(result.best_pose[0], result.best_pose[1]), &rcfg)?;
    out.ppm("before.ppm", &before)?;
    out.ppm("after.ppm", &after)?;
    out.report(&report)
}

pub fn tf_recon_cmd(cfg: &TfReconRun, out: &mut OutDir) -> Result<(), CliError> {
    double_only(cfg.precision, "tf-recon")?;
    let volume = cfg.volume.load()?;
    let hidden = cfg.reference_tf.table()?;
    let cams = views(cfg.views, &cfg.camera)?;
    let mut tcfg = cfg.tf_recon.clone();
    tcfg.seed = cfg.seed;
    let rcfg = RenderConfig::new(tcfg.step);
    let refs = render_views(&DensityMedium::new(&volume, &Transfer::Table(hidden)), &cams, &rcfg)?;
    let init = Transfer::Table(random_tf(&tcfg));
    let before = render(&DensityMedium::new(&volume, &init), &cams[0], &rcfg)?;
    let result = reconstruct_tf(&volume, &cams, &refs, &tcfg)?;
    let after = render(&DensityMedium::new(&volume, &Transfer::Table(result.tf.clone())), &cams[0], &rcfg)?;
    let mut report = result.report;
    report.config = serde_json::to_value(cfg)?;
    image_metrics(&mut report, "view0", &after, &refs[0])?;
    out.ppm("reference.ppm", &refs[0])?;
    out.ppm("before.ppm", &before)?;
    out.ppm("after.ppm", &after)?;
    out.report(&report)
}

pub fn density_recon_cmd(cfg: &DensityReconRun, out: &mut OutDir) -> Result<(), CliError> {
    double_only(cfg.precision, "density-recon")?;
    let truth = cfg.volume.load()?;
    let cams = views(cfg.views, &cfg.camera)?;
    match cfg.mode {
        DensityMode::Absorption => {
            let mut acfg = cfg.absorption.clone();
            acfg.seed = cfg.seed;
            if truth.dims != [acfg.multires.final_res; 3] {
                return Err(CliError::Schema(format!(
                    "ground truth dims {:?} do not match the final resolution {}",
                    truth.dims, acfg.multires.final_res
                )));
            }
            let transfer = acfg.transfer();
            let rcfg = RenderConfig::new(acfg.step(&truth.bounds));
            let refs = render_views(&DensityMedium::new(&truth, &transfer), &cams, &rcfg)?;
            let init = DensityVolume::constant(truth.dims, acfg.init_density, truth.bounds);
            let before = render(&DensityMedium::new(&init, &transfer), &cams[0], &rcfg)?;
            let result = reconstruct_density_absorption(&refs, &cams, truth.bounds, &acfg, Some(&truth))?;
            let after = render(&DensityMedium::new(&result.volume, &transfer), &cams[0], &rcfg)?;
            let mut report = result.report;
            report.config = serde_json::to_value(cfg)?;
            image_metrics(&mut report, "view0", &after, &refs[0])?;
            out.ppm("reference.ppm", &refs[0])?;
            out.ppm("before.ppm", &before)?;
            out.ppm("after.ppm", &after)?;
            out.volume("reconstruction", &result.volume)?;
            out.report(&report)
        }
        DensityMode::EmissionAbsorption => {
            let tf = cfg.tf.table()?;
            let mut ecfg = cfg.emission_absorption.clone();
            ecfg.seed = cfg.seed;
            ecfg.color.seed = cfg.seed;
            ecfg.estimate.seed = cfg.seed;
            ecfg.refine.seed = cfg.seed;
            if truth.dims != [ecfg.color.multires.final_res; 3] {
                return Err(CliError::Schema(format!(
                    "ground truth dims {:?} do not match the final resolution {}",
                    truth.dims, ecfg.color.multires.final_res
                )));
            }
            let transfer = Transfer::Table(tf.clone());
            let rcfg = RenderConfig::new(ecfg.refine.step_voxels * truth.bounds.extent()[0] / truth.dims[0] as f64);
            let refs = render_views(&DensityMedium::new(&truth, &transfer), &cams, &rcfg)?;
            let result = reconstruct_density_emission_absorption(&refs, &cams, &tf, truth.bounds, &ecfg, Some(&truth))?;
            let before = render(&DensityMedium::new(&result.initial_density, &transfer), &cams[0], &rcfg)?;
            let after = render(&DensityMedium::new(&result.volume, &transfer), &cams[0], &rcfg)?;
            let mut report = result.report;
            report.config = serde_json::to_value(cfg)?;
            image_metrics(&mut report, "view0", &after, &refs[0])?;
            out.ppm("reference.ppm", &refs[0])?;
            out.ppm("before.ppm", &before)?;
            out.ppm("after.ppm", &after)?;
            out.volume("estimate", &result.initial_density)?;
            out.volume("reconstruction", &result.volume)?;
            out.report(&report)
        }
    }
}

pub fn color_recon_cmd(cfg: &ColorReconRun, out: &mut OutDir) -> Result<(), CliError> {
    double_only(cfg.precision, "color-recon")?;
    let truth = cfg.volume.load()?;
    let tf = cfg.tf.table()?;
    let cams = views(cfg.views, &cfg.camera)?;
    let mut ccfg = cfg.color.clone();
    ccfg.seed = cfg.seed;
    let transfer = Transfer::Table(tf.clone());
    let rcfg = RenderConfig::new(ccfg.step_voxels * truth.bounds.extent()[0] / ccfg.multires.final_res as f64);
    let refs = render_views(&DensityMedium::new(&truth, &transfer), &cams, &rcfg)?;
    let result = reconstruct_color_volume(&refs, &cams, truth.bounds, &ccfg)?;
    let after = render(&ColorMedium { volume: &result.volume }, &cams[0], &rcfg)?;
    let mut report = result.report;
    report.config = serde_json::to_value(cfg)?;
    image_metrics(&mut report, "view0", &after, &refs[0])?;
    // densities read back from the colors, as the second pipeline stage would
    let (estimate, info) = estimate_density_from_colors(&result.volume, &tf, &Default::default())?;
    report.metrics.insert("estimate_sweeps".into(), info.sweeps as f64);
    out.ppm("reference.ppm", &refs[0])?;
    out.ppm("after.ppm", &after)?;
    out.volume("estimate", &estimate)?;
    out.report(&report)
}

pub fn demo_cmd(cfg: &DemoRun, out: &mut OutDir) -> Result<(), CliError> {
    double_only(cfg.precision, "demo-1d")?;
    let table = gaussian_1d_demo(&cfg.demo)?;
    let mut report = TaskReport::new("demo_1d", cfg.seed, cfg);
    report.trace = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| TraceRow {
            iter: i,
            total: r.loss,
            data: r.loss,
            prior: 0.0,
        })
        .collect();
    report.notes.push("trace rows are sweep points over d1, not optimizer iterations".into());
    for (i, x) in table.sign_changes_in_unit_interval.iter().enumerate() {
        report.metrics.insert(format!("sign_change_{i}"), *x);
    }
    report.final_params = serde_json::to_value(&table)?;
    out.text("demo.csv", &table.csv())?;
    out.json("report.json", &report)?;
    out.trace("trace.csv", &report.trace)
}

pub fn phantom_cmd(cfg: &PhantomRun, out: &mut OutDir) -> Result<(), CliError> {
    double_only(cfg.precision, "phantom")?;
    let v = voldiff::phantom::make_phantom(cfg.kind, cfg.dims, cfg.seed)?;
    let preview = render(
        &DensityMedium::new(&v, &Transfer::AbsorptionRamp { scale: 8.0 }),
        &voldiff::tasks::CameraSetup::default().at(30.0, 20.0),
        &RenderConfig::new(1.0 / 64.0),
    )?;
    let mut report = TaskReport::new("phantom", cfg.seed, cfg);
    report.metrics.insert("mean_density".into(), v.data.iter().sum::<f64>() / v.data.len() as f64);
    out.volume(&cfg.name, &v)?;
    out.ppm("preview.ppm", &preview)?;
    out.json("report.json", &report)
}
