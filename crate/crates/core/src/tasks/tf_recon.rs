//! Transfer-function reconstruction from reference images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_refs, render_views, timed, Batcher, SpotCheck, TaskReport};
use crate::error::{Error, Result};
use crate::field::{DensityVolume, SphericalCamera, Transfer, TransferFunction};
use crate::io::TraceRow;
use crate::objectives::{l1_loss, smoothness_prior_tf};
use crate::optim::{project_params, Adam, ParamKind};
use crate::renderer::{render_adjoint, DensityMedium, DiffTarget, ImageRGBA, RenderConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TfReconConfig {
    pub resolution: usize,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Views per optimizer step.
    pub batch: usize,
    pub step: f64,
    pub seed: u64,
    pub tau_max: f64,
    /// Mean and standard deviation of the Gaussian initial guess, per channel.
    pub init_mean: [f64; 4],
    pub init_std: [f64; 4],
}

impl Default for TfReconConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            lambda: 0.4,
            lr: 0.8,
            epochs: 200,
            batch: 8,
            step: 1.0 / 64.0,
            seed: 0,
            tau_max: crate::optim::DEFAULT_TAU_MAX,
            init_mean: [0.5, 0.5, 0.5, 5.0],
            init_std: [0.25, 0.25, 0.25, 2.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfReconOutcome {
    pub report: TaskReport,
    pub tf: TransferFunction,
    pub initial_l1: f64,
    pub final_l1: f64,
}

fn validate(cfg: &TfReconConfig) -> Result<()> {
    if cfg.resolution == 0 {
        return Err(Error::InvalidParameter("transfer function needs at least one texel".into()));
    }
    if !(cfg.lr > 0.0) || !(cfg.lambda >= 0.0) || !(cfg.step > 0.0) {
        return Err(Error::InvalidParameter("lr and step must be positive, lambda non-negative".into()));
    }
    Ok(())
}

/// Seeded Gaussian-noise initial guess, projected to the legal range.
pub fn random_tf(cfg: &TfReconConfig) -> TransferFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dists: Vec<Normal<f64>> = (0..4)
        .map(|c| Normal::new(cfg.init_mean[c], cfg.init_std[c]).expect("finite std"))
        .collect();
    let mut flat: Vec<f64> = (0..cfg.resolution * 4).map(|i| dists[i % 4].sample(&mut rng)).collect();
    project_params(&mut flat, ParamKind::Rgbt { tau_max: cfg.tau_max });
    let mut tf = TransferFunction::from_fn(cfg.resolution, |_| [0.0; 4]);
    tf.set_flat(&flat);
    tf
}

pub fn reconstruct_tf(
    volume: &DensityVolume,
    views: &[SphericalCamera],
    refs: &[ImageRGBA],
    cfg: &TfReconConfig,
) -> Result<TfReconOutcome> {
    validate(cfg)?;
    reconstruct_tf_from(volume, views, refs, random_tf(cfg), cfg)
}

fn full_l1(volume: &DensityVolume, tf: &TransferFunction, views: &[SphericalCamera], refs: &[ImageRGBA], rcfg: &RenderConfig) -> Result<f64> {
    let transfer = Transfer::Table(tf.clone());
    let imgs = render_views(&DensityMedium::new(volume, &transfer), views, rcfg)?;
    Ok(l1_loss(&imgs, refs)?.0)
}

/// Runs the optimization from an explicit initial transfer function.
pub fn reconstruct_tf_from(
    volume: &DensityVolume,
    views: &[SphericalCamera],
    refs: &[ImageRGBA],
    init: TransferFunction,
    cfg: &TfReconConfig,
) -> Result<TfReconOutcome> {
    validate(cfg)?;
    check_refs(views, refs)?;
    let rcfg = RenderConfig::new(cfg.step);
    let kind = ParamKind::Rgbt { tau_max: cfg.tau_max };
    let mut report = TaskReport::new("tf_recon", cfg.seed, cfg);
    let mut tf = init;
    let mut params = tf.to_flat();
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut batcher = Batcher::new(views.len(), cfg.batch, cfg.seed ^ 0x5eed);
    let steps_per_epoch = batcher.batches_per_pass().max(1);

    let (initial_l1, secs) = timed(|| full_l1(volume, &tf, views, refs, &rcfg))?;
    report.add_time("evaluate", secs);

    let (trace, secs) = timed(|| {
        let mut trace = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut data_sum = 0.0;
            let mut prior_sum = 0.0;
            for _ in 0..steps_per_epoch {
                let batch = batcher.next_batch();
                let transfer = Transfer::Table(tf.clone());
                let medium = DensityMedium::new(volume, &transfer);
                let bviews: Vec<SphericalCamera> = batch.iter().map(|&i| views[i].clone()).collect();
                let brefs: Vec<ImageRGBA> = batch.iter().map(|&i| refs[i].clone()).collect();
                let imgs = render_views(&medium, &bviews, &rcfg)?;
                let (data, seeds) = l1_loss(&imgs, &brefs)?;
                let (prior, prior_grad) = smoothness_prior_tf(&tf);
                let mut grad: Vec<f64> = prior_grad.iter().flatten().map(|g| cfg.lambda * g).collect();
                let acfg = rcfg.with_target(DiffTarget::Tf);
                for (cam, seed) in bviews.iter().zip(&seeds) {
                    let (g, _) = render_adjoint(&medium, cam, &acfg, seed)?;
                    for (a, b) in grad.iter_mut().zip(g.tf.iter().flatten()) {
                        *a += b;
                    }
                }
                adam.step(&mut params, &grad)?;
                project_params(&mut params, kind);
                tf.set_flat(&params);
                data_sum += data;
                prior_sum += prior;
            }
            let data = data_sum / steps_per_epoch as f64;
            let prior = prior_sum / steps_per_epoch as f64;
            trace.push(TraceRow {
                iter: epoch,
                total: data + cfg.lambda * prior,
                data,
                prior,
            });
        }
        Ok(trace)
    })?;
    report.trace = trace;
    report.add_time("optimize", secs);

    let (final_l1, secs) = timed(|| full_l1(volume, &tf, views, refs, &rcfg))?;
    report.add_time("evaluate", secs);
    report.metrics.insert("initial_l1".into(), initial_l1);
    report.metrics.insert("final_l1".into(), final_l1);
    report.metrics.insert("final_prior".into(), smoothness_prior_tf(&tf).0);
    report
        .notes
        .push("trace rows average the batch losses seen during each epoch, before each step".into());

    // adjoint TF gradient of the first view against central differences
    let (check, secs) = timed(|| {
        let transfer = Transfer::Table(tf.clone());
        let medium = DensityMedium::new(volume, &transfer);
        let img = crate::renderer::render(&medium, &views[0], &rcfg)?;
        let (_, seeds) = l1_loss(std::slice::from_ref(&img), &refs[..1])?;
        let (g, _) = render_adjoint(&medium, &views[0], &rcfg.with_target(DiffTarget::Tf), &seeds[0])?;
        let flat_grad = g.tf_flat();
        let index = flat_grad
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let check = SpotCheck::run("tf", index, flat_grad[index], 1e-6, |d| {
            let mut p = tf.to_flat();
            p[index] += d;
            let mut t = tf.clone();
            t.set_flat(&p);
            let img = crate::renderer::render(&DensityMedium::new(volume, &Transfer::Table(t)), &views[0], &rcfg)?;
            Ok(linear(&img, &seeds[0]))
        })?;
        Ok(check)
    })?;
    report.gradient_checks.push(check);
    report.add_time("gradient_check", secs);
    report.final_params = serde_json::to_value(&tf)?;

    Ok(TfReconOutcome {
        report,
        tf,
        initial_l1,
        final_l1,
    })
}

pub(crate) fn linear(img: &ImageRGBA, seed: &ImageRGBA) -> f64 {
    img.data
        .iter()
        .zip(&seed.data)
        .map(|(a, s)| a[0] * s[0] + a[1] * s[1] + a[2] * s[2] + a[3] * s[3])
        .sum()
}
