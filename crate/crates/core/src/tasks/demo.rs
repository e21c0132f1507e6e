//! One-dimensional illustration of why density reconstruction through a
//! non-monotonic transfer function is not convex.
//!
//! A segment with densities interpolated linearly from `d0` to `d1` is
//! rendered through a Gaussian transfer function `g(d) = exp(-d^2 / (2 var))`
//! used as grayscale emission with absorption `tau = scale * g`. Moving `d1`
//! away from the truth and watching the sign of `dL/dd1` shows where gradient
//! descent would walk the wrong way.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::field::opacity_s;
use crate::renderer::blend::blend_s;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub d0: f64,
    pub truth: f64,
    pub sweep_min: f64,
    pub sweep_max: f64,
    pub sweep_points: usize,
    pub samples: usize,
    pub step: f64,
    pub variance: f64,
    pub absorption_scale: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            d0: -1.0,
            truth: -1.0,
            sweep_min: -2.0,
            sweep_max: 2.0,
            sweep_points: 401,
            samples: 64,
            step: 1.0 / 64.0,
            variance: 0.5,
            absorption_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRow {
    pub d1: f64,
    pub loss: f64,
    pub gradient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoTable {
    pub rows: Vec<DemoRow>,
    /// Linearly interpolated zero crossings of the gradient with `0 < d1 < 1`.
    pub sign_changes_in_unit_interval: Vec<f64>,
}

impl DemoTable {
    pub fn csv(&self) -> String {
        let mut s = String::from("d1,loss,gradient\n");
        for r in &self.rows {
            s.push_str(&format!("{:?},{:?},{:?}\n", r.d1, r.loss, r.gradient));
        }
        s
    }
}

/// Composited grayscale value of the segment.
pub(crate) fn render_segment<S: Scalar>(d0: S, d1: S, cfg: &DemoConfig) -> S {
    let mut acc = [S::cst(0.0); 4];
    let dt = S::cst(cfg.step);
    let last = (cfg.samples - 1).max(1) as f64;
    for i in 0..cfg.samples {
        let w = S::cst(i as f64 / last);
        let d = d0 + (d1 - d0) * w;
        let g = (-(d * d) * S::cst(0.5 / cfg.variance)).exp();
        let alpha = opacity_s(g * S::cst(cfg.absorption_scale), dt);
        let c = alpha * g;
        blend_s(&mut acc, [c, c, c], alpha);
    }
    acc[0]
}

pub fn gaussian_1d_demo(cfg: &DemoConfig) -> Result<DemoTable> {
    if cfg.samples < 2 || cfg.sweep_points < 2 || !(cfg.sweep_max > cfg.sweep_min) {
        return Err(Error::InvalidParameter("the demo needs two samples and a non-empty sweep".into()));
    }
    if !(cfg.variance > 0.0) || !(cfg.step > 0.0) || !(cfg.absorption_scale >= 0.0) {
        return Err(Error::InvalidParameter("variance and step must be positive".into()));
    }
    let target = render_segment(cfg.d0, cfg.truth, cfg);
    let span = cfg.sweep_max - cfg.sweep_min;
    let rows: Vec<DemoRow> = (0..cfg.sweep_points)
        .map(|k| {
            let d1 = cfg.sweep_min + span * k as f64 / (cfg.sweep_points - 1) as f64;
            let c = render_segment(Dual::<f64, 1>::constant(cfg.d0), Dual::variable(d1, 0), cfg);
            let r = c.value - target;
            DemoRow {
                d1,
                loss: r * r,
                gradient: 2.0 * r * c.deriv[0],
            }
        })
        .collect();
    let sign_changes_in_unit_interval = rows
        .windows(2)
        .filter(|w| w[0].gradient * w[1].gradient < 0.0)
        .map(|w| w[0].d1 + (w[1].d1 - w[0].d1) * w[0].gradient / (w[0].gradient - w[1].gradient))
        .filter(|x| *x > 0.0 && *x < 1.0)
        .collect();
    Ok(DemoTable {
        rows,
        sign_changes_in_unit_interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = DemoConfig::default();
        let target = render_segment(cfg.d0, cfg.truth, &cfg);
        let loss = |d1: f64| (render_segment(cfg.d0, d1, &cfg) - target).powi(2);
        let table = gaussian_1d_demo(&cfg).unwrap();
        for row in table.rows.iter().step_by(37) {
            let h = 1e-6;
            let fd = (loss(row.d1 + h) - loss(row.d1 - h)) / (2.0 * h);
            assert!((fd - row.gradient).abs() <= 1e-6 * (1.0 + fd.abs()), "{} {fd} {}", row.d1, row.gradient);
            assert!((loss(row.d1) - row.loss).abs() < 1e-15);
        }
    }

    #[test]
    fn truth_is_a_stationary_zero() {
        let table = gaussian_1d_demo(&DemoConfig::default()).unwrap();
        let row = table.rows.iter().find(|r| (r.d1 + 1.0).abs() < 1e-12).unwrap();
        assert_eq!(row.loss, 0.0);
        assert_eq!(row.gradient, 0.0);
    }
}
