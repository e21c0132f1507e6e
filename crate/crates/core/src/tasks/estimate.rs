//! Turning a pre-shaded color volume back into densities by sampling the
//! transfer function and regularizing against the neighborhood.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ColorVolume, DensityVolume, TransferFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    /// Random candidate densities drawn per voxel and sweep.
    pub samples: usize,
    /// Weight of the absorption term; `None` uses `1 / max(tau)`.
    pub alpha_w: Option<f64>,
    pub beta_w: f64,
    pub max_sweeps: usize,
    /// Sweeps stop once the mean absolute change drops below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            samples: 256,
            alpha_w: None,
            beta_w: 1.0,
            max_sweeps: 50,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateInfo {
    /// Sweeps run, counting the initial neighbor-free pass.
    pub sweeps: usize,
    pub final_change: f64,
    pub alpha_w: f64,
    /// Set when the color volume carries no absorption at all.
    pub degenerate: bool,
}

struct Scorer<'a> {
    colors: &'a ColorVolume,
    tf: &'a TransferFunction,
    alpha_w: f64,
    beta_w: f64,
}

impl Scorer<'_> {
    fn cost(&self, voxel: usize, d: f64, neighbors: &[f64]) -> f64 {
        let target = self.colors.data[voxel];
        let s = self.tf.tf_sample(d);
        let color: f64 = (0..3).map(|c| (target[c] - s[c]).powi(2)).sum();
        let absorption = self.alpha_w * (1.0 + (target[3] - s[3]).abs()).ln();
        let smooth: f64 = neighbors.iter().map(|n| (d - n).powi(2)).sum();
        color + absorption + self.beta_w * smooth
    }
}

fn neighbors(dims: [usize; 3], voxel: usize, field: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let i = voxel % dims[0];
    let j = (voxel / dims[0]) % dims[1];
    let k = voxel / (dims[0] * dims[1]);
    let strides = [1, dims[0], dims[0] * dims[1]];
    for (axis, pos) in [i, j, k].into_iter().enumerate() {
        if pos > 0 {
            out.push(field[voxel - strides[axis]]);
        }
        if pos + 1 < dims[axis] {
            out.push(field[voxel + strides[axis]]);
        }
    }
}

fn parity(dims: [usize; 3], voxel: usize) -> usize {
    let i = voxel % dims[0];
    let j = (voxel / dims[0]) % dims[1];
    let k = voxel / (dims[0] * dims[1]);
    (i + j + k) % 2
}

/// Per-voxel candidate stream: the same draws for a given `(seed, sweep, voxel)`.
fn candidate_rng(seed: u64, sweep: usize, voxel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (sweep as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(voxel as u64);
    rng
}

/// Picks the lowest-cost density among the current value, the interval
/// ends and `samples` uniform draws. Ties keep the earlier candidate.
fn best_density(scorer: &Scorer, voxel: usize, current: Option<f64>, nbrs: &[f64], samples: usize, mut rng: ChaCha8Rng) -> f64 {
    let mut best = f64::NAN;
    let mut best_cost = f64::INFINITY;
    let mut consider = |d: f64| {
        let c = scorer.cost(voxel, d, nbrs);
        if c < best_cost {
            best_cost = c;
            best = d;
        }
    };
    if let Some(d) = current {
        consider(d);
    }
    consider(0.0);
    consider(1.0);
    for _ in 0..samples {
        consider(rng.random_range(0.0..=1.0));
    }
    best
}

pub fn estimate_density_from_colors(
    colors: &ColorVolume,
    tf: &TransferFunction,
    cfg: &EstimateConfig,
) -> Result<(DensityVolume, EstimateInfo)> {
    if colors.data.len() != colors.voxel_count() {
        return Err(Error::InvalidInput("color volume data does not match its dims".into()));
    }
    if let Some(bad) = colors.data.iter().flatten().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidInput(format!("color volume entry {bad} is negative or not finite")));
    }
    if cfg.beta_w < 0.0 || cfg.alpha_w.is_some_and(|a| !(a >= 0.0)) {
        return Err(Error::InvalidParameter("estimation weights must be non-negative".into()));
    }
    let max_tau = colors.data.iter().map(|v| v[3]).fold(0.0, f64::max);
    let degenerate = max_tau == 0.0;
    let alpha_w = cfg.alpha_w.unwrap_or(if degenerate { 1.0 } else { 1.0 / max_tau });
    let dims = colors.dims;
    let n = colors.voxel_count();

    // first pass: data terms only
    let free = Scorer {
        colors,
        tf,
        alpha_w,
        beta_w: 0.0,
    };
    let mut field: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|v| best_density(&free, v, None, &[], cfg.samples, candidate_rng(cfg.seed, 0, v)))
        .collect();

    let scorer = Scorer {
        colors,
        tf,
        alpha_w,
        beta_w: cfg.beta_w,
    };
    let mut sweeps = 1;
    let mut change = f64::INFINITY;
    while sweeps < cfg.max_sweeps {
        let mut total = 0.0;
        // red-black order keeps each half-sweep independent of evaluation order
        for color in 0..2 {
            let updates: Vec<(usize, f64)> = (0..n)
                .into_par_iter()
                .filter(|&v| parity(dims, v) == color)
                .map_init(Vec::new, |nbrs, v| {
                    neighbors(dims, v, &field, nbrs);
                    let d = best_density(&scorer, v, Some(field[v]), nbrs, cfg.samples, candidate_rng(cfg.seed, sweeps, v));
                    (v, d)
                })
                .collect();
            for (v, d) in updates {
                total += (d - field[v]).abs();
                field[v] = d;
            }
        }
        sweeps += 1;
        change = total / n as f64;
        if change < cfg.tolerance {
            break;
        }
    }

    let volume = DensityVolume::new(dims, field, colors.bounds)?;
    Ok((
        volume,
        EstimateInfo {
            sweeps,
            final_change: if change.is_finite() { change } else { 0.0 },
            alpha_w,
            degenerate,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Aabb;

    fn cube() -> Aabb {
        Aabb::centered_cube(0.5)
    }

    #[test]
    fn invertible_ramp_recovers_densities() {
        let tf = TransferFunction::from_fn(32, |d| [d, 0.5 * d, 1.0 - d, 4.0 * d]);
        let dims = [4, 3, 2];
        let truth: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).fract()).collect();
        let mut colors = ColorVolume::constant(dims, [0.0; 4], cube());
        for (c, d) in colors.data.iter_mut().zip(&truth) {
            *c = tf.tf_sample(*d);
        }
        let cfg = EstimateConfig {
            beta_w: 0.0,
            ..Default::default()
        };
        let (v, info) = estimate_density_from_colors(&colors, &tf, &cfg).unwrap();
        assert!(!info.degenerate);
        for (a, b) in v.data.iter().zip(&truth) {
            // 256 uniform draws leave gaps of order 1/256; a few of those is plenty
            assert!((a - b).abs() < 8.0 / 256.0, "{a} vs {b}");
        }
    }

    #[test]
    fn neighbors_break_a_two_root_tie() {
        // bump centered at 0.5: densities 0.3 and 0.7 shade identically
        let tf = TransferFunction::from_fn(256, |d| {
            let g = (-(d - 0.5).powi(2) / 0.02).exp();
            [g, g, g, 2.0 * g]
        });
        let target = tf.tf_sample(0.3);
        let colors = ColorVolume::constant([3, 3, 3], target, cube());
        let (v, _) = estimate_density_from_colors(&colors, &tf, &EstimateConfig::default()).unwrap();
        // neighbors agree on a root; the sampled first pass may pick either,
        // so pin the neighborhood to the lower root and re-score the center
        let center = 13;
        let mut field = v.data.clone();
        field.iter_mut().for_each(|d| *d = 0.3);
        let scorer = Scorer {
            colors: &colors,
            tf: &tf,
            alpha_w: 0.5,
            beta_w: 1.0,
        };
        let mut nbrs = Vec::new();
        neighbors([3, 3, 3], center, &field, &mut nbrs);
        assert_eq!(nbrs.len(), 6);
        let d = best_density(&scorer, center, None, &nbrs, 256, candidate_rng(1, 1, center));
        assert!((d - 0.3).abs() < 0.02, "{d}");
        assert!(scorer.cost(center, 0.3, &nbrs) < scorer.cost(center, 0.7, &nbrs));
    }

    #[test]
    fn zero_colors_give_zero_and_flag_degenerate() {
        let tf = TransferFunction::from_fn(16, |d| [d, d, d, d]);
        let colors = ColorVolume::constant([2, 2, 2], [0.0; 4], cube());
        let (v, info) = estimate_density_from_colors(&colors, &tf, &EstimateConfig::default()).unwrap();
        assert!(info.degenerate);
        assert_eq!(info.alpha_w, 1.0);
        let scorer = Scorer {
            colors: &colors,
            tf: &tf,
            alpha_w: 1.0,
            beta_w: 1.0,
        };
        let mut nbrs = Vec::new();
        for i in 0..8 {
            neighbors([2, 2, 2], i, &v.data, &mut nbrs);
            assert!(scorer.cost(i, v.data[i], &nbrs) <= scorer.cost(i, 0.0, &nbrs) + 1e-9);
            assert_eq!(v.data[i], 0.0);
        }
    }

    #[test]
    fn deterministic_and_terminates() {
        let tf = TransferFunction::from_fn(8, |d| [d * d, d, 0.2, 3.0 * d]);
        let mut colors = ColorVolume::constant([5, 4, 3], [0.0; 4], cube());
        for (i, c) in colors.data.iter_mut().enumerate() {
            *c = tf.tf_sample((i as f64 * 0.61).fract());
        }
        let cfg = EstimateConfig {
            max_sweeps: 7,
            ..Default::default()
        };
        let a = estimate_density_from_colors(&colors, &tf, &cfg).unwrap();
        let b = estimate_density_from_colors(&colors, &tf, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.1.sweeps <= 7);
    }
}
