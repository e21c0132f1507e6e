use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

/// Upper opacity bound `1 - ALPHA_EPSILON` for a single sample; keeps the
/// compositing step invertible.
pub const ALPHA_EPSILON: f64 = 1e-6;

/// 1D texture of `(r, g, b, tau)` texels with linear interpolation.
///
/// Texel `r` of `R` is centered at density `(r + 0.5) / R`; lookups below the
/// first or above the last center clamp to the edge texel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub texels: Vec<[f64; 4]>,
}

/// Output of [`TransferFunction::tf_gradients`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TfGradients {
    pub value: [f64; 4],
    /// d(out)/d(density), piecewise constant.
    pub d_density: [f64; 4],
    pub texels: [usize; 2],
    pub weights: [f64; 2],
}

impl TransferFunction {
    pub fn new(texels: Vec<[f64; 4]>) -> Result<Self> {
        if texels.is_empty() {
            return Err(Error::InvalidParameter(
                "transfer function needs at least one texel".into(),
            ));
        }
        if texels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "transfer function has non-finite entries".into(),
            ));
        }
        Ok(Self { texels })
    }

    /// Samples `f` at the `r` texel centers.
    pub fn from_fn(r: usize, f: impl Fn(f64) -> [f64; 4]) -> Self {
        Self {
            texels: (0..r).map(|i| f((i as f64 + 0.5) / r as f64)).collect(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.texels.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.texels.iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        for (t, c) in self.texels.iter_mut().zip(flat.chunks_exact(4)) {
            t.copy_from_slice(c);
        }
    }

    /// Texel pair and interpolation fraction for a (pre-clamped) density.
    /// `None` for the fraction means a clamp-to-edge region.
    #[inline]
    fn locate(&self, d: f64) -> (usize, usize, Option<f64>) {
        let r = self.texels.len();
        let u = d * r as f64 - 0.5;
        if r == 1 || u <= 0.0 {
            (0, 1.min(r - 1), None)
        } else if u >= (r - 1) as f64 {
            (r - 1, r - 1, None)
        } else {
            let base = (u.floor() as usize).min(r - 2);
            (base, base + 1, Some(u - base as f64))
        }
    }

    pub fn sample<S: Scalar>(&self, d: S) -> [S; 4] {
        let d = d.clamp_s(0.0, 1.0);
        let (lo, hi, frac) = self.locate(d.value());
        match frac {
            None => self.texels[lo].map(S::cst),
            Some(_) => {
                let r = self.texels.len() as f64;
                let f = d * S::cst(r) - S::cst(0.5) - S::cst(lo as f64);
                let a = &self.texels[lo];
                let b = &self.texels[hi];
                std::array::from_fn(|c| S::cst(a[c]) + f * S::cst(b[c] - a[c]))
            }
        }
    }

    pub fn tf_sample(&self, d: f64) -> [f64; 4] {
        self.sample(d)
    }

    pub fn tf_gradients(&self, d: f64) -> TfGradients {
        let value = self.sample(d);
        let dc = d.clamp_s(0.0, 1.0);
        let clamped = dc != d;
        let (lo, hi, frac) = self.locate(dc);
        match frac {
            Some(f) if !clamped => {
                let r = self.texels.len() as f64;
                let a = &self.texels[lo];
                let b = &self.texels[hi];
                TfGradients {
                    value,
                    d_density: std::array::from_fn(|c| r * (b[c] - a[c])),
                    texels: [lo, hi],
                    weights: [1.0 - f, f],
                }
            }
            Some(f) => TfGradients {
                value,
                d_density: [0.0; 4],
                texels: [lo, hi],
                weights: [1.0 - f, f],
            },
            None => TfGradients {
                value,
                d_density: [0.0; 4],
                texels: [lo, hi],
                weights: [1.0, 0.0],
            },
        }
    }
}

/// Density-to-optics mapping used by the density medium.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Transfer {
    /// Texture lookup with emission and absorption.
    Table(TransferFunction),
    /// Absorption only: `tau = scale * d`, no emission.
    AbsorptionRamp { scale: f64 },
}

impl Transfer {
    #[inline]
    pub fn sample<S: Scalar>(&self, d: S) -> [S; 4] {
        match self {
            Transfer::Table(tf) => tf.sample(d),
            Transfer::AbsorptionRamp { scale } => {
                let z = S::cst(0.0);
                [z, z, z, d.clamp_s(0.0, 1.0) * S::cst(*scale)]
            }
        }
    }

    pub fn gradients(&self, d: f64) -> TfGradients {
        match self {
            Transfer::Table(tf) => tf.tf_gradients(d),
            Transfer::AbsorptionRamp { scale } => {
                let inside = (0.0..=1.0).contains(&d);
                TfGradients {
                    value: self.sample(d),
                    d_density: [0.0, 0.0, 0.0, if inside { *scale } else { 0.0 }],
                    texels: [0, 0],
                    weights: [0.0, 0.0],
                }
            }
        }
    }

    pub fn table(&self) -> Option<&TransferFunction> {
        match self {
            Transfer::Table(tf) => Some(tf),
            Transfer::AbsorptionRamp { .. } => None,
        }
    }

    pub fn texel_count(&self) -> usize {
        self.table().map_or(0, |t| t.resolution())
    }
}

/// Beer-Lambert segment opacity and its partials.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Opacity {
    pub alpha: f64,
    pub d_tau: f64,
    pub d_step: f64,
}

/// `alpha = 1 - exp(-dt * tau)`, capped at `1 - ALPHA_EPSILON`.
pub fn opacity_from_density(tau: f64, dt: f64) -> Opacity {
    let t = (-dt * tau).exp();
    let alpha = 1.0 - t;
    if alpha > 1.0 - ALPHA_EPSILON {
        Opacity {
            alpha: 1.0 - ALPHA_EPSILON,
            d_tau: 0.0,
            d_step: 0.0,
        }
    } else {
        Opacity {
            alpha,
            d_tau: dt * t,
            d_step: tau * t,
        }
    }
}

#[inline]
pub fn opacity_s<S: Scalar>(tau: S, dt: S) -> S {
    (S::cst(1.0) - (-(dt * tau)).exp()).min_s(S::cst(1.0 - ALPHA_EPSILON))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two() -> TransferFunction {
        TransferFunction::new(vec![[0.2, 0.4, 0.6, 1.0], [1.0, 0.0, 0.5, 3.0]]).unwrap()
    }

    #[test]
    fn clamp_to_edge() {
        let tf = two();
        assert_eq!(tf.tf_sample(0.0), tf.texels[0]);
        assert_eq!(tf.tf_sample(1.0), tf.texels[1]);
        assert_eq!(tf.tf_gradients(0.1).d_density, [0.0; 4]);
        assert_eq!(tf.tf_sample(-3.0), tf.texels[0]);
    }

    #[test]
    fn midpoint_of_two_texels() {
        let tf = two();
        let v = tf.tf_sample(0.5);
        for c in 0..4 {
            assert!((v[c] - 0.5 * (tf.texels[0][c] + tf.texels[1][c])).abs() < 1e-12);
        }
        let g = tf.tf_gradients(0.5);
        assert_eq!(g.texels, [0, 1]);
        assert!((g.weights[0] - 0.5).abs() < 1e-12 && (g.weights[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_texel() {
        let tf = TransferFunction::new(vec![[0.1, 0.2, 0.3, 0.4]]).unwrap();
        assert_eq!(tf.tf_sample(0.7), [0.1, 0.2, 0.3, 0.4]);
        let g = tf.tf_gradients(0.7);
        assert_eq!(g.texels, [0, 0]);
        assert_eq!(g.weights, [1.0, 0.0]);
    }

    #[test]
    fn opacity_examples() {
        assert_eq!(opacity_from_density(0.0, 0.3).alpha, 0.0);
        assert!((opacity_from_density(2f64.ln(), 1.0).alpha - 0.5).abs() < 1e-15);
        assert_eq!(opacity_from_density(1e9, 1.0).alpha, 1.0 - ALPHA_EPSILON);
        assert_eq!(opacity_s(1e9, 1.0), 1.0 - ALPHA_EPSILON);
    }

    #[test]
    fn ramp_transfer() {
        let t = Transfer::AbsorptionRamp { scale: 4.0 };
        assert_eq!(t.sample(0.25), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.gradients(0.25).d_density, [0.0, 0.0, 0.0, 4.0]);
        assert_eq!(t.gradients(1.5).d_density, [0.0; 4]);
    }

    proptest! {
        #[test]
        fn sample_is_convex_combination(seed in 0u64..500, d in -0.2f64..1.2) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let r = rng.random_range(1..12);
            let tf = TransferFunction::new((0..r).map(|_| std::array::from_fn(|_| rng.random_range(0.0..5.0))).collect()).unwrap();
            let v = tf.tf_sample(d);
            for c in 0..4 {
                let lo = tf.texels.iter().map(|t| t[c]).fold(f64::INFINITY, f64::min);
                let hi = tf.texels.iter().map(|t| t[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v[c] >= lo - 1e-12 && v[c] <= hi + 1e-12);
            }
            let g = tf.tf_gradients(d);
            prop_assert!((g.weights[0] + g.weights[1] - 1.0).abs() < 1e-12);
            prop_assert!(g.weights.iter().all(|w| *w >= 0.0));
        }

        #[test]
        fn gradients_match_finite_differences(seed in 0u64..500, d in 0.0f64..1.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let r = rng.random_range(2..10);
            let tf = TransferFunction::new((0..r).map(|_| std::array::from_fn(|_| rng.random_range(0.0..5.0))).collect()).unwrap();
            // away from texel centers (kinks) and the [0,1] clamp
            let u = d * r as f64 - 0.5;
            prop_assume!((u - u.round()).abs() > 1e-4 && d > 1e-4 && d < 1.0 - 1e-4);
            let h = 1e-7;
            let g = tf.tf_gradients(d);
            let (a, b) = (tf.tf_sample(d + h), tf.tf_sample(d - h));
            for c in 0..4 {
                let fd = (a[c] - b[c]) / (2.0 * h);
                prop_assert!((fd - g.d_density[c]).abs() <= 1e-4 * fd.abs().max(1.0));
            }
            for (slot, &texel) in g.texels.iter().enumerate() {
                let mut p = tf.clone();
                p.texels[texel][0] += h;
                let mut m = tf.clone();
                m.texels[texel][0] -= h;
                let fd = (p.tf_sample(d)[0] - m.tf_sample(d)[0]) / (2.0 * h);
                let expect: f64 = (0..2).filter(|&o| g.texels[o] == g.texels[slot]).map(|o| g.weights[o]).sum();
                prop_assert!((fd - expect).abs() <= 1e-6);
            }
        }

        #[test]
        fn opacity_monotone_and_bounded(t1 in 0.0f64..50.0, t2 in 0.0f64..50.0, s1 in 1e-3f64..2.0, s2 in 1e-3f64..2.0) {
            let (tl, th) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let (sl, sh) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let a = opacity_from_density(tl, sl).alpha;
            prop_assert!((0.0..=1.0 - ALPHA_EPSILON).contains(&a));
            prop_assert!(opacity_from_density(th, sl).alpha >= a);
            prop_assert!(opacity_from_density(tl, sh).alpha >= a);
        }

        #[test]
        fn opacity_partials(tau in 0.0f64..5.0, dt in 0.01f64..1.0) {
            let o = opacity_from_density(tau, dt);
            let h = 1e-6;
            let ft = (opacity_from_density(tau + h, dt).alpha - opacity_from_density((tau - h).max(0.0), dt).alpha) / (h + h.min(tau));
            let fs = (opacity_from_density(tau, dt + h).alpha - opacity_from_density(tau, dt - h).alpha) / (2.0 * h);
            prop_assert!((o.d_tau - ft).abs() <= 1e-5 * ft.abs().max(1.0));
            prop_assert!((o.d_step - fs).abs() <= 1e-5 * fs.abs().max(1.0));
        }
    }
}
