//! Synthetic test volumes with known ground truth.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DensityVolume;
use crate::math::{Aabb, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    /// Centered ball of density 1 with a smooth falloff.
    Sphere,
    /// Concentric bands of alternating density.
    Shells,
    /// Seeded sum of Gaussian blobs.
    Blobs,
    /// Blobs plus a spike reaching out towards +x.
    Asymmetric,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 4] = [Self::Sphere, Self::Shells, Self::Blobs, Self::Asymmetric];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Shells => "shells",
            Self::Blobs => "blobs",
            Self::Asymmetric => "asymmetric",
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown phantom kind '{s}'")))
    }
}

/// World box shared by all phantoms: the unit cube centered at the origin.
pub fn phantom_bounds() -> Aabb {
    Aabb::centered_cube(0.5)
}

/// 1 inside `r0`, 0 beyond `r1`, smoothstep in between.
fn falloff(r: f64, r0: f64, r1: f64) -> f64 {
    let t = ((r - r0) / (r1 - r0)).clamp(0.0, 1.0);
    1.0 - t * t * (3.0 - 2.0 * t)
}

struct Blob {
    center: Vec3<f64>,
    sigma: f64,
    amplitude: f64,
}

fn random_blobs(rng: &mut ChaCha8Rng, count: usize) -> Vec<Blob> {
    (0..count)
        .map(|_| Blob {
            center: Vec3::new(
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
            ),
            sigma: rng.random_range(0.06..0.14),
            amplitude: rng.random_range(0.4..1.0),
        })
        .collect()
}

fn blob_field(blobs: &[Blob], p: Vec3<f64>) -> f64 {
    blobs
        .iter()
        .map(|b| {
            let d = p - b.center;
            b.amplitude * (-d.dot(&d) / (2.0 * b.sigma * b.sigma)).exp()
        })
        .sum()
}

pub fn make_phantom(kind: PhantomKind, dims: [usize; 3], seed: u64) -> Result<DensityVolume> {
    if dims.iter().any(|&n| n < 4) {
        return Err(Error::InvalidParameter(format!("phantom dims must be at least 4, got {dims:?}")));
    }
    let bounds = phantom_bounds();
    let volume = match kind {
        PhantomKind::Sphere => DensityVolume::from_fn(dims, bounds, |p| falloff(p.norm(), 0.25, 0.35)),
        PhantomKind::Shells => DensityVolume::from_fn(dims, bounds, |p| {
            let r = p.norm();
            let bands = 0.55 + 0.45 * (2.0 * std::f64::consts::PI * r / 0.18).cos();
            falloff(r, 0.36, 0.44) * bands
        }),
        PhantomKind::Blobs => {
            let blobs = random_blobs(&mut ChaCha8Rng::seed_from_u64(seed), 6);
            DensityVolume::from_fn(dims, bounds, |p| blob_field(&blobs, p).min(1.0))
        }
        PhantomKind::Asymmetric => {
            let blobs = random_blobs(&mut ChaCha8Rng::seed_from_u64(seed), 4);
            DensityVolume::from_fn(dims, bounds, |p| {
                // thin rod from the center towards +x, thickening at its tip
                let along = p.x.clamp(0.0, 0.42);
                let off = Vec3::new(p.x - along, p.y, p.z).norm();
                let width = 0.03 + 0.05 * along / 0.42;
                let spike = (-off * off / (2.0 * width * width)).exp();
                (blob_field(&blobs, p) + spike).min(1.0)
            })
        }
    };
    Ok(volume)
}
