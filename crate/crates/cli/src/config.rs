//! Run configurations. Every file is strict JSON: unknown keys are errors,
//! missing keys take their defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use voldiff::field::{DensityVolume, Transfer, TransferFunction};
use voldiff::io::load_volume;
use voldiff::phantom::{make_phantom, PhantomKind};
use voldiff::tasks::{
    AbsorptionConfig, CameraSetup, ColorReconConfig, DemoConfig, EmissionAbsorptionConfig, TfReconConfig,
    ViewpointConfig,
};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Double,
    Single,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolumeSpec {
    Phantom {
        kind: PhantomKind,
        #[serde(default = "default_res")]
        resolution: usize,
        #[serde(default)]
        seed: u64,
    },
    /// A `.raw` file with its `.json` sidecar next to it.
    File { path: PathBuf },
}

fn default_res() -> usize {
    32
}

impl Default for VolumeSpec {
    fn default() -> Self {
        Self::Phantom {
            kind: PhantomKind::Shells,
            resolution: 32,
            seed: 0,
        }
    }
}

impl VolumeSpec {
    pub fn load(&self) -> Result<DensityVolume, CliError> {
        Ok(match self {
            Self::Phantom { kind, resolution, seed } => make_phantom(*kind, [*resolution; 3], *seed)?,
            Self::File { path } => load_volume(path)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TfSpec {
    /// Color ramp from blue to orange with absorption `tau_max * d^2`.
    Ramp { resolution: usize, tau_max: f64 },
    /// Single Gaussian bump of emission and absorption.
    Gaussian {
        resolution: usize,
        center: f64,
        width: f64,
        color: [f64; 3],
        tau_max: f64,
    },
    /// Explicit `(r, g, b, tau)` texels.
    Texels { texels: Vec<[f64; 4]> },
    /// Absorption only, `tau = scale * d`.
    AbsorptionRamp { scale: f64 },
}

impl Default for TfSpec {
    fn default() -> Self {
        Self::Ramp {
            resolution: 16,
            tau_max: 8.0,
        }
    }
}

impl TfSpec {
    pub fn build(&self) -> Result<Transfer, CliError> {
        Ok(match self {
            Self::Ramp { resolution, tau_max } => {
                check_res(*resolution)?;
                let t = *tau_max;
                Transfer::Table(TransferFunction::from_fn(*resolution, |d| {
                    [d, 0.6 * d * d, 1.0 - d, t * d * d]
                }))
            }
            Self::Gaussian {
                resolution,
                center,
                width,
                color,
                tau_max,
            } => {
                check_res(*resolution)?;
                if !(*width > 0.0) {
                    return Err(CliError::Schema("gaussian TF width must be positive".into()));
                }
                let (c, w, rgb, t) = (*center, *width, *color, *tau_max);
                Transfer::Table(TransferFunction::from_fn(*resolution, |d| {
                    let g = (-(d - c).powi(2) / (2.0 * w * w)).exp();
                    [rgb[0] * g, rgb[1] * g, rgb[2] * g, t * g]
                }))
            }
            Self::Texels { texels } => Transfer::Table(TransferFunction::new(texels.clone())?),
            Self::AbsorptionRamp { scale } => Transfer::AbsorptionRamp { scale: *scale },
        })
    }

    pub fn table(&self) -> Result<TransferFunction, CliError> {
        match self.build()? {
            Transfer::Table(t) => Ok(t),
            Transfer::AbsorptionRamp { .. } => Err(CliError::Schema("this task needs a tabulated transfer function".into())),
        }
    }
}

fn check_res(r: usize) -> Result<(), CliError> {
    if r == 0 {
        return Err(CliError::Schema("TF resolution must be at least 1".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderRun {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub volume: VolumeSpec,
    pub tf: TfSpec,
    pub camera: CameraSetup,
    pub longitude: f64,
    pub latitude: f64,
    pub step: f64,
}

impl Default for RenderRun {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            precision: Precision::Double,
            volume: VolumeSpec::default(),
            tf: TfSpec::default(),
            camera: CameraSetup::default(),
            longitude: 30.0,
            latitude: 20.0,
            step: 1.0 / 64.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckRun {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub volume: VolumeSpec,
    pub tf: TfSpec,
    pub camera: CameraSetup,
    pub longitude: f64,
    pub latitude: f64,
    pub step: f64,
    /// Voxels compared against finite differences, picked at random.
    pub voxel_samples: usize,
}

impl Default for GradcheckRun {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            precision: Precision::Double,
            volume: VolumeSpec::Phantom {
                kind: PhantomKind::Blobs,
                resolution: 8,
                seed: 0,
            },
            tf: TfSpec::Ramp {
                resolution: 8,
                tau_max: 8.0,
            },
            camera: CameraSetup {
                width: 16,
                height: 16,
                ..Default::default()
            },
            longitude: 30.0,
            latitude: 20.0,
            step: 1.0 / 16.0,
            voxel_samples: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewpointRun {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub volume: VolumeSpec,
    pub tf: TfSpec,
    pub viewpoint: ViewpointConfig,
}

impl Default for ViewpointRun {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            precision: Precision::Double,
            volume: VolumeSpec::Phantom {
                kind: PhantomKind::Asymmetric,
                resolution: 32,
                seed: 0,
            },
            tf: TfSpec::default(),
            viewpoint: ViewpointConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TfReconRun {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub volume: VolumeSpec,
    /// Hidden transfer function the reference images are rendered with.
    pub reference_tf: TfSpec,
    pub views: usize,
    pub camera: CameraSetup,
    pub tf_recon: TfReconConfig,
}

impl Default for TfReconRun {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            precision: Precision::Double,
            volume: VolumeSpec::default(),
            reference_tf: TfSpec::default(),
            views: 8,
            camera: CameraSetup::default(),
            tf_recon: TfReconConfig {
                resolution: 16,
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    #[default]
    Absorption,
    EmissionAbsorption,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityReconRun {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    /// Ground truth the references are rendered from.
    pub volume: VolumeSpec,
    pub mode: DensityMode,
    /// Transfer function of the emission-absorption mode.
    pub tf: TfSpec,
    pub views: usize,
    pub camera: CameraSetup,
    pub absorption: AbsorptionConfig,
    pub emission_absorption: EmissionAbsorptionConfig,
}

impl Default for DensityReconRun {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            precision: Precision::Double,
            volume: VolumeSpec::Phantom {
                kind: PhantomKind::Sphere,
                resolution: 16,
                seed: 0,
            },
            mode: DensityMode::Absorption,
            tf: TfSpec::Gaussian {
                resolution: 32,
                center: 0.5,
                width: 0.15,
                color: [1.0, 0.8, 0.3],
                tau_max: 12.0,
            },
            views: 16,
            camera: CameraSetup::default(),
            absorption: AbsorptionConfig::default(),
            emission_absorption: EmissionAbsorptionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColorReconRun {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub volume: VolumeSpec,
    pub tf: TfSpec,
    pub views: usize,
    pub camera: CameraSetup,
    pub color: ColorReconConfig,
}

impl Default for ColorReconRun {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            precision: Precision::Double,
            volume: VolumeSpec::Phantom {
                kind: PhantomKind::Shells,
                resolution: 16,
                seed: 0,
            },
            tf: TfSpec::default(),
            views: 16,
            camera: CameraSetup::default(),
            color: ColorReconConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoRun {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub demo: DemoConfig,
}

impl Default for DemoRun {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            precision: Precision::Double,
            demo: DemoConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomRun {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    /// File stem of the written volume.
    pub name: String,
}

impl Default for PhantomRun {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            precision: Precision::Double,
            kind: PhantomKind::Shells,
            dims: [32; 3],
            name: "phantom".into(),
        }
    }
}
