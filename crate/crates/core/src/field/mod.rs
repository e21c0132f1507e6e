//! Differentiable scene primitives: the density grid and its trilinear
//! sampler, the 1D transfer-function texture, the spherical camera, and the
//! Beer-Lambert opacity map. Each comes with a pointwise gradient routine
//! used by the adjoint renderer.

mod camera;
mod transfer;
mod volume;

pub use camera::{CameraJacobian, Ray, SphericalCamera, POLE_EPSILON_DEG};
pub use transfer::{
    opacity_from_density, opacity_s, Opacity, TfGradients, Transfer, TransferFunction,
    ALPHA_EPSILON,
};
pub use volume::{CellLocation, ColorVolume, DensityVolume, TrilinearGradients};
