//! Differentiable direct volume rendering.
//!
//! The crate renders an emission-absorption volume with front-to-back
//! compositing and differentiates image-space losses with respect to the
//! camera pose, the ray-marching step size, the transfer function and the
//! per-voxel densities. Low-dimensional parameters use forward-mode dual
//! numbers; the transfer function and the volume use a hand-written adjoint
//! pass that reconstructs intermediate compositing states by inverting the
//! blend step, so memory does not grow with the number of samples per ray.
//!
//! On top of the renderer sit image losses and priors ([`objectives`]),
//! first-order optimizers ([`optim`]) and the end-to-end reconstruction
//! pipelines ([`tasks`]).

pub mod autodiff;
pub mod error;
pub mod field;
pub mod io;
pub mod math;
pub mod objectives;
pub mod optim;
pub mod phantom;
pub mod renderer;
pub mod tasks;

pub use error::{Error, Result};
