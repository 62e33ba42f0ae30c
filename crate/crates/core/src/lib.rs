//! Differentiable Gaussian scene graph for driving-scene view extrapolation.
//!
//! The crate is organised by subsystem:
//!
//! - [`scene`]: Gaussians, cameras, the four-node scene graph and a procedural
//!   synthetic driving-scene generator with an analytic ray-cast renderer.
//! - [`shmath`]: real spherical harmonics, the view-direction density used for
//!   uncertainty, and a kernel density oracle.
//! - [`rsg`]: the road height-field SDF, its volume renderer and loss, and the
//!   alignment of flat road Gaussians to it.
//! - [`ffg`]: the far-field joint position/scale reparameterization.
//! - [`splat`]: EWA projection, tile rasterizer with an uncertainty channel,
//!   and the manual backward pass.
//! - [`train`]: losses, Adam, pseudo color encoding, pseudo ground-truth
//!   providers and the extrapolation schedule.
//! - [`io`]: checkpoints, PNG and float dumps, camera files.

// Index loops mirror the math in the kernels, and `!(a < b)` deliberately
// treats NaN as failing the check.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod ffg;
pub mod image;
pub mod io;
pub mod math;
pub mod metrics;
pub mod rsg;
pub mod scene;
pub mod shmath;
pub mod splat;
pub mod train;

pub use error::{Error, Result};
