//! Differentiable CPU splatting: EWA projection, tile-binned front-to-back
//! compositing of color, view certainty, depth and per-node alpha, and the
//! manual backward pass.
//!
//! Per pixel each Gaussian contributes `alpha = min(alpha_max, o * exp(-q/2))`
//! where `q` is the Mahalanobis distance of the pixel center; Gaussians with
//! `q > cutoff` or `alpha < min_alpha` are skipped. Compositing stops once the
//! transmittance drops below `min_transmittance` (after adding the Gaussian
//! that crossed it). The sky fills the residual transmittance. The
//! uncertainty map is `U = 1 - sum_i w_i p_i - T p_sky`.

mod project;
mod raster;
pub mod reference;
mod render;

use serde::{Deserialize, Serialize};

use crate::image::{Image, Plane};
use crate::scene::NodeTag;

pub use project::{project_gaussian, Projection};
pub use raster::{
    rasterize, rasterize_backward, FrameGrads, Grad2D, ProjectedGaussian, RasterCache, SkyGrads, SkyLayer,
};
pub use render::{
    certainty_modulation, composite_nodes, modulate_opacity, project_scene, render, render_backward,
    GaussianGrads, OpacityModulation, RenderOptions, SceneGrads, SceneRender,
};

/// Number of Gaussian node slots: far field, background, road.
pub const NODE_SLOTS: usize = 3;

/// Slot of a Gaussian node in [`RenderedFrame::node_alpha`]; `None` for sky.
pub fn node_slot(tag: NodeTag) -> Option<usize> {
    match tag {
        NodeTag::Ffg => Some(0),
        NodeTag::Background => Some(1),
        NodeTag::Rsg => Some(2),
        NodeTag::Sky => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    pub tile_size: usize,
    pub z_near: f64,
    /// Added to the 2D covariance diagonal, pixels squared.
    pub dilation: f64,
    pub alpha_max: f64,
    pub min_alpha: f64,
    pub min_transmittance: f64,
    /// Squared Mahalanobis radius beyond which a Gaussian is ignored.
    pub cutoff: f64,
    /// Means outside this multiple of the image half-extent (in normalized
    /// coordinates) are culled; near-camera Gaussians off to the side would
    /// otherwise smear across the whole frame.
    pub guard_band: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            tile_size: 16,
            z_near: 0.05,
            dilation: 0.3,
            alpha_max: 0.999,
            min_alpha: 1.0 / 255.0,
            min_transmittance: 1e-4,
            cutoff: 9.0,
            guard_band: 1.3,
        }
    }
}

/// Everything one render produces, per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub width: usize,
    pub height: usize,
    pub color: Image,
    pub uncertainty: Plane,
    /// Alpha-weighted mean Gaussian depth; 0 where nothing was hit.
    pub depth: Plane,
    pub acc_alpha: Plane,
    /// Indexed by [`node_slot`].
    pub node_alpha: [Plane; NODE_SLOTS],
    /// Residual transmittance taken by the sky.
    pub sky_alpha: Plane,
}

impl RenderedFrame {
    /// Alpha map of a node; the sky's is its residual transmittance.
    pub fn alpha_of(&self, tag: NodeTag) -> &Plane {
        match node_slot(tag) {
            Some(k) => &self.node_alpha[k],
            None => &self.sky_alpha,
        }
    }
}
