//! Road surface: a dimension-reduced SDF over horizontal coordinates, its
//! NeuS-style volume renderer and training objective, and the alignment of
//! flat road Gaussians to the learned surface.

mod align;
mod field;
mod hashgrid;
mod loss;
mod render;
mod tinynet;

pub use align::align_rsg_gaussians;
pub use field::{FieldGrads, HeightFieldSdf, SdfConfig, SdfSample, FD_STEP};
pub use hashgrid::{GridLookup, HashGrid2D, HashGridConfig};
pub use loss::{sample_road_rays, sdf_loss, RoadRay, SdfLoss, SdfLossConfig};
pub use render::{render_sdf_ray, RayRender, MIN_SAMPLES};
pub use tinynet::{NetCache, TinyNet};
