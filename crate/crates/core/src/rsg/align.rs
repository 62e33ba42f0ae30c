use crate::error::{Error, Result};
use crate::math::quat_from_z_to;
use crate::scene::{GaussianPrimitive, NodeTag};

use super::field::HeightFieldSdf;

/// Snaps road Gaussians onto the height field: `mu_z = H(mu_x, mu_y)` and the
/// flat (third) axis along the local surface normal. Horizontal position,
/// opacity and appearance are left untouched. Runs outside the gradient path.
pub fn align_rsg_gaussians(field: &HeightFieldSdf, gaussians: &mut [GaussianPrimitive]) -> Result<()> {
    if let Some((index, g)) = gaussians.iter().enumerate().find(|(_, g)| g.tag != NodeTag::Rsg) {
        return Err(Error::WrongTag {
            index,
            found: g.tag,
            expected: NodeTag::Rsg,
        });
    }
    use rayon::prelude::*;
    gaussians.par_iter_mut().for_each(|g| {
        let (x, y) = (g.position.x, g.position.y);
        g.position.z = field.height(x, y);
        g.rotation = quat_from_z_to(&field.normal(x, y));
    });
    Ok(())
}
