use crate::error::Result;
use crate::ffg::MAX_LOG_FACTOR;
use crate::math::quat_normalize;
use crate::rsg::align_rsg_gaussians;
use crate::scene::{GaussianPrimitive, SceneGraph};
use crate::splat::GaussianGrads;

use super::adam::{Adam, AdamConfig};
use super::config::LearningRates;
use super::encoder::PseudoColorEncoder;
use super::objective::LossOutput;

type ParamOf = fn(&mut GaussianPrimitive) -> &mut [f64];
type GradOf = fn(&GaussianGrads) -> &[f64];

/// Adam over every trainable group of the scene graph and the encoder.
///
/// Road Gaussians train only appearance (color, opacity, uncertainty); their
/// geometry follows the height field through alignment after each step.
/// Far-field Gaussians move through `f` rather than their base positions.
#[derive(Clone, Debug, Default)]
pub struct SceneOptimizer {
    pub adam: Adam,
}

fn step_attr(
    adam: &mut Adam,
    name: &str,
    gs: &mut [GaussianPrimitive],
    grads: &[GaussianGrads],
    lr: f64,
    param: ParamOf,
    grad: GradOf,
) -> bool {
    if gs.is_empty() || lr == 0.0 {
        return true;
    }
    let mut p: Vec<f64> = gs.iter_mut().flat_map(|g| param(g).to_vec()).collect();
    let d: Vec<f64> = grads.iter().flat_map(|g| grad(g).to_vec()).collect();
    let ok = adam.step(name, &mut p, &d, lr);
    let mut k = 0;
    for g in gs.iter_mut() {
        let dst = param(g);
        let n = dst.len();
        dst.copy_from_slice(&p[k..k + n]);
        k += n;
    }
    ok
}

const POSITION: (ParamOf, GradOf) = (|g| g.position.as_mut_slice(), |g| g.position.as_slice());
const SCALES: (ParamOf, GradOf) = (|g| &mut g.log_scales, |g| &g.log_scales);
const ROTATION: (ParamOf, GradOf) = (|g| &mut g.rotation, |g| &g.rotation);
const OPACITY: (ParamOf, GradOf) = (|g| std::slice::from_mut(&mut g.opacity_logit), |g| std::slice::from_ref(&g.opacity_logit));
const COLOR: (ParamOf, GradOf) = (|g| g.color_sh.as_flattened_mut(), |g| g.color_sh.as_flattened());
const UNCERT: (ParamOf, GradOf) = (|g| &mut g.uncert_sh, |g| &g.uncert_sh);
const FAR: (ParamOf, GradOf) = (
    |g| std::slice::from_mut(&mut g.far_log_factor),
    |g| std::slice::from_ref(&g.far_log_factor),
);

impl SceneOptimizer {
    pub fn new() -> Self {
        SceneOptimizer {
            adam: Adam::new(AdamConfig::default()),
        }
    }

    /// Applies one update and re-aligns road Gaussians. Returns the number of
    /// groups skipped because of non-finite gradients.
    pub fn step(
        &mut self,
        scene: &mut SceneGraph,
        encoder: &mut PseudoColorEncoder,
        grads: &LossOutput,
        lr: &LearningRates,
    ) -> Result<usize> {
        let adam = &mut self.adam;
        let mut skipped = 0;
        let mut run = |ok: bool| skipped += (!ok) as usize;
        let g = &grads.scene;

        let appearance = [(lr.opacity, OPACITY, "opacity"), (lr.color, COLOR, "color"), (lr.uncert, UNCERT, "uncert")];
        if let Some(bg) = scene.background.as_mut() {
            for (rate, (p, d), name) in [
                (lr.position, POSITION, "position"),
                (lr.scales, SCALES, "scales"),
                (lr.rotation, ROTATION, "rotation"),
            ]
            .into_iter()
            .chain(appearance)
            {
                run(step_attr(adam, &format!("bg.{name}"), bg, &g.background, rate, p, d));
            }
            bg.iter_mut().for_each(|x| quat_normalize(&mut x.rotation));
        }
        if let Some(far) = scene.far_field.as_mut() {
            for (rate, (p, d), name) in [
                (lr.far_factor, FAR, "f"),
                (lr.scales, SCALES, "scales"),
                (lr.rotation, ROTATION, "rotation"),
            ]
            .into_iter()
            .chain(appearance)
            {
                run(step_attr(adam, &format!("far.{name}"), &mut far.gaussians, &g.far, rate, p, d));
            }
            for x in far.gaussians.iter_mut() {
                quat_normalize(&mut x.rotation);
                x.far_log_factor = x.far_log_factor.clamp(-MAX_LOG_FACTOR, MAX_LOG_FACTOR);
            }
        }
        for (rate, (p, d), name) in appearance {
            run(step_attr(adam, &format!("road.{name}"), &mut scene.road.gaussians, &g.road, rate, p, d));
        }

        let sky = &mut scene.sky;
        run(adam.step("sky.color", sky.color_sh.as_flattened_mut(), g.sky_color.as_flattened(), lr.sky_color));
        run(adam.step("sky.uncert", &mut sky.uncert_sh, &g.sky_uncert, lr.uncert));

        let field = &mut scene.road.field;
        let fg = &grads.field;
        run(adam.step("sdf.grid", &mut field.grid.table, &fg.grid, lr.sdf_grid));
        run(adam.step("sdf.elevation", &mut field.elevation_net.params, &fg.elevation, lr.sdf_nets));
        run(adam.step("sdf.slope", &mut field.slope_net.params, &fg.slope, lr.sdf_nets));
        run(adam.step("sdf.color", &mut field.color_net.params, &fg.color, lr.sdf_nets));
        run(adam.step(
            "sdf.log_inv_std",
            std::slice::from_mut(&mut field.log_inv_std),
            &[fg.log_inv_std],
            lr.log_inv_std,
        ));
        run(adam.step("encoder", &mut encoder.net.params, &grads.encoder, lr.encoder));

        align_rsg_gaussians(&scene.road.field, &mut scene.road.gaussians)?;
        Ok(skipped)
    }
}
