use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rsg::{sample_road_rays, sdf_loss, FieldGrads};
use crate::scene::{CameraView, SceneGraph};
use crate::splat::{render, render_backward, FrameGrads, RenderOptions, SceneGrads};

use super::config::TrainConfig;
use super::encoder::PseudoColorEncoder;
use super::losses::{l1_with_grad, loss_nll, loss_photometric};

/// One view of a training batch. Extrapolated views must carry pseudo ground truth.
#[derive(Clone, Copy, Debug)]
pub struct TrainItem<'a> {
    pub view: &'a CameraView,
    pub pseudo_gt: Option<&'a Image>,
}

/// Unweighted loss terms summed over the batch, and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    pub dssim: f64,
    pub mask: f64,
    pub sdf: f64,
    pub eikonal: f64,
    pub nll: f64,
    pub nll_clamped: usize,
    pub ex: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub terms: LossTerms,
    pub scene: SceneGrads,
    pub field: FieldGrads,
    pub encoder: Vec<f64>,
}

/// Batch objective. Original views contribute the supervised sum
/// (photometric, mask, road SDF and uncertainty NLL); extrapolated views
/// contribute only `weights.ex * L1(encode(render), pseudo_gt)`. The batch
/// loss is the plain sum of per-view losses.
pub fn total_loss<R: Rng>(
    scene: &SceneGraph,
    encoder: &PseudoColorEncoder,
    items: &[TrainItem],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<LossOutput> {
    if items.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let w = &config.weights;
    let opts = RenderOptions {
        raster: config.raster.clone(),
        modulation: None,
    };
    let mut out = LossOutput {
        terms: LossTerms::default(),
        scene: SceneGrads::zeros_like(scene),
        field: scene.road.field.grads_zero(),
        encoder: vec![0.0; encoder.net.param_count()],
    };
    for item in items {
        let view = item.view;
        let r = render(scene, &view.camera, &opts)?;
        let frame = &r.frame;
        let t = &mut out.terms;
        if view.is_extrapolated {
            let target = item.pseudo_gt.ok_or_else(|| Error::Provider {
                view_id: view.id,
                reason: "extrapolated view has no pseudo ground truth".into(),
            })?;
            if !target.same_shape(&frame.color) {
                return Err(Error::Shape(format!("pseudo ground truth for view {} has the wrong size", view.id)));
            }
            let (encoded, cache) = encoder.encode(&frame.color);
            let (l1, mut g) = l1_with_grad(&encoded.data, &target.data);
            g.iter_mut().for_each(|v| *v *= w.ex);
            let (d_color, d_enc) = encoder.backward(&cache, &g);
            out.encoder.iter_mut().zip(&d_enc).for_each(|(a, b)| *a += b);
            let mut fg = FrameGrads::zeros(frame.width, frame.height);
            fg.color = d_color;
            out.scene.add_assign(&render_backward(scene, &r, &fg)?);
            t.ex += l1;
            t.total += w.ex * l1;
            continue;
        }
        let (photo, mut fg) = loss_photometric(frame, &view.image, &view.road_mask, &view.sky_mask, w)?;
        let (nll, dnll) = loss_nll(&frame.uncertainty);
        fg.uncertainty.iter_mut().zip(&dnll).for_each(|(a, b)| *a += w.nll * b);
        out.scene.add_assign(&render_backward(scene, &r, &fg)?);
        t.l1 += photo.l1;
        t.dssim += photo.dssim;
        t.mask += photo.mask;
        t.nll += nll.value;
        t.nll_clamped += nll.clamped;
        t.total += photo.total + w.nll * nll.value;
        if w.sdf > 0.0 {
            let rays = sample_road_rays(view, config.sdf_rays, rng);
            if !rays.is_empty() {
                let mut s = sdf_loss(&scene.road.field, &rays, &config.sdf, rng)?;
                s.grads.scale(w.sdf);
                out.field.add_assign(&s.grads);
                t.sdf += s.total;
                t.eikonal += s.eikonal;
                t.total += w.sdf * s.total;
            }
        }
    }
    Ok(out)
}
