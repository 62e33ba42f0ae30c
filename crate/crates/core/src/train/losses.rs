use crate::error::{Error, Result};
use crate::image::{Image, Mask, Plane};
use crate::metrics::ssim_with_grad;
use crate::scene::NodeTag;
use crate::splat::{node_slot, FrameGrads, RenderedFrame};

use super::config::LossWeights;

/// Lower clamp on certainty inside the NLL log.
pub const LOG_EPS: f64 = 1e-4;

/// Probability clamp for the mask cross-entropy; small enough that exact
/// alphas cost under 1e-6.
pub const BCE_EPS: f64 = 1e-7;

/// Unweighted photometric terms and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhotometricTerms {
    pub l1: f64,
    /// `1 - SSIM`.
    pub dssim: f64,
    /// Road plus sky mask cross-entropy.
    pub mask: f64,
    pub total: f64,
}

fn check_shape(frame: &RenderedFrame, w: usize, h: usize, what: &str) -> Result<()> {
    if frame.width != w || frame.height != h {
        return Err(Error::Shape(format!(
            "{what} is {w}x{h}, render is {}x{}",
            frame.width, frame.height
        )));
    }
    Ok(())
}

/// Binary cross-entropy averaged over pixels; adds `scale * dBCE/dp` to `grad`.
fn bce(p: &[f64], target: &Mask, scale: f64, grad: &mut [f64]) -> f64 {
    let n = p.len() as f64;
    let mut sum = 0.0;
    for (i, (&pi, &y)) in p.iter().zip(&target.data).enumerate() {
        let q = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let inside = q == pi;
        if y {
            sum -= q.ln();
            if inside {
                grad[i] -= scale / (q * n);
            }
        } else {
            sum -= (1.0 - q).ln();
            if inside {
                grad[i] += scale / ((1.0 - q) * n);
            }
        }
    }
    sum / n
}

/// `w.l1 * L1 + w.ssim * (1 - SSIM) + w.mask * (BCE(road alpha, road mask) + BCE(sky alpha, sky mask))`.
pub fn loss_photometric(
    frame: &RenderedFrame,
    target: &Image,
    road_mask: &Mask,
    sky_mask: &Mask,
    w: &LossWeights,
) -> Result<(PhotometricTerms, FrameGrads)> {
    check_shape(frame, target.width, target.height, "target image")?;
    check_shape(frame, road_mask.width, road_mask.height, "road mask")?;
    check_shape(frame, sky_mask.width, sky_mask.height, "sky mask")?;
    let mut g = FrameGrads::zeros(frame.width, frame.height);
    let n3 = frame.color.data.len() as f64;
    let mut l1 = 0.0;
    for (i, (a, b)) in frame.color.data.iter().zip(&target.data).enumerate() {
        let d = a - b;
        l1 += d.abs();
        if d != 0.0 {
            g.color[i] += w.l1 * d.signum() / n3;
        }
    }
    l1 /= n3;

    let mut dssim = 0.0;
    if w.ssim > 0.0 {
        let (s, sg) = ssim_with_grad(&frame.color, target);
        dssim = 1.0 - s;
        g.color.iter_mut().zip(&sg).for_each(|(a, b)| *a -= w.ssim * b);
    }

    let slot = node_slot(NodeTag::Rsg).expect("road has a node slot");
    let mask = bce(&frame.node_alpha[slot].data, road_mask, w.mask, &mut g.node_alpha[slot])
        + bce(&frame.sky_alpha.data, sky_mask, w.mask, &mut g.sky_alpha);
    let terms = PhotometricTerms {
        l1,
        dssim,
        mask,
        total: w.l1 * l1 + w.ssim * dssim + w.mask * mask,
    };
    Ok((terms, g))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NllTerms {
    pub value: f64,
    /// Pixels whose certainty fell below the clamp.
    pub clamped: usize,
}

/// `-(1/HW) sum log(1 - U)` with `1 - U` clamped below at [`LOG_EPS`].
/// Returns the loss and `dL/dU` per pixel (zero on clamped pixels).
pub fn loss_nll(u: &Plane) -> (NllTerms, Vec<f64>) {
    let n = u.data.len().max(1) as f64;
    let mut value = 0.0;
    let mut clamped = 0;
    let grad = u
        .data
        .iter()
        .map(|&ui| {
            let c = 1.0 - ui;
            if c < LOG_EPS {
                clamped += 1;
                value -= LOG_EPS.ln();
                0.0
            } else {
                value -= c.ln();
                1.0 / (c * n)
            }
        })
        .collect();
    (
        NllTerms {
            value: value / n,
            clamped,
        },
        grad,
    )
}

/// Mean absolute difference and its gradient with respect to `a`.
pub fn l1_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let n = a.len().max(1) as f64;
    let mut v = 0.0;
    let g = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            v += d.abs();
            if d == 0.0 {
                0.0
            } else {
                d.signum() / n
            }
        })
        .collect();
    (v / n, g)
}
