//! Per-pixel brute-force compositor used as a test oracle for the tiled
//! rasterizer. Every pixel independently sorts all Gaussians and applies the
//! same skip, clamp and early-exit rules.

use super::raster::{pixel_alpha, ProjectedGaussian, SkyLayer};
use super::{RasterConfig, RenderedFrame, NODE_SLOTS};

pub fn composite_reference(
    gs: &[ProjectedGaussian],
    sky: &SkyLayer,
    width: usize,
    height: usize,
    cfg: &RasterConfig,
) -> RenderedFrame {
    let mut frame = RenderedFrame::empty(width, height);
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut order: Vec<&ProjectedGaussian> = gs.iter().collect();
            order.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.source.cmp(&b.source)));
            let mut t = 1.0;
            let mut color = [0.0; 3];
            let mut cert = 0.0;
            let mut depth = 0.0;
            let mut weight = 0.0;
            let mut node = [0.0; NODE_SLOTS];
            for g in order {
                let Some((alpha, _, _)) = pixel_alpha(g, px, py, cfg) else {
                    continue;
                };
                let w = alpha * t;
                for c in 0..3 {
                    color[c] += w * g.color[c];
                }
                cert += w * g.certainty;
                depth += w * g.depth;
                weight += w;
                node[g.node] += w;
                t *= 1.0 - alpha;
                if t < cfg.min_transmittance {
                    break;
                }
            }
            for c in 0..3 {
                frame.color.data[3 * p + c] = color[c] + t * sky.color[p][c];
            }
            frame.uncertainty.data[p] = (1.0 - cert - t * sky.certainty[p]).clamp(0.0, 1.0);
            frame.depth.data[p] = if weight > 0.0 { depth / weight } else { 0.0 };
            frame.acc_alpha.data[p] = 1.0 - t;
            for k in 0..NODE_SLOTS {
                frame.node_alpha[k].data[p] = node[k];
            }
            frame.sky_alpha.data[p] = t;
        }
    }
    frame
}
