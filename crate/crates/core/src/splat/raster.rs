use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, Plane};
use crate::math::Vec3;

use super::{RasterConfig, RenderedFrame, NODE_SLOTS};

/// A Gaussian ready for compositing: screen footprint plus shaded values.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: [f64; 2],
    pub cov2d: [f64; 3],
    pub conic: [f64; 3],
    pub depth: f64,
    pub radius: f64,
    /// Unit direction from the camera center to the Gaussian.
    pub view_dir: Vec3,
    /// Index in the caller's primitive list; breaks depth ties.
    pub source: usize,
    /// Effective opacity (after any modulation).
    pub opacity: f64,
    pub color: [f64; 3],
    /// View density `p_g`, already clamped to `[0, 1]`.
    pub certainty: f64,
    /// Node slot for the per-node alpha maps.
    pub node: usize,
}

/// Per-pixel layer behind all Gaussians; receives the residual transmittance.
#[derive(Clone, Debug, PartialEq)]
pub struct SkyLayer {
    pub color: Vec<[f64; 3]>,
    pub certainty: Vec<f64>,
}

impl SkyLayer {
    /// Black layer with zero certainty, i.e. no sky.
    pub fn empty(pixels: usize) -> Self {
        SkyLayer {
            color: vec![[0.0; 3]; pixels],
            certainty: vec![0.0; pixels],
        }
    }
}

/// Forward state kept for the backward pass.
#[derive(Clone, Debug)]
pub struct RasterCache {
    width: usize,
    height: usize,
    tiles_x: usize,
    tiles: Vec<Vec<u32>>,
    final_t: Vec<f64>,
    n_projected: usize,
    config: RasterConfig,
}

/// Gradients with respect to each [`ProjectedGaussian`]'s inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grad2D {
    pub mean2d: [f64; 2],
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    pub certainty: f64,
}

/// Gradients with respect to the per-pixel sky layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SkyGrads {
    pub color: Vec<[f64; 3]>,
    pub certainty: Vec<f64>,
}

/// Upstream gradients for every output map of a [`RenderedFrame`]. Depth
/// carries no gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameGrads {
    pub width: usize,
    pub height: usize,
    /// Three entries per pixel.
    pub color: Vec<f64>,
    pub uncertainty: Vec<f64>,
    pub node_alpha: [Vec<f64>; NODE_SLOTS],
    pub sky_alpha: Vec<f64>,
    pub acc_alpha: Vec<f64>,
}

impl FrameGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        FrameGrads {
            width,
            height,
            color: vec![0.0; 3 * n],
            uncertainty: vec![0.0; n],
            node_alpha: std::array::from_fn(|_| vec![0.0; n]),
            sky_alpha: vec![0.0; n],
            acc_alpha: vec![0.0; n],
        }
    }

    pub fn add_assign(&mut self, other: &FrameGrads) {
        let pairs = [
            (&mut self.color, &other.color),
            (&mut self.uncertainty, &other.uncertainty),
            (&mut self.sky_alpha, &other.sky_alpha),
            (&mut self.acc_alpha, &other.acc_alpha),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for k in 0..NODE_SLOTS {
            self.node_alpha[k].iter_mut().zip(&other.node_alpha[k]).for_each(|(x, y)| *x += y);
        }
    }
}

/// Depth order with a stable tie-break on the source index.
pub(crate) fn depth_order(gs: &[ProjectedGaussian]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gs.len()).collect();
    order.sort_by(|&a, &b| {
        gs[a]
            .depth
            .total_cmp(&gs[b].depth)
            .then(gs[a].source.cmp(&gs[b].source))
    });
    order
}

/// Alpha of Gaussian `g` at pixel center `(px, py)`, or `None` if it is
/// skipped there (beyond the cutoff or below the minimum alpha). Also returns
/// the Gaussian falloff and whether the alpha clamp was active.
#[inline]
pub(crate) fn pixel_alpha(g: &ProjectedGaussian, px: f64, py: f64, cfg: &RasterConfig) -> Option<(f64, f64, bool)> {
    let dx = px - g.mean2d[0];
    let dy = py - g.mean2d[1];
    let q = g.conic[0] * dx * dx + 2.0 * g.conic[1] * dx * dy + g.conic[2] * dy * dy;
    if !(q <= cfg.cutoff) {
        return None;
    }
    let falloff = (-0.5 * q).exp();
    let raw = g.opacity * falloff;
    if raw < cfg.min_alpha {
        return None;
    }
    let clamped = raw > cfg.alpha_max;
    Some((raw.min(cfg.alpha_max), falloff, clamped))
}

struct PixelOut {
    color: [f64; 3],
    certainty: f64,
    depth: f64,
    weight: f64,
    node: [f64; NODE_SLOTS],
    t: f64,
}

fn composite(list: &[u32], gs: &[ProjectedGaussian], px: f64, py: f64, cfg: &RasterConfig) -> PixelOut {
    let mut out = PixelOut {
        color: [0.0; 3],
        certainty: 0.0,
        depth: 0.0,
        weight: 0.0,
        node: [0.0; NODE_SLOTS],
        t: 1.0,
    };
    for &i in list {
        let g = &gs[i as usize];
        let Some((alpha, _, _)) = pixel_alpha(g, px, py, cfg) else {
            continue;
        };
        let w = alpha * out.t;
        for c in 0..3 {
            out.color[c] += w * g.color[c];
        }
        out.certainty += w * g.certainty;
        out.depth += w * g.depth;
        out.weight += w;
        out.node[g.node] += w;
        out.t *= 1.0 - alpha;
        if out.t < cfg.min_transmittance {
            break;
        }
    }
    out
}

/// Tile-binned front-to-back compositing of `gs` over the `sky` layer.
pub fn rasterize(
    gs: &[ProjectedGaussian],
    sky: &SkyLayer,
    width: usize,
    height: usize,
    cfg: &RasterConfig,
) -> Result<(RenderedFrame, RasterCache)> {
    let n = width * height;
    if sky.color.len() != n || sky.certainty.len() != n {
        return Err(Error::Shape(format!(
            "sky layer has {} pixels, image has {n}",
            sky.color.len()
        )));
    }
    let ts = cfg.tile_size.max(1);
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for i in depth_order(gs) {
        let g = &gs[i];
        // pixel centers sit at +0.5; widen by one pixel against rounding
        let x0 = ((g.mean2d[0] - g.radius - 1.5) / ts as f64).floor().max(0.0) as usize;
        let y0 = ((g.mean2d[1] - g.radius - 1.5) / ts as f64).floor().max(0.0) as usize;
        let x1 = ((g.mean2d[0] + g.radius + 0.5) / ts as f64).floor();
        let y1 = ((g.mean2d[1] + g.radius + 0.5) / ts as f64).floor();
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let x1 = (x1 as usize).min(tiles_x.saturating_sub(1));
        let y1 = (y1 as usize).min(tiles_y.saturating_sub(1));
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                tiles[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    let per_tile: Vec<Vec<(usize, PixelOut)>> = tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let mut out = Vec::with_capacity(ts * ts);
            for y in ty * ts..((ty + 1) * ts).min(height) {
                for x in tx * ts..((tx + 1) * ts).min(width) {
                    out.push((y * width + x, composite(list, gs, x as f64 + 0.5, y as f64 + 0.5, cfg)));
                }
            }
            out
        })
        .collect();

    let mut frame = RenderedFrame::empty(width, height);
    let mut final_t = vec![1.0; n];
    for (p, o) in per_tile.into_iter().flatten() {
        let sky_c = sky.color[p];
        for c in 0..3 {
            frame.color.data[3 * p + c] = o.color[c] + o.t * sky_c[c];
        }
        let certainty = o.certainty + o.t * sky.certainty[p];
        frame.uncertainty.data[p] = (1.0 - certainty).clamp(0.0, 1.0);
        frame.depth.data[p] = if o.weight > 0.0 { o.depth / o.weight } else { 0.0 };
        frame.acc_alpha.data[p] = 1.0 - o.t;
        for k in 0..NODE_SLOTS {
            frame.node_alpha[k].data[p] = o.node[k];
        }
        frame.sky_alpha.data[p] = o.t;
        final_t[p] = o.t;
    }
    Ok((
        frame,
        RasterCache {
            width,
            height,
            tiles_x,
            tiles,
            final_t,
            n_projected: gs.len(),
            config: cfg.clone(),
        },
    ))
}

/// Reverse sweep of [`rasterize`].
///
/// The certainty channel is a stop-gradient with respect to alpha: its
/// gradient reaches each Gaussian's certainty value only. Per-tile buffers
/// are merged in tile order so results do not depend on the worker count.
pub fn rasterize_backward(
    gs: &[ProjectedGaussian],
    sky: &SkyLayer,
    cache: &RasterCache,
    grads: &FrameGrads,
) -> Result<(Vec<Grad2D>, SkyGrads)> {
    let (width, height) = (cache.width, cache.height);
    if cache.n_projected != gs.len() {
        return Err(Error::MissingCache("raster cache does not match the projected list"));
    }
    if grads.width != width || grads.height != height {
        return Err(Error::Shape("frame gradient resolution differs from the render".into()));
    }
    let cfg = &cache.config;
    let ts = cfg.tile_size.max(1);
    let tiles_x = cache.tiles_x;

    struct TileOut {
        local: Vec<Grad2D>,
        sky: Vec<(usize, [f64; 3], f64)>,
    }

    let per_tile: Vec<TileOut> = cache
        .tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let mut local = vec![Grad2D::default(); list.len()];
            let mut sky_out = Vec::new();
            // (local index, alpha, falloff, clamped, transmittance before)
            let mut hits: Vec<(usize, f64, f64, bool, f64)> = Vec::new();
            for y in ty * ts..((ty + 1) * ts).min(height) {
                for x in tx * ts..((tx + 1) * ts).min(width) {
                    let p = y * width + x;
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    hits.clear();
                    let mut t = 1.0;
                    for (li, &i) in list.iter().enumerate() {
                        let g = &gs[i as usize];
                        let Some((alpha, falloff, clamped)) = pixel_alpha(g, px, py, cfg) else {
                            continue;
                        };
                        hits.push((li, alpha, falloff, clamped, t));
                        t *= 1.0 - alpha;
                        if t < cfg.min_transmittance {
                            break;
                        }
                    }
                    let t_final = cache.final_t[p];
                    let dc = [grads.color[3 * p], grads.color[3 * p + 1], grads.color[3 * p + 2]];
                    let d_cert = -grads.uncertainty[p];
                    let sky_c = sky.color[p];
                    // gradient of the loss with respect to the final transmittance
                    let g_t = dc[0] * sky_c[0] + dc[1] * sky_c[1] + dc[2] * sky_c[2] + grads.sky_alpha[p]
                        - grads.acc_alpha[p];
                    if t_final > 0.0 {
                        sky_out.push((p, [dc[0] * t_final, dc[1] * t_final, dc[2] * t_final], d_cert * t_final));
                    }
                    let mut after = t_final * g_t;
                    for &(li, alpha, falloff, clamped, t_i) in hits.iter().rev() {
                        let g = &gs[list[li] as usize];
                        let w = alpha * t_i;
                        let x_i = dc[0] * g.color[0]
                            + dc[1] * g.color[1]
                            + dc[2] * g.color[2]
                            + grads.node_alpha[g.node][p];
                        let out = &mut local[li];
                        for c in 0..3 {
                            out.color[c] += w * dc[c];
                        }
                        out.certainty += w * d_cert;
                        let one_minus = 1.0 - alpha;
                        let d_alpha = if one_minus > 1e-12 {
                            t_i * x_i - after / one_minus
                        } else {
                            t_i * x_i
                        };
                        after += w * x_i;
                        if clamped || d_alpha == 0.0 {
                            continue;
                        }
                        out.opacity += d_alpha * falloff;
                        let d_q = -0.5 * d_alpha * g.opacity * falloff;
                        let dx = px - g.mean2d[0];
                        let dy = py - g.mean2d[1];
                        out.conic[0] += d_q * dx * dx;
                        out.conic[1] += d_q * 2.0 * dx * dy;
                        out.conic[2] += d_q * dy * dy;
                        let d_dx = d_q * 2.0 * (g.conic[0] * dx + g.conic[1] * dy);
                        let d_dy = d_q * 2.0 * (g.conic[1] * dx + g.conic[2] * dy);
                        out.mean2d[0] -= d_dx;
                        out.mean2d[1] -= d_dy;
                    }
                }
            }
            TileOut { local, sky: sky_out }
        })
        .collect();

    let mut out = vec![Grad2D::default(); gs.len()];
    let mut sky_grads = SkyGrads {
        color: vec![[0.0; 3]; width * height],
        certainty: vec![0.0; width * height],
    };
    for (tile, t) in per_tile.into_iter().enumerate() {
        for (li, g) in t.local.into_iter().enumerate() {
            let o = &mut out[cache.tiles[tile][li] as usize];
            o.mean2d[0] += g.mean2d[0];
            o.mean2d[1] += g.mean2d[1];
            for k in 0..3 {
                o.conic[k] += g.conic[k];
                o.color[k] += g.color[k];
            }
            o.opacity += g.opacity;
            o.certainty += g.certainty;
        }
        for (p, c, cert) in t.sky {
            sky_grads.color[p] = c;
            sky_grads.certainty[p] = cert;
        }
    }
    Ok((out, sky_grads))
}

/// Pixel maps for an image of the given size, all zero.
impl RenderedFrame {
    pub fn empty(width: usize, height: usize) -> Self {
        RenderedFrame {
            width,
            height,
            color: Image::new(width, height),
            uncertainty: Plane::filled(width, height, 1.0),
            depth: Plane::new(width, height),
            acc_alpha: Plane::new(width, height),
            node_alpha: std::array::from_fn(|_| Plane::new(width, height)),
            sky_alpha: Plane::filled(width, height, 1.0),
        }
    }
}
