use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{sigmoid, Vec3};
use crate::shmath::Direction;

use super::field::{Column, FieldGrads, Features, HeightFieldSdf, FD_STEP};
use super::tinynet::NetCache;

/// Minimum number of samples per ray.
pub const MIN_SAMPLES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayRender {
    pub color: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
}

impl RayRender {
    pub const EMPTY: RayRender = RayRender {
        color: [0.0; 3],
        depth: 0.0,
        opacity: 0.0,
    };
}

/// Parametric interval where the ray crosses the field's sampling box.
pub(crate) fn ray_box(field: &HeightFieldSdf, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
    let [x0, x1, y0, y1] = field.bounds;
    let lo = [x0, y0, field.z_range[0]];
    let hi = [x1, y1, field.z_range[1]];
    let mut t0: f64 = 0.0;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-12 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t1 > t0).then_some((t0, t1))
}

struct Sample {
    t: f64,
    p: Vec3,
    col: Column,
    /// Columns at x+h, x-h, y+h, y-h.
    fd: Option<Box<[Column; 4]>>,
    d: f64,
}

struct Segment {
    feat: Features,
    cache: NetCache,
    rgb: [f64; 3],
    phi0: f64,
    phi1: f64,
    raw_alpha: f64,
    alpha: f64,
    trans: f64,
}

/// Forward record of one ray through the SDF renderer.
pub(crate) struct RayTrace {
    samples: Vec<Sample>,
    segments: Vec<Segment>,
    inv_std: f64,
    pub render: RayRender,
}

fn sample_ts<R: Rng>(t0: f64, t1: f64, n: usize, jitter: Option<&mut R>) -> Vec<f64> {
    let step = (t1 - t0) / (n - 1) as f64;
    match jitter {
        None => (0..n).map(|i| t0 + step * i as f64).collect(),
        Some(rng) => {
            // shift the whole comb by a random sub-step offset
            let off: f64 = rng.random_range(-0.5..0.5) * step;
            (0..n)
                .map(|i| (t0 + step * i as f64 + off).clamp(t0, t1))
                .collect()
        }
    }
}

impl RayTrace {
    /// Traces a ray; `with_fd` additionally records the columns needed for the
    /// eikonal term.
    pub(crate) fn trace<R: Rng>(
        field: &HeightFieldSdf,
        origin: &Vec3,
        dir: &Vec3,
        n_samples: usize,
        with_fd: bool,
        jitter: Option<&mut R>,
    ) -> Option<RayTrace> {
        let (t0, t1) = ray_box(field, origin, dir)?;
        let ts = sample_ts(t0, t1, n_samples, jitter);
        let h = FD_STEP;
        let samples: Vec<Sample> = ts
            .iter()
            .map(|&t| {
                let p = origin + dir * t;
                let col = field.column(p.x, p.y);
                let fd = with_fd.then(|| {
                    Box::new([
                        field.column(p.x + h, p.y),
                        field.column(p.x - h, p.y),
                        field.column(p.x, p.y + h),
                        field.column(p.x, p.y - h),
                    ])
                });
                let d = col.slope * (p.z - col.height);
                Sample { t, p, col, fd, d }
            })
            .collect();
        let inv_std = field.inv_std();
        let mut trans = 1.0;
        let mut color = [0.0; 3];
        let mut acc = 0.0;
        let mut depth_acc = 0.0;
        let mut segments = Vec::with_capacity(n_samples - 1);
        for w in samples.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let phi0 = sigmoid(inv_std * a.d);
            let phi1 = sigmoid(inv_std * b.d);
            let raw_alpha = if phi0 > 0.0 { (phi0 - phi1) / phi0 } else { 0.0 };
            let alpha = raw_alpha.clamp(0.0, 1.0);
            let mid = (a.p + b.p) * 0.5;
            let feat = field.features(mid.x, mid.y);
            let (rgb, cache) = field.color_forward(&feat.feat, dir);
            let weight = alpha * trans;
            for c in 0..3 {
                color[c] += weight * rgb[c];
            }
            acc += weight;
            depth_acc += weight * 0.5 * (a.t + b.t);
            segments.push(Segment {
                feat,
                cache,
                rgb,
                phi0,
                phi1,
                raw_alpha,
                alpha,
                trans,
            });
            trans *= 1.0 - alpha;
        }
        let depth = if acc > 0.0 { depth_acc / acc } else { 0.0 };
        Some(RayTrace {
            samples,
            segments,
            inv_std,
            render: RayRender {
                color,
                depth,
                opacity: acc,
            },
        })
    }

    /// Eikonal residuals `(|grad d| - 1)^2` summed over samples, and the
    /// number of samples. Requires a trace recorded `with_fd`.
    pub(crate) fn eikonal_sum(&self) -> (f64, usize) {
        let mut total = 0.0;
        for s in &self.samples {
            if let Some(g) = eikonal_gradient(s) {
                total += (g.norm() - 1.0).powi(2);
            }
        }
        (total, self.samples.len())
    }

    /// Mean `|(|grad d| - 1)|` over samples.
    pub(crate) fn eikonal_abs_sum(&self) -> f64 {
        self.samples
            .iter()
            .filter_map(eikonal_gradient)
            .map(|g| (g.norm() - 1.0).abs())
            .sum()
    }

    /// Backpropagates `d loss / d color` and an eikonal weight applied to
    /// every sample's `(|grad d| - 1)^2`.
    pub(crate) fn backward(
        &self,
        field: &HeightFieldSdf,
        d_color: &[f64; 3],
        eik_weight: f64,
        grads: &mut FieldGrads,
    ) {
        let n = self.segments.len();
        let mut d_d = vec![0.0; self.samples.len()];
        // compositing: dC/dalpha_i = T_i (c_i - S_i), S accumulated back to front
        let mut suffix = [0.0; 3];
        let mut d_log_k = 0.0;
        let k = self.inv_std;
        for i in (0..n).rev() {
            let seg = &self.segments[i];
            let w = seg.alpha * seg.trans;
            let d_rgb = [d_color[0] * w, d_color[1] * w, d_color[2] * w];
            let dfeat = field.color_backward(&seg.cache, &seg.rgb, &d_rgb, grads);
            field.features_backward(&seg.feat, &dfeat, grads);
            let mut d_alpha = 0.0;
            for c in 0..3 {
                d_alpha += d_color[c] * seg.trans * (seg.rgb[c] - suffix[c]);
                suffix[c] = seg.alpha * seg.rgb[c] + (1.0 - seg.alpha) * suffix[c];
            }
            if seg.raw_alpha > 0.0 && seg.raw_alpha < 1.0 && seg.phi0 > 0.0 {
                // alpha = 1 - phi1/phi0
                let d_phi0 = d_alpha * seg.phi1 / (seg.phi0 * seg.phi0);
                let d_phi1 = -d_alpha / seg.phi0;
                let (da, db) = (self.samples[i].d, self.samples[i + 1].d);
                let g0 = seg.phi0 * (1.0 - seg.phi0);
                let g1 = seg.phi1 * (1.0 - seg.phi1);
                d_d[i] += d_phi0 * k * g0;
                d_d[i + 1] += d_phi1 * k * g1;
                // d(k d)/d log k = k d
                d_log_k += d_phi0 * g0 * k * da + d_phi1 * g1 * k * db;
            }
        }
        grads.log_inv_std += d_log_k;
        let h = FD_STEP;
        for (s, &dd) in self.samples.iter().zip(&d_d) {
            // d = slope * (p_z - H)
            let delta = s.p.z - s.col.height;
            let mut d_slope = dd * delta;
            let mut d_height = -dd * s.col.slope;
            if eik_weight != 0.0 {
                if let (Some(fd), Some(g)) = (&s.fd, eikonal_gradient(s)) {
                    let norm = g.norm();
                    let c = eik_weight * 2.0 * (norm - 1.0) / norm;
                    let (gx, gy, gz) = (g.x, g.y, g.z);
                    let sx = (fd[0].slope - fd[1].slope) / (2.0 * h);
                    let sy = (fd[2].slope - fd[3].slope) / (2.0 * h);
                    let hx = (fd[0].height - fd[1].height) / (2.0 * h);
                    let hy = (fd[2].height - fd[3].height) / (2.0 * h);
                    let d_sx = c * gx * delta;
                    let d_sy = c * gy * delta;
                    let d_hx = -c * gx * s.col.slope;
                    let d_hy = -c * gy * s.col.slope;
                    d_height -= c * (gx * sx + gy * sy);
                    d_slope += c * (-gx * hx - gy * hy + gz);
                    let inv = 1.0 / (2.0 * h);
                    field.column_backward(&fd[0], d_hx * inv, d_sx * inv, grads);
                    field.column_backward(&fd[1], -d_hx * inv, -d_sx * inv, grads);
                    field.column_backward(&fd[2], d_hy * inv, d_sy * inv, grads);
                    field.column_backward(&fd[3], -d_hy * inv, -d_sy * inv, grads);
                }
            }
            field.column_backward(&s.col, d_height, d_slope, grads);
        }
    }
}

fn eikonal_gradient(s: &Sample) -> Option<Vec3> {
    let fd = s.fd.as_ref()?;
    let h = FD_STEP;
    let delta = s.p.z - s.col.height;
    let sx = (fd[0].slope - fd[1].slope) / (2.0 * h);
    let sy = (fd[2].slope - fd[3].slope) / (2.0 * h);
    let hx = (fd[0].height - fd[1].height) / (2.0 * h);
    let hy = (fd[2].height - fd[3].height) / (2.0 * h);
    Some(Vec3::new(
        sx * delta - s.col.slope * hx,
        sy * delta - s.col.slope * hy,
        s.col.slope,
    ))
}

/// Volume-renders the SDF along a ray with NeuS opacities.
///
/// Samples are evenly spaced over the ray's overlap with the field's
/// sampling box (randomly shifted when `jitter` is given). Rays that miss the
/// box return zero color and opacity.
pub fn render_sdf_ray<R: Rng>(
    field: &HeightFieldSdf,
    origin: &Vec3,
    dir: &Direction,
    n_samples: usize,
    jitter: Option<&mut R>,
) -> Result<RayRender> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::invalid(
            "n_samples",
            format!("{n_samples} < {MIN_SAMPLES}"),
        ));
    }
    if !(origin.x.is_finite() && origin.y.is_finite() && origin.z.is_finite()) {
        return Err(Error::NonFinite("ray origin".into()));
    }
    Ok(RayTrace::trace(field, origin, dir.vec(), n_samples, false, jitter)
        .map(|t| t.render)
        .unwrap_or(RayRender::EMPTY))
}
