use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logit, quat_from_z_to, Vec3};
use crate::rsg::{align_rsg_gaussians, HeightFieldSdf, SdfConfig};
use crate::shmath::{sh_basis, sh_len, Direction};

use super::camera::CameraView;
use super::synth::{GroundTruth, SyntheticSceneSpec};
use super::{FarFieldNode, GaussianPrimitive, NodeTag, RoadNode, SceneGraph, SkyNode};

/// `Y_00`, used to convert a color to its DC coefficient.
const SH_C0: f64 = 0.282_094_791_773_878_14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub color_degree: usize,
    pub uncert_degree: usize,
    pub sky_color_degree: usize,
    /// Standard deviation of the position jitter for background Gaussians, meters.
    pub jitter: f64,
    pub rsg_pitch: f64,
    /// Road Gaussian scale as a fraction of the pitch.
    pub rsg_scale: f64,
    pub billboard_pitch: f64,
    /// Samples per side for each far billboard.
    pub far_samples: usize,
    /// Distance from the anchor at which far-field Gaussians start, meters.
    pub bootstrap_distance: f64,
    pub opacity: f64,
    pub sdf: SdfConfig,
    pub prior_steps: usize,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            color_degree: 1,
            uncert_degree: 3,
            sky_color_degree: 3,
            jitter: 0.05,
            rsg_pitch: 0.25,
            rsg_scale: 0.75,
            billboard_pitch: 0.25,
            far_samples: 24,
            bootstrap_distance: 50.0,
            opacity: 0.9,
            sdf: SdfConfig::default(),
            prior_steps: 300,
            seed: 0,
        }
    }
}

fn bilinear(view: &CameraView, u: f64, v: f64) -> [f64; 3] {
    let img = &view.image;
    let x = (u - 0.5).clamp(0.0, (img.width - 1) as f64);
    let y = (v - 0.5).clamp(0.0, (img.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    let (a, b, c, d) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = (a[k] * (1.0 - tx) + b[k] * tx) * (1.0 - ty) + (c[k] * (1.0 - tx) + d[k] * tx) * ty;
    }
    out
}

/// Color of a surface point from the first view that sees it unoccluded,
/// or `None` when no view does.
fn observed_color(truth: &GroundTruth, views: &[CameraView], p: &Vec3) -> Option<[f64; 3]> {
    views.iter().find_map(|v| {
        let cam = &v.camera;
        let [u, y, _] = cam.project(p)?;
        let inside = u >= 0.0 && y >= 0.0 && u < cam.width as f64 && y < cam.height as f64;
        (inside && truth.visible_from(&cam.center(), p)).then(|| bilinear(v, u, y))
    })
}

fn color_sh(degree: usize, rgb: Option<[f64; 3]>) -> Vec<[f64; 3]> {
    let mut sh = vec![[0.0; 3]; sh_len(degree)];
    if let Some(c) = rgb {
        sh[0] = [(c[0] - 0.5) / SH_C0, (c[1] - 0.5) / SH_C0, (c[2] - 0.5) / SH_C0];
    }
    sh
}

fn uniform_density(degree: usize) -> Vec<f64> {
    let mut a = vec![0.0; sh_len(degree)];
    a[0] = 1.0;
    a
}

/// Ridge least-squares fit of `z = a + b x + c y` through the ground points
/// under the cameras, evaluated as a closure.
fn trajectory_ground_plane(views: &[CameraView], height: f64) -> impl Fn(f64, f64) -> f64 {
    let n = views.len();
    let mut a = DMatrix::zeros(n, 3);
    let mut z = DVector::zeros(n);
    for (i, v) in views.iter().enumerate() {
        let c = v.camera.center();
        a[(i, 0)] = 1.0;
        a[(i, 1)] = c.x;
        a[(i, 2)] = c.y;
        z[i] = c.z - height;
    }
    let mut ata = a.transpose() * &a;
    ata[(1, 1)] += 1e-6;
    ata[(2, 2)] += 1e-6;
    let coef = ata
        .cholesky()
        .map(|ch| ch.solve(&(a.transpose() * z)))
        .unwrap_or_else(|| DVector::zeros(3));
    let (c0, cx, cy) = (coef[0], coef[1], coef[2]);
    move |x, y| c0 + cx * x + cy * y
}

/// Ridge least-squares SH fit of the sky pixels seen in `views`.
fn fit_sky(views: &[CameraView], degree: usize) -> Vec<[f64; 3]> {
    let k = sh_len(degree);
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut atb = [DVector::<f64>::zeros(k), DVector::zeros(k), DVector::zeros(k)];
    let mut basis = vec![0.0; k];
    let mut count = 0usize;
    for v in views {
        let cam = &v.camera;
        for y in (0..cam.height).step_by(2) {
            for x in (0..cam.width).step_by(2) {
                if !v.sky_mask.get(x, y) {
                    continue;
                }
                let d = Direction::normalize(cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5))
                    .expect("pixel ray is non-zero");
                sh_basis(degree, &d, &mut basis);
                let c = v.image.get(x, y);
                let bv = DVector::from_column_slice(&basis);
                ata += &bv * bv.transpose();
                for ch in 0..3 {
                    atb[ch] += &bv * (c[ch] - 0.5);
                }
                count += 1;
            }
        }
    }
    let mut out = vec![[0.0; 3]; k];
    if count == 0 {
        return out;
    }
    for i in 0..k {
        ata[(i, i)] += 1e-4 * count as f64;
    }
    if let Some(ch) = ata.cholesky() {
        for c in 0..3 {
            let sol = ch.solve(&atb[c]);
            for i in 0..k {
                out[i][c] = sol[i];
            }
        }
    }
    out
}

/// Initial scene graph for the trajectory `views` of a synthetic scene.
///
/// Background Gaussians are sampled on the near billboards with position
/// jitter; road Gaussians form a regular grid over the road quad and are
/// snapped to an SDF whose elevation is fitted to the ground plane under the
/// cameras; far billboards are sampled along rays from the first camera at
/// the bootstrap distance with `f = 0`. Colors come from the first view that
/// sees each sample point unoccluded, gray otherwise.
pub fn init_scene_graph(
    views: &[CameraView],
    spec: &SyntheticSceneSpec,
    config: &InitConfig,
) -> Result<SceneGraph> {
    if views.is_empty() {
        return Err(Error::Empty("camera views"));
    }
    if !(config.rsg_pitch > 0.0 && config.billboard_pitch > 0.0 && config.bootstrap_distance > 0.0) {
        return Err(Error::invalid("init", "pitches and bootstrap distance must be positive"));
    }
    let truth = GroundTruth::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ spec.seed.rotate_left(17));
    let jitter = Normal::new(0.0, config.jitter.max(0.0)).map_err(|e| Error::invalid("jitter", e.to_string()))?;
    let opacity_logit = logit(config.opacity);

    // road: SDF with a trajectory elevation prior, then a grid of flat Gaussians
    let bounds = truth.road_bounds();
    let ground = trajectory_ground_plane(views, spec.camera_path.height);
    let corners = [
        ground(bounds[0], bounds[2]),
        ground(bounds[0], bounds[3]),
        ground(bounds[1], bounds[2]),
        ground(bounds[1], bounds[3]),
    ];
    let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min) - config.sdf.z_margin;
    let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + config.sdf.z_margin;
    let mut field = HeightFieldSdf::new(&config.sdf, bounds, [lo, hi], &mut rng);
    if config.prior_steps > 0 {
        let mse = field.fit_height_prior(&ground, config.prior_steps, 64, &mut rng);
        log::debug!("elevation prior fit mse {mse:.3e}");
    }
    let nx = ((bounds[1] - bounds[0]) / config.rsg_pitch).round().max(1.0) as usize;
    let ny = ((bounds[3] - bounds[2]) / config.rsg_pitch).round().max(1.0) as usize;
    let (px, py) = ((bounds[1] - bounds[0]) / nx as f64, (bounds[3] - bounds[2]) / ny as f64);
    let mut road = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = bounds[0] + (i as f64 + 0.5) * px;
            let y = bounds[2] + (j as f64 + 0.5) * py;
            let surface = Vec3::new(x, y, truth.road_height(x));
            road.push(GaussianPrimitive {
                position: Vec3::new(x, y, ground(x, y)),
                log_scales: vec![(config.rsg_scale * px).ln(), (config.rsg_scale * py).ln()],
                rotation: [1.0, 0.0, 0.0, 0.0],
                opacity_logit,
                color_sh: color_sh(config.color_degree, observed_color(&truth, views, &surface)),
                uncert_sh: uniform_density(config.uncert_degree),
                far_log_factor: 0.0,
                tag: NodeTag::Rsg,
            });
        }
    }
    align_rsg_gaussians(&field, &mut road)?;

    // billboards: near ones become background, far ones the far-field node
    let anchor = views[0].camera.center();
    let mut background = Vec::new();
    let mut far = Vec::new();
    for b in 0..truth.billboard_count() {
        let (center, u_axis, normal, half) = truth.billboard_frame(b);
        let is_far = truth.is_far(b);
        let n = if is_far {
            config.far_samples.max(1)
        } else {
            ((2.0 * half) / config.billboard_pitch).ceil().max(1.0) as usize
        };
        let step = 2.0 * half / n as f64;
        let rotation = quat_from_z_to(&normal);
        for j in 0..n {
            for i in 0..n {
                let p = center
                    + u_axis * (-half + (i as f64 + 0.5) * step)
                    + Vec3::z() * (-half + (j as f64 + 0.5) * step);
                let color = color_sh(config.color_degree, observed_color(&truth, views, &p));
                let s = config.rsg_scale * step;
                if is_far {
                    let dist = (p - anchor).norm();
                    let k = config.bootstrap_distance / dist;
                    let sk = s * k;
                    far.push(GaussianPrimitive {
                        position: anchor + (p - anchor) * k,
                        log_scales: vec![sk.ln(), sk.ln(), (0.1 * sk).ln()],
                        rotation,
                        opacity_logit,
                        color_sh: color,
                        uncert_sh: uniform_density(config.uncert_degree),
                        far_log_factor: 0.0,
                        tag: NodeTag::Ffg,
                    });
                } else {
                    let jit = Vec3::new(jitter.sample(&mut rng), jitter.sample(&mut rng), jitter.sample(&mut rng));
                    background.push(GaussianPrimitive {
                        position: p + jit,
                        log_scales: vec![s.ln(), s.ln(), (0.1 * s).ln()],
                        rotation,
                        opacity_logit,
                        color_sh: color,
                        uncert_sh: uniform_density(config.uncert_degree),
                        far_log_factor: 0.0,
                        tag: NodeTag::Background,
                    });
                }
            }
        }
    }

    let mut sky = SkyNode::new(config.sky_color_degree, config.uncert_degree);
    sky.color_sh = fit_sky(views, config.sky_color_degree);
    let graph = SceneGraph {
        world_up: Vec3::z(),
        background: (!background.is_empty()).then_some(background),
        road: RoadNode { field, gaussians: road },
        far_field: (!far.is_empty()).then_some(FarFieldNode { anchor, gaussians: far }),
        sky,
    };
    graph.validate()?;
    Ok(graph)
}

impl SceneGraph {
    /// Moves far-field Gaussians into the background node with `f` fixed at
    /// zero, turning them into ordinary position-optimized Gaussians.
    pub fn demote_far_field(&mut self) {
        if let Some(ff) = self.far_field.take() {
            let bg = self.background.get_or_insert_with(Vec::new);
            for mut g in ff.gaussians {
                let k = g.far_log_factor.exp();
                g.position = ff.anchor + (g.position - ff.anchor) * k;
                g.log_scales.iter_mut().for_each(|s| *s += g.far_log_factor);
                g.far_log_factor = 0.0;
                g.tag = NodeTag::Background;
                bg.push(g);
            }
        }
    }
}
