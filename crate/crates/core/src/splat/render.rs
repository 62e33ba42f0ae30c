use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ffg::{clamp_log_factor, ffg_backward};
use crate::math::{quat_to_rotmat, quat_to_rotmat_backward, Mat3, Vec3};
use crate::scene::{GaussianPrimitive, NodeTag, PinholeCamera, SceneGraph, SkyNode};
use crate::shmath::{density_and_grad_from_basis, density_from_basis, sh_basis_unit, sh_basis_with_jacobian, sh_len};

use super::project::{conic_backward, project_backward, project_gaussian, Projection};
use super::raster::{rasterize, rasterize_backward, FrameGrads, ProjectedGaussian, RasterCache, SkyLayer};
use super::{node_slot, RasterConfig, RenderedFrame};

/// Per-Gaussian opacity multipliers `u` in `[0, 1]`, in flat scene order
/// (far field, background, road). The stored logits are not touched.
#[derive(Clone, Debug, PartialEq)]
pub struct OpacityModulation(Vec<f64>);

impl OpacityModulation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Validates `u` against the scene and wraps it for [`RenderOptions`].
pub fn modulate_opacity(scene: &SceneGraph, u: Vec<f64>) -> Result<OpacityModulation> {
    if u.len() != scene.gaussian_count() {
        return Err(Error::Shape(format!(
            "{} modulation factors for {} Gaussians",
            u.len(),
            scene.gaussian_count()
        )));
    }
    if let Some((i, v)) = u.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("u[{i}]"), format!("{v} outside [0, 1]")));
    }
    Ok(OpacityModulation(u))
}

#[derive(Clone, Debug, Default)]
pub struct RenderOptions {
    pub raster: RasterConfig,
    pub modulation: Option<OpacityModulation>,
}

/// Gradient of a loss with respect to one Gaussian's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrads {
    pub position: Vec3,
    pub log_scales: Vec<f64>,
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color_sh: Vec<[f64; 3]>,
    pub uncert_sh: Vec<f64>,
    pub far_log_factor: f64,
}

impl GaussianGrads {
    pub fn zeros_like(g: &GaussianPrimitive) -> Self {
        GaussianGrads {
            position: Vec3::zeros(),
            log_scales: vec![0.0; g.log_scales.len()],
            rotation: [0.0; 4],
            opacity_logit: 0.0,
            color_sh: vec![[0.0; 3]; g.color_sh.len()],
            uncert_sh: vec![0.0; g.uncert_sh.len()],
            far_log_factor: 0.0,
        }
    }

    fn add_assign(&mut self, o: &GaussianGrads) {
        self.position += o.position;
        self.log_scales.iter_mut().zip(&o.log_scales).for_each(|(a, b)| *a += b);
        self.rotation.iter_mut().zip(&o.rotation).for_each(|(a, b)| *a += b);
        self.opacity_logit += o.opacity_logit;
        for (a, b) in self.color_sh.iter_mut().zip(&o.color_sh) {
            (0..3).for_each(|c| a[c] += b[c]);
        }
        self.uncert_sh.iter_mut().zip(&o.uncert_sh).for_each(|(a, b)| *a += b);
        self.far_log_factor += o.far_log_factor;
    }

    fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.log_scales.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color_sh.iter().flatten().all(|v| v.is_finite())
            && self.uncert_sh.iter().all(|v| v.is_finite())
            && self.far_log_factor.is_finite()
    }
}

/// Gradients for every Gaussian node and the sky.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrads {
    pub background: Vec<GaussianGrads>,
    pub road: Vec<GaussianGrads>,
    pub far: Vec<GaussianGrads>,
    pub sky_color: Vec<[f64; 3]>,
    pub sky_uncert: Vec<f64>,
}

impl SceneGrads {
    pub fn zeros_like(scene: &SceneGraph) -> Self {
        let z = |gs: &[GaussianPrimitive]| gs.iter().map(GaussianGrads::zeros_like).collect();
        SceneGrads {
            background: z(scene.background()),
            road: z(&scene.road.gaussians),
            far: z(scene.far_gaussians()),
            sky_color: vec![[0.0; 3]; scene.sky.color_sh.len()],
            sky_uncert: vec![0.0; scene.sky.uncert_sh.len()],
        }
    }

    pub fn add_assign(&mut self, o: &SceneGrads) {
        for (a, b) in [
            (&mut self.background, &o.background),
            (&mut self.road, &o.road),
            (&mut self.far, &o.far),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| x.add_assign(y));
        }
        for (a, b) in self.sky_color.iter_mut().zip(&o.sky_color) {
            (0..3).for_each(|c| a[c] += b[c]);
        }
        self.sky_uncert.iter_mut().zip(&o.sky_uncert).for_each(|(a, b)| *a += b);
    }

    pub fn all_finite(&self) -> bool {
        self.background.iter().chain(&self.road).chain(&self.far).all(GaussianGrads::is_finite)
            && self.sky_color.iter().flatten().all(|v| v.is_finite())
            && self.sky_uncert.iter().all(|v| v.is_finite())
    }

    /// True when every uncertainty-SH gradient (Gaussians and sky) is exactly zero.
    pub fn uncertainty_is_zero(&self) -> bool {
        self.sky_uncert.iter().all(|v| *v == 0.0)
            && self
                .background
                .iter()
                .chain(&self.road)
                .chain(&self.far)
                .all(|g| g.uncert_sh.iter().all(|v| *v == 0.0))
    }

    /// Node gradients in flat scene order (far field, background, road).
    pub fn flat(&self) -> impl Iterator<Item = &GaussianGrads> {
        self.far.iter().chain(&self.background).chain(&self.road)
    }
}

/// Gaussians of a scene in flat order with the far-field anchor.
fn flat_gaussians(scene: &SceneGraph) -> Vec<&GaussianPrimitive> {
    scene
        .far_gaussians()
        .iter()
        .chain(scene.background())
        .chain(&scene.road.gaussians)
        .collect()
}

/// Render-space mean, linear scales and covariance factor of a Gaussian.
fn world_geometry(g: &GaussianPrimitive, anchor: &Vec3) -> (Vec3, [f64; 3], Mat3) {
    let mut s = g.scales();
    let mean = if g.tag == NodeTag::Ffg {
        let k = clamp_log_factor(g.far_log_factor).exp();
        s.iter_mut().for_each(|v| *v *= k);
        anchor + (g.position - anchor) * k
    } else {
        g.position
    };
    let r = quat_to_rotmat(&g.rotation);
    let m = r * Mat3::from_diagonal(&Vec3::new(s[0], s[1], s[2]));
    (mean, s, m)
}

/// Forward values of one projected Gaussian that the backward pass reuses.
#[derive(Clone, Debug)]
struct Shade {
    flat: usize,
    proj: Projection,
    mean: Vec3,
    scales: [f64; 3],
    m: Mat3,
    raw_color: [f64; 3],
    raw_certainty: f64,
    u: f64,
}

fn shade_color(sh: &[[f64; 3]], basis: &[f64]) -> [f64; 3] {
    let mut c = [0.5; 3];
    for (coef, y) in sh.iter().zip(basis) {
        for k in 0..3 {
            c[k] += coef[k] * y;
        }
    }
    c
}

fn certainty(a: &[f64], basis: &[f64]) -> f64 {
    if a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    density_from_basis(a, basis)
}

/// Projects and shades every Gaussian of the scene for `cam`; culled ones are dropped.
pub fn project_scene(
    scene: &SceneGraph,
    cam: &PinholeCamera,
    opts: &RenderOptions,
) -> Result<Vec<ProjectedGaussian>> {
    Ok(project_all(scene, cam, opts)?.0)
}

fn project_all(
    scene: &SceneGraph,
    cam: &PinholeCamera,
    opts: &RenderOptions,
) -> Result<(Vec<ProjectedGaussian>, Vec<Shade>)> {
    let gs = flat_gaussians(scene);
    if let Some(m) = &opts.modulation {
        if m.0.len() != gs.len() {
            return Err(Error::Shape("opacity modulation length differs from the scene".into()));
        }
    }
    let anchor = scene.far_field.as_ref().map_or(Vec3::zeros(), |f| f.anchor);
    let center = cam.center();
    let out: Vec<(ProjectedGaussian, Shade)> = gs
        .par_iter()
        .enumerate()
        .filter_map(|(flat, g)| {
            let (mean, scales, m) = world_geometry(g, &anchor);
            let proj = project_gaussian(&mean, &m, cam, &opts.raster)?;
            let v = mean - center;
            let dir = v / v.norm();
            let mut basis = vec![0.0; sh_len(g.color_degree().max(g.uncert_degree()))];
            sh_basis_unit(g.color_degree().max(g.uncert_degree()), &dir, &mut basis);
            let raw_color = shade_color(&g.color_sh, &basis);
            let raw_certainty = certainty(&g.uncert_sh, &basis[..g.uncert_sh.len()]);
            let u = opts.modulation.as_ref().map_or(1.0, |m| m.0[flat]);
            let p = ProjectedGaussian {
                mean2d: proj.mean2d,
                cov2d: proj.cov2d,
                conic: proj.conic,
                depth: proj.depth,
                radius: proj.radius,
                view_dir: dir,
                source: flat,
                opacity: u * g.opacity(),
                color: raw_color.map(|c| c.clamp(0.0, 1.0)),
                certainty: raw_certainty.clamp(0.0, 1.0),
                node: node_slot(g.tag).expect("Gaussian nodes have a slot"),
            };
            Some((
                p,
                Shade {
                    flat,
                    proj,
                    mean,
                    scales,
                    m,
                    raw_color,
                    raw_certainty,
                    u,
                },
            ))
        })
        .collect();
    Ok(out.into_iter().unzip())
}

#[derive(Clone, Debug)]
struct SkyShade {
    raw_color: Vec<[f64; 3]>,
    raw_certainty: Vec<f64>,
}

fn sky_layer(sky: &SkyNode, cam: &PinholeCamera) -> (SkyLayer, SkyShade) {
    let deg = sky.color_degree().max(sky.uncert_degree());
    let rows: Vec<Vec<([f64; 3], f64)>> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            let mut basis = vec![0.0; sh_len(deg)];
            (0..cam.width)
                .map(|x| {
                    let d = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
                    sh_basis_unit(deg, &d, &mut basis);
                    (
                        shade_color(&sky.color_sh, &basis),
                        certainty(&sky.uncert_sh, &basis[..sky.uncert_sh.len()]),
                    )
                })
                .collect()
        })
        .collect();
    let (raw_color, raw_certainty): (Vec<[f64; 3]>, Vec<f64>) = rows.into_iter().flatten().unzip();
    (
        SkyLayer {
            color: raw_color.iter().map(|c| c.map(|v| v.clamp(0.0, 1.0))).collect(),
            certainty: raw_certainty.iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        },
        SkyShade {
            raw_color,
            raw_certainty,
        },
    )
}

/// A rendered frame plus the forward state needed by [`render_backward`].
#[derive(Clone, Debug)]
pub struct SceneRender {
    pub frame: RenderedFrame,
    pub projected: Vec<ProjectedGaussian>,
    shades: Vec<Shade>,
    sky: SkyLayer,
    sky_shade: SkyShade,
    raster: RasterCache,
    camera: PinholeCamera,
    n_gaussians: usize,
}

impl SceneRender {
    /// Sky layer the frame was composited over.
    pub fn sky_layer(&self) -> &SkyLayer {
        &self.sky
    }
}

/// Renders all nodes in a single global depth order with the sky behind.
pub fn render(scene: &SceneGraph, cam: &PinholeCamera, opts: &RenderOptions) -> Result<SceneRender> {
    cam.validate()?;
    let (projected, shades) = project_all(scene, cam, opts)?;
    let (sky, sky_shade) = sky_layer(&scene.sky, cam);
    let (frame, raster) = rasterize(&projected, &sky, cam.width, cam.height, &opts.raster)?;
    Ok(SceneRender {
        frame,
        projected,
        shades,
        sky,
        sky_shade,
        raster,
        camera: cam.clone(),
        n_gaussians: scene.gaussian_count(),
    })
}

/// Joint composite of every node of the scene; see [`render`].
pub fn composite_nodes(scene: &SceneGraph, cam: &PinholeCamera, opts: &RenderOptions) -> Result<RenderedFrame> {
    Ok(render(scene, cam, opts)?.frame)
}

/// Per-Gaussian view certainty `clamp(p_g(v), 0, 1)` for `cam`, usable as an
/// opacity modulation (`u = 1 - expected uncertainty`).
pub fn certainty_modulation(scene: &SceneGraph, cam: &PinholeCamera) -> OpacityModulation {
    let anchor = scene.far_field.as_ref().map_or(Vec3::zeros(), |f| f.anchor);
    let center = cam.center();
    let u = flat_gaussians(scene)
        .par_iter()
        .map(|g| {
            let (mean, _, _) = world_geometry(g, &anchor);
            let v = mean - center;
            if v.norm() == 0.0 {
                return 1.0;
            }
            let mut basis = vec![0.0; g.uncert_sh.len()];
            sh_basis_unit(g.uncert_degree(), &(v / v.norm()), &mut basis);
            certainty(&g.uncert_sh, &basis).clamp(0.0, 1.0)
        })
        .collect();
    OpacityModulation(u)
}

/// Backpropagates frame gradients to scene parameters.
///
/// Road Gaussian positions get no gradient (they are slaved to the SDF).
/// The certainty channel reaches only the uncertainty SH coefficients.
pub fn render_backward(scene: &SceneGraph, r: &SceneRender, grads: &FrameGrads) -> Result<SceneGrads> {
    if r.n_gaussians != scene.gaussian_count() {
        return Err(Error::MissingCache("render was produced for a different scene"));
    }
    let (g2d, sky_g) = rasterize_backward(&r.projected, &r.sky, &r.raster, grads)?;
    let gs = flat_gaussians(scene);
    let anchor = scene.far_field.as_ref().map_or(Vec3::zeros(), |f| f.anchor);
    let cam = &r.camera;
    let center = cam.center();

    let per: Vec<(usize, GaussianGrads)> = r
        .shades
        .par_iter()
        .zip(&g2d)
        .map(|(sh, d)| {
            let g = gs[sh.flat];
            let mut out = GaussianGrads::zeros_like(g);
            let v = sh.mean - center;
            let deg = g.color_degree().max(g.uncert_degree());
            let needs_dir = g.tag != NodeTag::Rsg;
            let (basis, jac) = if needs_dir {
                sh_basis_with_jacobian(deg, &v)
            } else {
                let mut b = vec![0.0; sh_len(deg)];
                sh_basis_unit(deg, &(v / v.norm()), &mut b);
                (b, Vec::new())
            };
            // color through the clamp and SH
            let mut d_raw = [0.0; 3];
            for k in 0..3 {
                if sh.raw_color[k] > 0.0 && sh.raw_color[k] < 1.0 {
                    d_raw[k] = d.color[k];
                }
            }
            let mut d_v = Vec3::zeros();
            for (j, coef) in g.color_sh.iter().enumerate() {
                for k in 0..3 {
                    out.color_sh[j][k] = d_raw[k] * basis[j];
                }
                if needs_dir {
                    let s = d_raw[0] * coef[0] + d_raw[1] * coef[1] + d_raw[2] * coef[2];
                    d_v += Vec3::new(jac[j][0], jac[j][1], jac[j][2]) * s;
                }
            }
            // certainty: coefficients only
            if d.certainty != 0.0 && sh.raw_certainty < 1.0 && g.uncert_sh.iter().any(|a| *a != 0.0) {
                let nb = g.uncert_sh.len();
                density_and_grad_from_basis(&g.uncert_sh, &basis[..nb], &mut out.uncert_sh);
                out.uncert_sh.iter_mut().for_each(|x| *x *= d.certainty);
            }
            let s = g.opacity();
            out.opacity_logit = d.opacity * sh.u * s * (1.0 - s);
            // footprint
            let g_cov = conic_backward(&sh.proj.conic, &d.conic);
            let (d_mean_proj, d_m) = project_backward(&sh.proj, &sh.m, cam, &d.mean2d, &g_cov);
            let d_mean = d_mean_proj + d_v;
            let rot = quat_to_rotmat(&g.rotation);
            let mut d_r = d_m;
            let mut d_log_s = [0.0; 3];
            for k in 0..3 {
                let col = d_m.column(k);
                d_r.set_column(k, &(col * sh.scales[k]));
                d_log_s[k] = sh.scales[k] * col.dot(&rot.column(k));
            }
            out.rotation = quat_to_rotmat_backward(&g.rotation, &d_r);
            for (k, o) in out.log_scales.iter_mut().enumerate() {
                *o = d_log_s[k];
            }
            match g.tag {
                NodeTag::Ffg => {
                    let local = sh.mean - anchor;
                    let s_out: Vec<f64> = sh.scales.to_vec();
                    let d_s: Vec<f64> = (0..3).map(|k| d_log_s[k] / sh.scales[k]).collect();
                    let f = ffg_backward(&d_mean, &d_s, &local, &s_out, g.far_log_factor)
                        .expect("three scales on both sides");
                    out.position = f.grad_mu;
                    out.far_log_factor = if g.far_log_factor.abs() < crate::ffg::MAX_LOG_FACTOR {
                        f.grad_f
                    } else {
                        0.0
                    };
                }
                NodeTag::Rsg => {}
                _ => out.position = d_mean,
            }
            (sh.flat, out)
        })
        .collect();

    let mut grads = SceneGrads::zeros_like(scene);
    let n_far = scene.far_gaussians().len();
    let n_bg = scene.background().len();
    for (flat, g) in per {
        let slot = if flat < n_far {
            &mut grads.far[flat]
        } else if flat < n_far + n_bg {
            &mut grads.background[flat - n_far]
        } else {
            &mut grads.road[flat - n_far - n_bg]
        };
        *slot = g;
    }

    // sky, summed row by row in a fixed order
    let sky = &scene.sky;
    let deg = sky.color_degree().max(sky.uncert_degree());
    let w = cam.width;
    let rows: Vec<(Vec<[f64; 3]>, Vec<f64>)> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            let mut dc = vec![[0.0; 3]; sky.color_sh.len()];
            let mut da = vec![0.0; sky.uncert_sh.len()];
            let mut basis = vec![0.0; sh_len(deg)];
            let mut tmp = vec![0.0; sky.uncert_sh.len()];
            for x in 0..w {
                let p = y * w + x;
                let gc = sky_g.color[p];
                let gp = sky_g.certainty[p];
                if gc == [0.0; 3] && gp == 0.0 {
                    continue;
                }
                sh_basis_unit(deg, &cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5), &mut basis);
                let raw = r.sky_shade.raw_color[p];
                for k in 0..3 {
                    if raw[k] > 0.0 && raw[k] < 1.0 {
                        for (j, c) in dc.iter_mut().enumerate() {
                            c[k] += gc[k] * basis[j];
                        }
                    }
                }
                if gp != 0.0 && r.sky_shade.raw_certainty[p] < 1.0 && sky.uncert_sh.iter().any(|a| *a != 0.0) {
                    density_and_grad_from_basis(&sky.uncert_sh, &basis[..sky.uncert_sh.len()], &mut tmp);
                    da.iter_mut().zip(&tmp).for_each(|(a, t)| *a += gp * t);
                }
            }
            (dc, da)
        })
        .collect();
    for (dc, da) in rows {
        for (a, b) in grads.sky_color.iter_mut().zip(&dc) {
            (0..3).for_each(|k| a[k] += b[k]);
        }
        grads.sky_uncert.iter_mut().zip(&da).for_each(|(a, b)| *a += b);
    }
    Ok(grads)
}
