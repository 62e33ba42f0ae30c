use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::math::{Mat3, Pose, Vec3};

use super::camera::{CameraView, PinholeCamera};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadSpec {
    pub half_width: f64,
    /// x coordinate where the road quad begins, meters.
    pub start: f64,
    pub length: f64,
    pub marking_period: f64,
    /// Road surface is the plane `z = grade * x`.
    pub grade: f64,
}

impl Default for RoadSpec {
    fn default() -> Self {
        RoadSpec {
            half_width: 4.0,
            start: -5.0,
            length: 40.0,
            marking_period: 3.0,
            grade: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facing {
    /// Quad normal along -x, facing cameras that drive along +x.
    Camera,
    /// Quad parallel to the road, normal along y.
    Side,
}

/// Vertical textured square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BillboardSpec {
    /// x coordinate of the quad center, meters.
    pub distance: f64,
    /// Edge length, meters.
    pub size: f64,
    pub texture_id: u32,
    /// y coordinate of the quad center.
    #[serde(default)]
    pub lateral: f64,
    /// Height of the lower edge above `z = 0`.
    #[serde(default)]
    pub base: f64,
    #[serde(default = "default_facing")]
    pub facing: Facing,
}

fn default_facing() -> Facing {
    Facing::Camera
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Line,
    Arc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraPathSpec {
    pub kind: PathKind,
    /// Line length along +x, meters.
    pub length: f64,
    pub count: usize,
    /// Camera height above the road surface.
    pub height: f64,
    /// Downward tilt of the optical axis, degrees.
    pub pitch_deg: f64,
    /// Angular span of an arc path, degrees.
    pub arc_degrees: f64,
    pub arc_radius: f64,
    /// x coordinate of the arc center (on the road axis).
    pub arc_center: f64,
}

impl Default for CameraPathSpec {
    fn default() -> Self {
        CameraPathSpec {
            kind: PathKind::Line,
            length: 20.0,
            count: 8,
            height: 1.5,
            pitch_deg: 8.0,
            arc_degrees: 60.0,
            arc_radius: 12.0,
            arc_center: 15.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSpec {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
}

impl Default for ImageSpec {
    fn default() -> Self {
        ImageSpec {
            width: 160,
            height: 96,
            fx: 96.0,
        }
    }
}

/// Procedural driving scene: a textured road, billboards and a sky.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub road: RoadSpec,
    pub billboards: Vec<BillboardSpec>,
    pub camera_path: CameraPathSpec,
    pub image: ImageSpec,
    /// Lateral offsets for which ground-truth renders are exported.
    pub shifts: Vec<f64>,
    /// Billboards farther than this are far-field content.
    pub far_threshold: f64,
    /// Supersampling factor per axis for ground-truth color.
    pub supersample: usize,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        let bb = |distance, size, texture_id, lateral, facing| BillboardSpec {
            distance,
            size,
            texture_id,
            lateral,
            base: 0.0,
            facing,
        };
        SyntheticSceneSpec {
            road: RoadSpec::default(),
            billboards: vec![
                bb(12.0, 3.0, 0, 6.5, Facing::Camera),
                bb(16.0, 4.0, 1, -6.5, Facing::Camera),
                bb(22.0, 4.0, 2, 6.0, Facing::Side),
                bb(28.0, 5.0, 3, -7.0, Facing::Camera),
                bb(500.0, 100.0, 1, 0.0, Facing::Camera),
            ],
            camera_path: CameraPathSpec::default(),
            image: ImageSpec::default(),
            shifts: vec![1.5, 3.0],
            far_threshold: 100.0,
            supersample: 2,
            seed: 7,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |field: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("must be positive and finite, got {v}")))
            }
        };
        let fin = |field: &str, v: f64| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(field, "must be finite"))
            }
        };
        pos("road.half_width", self.road.half_width)?;
        pos("road.length", self.road.length)?;
        pos("road.marking_period", self.road.marking_period)?;
        fin("road.start", self.road.start)?;
        if !(self.road.grade.abs() < 1.0) {
            return Err(Error::invalid("road.grade", "must satisfy |grade| < 1"));
        }
        for (i, b) in self.billboards.iter().enumerate() {
            if !(10.0..=20_000.0).contains(&b.distance) {
                return Err(Error::invalid(
                    format!("billboards[{i}].distance"),
                    format!("{} outside [10, 20000] m", b.distance),
                ));
            }
            pos(&format!("billboards[{i}].size"), b.size)?;
            fin(&format!("billboards[{i}].lateral"), b.lateral)?;
            fin(&format!("billboards[{i}].base"), b.base)?;
        }
        let p = &self.camera_path;
        if p.count == 0 {
            return Err(Error::invalid("camera_path.count", "need at least one camera"));
        }
        pos("camera_path.height", p.height)?;
        fin("camera_path.pitch_deg", p.pitch_deg)?;
        if p.pitch_deg.abs() >= 89.0 {
            return Err(Error::invalid("camera_path.pitch_deg", "must be within (-89, 89)"));
        }
        match p.kind {
            PathKind::Line => {
                if !(p.length.is_finite() && p.length >= 0.0) {
                    return Err(Error::invalid("camera_path.length", "must be non-negative"));
                }
            }
            PathKind::Arc => {
                pos("camera_path.arc_radius", p.arc_radius)?;
                pos("camera_path.arc_degrees", p.arc_degrees)?;
                fin("camera_path.arc_center", p.arc_center)?;
                if p.arc_degrees > 180.0 {
                    return Err(Error::invalid("camera_path.arc_degrees", "must be at most 180"));
                }
            }
        }
        if self.image.width == 0 || self.image.height == 0 {
            return Err(Error::invalid("image", "width and height must be positive"));
        }
        pos("image.fx", self.image.fx)?;
        for (i, s) in self.shifts.iter().enumerate() {
            if !(s.is_finite() && s.abs() <= super::MAX_LATERAL_SHIFT) {
                return Err(Error::invalid(format!("shifts[{i}]"), "must be within 10 m"));
            }
        }
        pos("far_threshold", self.far_threshold)?;
        if !(1..=8).contains(&self.supersample) {
            return Err(Error::invalid("supersample", "must be in 1..=8"));
        }
        Ok(())
    }
}

/// Environment color for directions that hit nothing. A polynomial of
/// degree two in the direction, so SH of degree two represent it exactly.
pub fn env_color(d: &Vec3) -> [f64; 3] {
    [
        (0.50 - 0.20 * d.z + 0.05 * d.x).clamp(0.0, 1.0),
        (0.55 - 0.05 * d.z + 0.03 * d.y).clamp(0.0, 1.0),
        (0.55 + 0.35 * d.z - 0.10 * d.z * d.z).clamp(0.0, 1.0),
    ]
}

#[derive(Clone, Debug, PartialEq)]
struct Quad {
    center: Vec3,
    /// Horizontal in-plane unit axis.
    u_axis: Vec3,
    normal: Vec3,
    half: f64,
    texture: u32,
    colors: [[f64; 3]; 2],
}

/// First surface hit by a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Hit {
    Road { t: f64 },
    Billboard { t: f64, index: usize },
    Sky,
}

impl Hit {
    pub fn distance(&self) -> f64 {
        match *self {
            Hit::Road { t } | Hit::Billboard { t, .. } => t,
            Hit::Sky => f64::INFINITY,
        }
    }
}

/// Analytic ground truth for a [`SyntheticSceneSpec`]; renders by ray casting.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub spec: SyntheticSceneSpec,
    quads: Vec<Quad>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(73_856_093) ^ (iy as u64).wrapping_mul(19_349_663)));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Smooth value noise in `[-1, 1]` with unit lattice spacing.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (s(x - fx), s(y - fy));
    let a = lattice(seed, ix, iy) * (1.0 - tx) + lattice(seed, ix + 1, iy) * tx;
    let b = lattice(seed, ix, iy + 1) * (1.0 - tx) + lattice(seed, ix + 1, iy + 1) * tx;
    a * (1.0 - ty) + b * ty
}

fn texture(id: u32, colors: &[[f64; 3]; 2], u: f64, v: f64) -> [f64; 3] {
    let [c0, c1] = colors;
    let t = match id % 4 {
        0 => (((u * 4.0).floor() + (v * 4.0).floor()) as i64 % 2) as f64,
        1 => ((v * 5.0).floor() as i64 % 2) as f64,
        2 => {
            let r = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
            ((r * 8.0).floor() as i64 % 2) as f64
        }
        _ => {
            let band = ((u + v) * 3.0).fract() < 0.3;
            if band {
                1.0
            } else {
                0.25 * u
            }
        }
    };
    [
        c0[0] * (1.0 - t) + c1[0] * t,
        c0[1] * (1.0 - t) + c1[1] * t,
        c0[2] * (1.0 - t) + c1[2] * t,
    ]
}

impl GroundTruth {
    pub fn new(spec: &SyntheticSceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let quads = spec
            .billboards
            .iter()
            .map(|b| {
                let mut color = || [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
                let colors = [color(), color()];
                let (u_axis, normal) = match b.facing {
                    Facing::Camera => (Vec3::y(), -Vec3::x()),
                    Facing::Side if b.lateral > 0.0 => (Vec3::x(), -Vec3::y()),
                    Facing::Side => (Vec3::x(), Vec3::y()),
                };
                Quad {
                    center: Vec3::new(b.distance, b.lateral, b.base + 0.5 * b.size),
                    u_axis,
                    normal,
                    half: 0.5 * b.size,
                    texture: b.texture_id,
                    colors,
                }
            })
            .collect();
        Ok(GroundTruth {
            spec: spec.clone(),
            quads,
        })
    }

    pub fn road_height(&self, x: f64) -> f64 {
        self.spec.road.grade * x
    }

    /// `[x0, x1, y0, y1]` of the road quad.
    pub fn road_bounds(&self) -> [f64; 4] {
        let r = &self.spec.road;
        [r.start, r.start + r.length, -r.half_width, r.half_width]
    }

    pub fn road_color(&self, x: f64, y: f64) -> [f64; 3] {
        let r = &self.spec.road;
        let n = value_noise(self.spec.seed, x / 1.5, y / 1.5);
        let fine = value_noise(self.spec.seed ^ 0x5151, x / 0.6, y / 0.6);
        let g = 0.32 + 0.07 * n + 0.03 * fine;
        let mut c = [g, g, g + 0.02];
        let dash = (x / r.marking_period).rem_euclid(1.0) < 0.5;
        if y.abs() < 0.15 && dash {
            c = [0.9, 0.9, 0.85];
        }
        let edge = r.half_width - y.abs();
        if (0.15..0.4).contains(&edge) {
            c = [0.92, 0.86, 0.45];
        }
        c
    }

    /// Billboard index, its quad center, horizontal axis, normal and half size.
    pub fn billboard_frame(&self, index: usize) -> (Vec3, Vec3, Vec3, f64) {
        let q = &self.quads[index];
        (q.center, q.u_axis, q.normal, q.half)
    }

    pub fn billboard_count(&self) -> usize {
        self.quads.len()
    }

    /// True when billboard `index` lies beyond the far-field threshold.
    pub fn is_far(&self, index: usize) -> bool {
        self.spec.billboards[index].distance > self.spec.far_threshold
    }

    pub fn billboard_color(&self, index: usize, p: &Vec3) -> [f64; 3] {
        let q = &self.quads[index];
        let rel = p - q.center;
        let u = (rel.dot(&q.u_axis) / q.half + 1.0) * 0.5;
        let v = 1.0 - (rel.z / q.half + 1.0) * 0.5;
        texture(q.texture, &q.colors, u.clamp(0.0, 1.0), v.clamp(0.0, 1.0))
    }

    /// Nearest surface hit along a ray with positive parameter.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3) -> Hit {
        let mut best = Hit::Sky;
        let mut best_t = f64::INFINITY;
        let g = self.spec.road.grade;
        let denom = dir.z - g * dir.x;
        if denom.abs() > 1e-12 {
            let t = (g * origin.x - origin.z) / denom;
            if t > 1e-9 {
                let p = origin + dir * t;
                let [x0, x1, y0, y1] = self.road_bounds();
                if p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1 {
                    best = Hit::Road { t };
                    best_t = t;
                }
            }
        }
        for (index, q) in self.quads.iter().enumerate() {
            let denom = dir.dot(&q.normal);
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = (q.center - origin).dot(&q.normal) / denom;
            if t <= 1e-9 || t >= best_t {
                continue;
            }
            let rel = origin + dir * t - q.center;
            if rel.dot(&q.u_axis).abs() <= q.half && rel.z.abs() <= q.half {
                best = Hit::Billboard { t, index };
                best_t = t;
            }
        }
        best
    }

    /// Color seen along a ray.
    pub fn shade(&self, origin: &Vec3, dir: &Vec3) -> [f64; 3] {
        match self.cast(origin, dir) {
            Hit::Road { t } => {
                let p = origin + dir * t;
                self.road_color(p.x, p.y)
            }
            Hit::Billboard { t, index } => self.billboard_color(index, &(origin + dir * t)),
            Hit::Sky => env_color(dir),
        }
    }

    /// True when nothing blocks the segment from `origin` to `p`.
    pub fn visible_from(&self, origin: &Vec3, p: &Vec3) -> bool {
        let d = p - origin;
        let dist = d.norm();
        if dist < 1e-9 {
            return true;
        }
        self.cast(origin, &(d / dist)).distance() >= dist * (1.0 - 1e-6) - 1e-6
    }

    /// Supersampled color image plus road and sky masks from center rays.
    pub fn render(&self, cam: &PinholeCamera) -> (Image, Mask, Mask) {
        let (w, h) = (cam.width, cam.height);
        let ss = self.spec.supersample;
        let origin = cam.center();
        let rows: Vec<(Vec<f64>, Vec<bool>, Vec<bool>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut rgb = Vec::with_capacity(w * 3);
                let mut road = Vec::with_capacity(w);
                let mut sky = Vec::with_capacity(w);
                for x in 0..w {
                    let mut acc = [0.0; 3];
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let u = x as f64 + (sx as f64 + 0.5) / ss as f64;
                            let v = y as f64 + (sy as f64 + 0.5) / ss as f64;
                            let c = self.shade(&origin, &cam.pixel_ray(u, v));
                            (0..3).for_each(|k| acc[k] += c[k]);
                        }
                    }
                    let n = (ss * ss) as f64;
                    rgb.extend(acc.iter().map(|c| c / n));
                    let hit = self.cast(&origin, &cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5));
                    road.push(matches!(hit, Hit::Road { .. }));
                    sky.push(matches!(hit, Hit::Sky));
                }
                (rgb, road, sky)
            })
            .collect();
        let mut image = Image::new(w, h);
        let mut road_mask = Mask::new(w, h);
        let mut sky_mask = Mask::new(w, h);
        for (y, (rgb, road, sky)) in rows.into_iter().enumerate() {
            image.data[y * w * 3..(y + 1) * w * 3].copy_from_slice(&rgb);
            road_mask.data[y * w..(y + 1) * w].copy_from_slice(&road);
            sky_mask.data[y * w..(y + 1) * w].copy_from_slice(&sky);
        }
        (image, road_mask, sky_mask)
    }

    /// A fully rendered view for an arbitrary camera.
    pub fn render_view(&self, id: usize, camera: PinholeCamera, is_extrapolated: bool, timestamp: f64) -> CameraView {
        let (image, road_mask, sky_mask) = self.render(&camera);
        CameraView {
            id,
            camera,
            image,
            road_mask,
            sky_mask,
            is_extrapolated,
            timestamp,
        }
    }

    fn make_camera(&self, eye: Vec3, heading: Vec3) -> PinholeCamera {
        let p = self.spec.camera_path.pitch_deg.to_radians();
        let forward = heading * p.cos() - Vec3::z() * p.sin();
        let pose = Pose::look_at(eye, eye + forward, Vec3::z());
        let im = &self.spec.image;
        PinholeCamera::centered(im.fx, im.width, im.height, pose)
    }

    /// Cameras along the recorded trajectory.
    pub fn trajectory(&self) -> Vec<PinholeCamera> {
        let p = &self.spec.camera_path;
        let n = p.count;
        let frac = |i: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        (0..n)
            .map(|i| match p.kind {
                PathKind::Line => {
                    let x = p.length * frac(i);
                    let eye = Vec3::new(x, 0.0, self.road_height(x) + p.height);
                    self.make_camera(eye, Vec3::x())
                }
                PathKind::Arc => {
                    let phi = (frac(i) - 0.5) * p.arc_degrees.to_radians();
                    let x = p.arc_center - p.arc_radius * phi.cos();
                    let y = p.arc_radius * phi.sin();
                    let eye = Vec3::new(x, y, self.road_height(x) + p.height);
                    let heading = Vec3::new(p.arc_center - x, -y, 0.0).normalize();
                    self.make_camera(eye, heading)
                }
            })
            .collect()
    }

    /// Probe cameras rotated 180 degrees about a vertical axis: through the
    /// arc center for arc paths, through each camera center for lines.
    pub fn opposite_probes(&self) -> Vec<PinholeCamera> {
        let flip = Mat3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        let p = &self.spec.camera_path;
        self.trajectory()
            .into_iter()
            .map(|mut cam| {
                if p.kind == PathKind::Arc {
                    let c = Vec3::new(p.arc_center, 0.0, 0.0);
                    let t = cam.pose.translation;
                    let mut moved = flip * (t - c) + c;
                    moved.z = self.road_height(moved.x) + p.height;
                    cam.pose.translation = moved;
                }
                cam.pose.rotation = flip * cam.pose.rotation;
                cam
            })
            .collect()
    }
}

/// Builds the analytic scene and renders every trajectory view.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<(GroundTruth, Vec<CameraView>)> {
    let truth = GroundTruth::new(spec)?;
    let views = truth
        .trajectory()
        .into_iter()
        .enumerate()
        .map(|(i, cam)| truth.render_view(i, cam, false, 0.1 * i as f64))
        .collect();
    Ok((truth, views))
}
