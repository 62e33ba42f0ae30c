use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::math::{Mat3, Pose, Vec3};

/// Largest lateral shift accepted by [`lateral_shift`], meters.
pub const MAX_LATERAL_SHIFT: f64 = 10.0;

/// Pinhole intrinsics plus a camera-to-world pose (OpenCV axes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: Pose,
}

impl PinholeCamera {
    /// Camera with the principal point at the image center.
    pub fn centered(fx: f64, width: usize, height: usize, pose: Pose) -> Self {
        PinholeCamera {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            pose,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !(finite && self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera", "focal lengths must be finite and positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera", "zero image size"));
        }
        let r = &self.pose.rotation;
        if (r.transpose() * r - Mat3::identity()).norm() > 1e-6 {
            return Err(Error::invalid("camera.pose", "rotation is not orthonormal"));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        self.pose.center()
    }

    /// Unit world-space direction through pixel coordinates `(u, v)`.
    /// Pixel centers sit at half-integers.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        let d = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.pose.rotation * d).normalize()
    }

    /// Projects a world point to `(u, v, depth)`; `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<[f64; 3]> {
        let c = self.pose.world_to_camera(p);
        (c.z > 1e-9).then(|| [self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z])
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// One camera observation: intrinsics, pose, image and semantic masks.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraView {
    pub id: usize,
    pub camera: PinholeCamera,
    pub image: Image,
    pub road_mask: Mask,
    pub sky_mask: Mask,
    /// Set for views off the recorded trajectory.
    pub is_extrapolated: bool,
    pub timestamp: f64,
}

/// Moves the camera sideways by `offset` meters along its right axis
/// projected onto the ground plane (positive is to the right). Orientation
/// and intrinsics are kept; the image and masks are carried over from the
/// source view unchanged.
pub fn lateral_shift(view: &CameraView, offset: f64) -> Result<CameraView> {
    let mut out = view.clone();
    out.camera = shift_camera(&view.camera, offset)?;
    out.is_extrapolated |= offset != 0.0;
    Ok(out)
}

/// Camera-only form of [`lateral_shift`].
pub fn shift_camera(cam: &PinholeCamera, offset: f64) -> Result<PinholeCamera> {
    if !offset.is_finite() || offset.abs() > MAX_LATERAL_SHIFT {
        return Err(Error::invalid(
            "offset",
            format!("|{offset}| exceeds {MAX_LATERAL_SHIFT} m"),
        ));
    }
    let mut out = cam.clone();
    if offset != 0.0 {
        out.pose.translation += lateral_axis(&cam.pose) * offset;
    }
    Ok(out)
}

/// Unit vector along the camera's right axis with the vertical part removed.
pub fn lateral_axis(pose: &Pose) -> Vec3 {
    let right: Vec3 = pose.rotation.column(0).into();
    let flat = Vec3::new(right.x, right.y, 0.0);
    if flat.norm() < 1e-9 {
        // camera looking straight up or down; fall back to the image x axis
        return right;
    }
    flat.normalize()
}
