use nalgebra::{Matrix2, Matrix2x3};

use crate::math::{Mat3, Vec3};
use crate::scene::PinholeCamera;

use super::RasterConfig;

/// EWA projection of one Gaussian, with the intermediates the backward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub mean2d: [f64; 2],
    /// `[a, b, c]` of `[[a, b], [b, c]]`, dilation included.
    pub cov2d: [f64; 3],
    pub conic: [f64; 3],
    pub depth: f64,
    /// Mahalanobis radius of the cutoff times the largest standard deviation, pixels.
    pub radius: f64,
    /// Camera-frame mean.
    pub t: Vec3,
}

/// Projects a Gaussian with world mean `mean` and covariance factor `m`
/// (`Sigma = m m^T`). Returns `None` when culled: at or behind the near
/// plane, off screen beyond its cutoff radius, or with a non-positive-definite
/// footprint.
pub fn project_gaussian(mean: &Vec3, m: &Mat3, cam: &PinholeCamera, cfg: &RasterConfig) -> Option<Projection> {
    let t = cam.pose.world_to_camera(mean);
    if !(t.z > cfg.z_near) {
        return None;
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    let (nx, ny) = (t.x / t.z, t.y / t.z);
    let g = cfg.guard_band;
    if nx < -g * cam.cx / cam.fx || nx > g * (w - cam.cx) / cam.fx || ny < -g * cam.cy / cam.fy || ny > g * (h - cam.cy) / cam.fy {
        return None;
    }
    let tmat = jacobian(&t, cam) * cam.pose.rotation.transpose();
    let sigma = m * m.transpose();
    let cov = tmat * sigma * tmat.transpose();
    let (a, b, c) = (cov[(0, 0)] + cfg.dilation, cov[(0, 1)], cov[(1, 1)] + cfg.dilation);
    let det = a * c - b * b;
    if !(det > 0.0 && a > 0.0) || !det.is_finite() {
        return None;
    }
    let mean2d = [cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy];
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = cfg.cutoff.sqrt() * lambda_max.sqrt();
    if mean2d[0] + radius < 0.0 || mean2d[0] - radius > w || mean2d[1] + radius < 0.0 || mean2d[1] - radius > h {
        return None;
    }
    Some(Projection {
        mean2d,
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: t.z,
        radius,
        t,
    })
}

fn jacobian(t: &Vec3, cam: &PinholeCamera) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz * iz,
    )
}

/// Gradient of the 2D covariance entries from conic gradients, as a
/// symmetric matrix (`G_cov = -A G_A A`).
pub(crate) fn conic_backward(conic: &[f64; 3], d_conic: &[f64; 3]) -> Matrix2<f64> {
    let a = Matrix2::new(conic[0], conic[1], conic[1], conic[2]);
    // the scalar off-diagonal appears in both entries of the matrix
    let ga = Matrix2::new(d_conic[0], 0.5 * d_conic[1], 0.5 * d_conic[1], d_conic[2]);
    -(a * ga * a)
}

/// Backpropagates through the projection. `g_cov` is the symmetric matrix
/// gradient of the 2D covariance. Returns world-mean and `m` gradients.
pub(crate) fn project_backward(
    proj: &Projection,
    m: &Mat3,
    cam: &PinholeCamera,
    d_mean2d: &[f64; 2],
    g_cov: &Matrix2<f64>,
) -> (Vec3, Mat3) {
    let t = &proj.t;
    let w = cam.pose.rotation.transpose();
    let j = jacobian(t, cam);
    let tmat = j * w;
    let sigma = m * m.transpose();
    let g_t = 2.0 * g_cov * tmat * sigma;
    let g_sigma = tmat.transpose() * g_cov * tmat;
    let g_m = 2.0 * g_sigma * m;
    let g_j = g_t * w.transpose();
    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_t = Vec3::zeros();
    // mean2d
    d_t.x += d_mean2d[0] * fx * iz;
    d_t.y += d_mean2d[1] * fy * iz;
    d_t.z += -d_mean2d[0] * fx * t.x * iz2 - d_mean2d[1] * fy * t.y * iz2;
    // Jacobian entries
    d_t.x += g_j[(0, 2)] * (-fx * iz2);
    d_t.y += g_j[(1, 2)] * (-fy * iz2);
    d_t.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * t.x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * t.y * iz3);
    (w.transpose() * d_t, g_m)
}
