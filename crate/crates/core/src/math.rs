//! Small linear-algebra helpers shared by the renderers.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Rotation matrix of the quaternion `(w, x, y, z)` after normalization.
pub fn quat_to_rotmat(q: &[f64; 4]) -> Mat3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized) quaternion.
pub fn quat_to_rotmat_backward(q: &[f64; 4], g: &Mat3) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)]
            + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gu = [dw, dx, dy, dz];
    let qn = [w, x, y, z];
    let dot: f64 = gu.iter().zip(qn.iter()).map(|(a, b)| a * b).sum();
    [
        (gu[0] - qn[0] * dot) / n,
        (gu[1] - qn[1] * dot) / n,
        (gu[2] - qn[2] * dot) / n,
        (gu[3] - qn[3] * dot) / n,
    ]
}

/// Quaternion `(w, x, y, z)` of the shortest rotation taking +z onto `n`.
pub fn quat_from_z_to(n: &Vec3) -> [f64; 4] {
    let n = n.normalize();
    let d = n.z;
    if d < -1.0 + 1e-12 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    // axis = z x n = (-n.y, n.x, 0); half-angle form avoids trig.
    let w = 1.0 + d;
    let q = [w, -n.y, n.x, 0.0];
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
    [q[0] / norm, q[1] / norm, q[2] / norm, 0.0]
}

pub fn quat_normalize(q: &mut [f64; 4]) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n > 0.0 && n.is_finite() {
        for c in q.iter_mut() {
            *c /= n;
        }
    } else {
        *q = [1.0, 0.0, 0.0, 0.0];
    }
}

/// Rigid camera-to-world transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Camera looking from `eye` towards `target` with OpenCV axes
    /// (x right, y down, z forward) in a z-up world.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::new(1.0, 0.0, 0.0));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        Pose {
            rotation: Mat3::from_columns(&[right, down, forward]),
            translation: eye,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn to_matrix4(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix4(m: &[[f64; 4]; 4]) -> Self {
        Pose {
            rotation: Mat3::new(
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ),
            translation: Vec3::new(m[0][3], m[1][3], m[2][3]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quat_backward_matches_finite_differences() {
        let q = [0.8, -0.3, 0.4, 0.2];
        let g = Mat3::new(0.3, -1.2, 0.5, 0.7, 0.1, -0.4, 0.9, 0.2, -0.6);
        let analytic = quat_to_rotmat_backward(&q, &g);
        let h = 1e-6;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fp = quat_to_rotmat(&qp).component_mul(&g).sum();
            let fm = quat_to_rotmat(&qm).component_mul(&g).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-7, "k={k} fd={fd} an={}", analytic[k]);
        }
    }

    #[test]
    fn z_alignment_quaternion_maps_z_to_target() {
        for n in [
            Vec3::new(-0.2, 0.0, 1.0),
            Vec3::new(0.3, -0.5, 0.8),
            Vec3::new(0.0, 0.0, 1.0),
        ] {
            let r = quat_to_rotmat(&quat_from_z_to(&n));
            let z = r * Vec3::z();
            assert!((z - n.normalize()).norm() < 1e-12);
        }
    }

    #[test]
    fn look_at_is_orthonormal_and_right_handed() {
        let p = Pose::look_at(Vec3::new(0.0, 0.0, 1.5), Vec3::new(10.0, 0.0, 0.0), Vec3::z());
        let r = p.rotation;
        assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        // right is -y when looking down +x
        assert!((r.column(0) - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }
}
