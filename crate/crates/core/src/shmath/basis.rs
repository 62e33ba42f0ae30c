use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

pub const MAX_SH_DEGREE: usize = 8;

/// Tolerance on `|v|` inside which inputs are silently renormalized.
const NORM_TOLERANCE: f64 = 0.01;

/// A unit 3-vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction(Vec3);

impl Direction {
    /// Accepts vectors within 1% of unit length and renormalizes them.
    pub fn new(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NonUnitDirection { norm: n });
        }
        Ok(Direction(v / n))
    }

    /// Normalizes any finite non-zero vector.
    pub fn normalize(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::NonUnitDirection { norm: n });
        }
        Ok(Direction(v / n))
    }

    pub fn vec(&self) -> &Vec3 {
        &self.0
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }
    pub fn y(&self) -> f64 {
        self.0.y
    }
    pub fn z(&self) -> f64 {
        self.0.z
    }
}

impl std::ops::Neg for Direction {
    type Output = Direction;
    fn neg(self) -> Direction {
        Direction(-self.0)
    }
}

pub const fn sh_len(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Arithmetic needed by the Legendre recursion, so one routine serves both
/// plain values and forward-mode derivatives.
trait ShScalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn constant(c: f64) -> Self;
    fn scale(self, c: f64) -> Self;
}

impl ShScalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
}

/// Value plus gradient with respect to `(x, y, z)`.
#[derive(Clone, Copy, Debug)]
struct Dual3 {
    v: f64,
    d: [f64; 3],
}

impl Add for Dual3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual3 {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual3 {
            v: self.v - o.v,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1], self.d[2] - o.d[2]],
        }
    }
}

impl Mul for Dual3 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual3 {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
                self.d[2] * o.v + self.v * o.d[2],
            ],
        }
    }
}

impl ShScalar for Dual3 {
    fn constant(c: f64) -> Self {
        Dual3 { v: c, d: [0.0; 3] }
    }
    fn scale(self, c: f64) -> Self {
        Dual3 {
            v: self.v * c,
            d: [self.d[0] * c, self.d[1] * c, self.d[2] * c],
        }
    }
}

fn normalization(l: usize, m: usize) -> f64 {
    // (l-m)!/(l+m)! as a running product keeps this exact enough for l <= 8.
    let mut ratio = 1.0;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

/// Polynomial form of the basis on `(x, y, z)`; exact only on the unit sphere.
fn basis_poly<T: ShScalar>(degree: usize, x: T, y: T, z: T, out: &mut [T]) {
    debug_assert!(out.len() >= sh_len(degree));
    // Re/Im of (x + iy)^m.
    let mut cm = T::constant(1.0);
    let mut sm = T::constant(0.0);
    let mut double_fact = 1.0;
    for m in 0..=degree {
        if m > 0 {
            let c_next = x * cm - y * sm;
            let s_next = x * sm + y * cm;
            cm = c_next;
            sm = s_next;
            double_fact *= (2 * m - 1) as f64;
        }
        // P~_l^m for l = m, m+1, ...
        let mut p_prev2 = T::constant(0.0);
        let mut p_prev = T::constant(double_fact);
        for l in m..=degree {
            let p = if l == m {
                p_prev
            } else if l == m + 1 {
                z * p_prev.scale((2 * m + 1) as f64)
            } else {
                (z * p_prev.scale((2 * l - 1) as f64) - p_prev2.scale((l + m - 1) as f64))
                    .scale(1.0 / (l - m) as f64)
            };
            if l > m {
                p_prev2 = p_prev;
                p_prev = p;
            }
            let k = normalization(l, m);
            let base = l * l + l;
            if m == 0 {
                out[base] = p.scale(k);
            } else {
                let kk = std::f64::consts::SQRT_2 * k;
                out[base + m] = (p * cm).scale(kk);
                out[base - m] = (p * sm).scale(kk);
            }
        }
    }
}

/// Fills `out[..(L+1)^2]` with the basis at `dir`.
pub fn sh_basis(degree: usize, dir: &Direction, out: &mut [f64]) {
    assert!(degree <= MAX_SH_DEGREE, "SH degree {degree} exceeds {MAX_SH_DEGREE}");
    basis_poly(degree, dir.x(), dir.y(), dir.z(), out);
}

/// Basis at a vector assumed to be unit length (no check).
#[inline]
pub fn sh_basis_unit(degree: usize, u: &Vec3, out: &mut [f64]) {
    basis_poly(degree, u.x, u.y, u.z, out);
}

/// Basis values at `v / |v|` together with their Jacobian with respect to the
/// un-normalized vector `v` (one row per basis function).
pub fn sh_basis_with_jacobian(degree: usize, v: &Vec3) -> (Vec<f64>, Vec<[f64; 3]>) {
    assert!(degree <= MAX_SH_DEGREE, "SH degree {degree} exceeds {MAX_SH_DEGREE}");
    let n = v.norm();
    let u = v / n;
    let var = |val: f64, i: usize| {
        let mut d = [0.0; 3];
        d[i] = 1.0;
        Dual3 { v: val, d }
    };
    let mut out = vec![Dual3::constant(0.0); sh_len(degree)];
    basis_poly(degree, var(u.x, 0), var(u.y, 1), var(u.z, 2), &mut out);
    // d(v/|v|)/dv = (I - u u^T) / |v|
    let proj = (Mat3::identity() - u * u.transpose()) / n;
    let values = out.iter().map(|d| d.v).collect();
    let jac = out
        .iter()
        .map(|d| {
            let g = proj.transpose() * Vec3::new(d.d[0], d.d[1], d.d[2]);
            [g.x, g.y, g.z]
        })
        .collect();
    (values, jac)
}

/// Real orthonormal SH basis values for all `(l, m)` with `l <= degree`.
///
/// Inputs within 1% of unit length are renormalized; anything else is rejected.
pub fn eval_sh_basis(degree: usize, v: &Vec3) -> Result<Vec<f64>> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::invalid(
            "degree",
            format!("{degree} exceeds maximum {MAX_SH_DEGREE}"),
        ));
    }
    let dir = Direction::new(*v)?;
    let mut out = vec![0.0; sh_len(degree)];
    sh_basis(degree, &dir, &mut out);
    Ok(out)
}
