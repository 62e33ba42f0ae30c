use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::basis::Direction;

/// Directional kernels normalized so each integrates to one on the sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel {
    /// `(k+1)/(2 pi) * max(0, cos)^k`
    ClampedCosinePower(f64),
    /// von Mises-Fisher with concentration `kappa > 0`.
    VonMisesFisher(f64),
}

impl Kernel {
    pub fn eval(&self, cos: f64) -> f64 {
        match *self {
            Kernel::ClampedCosinePower(k) => (k + 1.0) / (2.0 * PI) * cos.max(0.0).powf(k),
            Kernel::VonMisesFisher(kappa) => {
                // kappa / (4 pi sinh kappa) * e^{kappa cos}, rewritten to avoid overflow.
                kappa / (2.0 * PI * (1.0 - (-2.0 * kappa).exp())) * (kappa * (cos - 1.0)).exp()
            }
        }
    }
}

/// Empirical mixture density `(1/N) sum_i K(v, v_i)`.
pub fn kde_oracle(dirs: &[Direction], kernel: Kernel, v: &Direction) -> Result<f64> {
    if dirs.is_empty() {
        return Err(Error::Empty("direction set"));
    }
    let sum: f64 = dirs
        .iter()
        .map(|d| kernel.eval(d.vec().dot(v.vec()).clamp(-1.0, 1.0)))
        .sum();
    Ok(sum / dirs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::shmath::fibonacci_sphere;

    #[test]
    fn vmf_peak_matches_closed_form() {
        let d = Direction::normalize(Vec3::new(0.2, 0.5, 0.7)).unwrap();
        let p = kde_oracle(&[d], Kernel::VonMisesFisher(10.0), &d).unwrap();
        let kappa: f64 = 10.0;
        let closed = kappa / (4.0 * PI * kappa.sinh()) * kappa.exp();
        assert!((p - closed).abs() < 1e-12);
        // 10/(4 pi) * e^10 / sinh 10
        assert!((p - 1.591_549_431).abs() < 1e-8, "{p}");
    }

    #[test]
    fn kernels_integrate_to_one() {
        let pts = fibonacci_sphere(20_000);
        let w = 4.0 * PI / pts.len() as f64;
        let c = Direction::normalize(Vec3::new(0.3, -0.2, 0.9)).unwrap();
        for kernel in [
            Kernel::VonMisesFisher(5.0),
            Kernel::VonMisesFisher(20.0),
            Kernel::ClampedCosinePower(1.0),
            Kernel::ClampedCosinePower(8.0),
        ] {
            let total: f64 = pts.iter().map(|p| w * kde_oracle(&[c], kernel, p).unwrap()).sum();
            assert!((total - 1.0).abs() < 2e-3, "{kernel:?}: {total}");
        }
    }

    #[test]
    fn uniform_directions_give_uniform_density() {
        let dirs = fibonacci_sphere(10_000);
        let target = 1.0 / (4.0 * PI);
        for v in fibonacci_sphere(50) {
            for kernel in [Kernel::VonMisesFisher(10.0), Kernel::ClampedCosinePower(4.0)] {
                let p = kde_oracle(&dirs, kernel, &v).unwrap();
                assert!((p - target).abs() < 0.05 * target, "{kernel:?}: {p}");
            }
        }
    }

    #[test]
    fn antipodal_pair_is_symmetric() {
        let d = Direction::normalize(Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let dirs = [d, -d];
        let v = Direction::normalize(Vec3::new(1.0, 0.0, 0.0)).unwrap();
        for kernel in [Kernel::VonMisesFisher(3.0), Kernel::ClampedCosinePower(2.0)] {
            let a = kde_oracle(&dirs, kernel, &v).unwrap();
            let b = kde_oracle(&dirs, kernel, &-v).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_set_is_error() {
        let v = Direction::normalize(Vec3::z()).unwrap();
        assert!(kde_oracle(&[], Kernel::VonMisesFisher(1.0), &v).is_err());
    }
}
