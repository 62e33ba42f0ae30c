//! Far-field Gaussians: a per-primitive log factor `f` that scales position
//! (relative to the node anchor) and size together, `mu' = e^f mu`,
//! `s' = e^f s`. Seen from the anchor the angular footprint is unchanged, so
//! depth can move without disturbing the image already explained.

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Bound on `|f|`; `e^12` is far beyond any scene depth ratio.
pub const MAX_LOG_FACTOR: f64 = 12.0;

#[inline]
pub fn clamp_log_factor(f: f64) -> f64 {
    f.clamp(-MAX_LOG_FACTOR, MAX_LOG_FACTOR)
}

/// Node-local position and linear scales after applying the factor.
pub fn apply_ffg(mu: &Vec3, scales: &[f64], f: f64) -> (Vec3, Vec<f64>) {
    let k = clamp_log_factor(f).exp();
    (mu * k, scales.iter().map(|s| s * k).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfgGrads {
    pub grad_mu: Vec3,
    pub grad_s: Vec<f64>,
    pub grad_f: f64,
}

/// Chain rule through [`apply_ffg`] given the transformed values `mu'`, `s'`
/// and the factor `f` that produced them.
pub fn ffg_backward(
    grad_mu_out: &Vec3,
    grad_s_out: &[f64],
    mu_out: &Vec3,
    s_out: &[f64],
    f: f64,
) -> Result<FfgGrads> {
    if grad_s_out.len() != s_out.len() {
        return Err(Error::Shape(format!(
            "scale gradient has {} entries, scales have {}",
            grad_s_out.len(),
            s_out.len()
        )));
    }
    let k = clamp_log_factor(f).exp();
    let grad_f =
        grad_mu_out.dot(mu_out) + grad_s_out.iter().zip(s_out).map(|(g, s)| g * s).sum::<f64>();
    Ok(FfgGrads {
        grad_mu: grad_mu_out * k,
        grad_s: grad_s_out.iter().map(|g| g * k).collect(),
        grad_f,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_factor_is_identity() {
        let mu = Vec3::new(1.0, -2.0, 3.5);
        let (m, s) = apply_ffg(&mu, &[0.1, 0.2, 0.3], 0.0);
        assert_eq!(m, mu);
        assert_eq!(s, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn ln2_doubles() {
        let (m, s) = apply_ffg(&Vec3::new(1.0, 2.0, 3.0), &[0.1, 0.1, 0.1], 2f64.ln());
        assert!((m - Vec3::new(2.0, 4.0, 6.0)).norm() < 1e-12);
        assert!(s.iter().all(|v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn derivative_wrt_factor_is_output() {
        let mu = Vec3::new(0.5, -1.5, 20.0);
        let s = [0.3, 0.7, 0.2];
        let f = 0.4;
        let h = 1e-6;
        let (mp, sp) = apply_ffg(&mu, &s, f + h);
        let (mm, sm) = apply_ffg(&mu, &s, f - h);
        let (m0, s0) = apply_ffg(&mu, &s, f);
        for i in 0..3 {
            let fd = (mp[i] - mm[i]) / (2.0 * h);
            assert!((fd - m0[i]).abs() / m0[i].abs() < 1e-6);
            let fd = (sp[i] - sm[i]) / (2.0 * h);
            assert!((fd - s0[i]).abs() / s0[i] < 1e-6);
        }
    }

    #[test]
    fn zero_upstream_gives_zero() {
        let g = ffg_backward(&Vec3::zeros(), &[0.0; 3], &Vec3::new(1.0, 2.0, 3.0), &[1.0; 3], 0.7)
            .unwrap();
        assert_eq!(g.grad_f, 0.0);
        assert_eq!(g.grad_mu, Vec3::zeros());
        assert!(g.grad_s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_factor_passes_gradient_through() {
        let gm = Vec3::new(0.3, -0.2, 0.9);
        let g = ffg_backward(&gm, &[0.1, 0.2], &Vec3::new(1.0, 1.0, 1.0), &[0.5, 0.5], 0.0)
            .unwrap();
        assert_eq!(g.grad_mu, gm);
    }

    #[test]
    fn shape_mismatch_is_error() {
        assert!(ffg_backward(&Vec3::zeros(), &[0.0; 2], &Vec3::zeros(), &[1.0; 3], 0.0).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_of_quadratic_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mu = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(1.0..50.0));
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..2.0)).collect();
            let f: f64 = rng.random_range(-2.0..2.0);
            let tm = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let ts: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let loss = |mu: &Vec3, s: &[f64], f: f64| {
                let (m, sc) = apply_ffg(mu, s, f);
                (m - tm).norm_squared() + sc.iter().zip(&ts).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            };
            let (m, sc) = apply_ffg(&mu, &s, f);
            let gm = 2.0 * (m - tm);
            let gs: Vec<f64> = sc.iter().zip(&ts).map(|(a, b)| 2.0 * (a - b)).collect();
            let g = ffg_backward(&gm, &gs, &m, &sc, f).unwrap();
            let h = 1e-6;
            let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            let fd = (loss(&mu, &s, f + h) - loss(&mu, &s, f - h)) / (2.0 * h);
            assert!(rel(fd, g.grad_f) < 1e-5);
            for i in 0..3 {
                let mut p = mu;
                p[i] += h;
                let mut q = mu;
                q[i] -= h;
                let fd = (loss(&p, &s, f) - loss(&q, &s, f)) / (2.0 * h);
                assert!(rel(fd, g.grad_mu[i]) < 1e-5);
                let mut sp = s.clone();
                sp[i] += h;
                let mut sq = s.clone();
                sq[i] -= h;
                let fd = (loss(&mu, &sp, f) - loss(&mu, &sq, f)) / (2.0 * h);
                assert!(rel(fd, g.grad_s[i]) < 1e-5);
            }
        }
    }

    proptest! {
        #[test]
        fn factors_compose_additively(
            x in -100.0f64..100.0, y in -100.0f64..100.0, z in -100.0f64..100.0,
            s in 0.01f64..10.0, f1 in -5.0f64..5.0, f2 in -5.0f64..5.0,
        ) {
            let mu = Vec3::new(x, y, z);
            let (m1, s1) = apply_ffg(&mu, &[s], f1);
            let (m12, s12) = apply_ffg(&m1, &s1, f2);
            let (m, sc) = apply_ffg(&mu, &[s], f1 + f2);
            prop_assert!((m12 - m).norm() <= 1e-12 * m.norm().max(1.0));
            prop_assert!((s12[0] - sc[0]).abs() <= 1e-12 * sc[0].max(1.0));
        }
    }
}
