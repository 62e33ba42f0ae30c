use crate::error::{Error, Result};

use super::basis::{sh_basis, sh_len, Direction, MAX_SH_DEGREE};
use super::density::ShCoefficients;

/// Mean log-density of `dirs` under the SH density with coefficients `a`.
pub fn mean_log_likelihood(a: &ShCoefficients, dirs: &[Direction]) -> f64 {
    let k = a.as_slice().len();
    let mut buf = vec![0.0; k];
    let n2 = a.norm_sq();
    let mut total = 0.0;
    for d in dirs {
        sh_basis(a.degree(), d, &mut buf);
        let s: f64 = a.as_slice().iter().zip(&buf).map(|(x, y)| x * y).sum();
        total += (s * s / n2).ln();
    }
    total / dirs.len() as f64
}

/// Maximum-likelihood fit of an SH density to a set of observed directions.
///
/// Gradient ascent on `(1/N) sum log p(v_i)` starting from `e_0`, with the
/// step halved whenever it would decrease the objective. The result is
/// rescaled to unit norm.
pub fn fit_sh_to_dirs(
    dirs: &[Direction],
    degree: usize,
    steps: usize,
    lr: f64,
) -> Result<ShCoefficients> {
    if dirs.is_empty() {
        return Err(Error::Empty("direction set"));
    }
    if degree > MAX_SH_DEGREE {
        return Err(Error::invalid("degree", format!("{degree} > {MAX_SH_DEGREE}")));
    }
    let k = sh_len(degree);
    let n = dirs.len();
    let mut basis = vec![0.0; n * k];
    for (d, row) in dirs.iter().zip(basis.chunks_exact_mut(k)) {
        sh_basis(degree, d, row);
    }
    let objective = |a: &[f64]| -> f64 {
        let n2: f64 = a.iter().map(|x| x * x).sum();
        let mut total = 0.0;
        for row in basis.chunks_exact(k) {
            let s: f64 = a.iter().zip(row).map(|(x, y)| x * y).sum();
            total += (s * s / n2).ln();
        }
        total / n as f64
    };

    let mut a = vec![0.0; k];
    a[0] = 1.0;
    let mut value = objective(&a);
    let mut step = lr;
    let mut grad = vec![0.0; k];
    for it in 0..steps {
        if !value.is_finite() {
            return Err(Error::Diverged { step: it });
        }
        // d/da log(S^2/|a|^2) = 2 Y/S - 2 a/|a|^2, with |a| = 1 maintained.
        grad.iter_mut().for_each(|g| *g = 0.0);
        for row in basis.chunks_exact(k) {
            let s: f64 = a.iter().zip(row).map(|(x, y)| x * y).sum();
            for (g, y) in grad.iter_mut().zip(row) {
                *g += 2.0 * y / s;
            }
        }
        for (g, ak) in grad.iter_mut().zip(&a) {
            *g = *g / n as f64 - 2.0 * ak;
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !gnorm.is_finite() {
            return Err(Error::Diverged { step: it });
        }
        if gnorm < 1e-10 {
            break;
        }
        loop {
            let mut cand: Vec<f64> = a.iter().zip(&grad).map(|(x, g)| x + step * g).collect();
            let cn = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            cand.iter_mut().for_each(|x| *x /= cn);
            let cv = objective(&cand);
            if cv.is_finite() && cv >= value {
                a = cand;
                value = cv;
                step = (step * 1.2).min(lr * 10.0);
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return ShCoefficients::new(degree, a);
            }
        }
    }
    ShCoefficients::new(degree, a)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::math::Vec3;
    use crate::shmath::{fibonacci_sphere, sh_density};

    #[test]
    fn concentrated_directions_fit_a_peak() {
        let up = Direction::normalize(Vec3::z()).unwrap();
        let dirs = vec![up; 50];
        let a = fit_sh_to_dirs(&dirs, 3, 500, 0.1).unwrap();
        let p_up = sh_density(&a, &up).unwrap();
        let p_down = sh_density(&a, &-up).unwrap();
        assert!(p_up > 10.0 * p_down, "{p_up} vs {p_down}");
        assert!((a.norm_sq() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_directions_stay_near_uniform() {
        let dirs = fibonacci_sphere(2000);
        let a = fit_sh_to_dirs(&dirs, 3, 300, 0.1).unwrap();
        let probes = fibonacci_sphere(1000);
        let vals: Vec<f64> = probes.iter().map(|p| sh_density(&a, p).unwrap()).collect();
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        let min = vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 1.5, "{max} / {min}");
    }

    #[test]
    fn degree_zero_fit_is_uniform() {
        let dirs = vec![Direction::normalize(Vec3::new(1.0, 2.0, 3.0)).unwrap(); 5];
        let a = fit_sh_to_dirs(&dirs, 0, 50, 0.1).unwrap();
        assert!((a.as_slice()[0].abs() - 1.0).abs() < 1e-12);
        let p = sh_density(&a, &dirs[0]).unwrap();
        assert!((p - 1.0 / (4.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn empty_input_is_error() {
        assert!(fit_sh_to_dirs(&[], 2, 10, 0.1).is_err());
    }
}
