use crate::error::{Error, Result};

use super::basis::{sh_basis, sh_len, Direction, MAX_SH_DEGREE};

/// SH coefficient vector of degree `L`, length `(L+1)^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShCoefficients {
    degree: usize,
    coeffs: Vec<f64>,
}

impl ShCoefficients {
    pub fn new(degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if degree > MAX_SH_DEGREE {
            return Err(Error::invalid("degree", format!("{degree} > {MAX_SH_DEGREE}")));
        }
        if coeffs.len() != sh_len(degree) {
            return Err(Error::Shape(format!(
                "degree {degree} needs {} coefficients, got {}",
                sh_len(degree),
                coeffs.len()
            )));
        }
        Ok(ShCoefficients { degree, coeffs })
    }

    /// The DC-only vector `e_0`, which encodes the uniform density.
    pub fn uniform(degree: usize) -> Self {
        let mut coeffs = vec![0.0; sh_len(degree)];
        coeffs[0] = 1.0;
        ShCoefficients { degree, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum()
    }

    fn basis(&self, v: &Direction) -> Vec<f64> {
        let mut b = vec![0.0; self.coeffs.len()];
        sh_basis(self.degree, v, &mut b);
        b
    }
}

/// `|sum_k a_k Y_k|^2 / |a|^2` given precomputed basis values.
#[inline]
pub fn density_from_basis(a: &[f64], basis: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut n2 = 0.0;
    for (ak, yk) in a.iter().zip(basis) {
        s += ak * yk;
        n2 += ak * ak;
    }
    s * s / n2
}

/// Density and `dp/da` given precomputed basis values.
pub fn density_and_grad_from_basis(a: &[f64], basis: &[f64], grad: &mut [f64]) -> f64 {
    let mut s = 0.0;
    let mut n2 = 0.0;
    for (ak, yk) in a.iter().zip(basis) {
        s += ak * yk;
        n2 += ak * ak;
    }
    let c1 = 2.0 * s / n2;
    let c2 = 2.0 * s * s / (n2 * n2);
    for ((g, ak), yk) in grad.iter_mut().zip(a).zip(basis) {
        *g = c1 * yk - c2 * ak;
    }
    s * s / n2
}

/// View-direction density `|SH_a(v)|^2 / |a|^2`; integrates to one over the sphere.
pub fn sh_density(a: &ShCoefficients, v: &Direction) -> Result<f64> {
    if a.norm_sq() == 0.0 {
        return Err(Error::ZeroCoefficients);
    }
    Ok(density_from_basis(&a.coeffs, &a.basis(v)))
}

/// Gradient of [`sh_density`] with respect to the coefficients.
pub fn sh_density_grad(a: &ShCoefficients, v: &Direction) -> Result<Vec<f64>> {
    if a.norm_sq() == 0.0 {
        return Err(Error::ZeroCoefficients);
    }
    let mut g = vec![0.0; a.coeffs.len()];
    density_and_grad_from_basis(&a.coeffs, &a.basis(v), &mut g);
    Ok(g)
}
