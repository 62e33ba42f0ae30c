//! Real spherical harmonics and the view-direction density built on them.
//!
//! Basis ordering is `(l, m)` lexicographic with `m` running from `-l` to
//! `l`, i.e. flat index `l*l + l + m`. The basis is orthonormal on the unit
//! sphere and carries no Condon-Shortley phase, so `Y_{1,-1}`, `Y_{1,0}` and
//! `Y_{1,1}` are positive multiples of `y`, `z` and `x`.

mod basis;
mod density;
mod fit;
mod kde;

pub use basis::{
    eval_sh_basis, sh_basis, sh_basis_unit, sh_basis_with_jacobian, sh_len, Direction, MAX_SH_DEGREE,
};
pub use density::{
    density_and_grad_from_basis, density_from_basis, sh_density, sh_density_grad,
    ShCoefficients,
};
pub use fit::{fit_sh_to_dirs, mean_log_likelihood};
pub use kde::{kde_oracle, Kernel};

use crate::math::Vec3;

/// Spherical Fibonacci point set; each point carries quadrature weight `4*pi/n`.
pub fn fibonacci_sphere(n: usize) -> Vec<Direction> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Direction::normalize(Vec3::new(r * phi.cos(), r * phi.sin(), z))
                .expect("fibonacci point is non-zero")
        })
        .collect()
}
