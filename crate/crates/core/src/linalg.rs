//! Projections onto atom spans and spectral quantities of (sub-)dictionaries.
//!
//! Coefficients on a support I are obtained from the S×S normal equations
//! Ψ_I*Ψ_I x = Ψ_I*y, solved through a symmetric eigendecomposition. Eigenvalues
//! below `PINV_RTOL · λ_max` are dropped, which gives the Moore–Penrose solution
//! for rank-deficient sub-dictionaries.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dictionary::{Dictionary, Support};
use crate::error::{check_dim, Result};

/// Relative eigenvalue cut-off of the pseudo-inverse.
pub const PINV_RTOL: f64 = 1e-10;

/// Minimum-norm least-squares solution of `gram · x = rhs` for a symmetric
/// positive semi-definite `gram`.
pub fn solve_normal_equations(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let n = gram.nrows();
    match n {
        0 => return DVector::zeros(0),
        1 => {
            let g = gram[(0, 0)];
            return if g > 0.0 {
                DVector::from_element(1, rhs[0] / g)
            } else {
                DVector::zeros(1)
            };
        }
        _ => {}
    }
    let eig = SymmetricEigen::new(gram.clone());
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = PINV_RTOL * lambda_max;
    // x = Σ_i (u_i·rhs / λ_i) u_i over retained eigenpairs
    let mut x = DVector::zeros(n);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff && lambda > 0.0 {
            let u = eig.eigenvectors.column(i);
            let w = u.dot(rhs) / lambda;
            x.axpy(w, &u, 1.0);
        }
    }
    x
}

/// Orthogonal projection of a signal onto the span of a set of atoms.
#[derive(Debug, Clone)]
pub struct Projection {
    /// P(Ψ_I) y
    pub projection: DVector<f64>,
    /// Ψ_I† y, one entry per support index in support order.
    pub coefficients: DVector<f64>,
}

impl Projection {
    pub fn residual(&self, y: &DVector<f64>) -> DVector<f64> {
        y - &self.projection
    }
}

pub fn project_onto_span(dico: &Dictionary, support: &Support, y: &DVector<f64>) -> Result<Projection> {
    check_dim(dico.dim(), y.len())?;
    let sub = dico.select(support);
    let rhs = sub.tr_mul(y);
    let gram = sub.tr_mul(&sub);
    let coefficients = solve_normal_equations(&gram, &rhs);
    let projection = &sub * &coefficients;
    Ok(Projection {
        projection,
        coefficients,
    })
}

/// ‖Ψ‖²₂,₂, the largest eigenvalue of ΨΨ* (equivalently Ψ*Ψ).
pub fn operator_norm_sq(dico: &Dictionary) -> f64 {
    let m = dico.matrix();
    let small = if dico.dim() <= dico.len() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    SymmetricEigen::new(small)
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// δ_I: the largest deviation of an eigenvalue of Ψ_I*Ψ_I from one.
pub fn isometry_constant(dico: &Dictionary, support: &Support) -> f64 {
    let sub = dico.select(support);
    let gram = sub.tr_mul(&sub);
    SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|l| (l - 1.0).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_dico() -> Dictionary {
        let m = DMatrix::from_fn(6, 5, |i, j| ((3 * i + 7 * j) as f64 * 0.37).sin() + 0.05 * j as f64);
        Dictionary::from_columns(m).unwrap()
    }

    #[test]
    fn orthonormal_atoms_give_inner_products() {
        let d = Dictionary::identity(4);
        let y = DVector::from_vec(vec![0.5, -1.0, 2.0, 3.0]);
        let s = Support::new(vec![2, 0], 4).unwrap();
        let p = project_onto_span(&d, &s, &y).unwrap();
        assert_abs_diff_eq!(p.coefficients[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.coefficients[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn signal_in_span_has_zero_residual() {
        let d = small_dico();
        let s = Support::new(vec![1, 3, 4], 5).unwrap();
        let y = 0.7 * d.atom(1) - 1.3 * d.atom(3) + 0.2 * d.atom(4);
        let p = project_onto_span(&d, &s, &y).unwrap();
        assert!(p.residual(&y).norm() <= 1e-8 * y.norm());
        assert_abs_diff_eq!(p.coefficients[1], -1.3, epsilon = 1e-8);
    }

    #[test]
    fn duplicate_atoms_use_pseudo_inverse() {
        let mut m = DMatrix::identity(3, 3);
        m.set_column(1, &DVector::from_vec(vec![1.0, 0.0, 0.0]));
        let d = Dictionary::new(m).unwrap();
        let s = Support::new(vec![0, 1], 3).unwrap();
        let y = DVector::from_vec(vec![2.0, 1.0, 0.0]);
        let p = project_onto_span(&d, &s, &y).unwrap();
        // minimum-norm split of the coefficient
        assert_abs_diff_eq!(p.coefficients[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.coefficients[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.projection[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(isometry_constant(&d, &s), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn orthonormal_basis_spectral_values() {
        let d = Dictionary::identity(5);
        assert_abs_diff_eq!(operator_norm_sq(&d), 1.0, epsilon = 1e-12);
        let s = Support::new(vec![0, 3, 4], 5).unwrap();
        assert_abs_diff_eq!(isometry_constant(&d, &s), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_gram_gives_zero_solution() {
        let g = DMatrix::zeros(2, 2);
        let x = solve_normal_equations(&g, &DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(x, DVector::zeros(2));
    }
}
