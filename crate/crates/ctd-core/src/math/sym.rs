//! Small symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(mat.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Factor `L` with `L L^T = mat` for a symmetric PSD matrix, built from the
/// spectral decomposition with negative eigenvalues clipped at zero. Unlike
/// a Cholesky factor this handles rank-deficient matrices (perfectly
/// correlated or deterministic components).
pub fn spectral_factor(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(mat.clone());
    let n = mat.nrows();
    let mut factor = eig.eigenvectors;
    for j in 0..n {
        let scale = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            factor[(i, j)] *= scale;
        }
    }
    factor
}

/// Projects a symmetric matrix to a nearby valid correlation matrix:
/// eigenvalues clipped to a small positive floor, then the diagonal is
/// rescaled back to one.
pub fn nearest_correlation(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(mat.clone());
    let n = mat.nrows();
    let mut lam = eig.eigenvalues.clone();
    for v in lam.iter_mut() {
        *v = v.max(1e-10);
    }
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose();
    let scale: Vec<f64> = (0..n).map(|i| out[(i, i)].sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] /= scale[i] * scale[j];
        }
    }
    // Symmetrize away round-off and pin the diagonal.
    for i in 0..n {
        out[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spectral_factor_reproduces_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let l = spectral_factor(&m);
        let back = &l * l.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(back[(i, j)], m[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spectral_factor_handles_rank_deficiency() {
        // Perfect correlation: rank one.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = spectral_factor(&m);
        let back = &l * l.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(back[(i, j)], 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn nearest_correlation_fixes_indefinite_input() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(min_eigenvalue(&m) < 0.0);
        let fixed = nearest_correlation(&m);
        assert!(min_eigenvalue(&fixed) >= -1e-12);
        for i in 0..3 {
            assert_abs_diff_eq!(fixed[(i, i)], 1.0, epsilon = 1e-12);
        }
    }
}
