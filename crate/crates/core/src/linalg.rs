//! Small dense linear-algebra helpers shared by inference and the M-step.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{GscError, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative diagonal jitter used for a single Cholesky retry.
pub const JITTER_REL: f64 = 1e-9;

/// Relative eigenvalue floor below which a symmetric system is treated as singular.
pub const RANK_REL_TOL: f64 = 1e-12;

/// `log(sum(exp(xs)))`, `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn jitter_amount(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows().max(1) as f64;
    let mean_diag = m.trace() / d;
    if mean_diag.is_finite() && mean_diag > 0.0 {
        JITTER_REL * mean_diag
    } else {
        JITTER_REL
    }
}

/// Cholesky factorization with one jittered retry.
///
/// Returns the factor and the jitter that was added (0 when the first attempt
/// succeeded). A second failure is reported as a numerical error labelled `what`.
pub fn cholesky_with_jitter(
    m: &DMatrix<f64>,
    what: &str,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GscError::Numerical(format!("{what} has non-finite entries")));
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok((chol, 0.0));
    }
    let eps = jitter_amount(m);
    let mut jittered = m.clone();
    for i in 0..jittered.nrows() {
        jittered[(i, i)] += eps;
    }
    Cholesky::new(jittered)
        .map(|chol| (chol, eps))
        .ok_or_else(|| GscError::Numerical(format!("{what} is not positive definite")))
}

/// `log det` of the matrix factored by `chol`.
pub fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solves `X · B = A` for `X` with `B` symmetric positive semidefinite.
///
/// Uses a Cholesky solve when `B` is well conditioned. When the smallest
/// eigenvalue falls below `RANK_REL_TOL · max eigenvalue` an eigenvalue
/// thresholded pseudo-inverse is used instead and the indices whose diagonal
/// entry of `B` is below the same threshold are returned as degenerate.
pub fn solve_right_psd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let n = b.nrows();
    let eig = SymmetricEigen::new(symmetrize(b));
    let max_eig = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = RANK_REL_TOL * max_eig;

    if max_eig > 0.0 && min_eig >= floor {
        if let Some(chol) = Cholesky::new(symmetrize(b)) {
            // X B = A  <=>  B X^T = A^T
            let xt = chol.solve(&a.transpose());
            return (xt.transpose(), Vec::new());
        }
    }

    let mut pinv = DMatrix::<f64>::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > floor && lambda > 0.0 {
            let v = eig.eigenvectors.column(k);
            pinv += (v * v.transpose()) / lambda;
        }
    }
    let degenerate = (0..n).filter(|&h| b[(h, h)] <= floor).collect();
    (a * pinv, degenerate)
}
