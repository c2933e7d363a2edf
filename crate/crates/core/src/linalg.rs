//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative cutoff for treating a singular value as zero.
pub const PINV_RCOND: f64 = 1e-10;

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values strictly above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let Some(&max) = sv.first() else { return 0 };
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Number of singular values strictly above an absolute threshold.
pub fn numerical_rank_abs(m: &DMatrix<f64>, abs_tol: f64) -> usize {
    singular_values(m).iter().filter(|&&s| s > abs_tol).count()
}

/// Moore–Penrose pseudoinverse with singular values below `rcond * sigma_max` dropped.
pub fn pinv(m: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("pseudoinverse of a non-finite matrix"));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rcond * max;
    let k = svd.singular_values.len();
    let mut out = DMatrix::zeros(cols, rows);
    for i in 0..k {
        let s = svd.singular_values[i];
        if s > cutoff && s > 0.0 {
            // out += v_i * u_i^T / s
            let vi = v_t.row(i).transpose();
            let ui = u.column(i);
            out.ger(1.0 / s, &vi, &ui, 1.0);
        }
    }
    Ok(out)
}

/// Outcome of a linear solve, with the residual of the returned solution.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    /// `‖A x − b‖`
    pub residual_norm: f64,
    /// Numerical rank of `A` at the cutoff used.
    pub rank: usize,
}

/// Minimum-norm least-squares solution `A⁺ b`.
pub fn solve_pinv(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Result<Solution> {
    let p = pinv(a, rcond)?;
    let x = &p * b;
    finish(a, b, x, numerical_rank(a, rcond))
}

/// Ridge-regularised least squares `(AᵀA + λI)⁻¹ Aᵀ b`.
pub fn solve_ridge(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<Solution> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::validation("ridge penalty must be positive and finite"));
    }
    let ata = a.tr_mul(a);
    let n = ata.nrows();
    let lhs = ata + DMatrix::identity(n, n) * lambda;
    let rhs = a.tr_mul(b);
    let chol = lhs
        .cholesky()
        .ok_or_else(|| Error::numerical("ridge normal equations not positive definite"))?;
    let x = chol.solve(&rhs);
    finish(a, b, x, numerical_rank(a, PINV_RCOND))
}

fn finish(a: &DMatrix<f64>, b: &DVector<f64>, x: DVector<f64>, rank: usize) -> Result<Solution> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("linear solve produced non-finite coefficients"));
    }
    let residual_norm = (a * &x - b).norm();
    Ok(Solution { x, residual_norm, rank })
}
