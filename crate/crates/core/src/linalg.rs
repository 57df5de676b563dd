//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{NetvarError, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Replace `m` by `(m + m') / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute asymmetry relative to the matrix scale.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Checks symmetry within 1e-12 (scaled) and PSD up to `-1e-10 * trace`.
pub fn check_covariance(sigma: &DMatrix<f64>, what: &str) -> Result<()> {
    if !sigma.is_square() {
        return Err(NetvarError::Validation(format!("{what} must be square")));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(NetvarError::Validation(format!("{what} has non-finite entries")));
    }
    let scale = max_abs(sigma).max(1.0);
    if asymmetry(sigma) > 1e-12 * scale {
        return Err(NetvarError::Validation(format!("{what} is not symmetric")));
    }
    let mut s = sigma.clone();
    symmetrize(&mut s);
    let trace = s.trace();
    let min_eig = s.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
    if sigma.nrows() > 0 && min_eig < -1e-10 * trace.abs().max(f64::MIN_POSITIVE) {
        return Err(NetvarError::Validation(format!(
            "{what} is not positive semidefinite (smallest eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

/// Lower Cholesky factor, `None` when the matrix is not numerically positive definite.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.l())
}

/// Log density of `N(mean, cov)` at `x`.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| NetvarError::Numeric("covariance not positive definite".into()))?;
    let d = x - mean;
    let z = chol.l().solve_lower_triangular(&d).expect("triangular solve");
    let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(-0.5 * (x.len() as f64 * LN_2PI + logdet + z.norm_squared()))
}

/// Solve `a x = b` by LU with a conditioning guard.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = a.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| NetvarError::Numeric("singular linear system".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NetvarError::Numeric("singular linear system".into()));
    }
    Ok(x)
}

/// Least squares fit of the columns of `y` on `x` (rows are observations),
/// solved through a QR factorisation.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() < x.ncols() {
        return Err(NetvarError::Estimation(format!(
            "regression has {} observations for {} regressors",
            x.nrows(),
            x.ncols()
        )));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    if diag.iter().any(|d| *d <= 1e-10 * dmax) || dmax == 0.0 {
        return Err(NetvarError::Estimation("rank-deficient regression design".into()));
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| NetvarError::Estimation("rank-deficient regression design".into()))
}

/// `log(sum(exp(v)))` computed stably.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln k!`.
pub fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mvn_logpdf_matches_univariate_formula() {
        let x = DVector::from_vec(vec![0.3]);
        let m = DVector::from_vec(vec![-0.2]);
        let c = DMatrix::from_element(1, 1, 2.0);
        let want = -0.5 * (LN_2PI + 2.0f64.ln() + 0.25 / 2.0);
        assert!((mvn_logpdf(&x, &m, &c).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_handles_large_values() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn covariance_check_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(check_covariance(&m, "sigma").is_err());
        assert!(check_covariance(&DMatrix::identity(2, 2), "sigma").is_ok());
    }
}
