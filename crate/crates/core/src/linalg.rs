//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Gram matrices whose eigenvalue ratio exceeds this are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Relative ridge added to an ill-conditioned Gram matrix.
pub const JITTER_SCALE: f64 = 1e-8;

/// `XᵀX`.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x)
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest is not positive.
pub fn condition_number(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || !min.is_finite() || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Adds `JITTER_SCALE * tr(g)/k` to the diagonal.
pub fn add_jitter(g: &mut DMatrix<f64>) {
    let k = g.nrows().max(1) as f64;
    let mut ridge = JITTER_SCALE * g.trace() / k;
    if !(ridge > 0.0) {
        ridge = JITTER_SCALE;
    }
    for i in 0..g.nrows() {
        g[(i, i)] += ridge;
    }
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, symmetrised.
pub fn spd_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    let inv = chol.inverse();
    Ok(symmetrize(&inv))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower-triangular factor `L` with `LLᵀ ≈ cov`, for sampling from a Gaussian.
///
/// Tries Cholesky, then Cholesky with jitter, then a clamped eigen square root
/// (which also covers the all-zero covariance).
pub fn sampling_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let mut jittered = cov.clone();
    add_jitter(&mut jittered);
    if cov.trace() > 0.0 {
        if let Some(ch) = jittered.cholesky() {
            return ch.l();
        }
    }
    let eig = SymmetricEigen::new(symmetrize(cov));
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

/// Least squares `argmin ‖y - Xb‖²` through the normal equations, returning the
/// coefficients and `(XᵀX)⁻¹`. Fails when the Gram matrix is singular.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x.nrows() != y.len() {
        return Err(Error::dims(format!("{} rows vs {} responses", x.nrows(), y.len())));
    }
    let g = gram(x);
    if condition_number(&g) > CONDITION_LIMIT {
        return Err(Error::Numerical("design matrix is singular or nearly so".into()));
    }
    let inv = spd_inverse(&g)?;
    let beta = &inv * x.tr_mul(y);
    Ok((beta, inv))
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_of_zero_covariance_is_zero() {
        let l = sampling_factor(&DMatrix::zeros(3, 3));
        assert!(l.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factor_reproduces_covariance() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let l = sampling_factor(&c);
        assert!((&l * l.transpose() - &c).abs().max() < 1e-12);
        // rank one: cholesky fails, eigen route still reproduces it
        let r1 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = sampling_factor(&r1);
        assert!((&l * l.transpose() - &r1).abs().max() < 1e-6);
    }

    #[test]
    fn least_squares_rejects_collinear() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(least_squares(&x, &y).is_err());
    }
}
