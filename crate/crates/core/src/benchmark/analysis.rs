use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputers::ImputationSet;
use crate::linalg::{least_squares, with_intercept};
use crate::tabular::DataMatrix;

/// OLS fit of the downstream analysis model `y = b0 + Zθ + e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisFit {
    pub theta_hat: DVector<f64>,
    pub se: DVector<f64>,
    pub intercept: f64,
    /// `RSS / (n − d − 1)`.
    pub residual_var: f64,
}

impl AnalysisFit {
    pub fn predict(&self, z: &DMatrix<f64>) -> DVector<f64> {
        z * &self.theta_hat + DVector::from_element(z.nrows(), self.intercept)
    }
}

/// OLS with intercept and classical standard errors. A singular design is an
/// error; no regularisation is applied.
pub fn fit_analysis(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<AnalysisFit> {
    let (n, d) = z.shape();
    if y.len() != n {
        return Err(Error::dims(format!("{} responses for {n} rows", y.len())));
    }
    if n <= d + 1 {
        return Err(Error::insufficient(format!("{n} rows for {d} regressors plus intercept")));
    }
    if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("analysis data must be finite and complete"));
    }
    let zt = with_intercept(z);
    let (coef, inv) = least_squares(&zt, y)?;
    let rss = (y - &zt * &coef).norm_squared();
    let residual_var = rss / (n - d - 1) as f64;
    let se = DVector::from_fn(d, |j, _| (residual_var * inv[(j + 1, j + 1)]).max(0.0).sqrt());
    Ok(AnalysisFit {
        theta_hat: coef.rows(1, d).into_owned(),
        se,
        intercept: coef[0],
        residual_var,
    })
}

/// Mean over the imputed copies of the squared error on originally missing
/// cells of `cols`, divided by the number of such cells.
pub fn imputation_mse(imp: &ImputationSet, truth: &DataMatrix, cols: &[usize]) -> Result<f64> {
    if !truth.is_complete() {
        return Err(Error::invalid("truth must be fully observed"));
    }
    if imp.original_mask.shape() != (truth.nrows(), truth.ncols()) {
        return Err(Error::dims("imputation and truth differ in shape"));
    }
    if imp.datasets.is_empty() {
        return Err(Error::invalid("no imputed datasets"));
    }
    let cells: Vec<(usize, usize)> = cols
        .iter()
        .flat_map(|&c| (0..truth.nrows()).filter(move |&i| !imp.original_mask[(i, c)]).map(move |i| (i, c)))
        .collect();
    if cells.is_empty() {
        return Err(Error::UndefinedMetric("no originally missing entries".into()));
    }
    let mut total = 0.0;
    for d in &imp.datasets {
        if d.nrows() != truth.nrows() || d.ncols() != truth.ncols() {
            return Err(Error::dims("imputed copy differs in shape from truth"));
        }
        let sse: f64 = cells
            .iter()
            .map(|&(i, c)| (d.values()[(i, c)] - truth.values()[(i, c)]).powi(2))
            .sum();
        total += sse / cells.len() as f64;
    }
    Ok(total / imp.datasets.len() as f64)
}
