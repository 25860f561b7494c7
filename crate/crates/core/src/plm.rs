//! Partially linear model `D = η_D(T) + (X − η_X(T))β + ε`: partialling out,
//! the Gaussian approximation to the posterior of `β`, and predictive draws.
//!
//! The residual variance divides by the number of rows, not by the residual
//! degrees of freedom, so it is biased low for small samples.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_jitter, condition_number, gram, sampling_factor, spd_inverse, CONDITION_LIMIT};
use crate::nets::ConditionalMean;

/// Maximum-likelihood summary of the orthogonalized regression. The nuisance
/// estimates live with the caller; this only holds the linear part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialLinearFit {
    pub beta_bar: DVector<f64>,
    pub sigma_beta: DMatrix<f64>,
    pub sigma_bar_sq: f64,
    pub n_obs: usize,
    /// Whether the Gram matrix needed a ridge before inversion.
    pub jittered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraw {
    pub beta_m: DVector<f64>,
    pub sigma_m: f64,
    pub draw_index: usize,
}

/// Observation models for non-Gaussian predictive draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Bernoulli,
    Poisson,
}

/// Largest linear predictor accepted by the Poisson link.
pub const POISSON_LIMIT: f64 = 30.0;

/// `(D1 − η_D, X − η_X)`.
pub fn partial_out(
    d1: &DVector<f64>,
    x: &DMatrix<f64>,
    eta_d: &DVector<f64>,
    eta_x: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if d1.len() != eta_d.len() || x.shape() != eta_x.shape() || x.nrows() != d1.len() {
        return Err(Error::dims(format!(
            "response {} / nuisance {}; features {:?} / nuisance {:?}",
            d1.len(),
            eta_d.len(),
            x.shape(),
            eta_x.shape()
        )));
    }
    Ok((d1 - eta_d, x - eta_x))
}

/// OLS without intercept of `y_tilde` on `x_tilde`, with `σ̄² = RSS/n` and
/// `Σ_β = σ̄²(X̃ᵀX̃)⁻¹`.
pub fn fit_ols_ml(y_tilde: &DVector<f64>, x_tilde: &DMatrix<f64>) -> Result<PartialLinearFit> {
    let (n, s) = x_tilde.shape();
    if y_tilde.len() != n {
        return Err(Error::dims(format!("{} responses vs {} rows", y_tilde.len(), n)));
    }
    if s == 0 {
        return Err(Error::invalid("at least one partialled-out feature is required"));
    }
    if n <= s {
        return Err(Error::insufficient(format!("{n} rows for {s} features")));
    }
    if y_tilde.iter().chain(x_tilde.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("regression inputs must be finite"));
    }

    let mut g = gram(x_tilde);
    let jittered = condition_number(&g) > CONDITION_LIMIT;
    if jittered {
        log::warn!("ill-conditioned gram matrix ({s} features); adding ridge jitter");
        add_jitter(&mut g);
    }
    let inv = spd_inverse(&g)?;
    let beta_bar = &inv * x_tilde.tr_mul(y_tilde);
    let sigma_bar_sq = rss(y_tilde, x_tilde, &beta_bar) / n as f64;
    Ok(PartialLinearFit {
        sigma_beta: inv * sigma_bar_sq,
        beta_bar,
        sigma_bar_sq,
        n_obs: n,
        jittered,
    })
}

fn rss(y: &DVector<f64>, x: &DMatrix<f64>, beta: &DVector<f64>) -> f64 {
    (y - x * beta).norm_squared()
}

/// Draws `β ~ N(β̄, Σ_β)` and sets `σ̂² = ‖ỹ − X̃β‖²/n` at the drawn `β`.
pub fn sample_posterior<R: Rng + ?Sized>(
    fit: &PartialLinearFit,
    y_tilde: &DVector<f64>,
    x_tilde: &DMatrix<f64>,
    draw_index: usize,
    rng: &mut R,
) -> Result<PosteriorDraw> {
    let factor = sampling_factor(&fit.sigma_beta);
    sample_posterior_with(fit, &factor, y_tilde, x_tilde, draw_index, rng)
}

/// As [`sample_posterior`] with a precomputed factor `L`, `LLᵀ = Σ_β`.
pub fn sample_posterior_with<R: Rng + ?Sized>(
    fit: &PartialLinearFit,
    factor: &DMatrix<f64>,
    y_tilde: &DVector<f64>,
    x_tilde: &DMatrix<f64>,
    draw_index: usize,
    rng: &mut R,
) -> Result<PosteriorDraw> {
    let s = fit.beta_bar.len();
    if x_tilde.ncols() != s || x_tilde.nrows() != y_tilde.len() || factor.nrows() != s {
        return Err(Error::dims("posterior draw inputs do not match the fit"));
    }
    let z = DVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
    let beta_m = &fit.beta_bar + factor * z;
    let sigma_m = (rss(y_tilde, x_tilde, &beta_m) / fit.n_obs as f64).sqrt();
    if !sigma_m.is_finite() || beta_m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite posterior draw".into()));
    }
    Ok(PosteriorDraw {
        beta_m,
        sigma_m,
        draw_index,
    })
}

/// `η_D(T) + (X − η_X(T))β` for the rows in `x_ic` / `t_ic`.
pub fn predictive_mean(
    beta: &DVector<f64>,
    x_ic: &DMatrix<f64>,
    t_ic: &DMatrix<f64>,
    eta_d: &dyn ConditionalMean,
    eta_x: &dyn ConditionalMean,
) -> Result<DVector<f64>> {
    let (base, x_res) = nuisance_parts(x_ic, t_ic, eta_d, eta_x)?;
    if x_res.ncols() != beta.len() {
        return Err(Error::dims(format!("{} features vs {} coefficients", x_res.ncols(), beta.len())));
    }
    Ok(base + x_res * beta)
}

/// Evaluates the nuisance estimates once: `(η_D(T), X − η_X(T))`.
pub fn nuisance_parts(
    x_ic: &DMatrix<f64>,
    t_ic: &DMatrix<f64>,
    eta_d: &dyn ConditionalMean,
    eta_x: &dyn ConditionalMean,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x_ic.nrows() != t_ic.nrows() {
        return Err(Error::dims(format!("{} rows of X vs {} rows of T", x_ic.nrows(), t_ic.nrows())));
    }
    if eta_d.output_dim() != 1 || eta_x.output_dim() != x_ic.ncols() {
        return Err(Error::dims("nuisance output widths do not match D and X"));
    }
    let d_hat = eta_d.predict(t_ic)?;
    let x_hat = eta_x.predict(t_ic)?;
    Ok((d_hat.column(0).into_owned(), x_ic - x_hat))
}

/// One predictive draw per row: mean plus `N(0, σ̂²)` noise.
pub fn sample_predictive<R: Rng + ?Sized>(
    draw: &PosteriorDraw,
    x_ic: &DMatrix<f64>,
    t_ic: &DMatrix<f64>,
    eta_d: &dyn ConditionalMean,
    eta_x: &dyn ConditionalMean,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (base, x_res) = nuisance_parts(x_ic, t_ic, eta_d, eta_x)?;
    sample_predictive_from_parts(draw, &base, &x_res, rng)
}

/// As [`sample_predictive`] with nuisance values already evaluated.
pub fn sample_predictive_from_parts<R: Rng + ?Sized>(
    draw: &PosteriorDraw,
    eta_d_vals: &DVector<f64>,
    x_residual: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if x_residual.ncols() != draw.beta_m.len() || x_residual.nrows() != eta_d_vals.len() {
        return Err(Error::dims("predictive inputs do not match the draw"));
    }
    let mean = eta_d_vals + x_residual * &draw.beta_m;
    Ok(mean.map(|mu| {
        let e: f64 = StandardNormal.sample(rng);
        mu + draw.sigma_m * e
    }))
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Draws binary (`1/(1+e^−η)`) or count (`e^η`) values from linear predictors.
pub fn sample_predictive_discrete<R: Rng + ?Sized>(
    link: Link,
    lin_pred: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if lin_pred.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("linear predictor contains NaN"));
    }
    match link {
        Link::Bernoulli => {
            let mut out = DVector::zeros(lin_pred.len());
            for (o, &eta) in out.iter_mut().zip(lin_pred.iter()) {
                let b = Bernoulli::new(sigmoid(eta)).map_err(|e| Error::Numerical(e.to_string()))?;
                *o = if b.sample(rng) { 1.0 } else { 0.0 };
            }
            Ok(out)
        }
        Link::Poisson => {
            if let Some(bad) = lin_pred.iter().find(|&&v| v > POISSON_LIMIT) {
                return Err(Error::Numerical(format!(
                    "poisson linear predictor {bad} exceeds {POISSON_LIMIT}"
                )));
            }
            let mut out = DVector::zeros(lin_pred.len());
            for (o, &eta) in out.iter_mut().zip(lin_pred.iter()) {
                let mu = eta.exp();
                *o = if mu <= 0.0 {
                    0.0
                } else {
                    Poisson::new(mu).map_err(|e| Error::Numerical(e.to_string()))?.sample(rng)
                };
            }
            Ok(out)
        }
    }
}
