use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{check_targets, fallback_feature, finalize_active_set, ImputationSet, ImputeConfig, Method, Provenance};
use super::MIN_COMPLETE_CASES;
use crate::error::{Error, Result};
use crate::linalg::{sampling_factor, with_intercept};
use crate::plm::{fit_ols_ml, sample_posterior_with, sample_predictive_from_parts, PosteriorDraw};
use crate::rng::{label, stream};
use crate::selector::{active_set, fit_elastic_net};
use crate::tabular::{split_cases, DataMatrix};

/// Replaces each missing cell by its column's observed mean.
pub fn mean_impute(data: &DataMatrix) -> Result<DataMatrix> {
    let mut out = data.clone();
    for c in data.missing_columns() {
        let rows: Vec<usize> = (0..data.nrows()).filter(|&i| data.is_observed(i, c)).collect();
        if rows.is_empty() {
            return Err(Error::invalid(format!("column {c} has no observed entries")));
        }
        let mean = rows.iter().map(|&i| data.values()[(i, c)]).sum::<f64>() / rows.len() as f64;
        for i in data.missing_rows(c) {
            out.fill(i, c, mean)?;
        }
    }
    Ok(out)
}

/// Rows observed in every column of `cols`.
pub fn complete_case(data: &DataMatrix, cols: &[usize]) -> Result<DataMatrix> {
    let split = split_cases(data, cols)?;
    if split.cc_rows.is_empty() {
        return Err(Error::EmptyResult("no complete cases".into()));
    }
    data.select_rows(&split.cc_rows)
}

fn prologue(data: &DataMatrix, col: usize, cfg: &ImputeConfig) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    cfg.validate()?;
    check_targets(data, &[col])?;
    let split = split_cases(data, &[col])?;
    let others: Vec<usize> = (0..data.ncols()).filter(|&c| c != col).collect();
    Ok((split.cc_rows, split.ic_rows, others))
}

fn provenance(method: Method, col: usize, cfg: &ImputeConfig) -> Provenance {
    Provenance {
        method,
        columns: vec![col],
        config: cfg.clone(),
        seed: cfg.seed,
    }
}

const MAX_BOOTSTRAP_ATTEMPTS: usize = 100;

/// Bootstrap imputation: per copy, refit the penalized regression on a
/// bootstrap sample's complete cases and draw from `N(fit, residual variance)`.
pub fn durr_impute(data: &DataMatrix, col: usize, cfg: &ImputeConfig) -> Result<ImputationSet> {
    let (cc, ic, others) = prologue(data, col, cfg)?;
    if ic.is_empty() {
        return Ok(ImputationSet::copies(Method::Durr, data, &[col], cfg));
    }
    if cc.len() < MIN_COMPLETE_CASES {
        return Err(Error::insufficient(format!("{} complete cases", cc.len())));
    }
    let n = data.nrows();
    let all: Vec<usize> = (0..n).collect();
    let z_all = data.block(&all, &others)?;
    let z_ic = z_all.select_rows(&ic);

    let one = |m: usize| -> Result<(DataMatrix, PosteriorDraw)> {
        let mut rng = stream(cfg.seed, &[label::BOOTSTRAP, m as u64]);
        let mut boot_cc = Vec::new();
        for attempt in 0.. {
            if attempt == MAX_BOOTSTRAP_ATTEMPTS {
                return Err(Error::insufficient(format!(
                    "no bootstrap sample with {MIN_COMPLETE_CASES} complete cases in {MAX_BOOTSTRAP_ATTEMPTS} attempts"
                )));
            }
            boot_cc = (0..n)
                .map(|_| rng.random_range(0..n))
                .filter(|&i| data.is_observed(i, col))
                .collect();
            if boot_cc.len() >= MIN_COMPLETE_CASES {
                break;
            }
        }
        let z = z_all.select_rows(&boot_cc);
        let y = data.column_at(col, &boot_cc)?;
        let fit = fit_elastic_net(&z, &y, &cfg.penalty)?;
        let sigma = ((&y - fit.predict(&z)).norm_squared() / boot_cc.len() as f64).sqrt();
        let mean = fit.predict(&z_ic);
        let mut copy = data.clone();
        for (&i, mu) in ic.iter().zip(mean.iter()) {
            let e: f64 = StandardNormal.sample(&mut rng);
            copy.fill(i, col, mu + sigma * e)?;
        }
        let mut beta = Vec::with_capacity(others.len() + 1);
        beta.push(fit.intercept);
        beta.extend(fit.coefficients.iter());
        Ok((
            copy,
            PosteriorDraw {
                beta_m: DVector::from_vec(beta),
                sigma_m: sigma,
                draw_index: m,
            },
        ))
    };
    let results: Vec<_> = (0..cfg.m).into_par_iter().map(one).collect::<Result<_>>()?;
    let (datasets, draws): (Vec<_>, Vec<_>) = results.into_iter().map(|(d, p)| (d, vec![p])).unzip();
    Ok(ImputationSet {
        datasets,
        draws,
        original_mask: data.mask().clone(),
        provenance: provenance(Method::Durr, col, cfg),
    })
}

/// OLS post-selection imputation: one penalized fit picks the features, an
/// intercept-augmented OLS on them gives a Gaussian posterior, and each copy
/// draws coefficients then values.
pub fn iurr_impute(data: &DataMatrix, col: usize, cfg: &ImputeConfig) -> Result<ImputationSet> {
    let (cc, ic, others) = prologue(data, col, cfg)?;
    if ic.is_empty() {
        return Ok(ImputationSet::copies(Method::Iurr, data, &[col], cfg));
    }
    if cc.len() < MIN_COMPLETE_CASES {
        return Err(Error::insufficient(format!("{} complete cases", cc.len())));
    }
    let z_cc = data.block(&cc, &others)?;
    let y_cc = data.column_at(col, &cc)?;
    let sel = fit_elastic_net(&z_cc, &y_cc, &cfg.penalty)?;
    let scores: Vec<f64> = sel.coefficients.iter().copied().collect();
    let chosen = finalize_active_set(active_set(&sel, 0.0), &scores, cfg.cap(cc.len()), || {
        fallback_feature(std::slice::from_ref(&y_cc), std::slice::from_ref(&z_cc))
    })?;
    let s_cols: Vec<usize> = chosen.indices().iter().map(|&j| others[j]).collect();
    let x_cc = with_intercept(&data.block(&cc, &s_cols)?);
    let x_ic = with_intercept(&data.block(&ic, &s_cols)?);
    let fit = fit_ols_ml(&y_cc, &x_cc)?;
    let factor = sampling_factor(&fit.sigma_beta);
    let zero = DVector::zeros(ic.len());

    let one = |m: usize| -> Result<(DataMatrix, PosteriorDraw)> {
        let mut rng = stream(cfg.seed, &[label::DRAW, m as u64, 0]);
        let draw = sample_posterior_with(&fit, &factor, &y_cc, &x_cc, m, &mut rng)?;
        let values = sample_predictive_from_parts(&draw, &zero, &x_ic, &mut rng)?;
        let mut copy = data.clone();
        for (&i, &v) in ic.iter().zip(values.iter()) {
            copy.fill(i, col, v)?;
        }
        Ok((copy, draw))
    };
    let results: Vec<_> = (0..cfg.m).into_par_iter().map(one).collect::<Result<_>>()?;
    let (datasets, draws): (Vec<_>, Vec<_>) = results.into_iter().map(|(d, p)| (d, vec![p])).unzip();
    Ok(ImputationSet {
        datasets,
        draws,
        original_mask: data.mask().clone(),
        provenance: provenance(Method::Iurr, col, cfg),
    })
}
