use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{check_targets, fallback_feature, finalize_active_set, ImputationSet, ImputeConfig, Method, Provenance};
use super::MIN_COMPLETE_CASES;
use crate::error::{Error, Result};
use crate::linalg::sampling_factor;
use crate::nets::{train_regressor, ConditionalMean, ConstantMean, NetConfig};
use crate::plm::{fit_ols_ml, partial_out, sample_posterior_with, sample_predictive_from_parts, PartialLinearFit, PosteriorDraw};
use crate::rng::{derive_seed, label, stream};
use crate::selector::{active_set, combine_active_sets, fit_elastic_net, ActiveSet};
use crate::tabular::{split_cases, DataMatrix};

/// How the conditional means `E[D | T]` and `E[X | T]` are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nuisance {
    /// Feed-forward regressors configured by [`ImputeConfig::net`].
    #[default]
    Nets,
    /// Complete-case column means, ignoring `T`.
    Constant,
}

/// Everything the draws of one target column need.
struct ColumnModel {
    col: usize,
    fit: PartialLinearFit,
    factor: DMatrix<f64>,
    y_tilde: DVector<f64>,
    x_tilde: DMatrix<f64>,
    missing_rows: Vec<usize>,
    /// `η_D(T)` on the missing rows.
    base: DVector<f64>,
    /// `X − η_X(T)` on the missing rows.
    x_residual: DMatrix<f64>,
}

/// Fitted state shared by all imputations.
struct Prepared {
    columns: Vec<ColumnModel>,
    x_cols: Vec<usize>,
}

fn net_seeded(cfg: &ImputeConfig, which: u64) -> NetConfig {
    NetConfig {
        seed: derive_seed(cfg.seed, &[which, cfg.net.seed]),
        ..cfg.net.clone()
    }
}

fn fit_nuisance(
    t: &DMatrix<f64>,
    target: &DMatrix<f64>,
    cfg: &ImputeConfig,
    which: u64,
    kind: Nuisance,
) -> Result<Box<dyn ConditionalMean>> {
    if t.ncols() == 0 || kind == Nuisance::Constant {
        return Ok(Box::new(ConstantMean::fit(target)));
    }
    Ok(Box::new(train_regressor(t, target, &net_seeded(cfg, which))?))
}

fn prepare(data: &DataMatrix, cols: &[usize], cfg: &ImputeConfig, kind: Nuisance) -> Result<Prepared> {
    let p = data.ncols();
    let others: Vec<usize> = (0..p).filter(|c| !cols.contains(c)).collect();
    let cc = split_cases(data, cols)?.cc_rows;
    if cc.len() < MIN_COMPLETE_CASES {
        return Err(Error::insufficient(format!(
            "{} complete cases; at least {MIN_COMPLETE_CASES} are needed",
            cc.len()
        )));
    }

    // selection: one penalized fit per target on the rows where it is observed
    let observed: Vec<Vec<usize>> = cols
        .iter()
        .map(|&c| (0..data.nrows()).filter(|&i| data.is_observed(i, c)).collect())
        .collect();
    let mut designs = Vec::with_capacity(cols.len());
    let mut responses = Vec::with_capacity(cols.len());
    let mut sets = Vec::with_capacity(cols.len());
    let mut scores = vec![0.0f64; others.len()];
    for (k, &c) in cols.iter().enumerate() {
        let z = data.block(&observed[k], &others)?;
        let y = data.column_at(c, &observed[k])?;
        let fit = fit_elastic_net(&z, &y, &cfg.penalty)?;
        if !fit.converged {
            log::warn!("selection for column {c} stopped before convergence");
        }
        for (s, a) in scores.iter_mut().zip(fit.coefficients.iter()) {
            *s = s.max(a.abs());
        }
        sets.push(active_set(&fit, 0.0));
        designs.push(z);
        responses.push(y);
    }
    let merged = combine_active_sets(&sets, cfg.combine_mode)?;
    let chosen: ActiveSet =
        finalize_active_set(merged, &scores, cfg.cap(cc.len()), || fallback_feature(&responses, &designs))?;
    drop(designs);
    let x_cols: Vec<usize> = chosen.indices().iter().map(|&j| others[j]).collect();
    let t_cols: Vec<usize> = others.iter().copied().filter(|c| !x_cols.contains(c)).collect();
    log::debug!("active set of {} features, {} left for T", x_cols.len(), t_cols.len());

    // nuisance regressors on rows complete in every target
    let t_cc = data.block(&cc, &t_cols)?;
    let d_cc = data.block(&cc, cols)?;
    let x_cc = data.block(&cc, &x_cols)?;
    let (eta_d, eta_x) = rayon::join(
        || fit_nuisance(&t_cc, &d_cc, cfg, label::NET_D, kind),
        || fit_nuisance(&t_cc, &x_cc, cfg, label::NET_X, kind),
    );
    let (eta_d, eta_x) = (eta_d?, eta_x?);

    let all_rows: Vec<usize> = (0..data.nrows()).collect();
    let t_all = data.block(&all_rows, &t_cols)?;
    let x_all = data.block(&all_rows, &x_cols)?;
    let d_hat = eta_d.predict(&t_all)?;
    let x_hat = eta_x.predict(&t_all)?;

    let mut columns = Vec::with_capacity(cols.len());
    for (k, &c) in cols.iter().enumerate() {
        let obs = &observed[k];
        let (y_tilde, x_tilde) = partial_out(
            &responses[k],
            &x_all.select_rows(obs),
            &d_hat.select_rows(obs).column(k).into_owned(),
            &x_hat.select_rows(obs),
        )?;
        let fit = fit_ols_ml(&y_tilde, &x_tilde)?;
        let factor = sampling_factor(&fit.sigma_beta);
        let missing_rows = data.missing_rows(c);
        let base = d_hat.select_rows(&missing_rows).column(k).into_owned();
        let x_residual = x_all.select_rows(&missing_rows) - x_hat.select_rows(&missing_rows);
        columns.push(ColumnModel {
            col: c,
            fit,
            factor,
            y_tilde,
            x_tilde,
            missing_rows,
            base,
            x_residual,
        });
    }
    Ok(Prepared { columns, x_cols })
}

fn provenance(cfg: &ImputeConfig, method: Method, cols: &[usize]) -> Provenance {
    Provenance {
        method,
        columns: cols.to_vec(),
        config: cfg.clone(),
        seed: cfg.seed,
    }
}

fn draw_copy(data: &DataMatrix, prep: &Prepared, cfg: &ImputeConfig, m: usize) -> Result<(DataMatrix, Vec<PosteriorDraw>)> {
    let mut copy = data.clone();
    let mut draws = Vec::with_capacity(prep.columns.len());
    for (k, model) in prep.columns.iter().enumerate() {
        let mut rng = stream(cfg.seed, &[label::DRAW, m as u64, k as u64]);
        let draw = sample_posterior_with(&model.fit, &model.factor, &model.y_tilde, &model.x_tilde, m, &mut rng)?;
        let values = sample_predictive_from_parts(&draw, &model.base, &model.x_residual, &mut rng)?;
        for (&i, &v) in model.missing_rows.iter().zip(values.iter()) {
            copy.fill(i, model.col, v)?;
        }
        draws.push(draw);
    }
    Ok((copy, draws))
}

/// Multiple imputation of several columns, with the nuisance estimator chosen
/// explicitly.
pub fn misnn_multi_with(data: &DataMatrix, cols: &[usize], cfg: &ImputeConfig, kind: Nuisance) -> Result<ImputationSet> {
    cfg.validate()?;
    check_targets(data, cols)?;
    if cols.iter().all(|&c| data.observed_count(c) == data.nrows()) {
        return Ok(ImputationSet::copies(Method::Misnn, data, cols, cfg));
    }
    let prep = prepare(data, cols, cfg, kind)?;
    log::debug!("imputing columns {cols:?} with {} partialled-out features", prep.x_cols.len());
    let results: Vec<(DataMatrix, Vec<PosteriorDraw>)> = (0..cfg.m)
        .into_par_iter()
        .map(|m| draw_copy(data, &prep, cfg, m))
        .collect::<Result<_>>()?;
    let (datasets, draws) = results.into_iter().unzip();
    Ok(ImputationSet {
        datasets,
        draws,
        original_mask: data.mask().clone(),
        provenance: provenance(cfg, Method::Misnn, cols),
    })
}

/// Multiple imputation of `cols`; missing values must be confined to them.
pub fn misnn_multi(data: &DataMatrix, cols: &[usize], cfg: &ImputeConfig) -> Result<ImputationSet> {
    misnn_multi_with(data, cols, cfg, Nuisance::Nets)
}

/// Multiple imputation of a single column.
pub fn misnn_single(data: &DataMatrix, col: usize, cfg: &ImputeConfig) -> Result<ImputationSet> {
    misnn_multi(data, &[col], cfg)
}

/// Single imputation at the posterior mean, without noise.
pub fn sisnn_multi(data: &DataMatrix, cols: &[usize], cfg: &ImputeConfig) -> Result<DataMatrix> {
    cfg.validate()?;
    check_targets(data, cols)?;
    if cols.iter().all(|&c| data.observed_count(c) == data.nrows()) {
        return Ok(data.clone());
    }
    let prep = prepare(data, cols, cfg, Nuisance::Nets)?;
    let mut out = data.clone();
    for model in &prep.columns {
        let values = &model.base + &model.x_residual * &model.fit.beta_bar;
        for (&i, &v) in model.missing_rows.iter().zip(values.iter()) {
            out.fill(i, model.col, v)?;
        }
    }
    Ok(out)
}

pub fn sisnn(data: &DataMatrix, col: usize, cfg: &ImputeConfig) -> Result<DataMatrix> {
    sisnn_multi(data, &[col], cfg)
}
