//! Elastic-net feature selection by cyclic coordinate descent.
//!
//! Minimises over `(a, a0)`
//!
//! ```text
//! (1/(2n)) ‖y - Z a - a0‖² + λ (ρ ‖a‖₁ + ½ (1 - ρ) ‖a‖²)
//! ```
//!
//! where `ρ` is `l1_ratio` (1 gives the Lasso). The intercept is never
//! penalised. With `standardize` the columns are centred and scaled to unit
//! mean square before the descent and the coefficients mapped back afterwards,
//! so `λ` is on the per-sample, unit-variance scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub l1_ratio: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub standardize: bool,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            l1_ratio: 1.0,
            max_iter: 1000,
            tol: 1e-6,
            standardize: true,
        }
    }
}

impl PenaltyConfig {
    pub fn lasso(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn elastic_net(lambda: f64, l1_ratio: f64) -> Self {
        Self {
            lambda,
            l1_ratio,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(Error::invalid(format!("l1_ratio must be in [0, 1], got {}", self.l1_ratio)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    /// Coordinate-descent sweeps performed (full and active-set sweeps).
    pub sweeps: usize,
    pub converged: bool,
}

impl LinearFit {
    pub fn predict(&self, z: &DMatrix<f64>) -> DVector<f64> {
        z * &self.coefficients + DVector::from_element(z.nrows(), self.intercept)
    }
}

/// Ascending, duplicate-free indices into the regressor columns.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActiveSet {
    indices: Vec<usize>,
}

impl ActiveSet {
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Indices in `0..bound` not in the set.
    pub fn complement(&self, bound: usize) -> Vec<usize> {
        (0..bound).filter(|&i| !self.contains(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    #[default]
    Union,
    Intersection,
}

#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

struct Problem {
    /// Centred (and scaled when standardising) columns.
    work: DMatrix<f64>,
    /// `(1/n)‖w_j‖²`; zero marks an excluded column.
    col_sq: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
    y_mean: f64,
    y_centered: DVector<f64>,
}

impl Problem {
    fn new(z: &DMatrix<f64>, y: &DVector<f64>, standardize: bool) -> Self {
        let (n, p) = z.shape();
        let nf = n as f64;
        let mut work = z.clone();
        let mut col_sq = vec![0.0; p];
        let mut means = vec![0.0; p];
        let mut scales = vec![1.0; p];
        for j in 0..p {
            let mut col = work.column_mut(j);
            let mean = col.sum() / nf;
            col.add_scalar_mut(-mean);
            let ms = col.norm_squared() / nf;
            means[j] = mean;
            // relative threshold: constant columns leave rounding residue
            let degenerate = ms <= 1e-24 * (1.0 + mean * mean);
            if degenerate {
                col.fill(0.0);
                col_sq[j] = 0.0;
                continue;
            }
            if standardize {
                let s = ms.sqrt();
                col /= s;
                scales[j] = s;
                col_sq[j] = 1.0;
            } else {
                col_sq[j] = ms;
            }
        }
        let y_mean = y.sum() / nf;
        let y_centered = y.add_scalar(-y_mean);
        Self {
            work,
            col_sq,
            means,
            scales,
            y_mean,
            y_centered,
        }
    }

    fn objective(&self, b: &DVector<f64>, resid: &DVector<f64>, cfg: &PenaltyConfig) -> f64 {
        let n = resid.len() as f64;
        let l1: f64 = b.iter().map(|v| v.abs()).sum();
        let l2 = b.norm_squared();
        resid.norm_squared() / (2.0 * n)
            + cfg.lambda * (cfg.l1_ratio * l1 + 0.5 * (1.0 - cfg.l1_ratio) * l2)
    }
}

fn check_inputs(z: &DMatrix<f64>, y: &DVector<f64>, cfg: &PenaltyConfig) -> Result<()> {
    cfg.validate()?;
    if z.nrows() < 2 {
        return Err(Error::insufficient("elastic net needs at least two rows"));
    }
    if z.nrows() != y.len() {
        return Err(Error::dims(format!("{} rows vs {} responses", z.nrows(), y.len())));
    }
    if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("elastic net inputs must be finite"));
    }
    Ok(())
}

/// Elastic-net fit with the cyclic coordinate descent described in the module
/// docs. Warm-starts from zero; `λ` is fixed by the caller.
pub fn fit_elastic_net(z: &DMatrix<f64>, y: &DVector<f64>, cfg: &PenaltyConfig) -> Result<LinearFit> {
    fit_inner(z, y, cfg, None)
}

/// Same as [`fit_elastic_net`], also returning the objective (on the working,
/// possibly standardised scale) after every sweep.
pub fn fit_elastic_net_traced(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &PenaltyConfig,
) -> Result<(LinearFit, Vec<f64>)> {
    let mut trace = Vec::new();
    let fit = fit_inner(z, y, cfg, Some(&mut trace))?;
    Ok((fit, trace))
}

fn fit_inner(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &PenaltyConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<LinearFit> {
    check_inputs(z, y, cfg)?;
    let (n, p) = z.shape();
    let nf = n as f64;
    let prob = Problem::new(z, y, cfg.standardize);
    let l1_pen = cfg.lambda * cfg.l1_ratio;
    let l2_pen = cfg.lambda * (1.0 - cfg.l1_ratio);

    let mut b = DVector::<f64>::zeros(p);
    let mut resid = prob.y_centered.clone();
    if let Some(t) = trace.as_deref_mut() {
        t.push(prob.objective(&b, &resid, cfg));
    }

    let update = |j: usize, b: &mut DVector<f64>, resid: &mut DVector<f64>| -> f64 {
        let c = prob.col_sq[j];
        if c == 0.0 {
            return 0.0;
        }
        let col = prob.work.column(j);
        let g = col.dot(resid) / nf + c * b[j];
        let new = soft_threshold(g, l1_pen) / (c + l2_pen);
        let delta = new - b[j];
        if delta != 0.0 {
            resid.axpy(-delta, &col, 1.0);
            b[j] = new;
        }
        delta.abs()
    };

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < cfg.max_iter {
        // full cyclic sweep over every coordinate
        let mut max_delta = 0.0f64;
        for j in 0..p {
            max_delta = max_delta.max(update(j, &mut b, &mut resid));
        }
        sweeps += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(prob.objective(&b, &resid, cfg));
        }
        if max_delta < cfg.tol {
            converged = true;
            break;
        }
        // iterate on the current support until it settles, then re-check all
        let support: Vec<usize> = (0..p).filter(|&j| b[j] != 0.0).collect();
        while sweeps < cfg.max_iter {
            let mut max_delta = 0.0f64;
            for &j in &support {
                max_delta = max_delta.max(update(j, &mut b, &mut resid));
            }
            sweeps += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(prob.objective(&b, &resid, cfg));
            }
            if max_delta < cfg.tol {
                break;
            }
        }
    }

    let coefficients = DVector::from_fn(p, |j, _| b[j] / prob.scales[j]);
    let intercept = prob.y_mean
        - coefficients
            .iter()
            .zip(&prob.means)
            .map(|(a, m)| a * m)
            .sum::<f64>();
    if coefficients.iter().any(|v| !v.is_finite()) || !intercept.is_finite() {
        return Err(Error::Numerical("elastic net produced non-finite coefficients".into()));
    }
    Ok(LinearFit {
        coefficients,
        intercept,
        sweeps,
        converged,
    })
}

/// Largest violation of the lasso optimality conditions on the standardized
/// scale: `|g_j − λ·sign(a_j)|` on the support and `max(|g_j| − λ, 0)` off it,
/// with `g_j = Z_jᵀ r / n`. Assumes `l1_ratio = 1` and `standardize = true`.
pub fn kkt_violation(z: &DMatrix<f64>, y: &DVector<f64>, fit: &LinearFit, lambda: f64) -> f64 {
    let prob = Problem::new(z, y, true);
    let nf = z.nrows() as f64;
    let b = DVector::from_fn(z.ncols(), |j, _| fit.coefficients[j] * prob.scales[j]);
    let resid = &prob.y_centered - &prob.work * &b;
    (0..z.ncols())
        .filter(|&j| prob.col_sq[j] > 0.0)
        .map(|j| {
            let g = prob.work.column(j).dot(&resid) / nf;
            if b[j] != 0.0 {
                (g - lambda * b[j].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Indices whose coefficient magnitude exceeds `eps`.
pub fn active_set(fit: &LinearFit, eps: f64) -> ActiveSet {
    ActiveSet::new(
        fit.coefficients
            .iter()
            .enumerate()
            .filter(|(_, c)| c.abs() > eps)
            .map(|(i, _)| i),
    )
}

pub fn combine_active_sets(sets: &[ActiveSet], mode: CombineMode) -> Result<ActiveSet> {
    let (first, rest) = sets
        .split_first()
        .ok_or_else(|| Error::invalid("need at least one active set to combine"))?;
    Ok(match mode {
        CombineMode::Union => ActiveSet::new(sets.iter().flat_map(|s| s.indices.iter().copied())),
        CombineMode::Intersection => ActiveSet::new(
            first
                .indices
                .iter()
                .copied()
                .filter(|&i| rest.iter().all(|s| s.contains(i))),
        ),
    })
}

/// Keeps the `limit` members with the largest `|coefficient|`; ties go to the
/// smaller index.
pub fn cap_active_set(set: &ActiveSet, fit: &LinearFit, limit: usize) -> Result<ActiveSet> {
    cap_by_magnitude(set, fit.coefficients.as_slice(), limit)
}

/// [`cap_active_set`] over an arbitrary score vector.
pub fn cap_by_magnitude(set: &ActiveSet, scores: &[f64], limit: usize) -> Result<ActiveSet> {
    if limit == 0 {
        return Err(Error::invalid("active-set limit must be at least 1"));
    }
    if set.len() <= limit {
        return Ok(set.clone());
    }
    let mut ranked: Vec<usize> = set.indices.clone();
    if let Some(&bad) = ranked.iter().find(|&&i| i >= scores.len()) {
        return Err(Error::invalid(format!("active index {bad} has no coefficient")));
    }
    ranked.sort_by(|&a, &b| {
        scores[b]
            .abs()
            .total_cmp(&scores[a].abs())
            .then(a.cmp(&b))
    });
    ranked.truncate(limit);
    Ok(ActiveSet::new(ranked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_problem(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = DVector::from_fn(n, |i, _| 2.0 * z[(i, 0)] - z[(i, 1 % p)] + 0.5 * noise[i] + 3.0);
        (z, y)
    }

    fn fit_with(coefs: &[f64]) -> LinearFit {
        LinearFit {
            coefficients: DVector::from_column_slice(coefs),
            intercept: 0.0,
            sweeps: 0,
            converged: true,
        }
    }

    #[test]
    fn full_shrinkage_above_lambda_max() {
        let (z, y) = random_problem(1, 30, 6);
        let prob = Problem::new(&z, &y, true);
        let lam_max = (0..6)
            .map(|j| (prob.work.column(j).dot(&prob.y_centered) / 30.0).abs())
            .fold(0.0, f64::max);
        let fit = fit_elastic_net(&z, &y, &PenaltyConfig::lasso(lam_max * 1.0001)).unwrap();
        assert!(fit.coefficients.iter().all(|&c| c == 0.0));
        assert!((fit.intercept - y.mean()).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_matches_normal_equations() {
        let z = DMatrix::from_row_slice(5, 2, &[1.0, 0.3, 2.0, -1.0, 0.5, 0.8, -1.2, 0.1, 0.7, 2.2]);
        let y = DVector::from_vec(vec![1.0, 0.5, 2.0, -0.3, 1.7]);
        let cfg = PenaltyConfig {
            lambda: 0.0,
            tol: 1e-13,
            max_iter: 100_000,
            ..PenaltyConfig::default()
        };
        let fit = fit_elastic_net(&z, &y, &cfg).unwrap();
        // oracle: center, solve (Z̃ᵀZ̃) a = Z̃ᵀỹ
        let zm = z.row_mean();
        let zc = DMatrix::from_fn(5, 2, |i, j| z[(i, j)] - zm[j]);
        let yc = y.add_scalar(-y.mean());
        let a = (zc.transpose() * &zc).try_inverse().unwrap() * zc.transpose() * yc;
        assert!((&fit.coefficients - &a).abs().max() < 1e-8);
        let a0 = y.mean() - (zm * &a)[(0, 0)];
        assert!((fit.intercept - a0).abs() < 1e-8);
    }

    #[test]
    fn single_predictor_soft_threshold() {
        let (z, y) = random_problem(5, 40, 1);
        // standardise the predictor ourselves so the analytic form applies directly
        let m = z.mean();
        let s = (z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 40.0).sqrt();
        let zs = z.map(|v| (v - m) / s);
        let r = zs.column(0).dot(&y.add_scalar(-y.mean())) / 40.0;
        for lam in [0.0, 0.1, 0.5, r.abs() * 0.9, r.abs() * 1.1] {
            let fit = fit_elastic_net(&zs, &y, &PenaltyConfig::lasso(lam)).unwrap();
            let expect = r.signum() * (r.abs() - lam).max(0.0);
            assert!((fit.coefficients[0] - expect).abs() < 1e-10, "lam {lam}");
        }
    }

    #[test]
    fn constant_column_gets_zero() {
        let (mut z, y) = random_problem(2, 20, 3);
        z.column_mut(1).fill(4.2);
        for standardize in [true, false] {
            let cfg = PenaltyConfig {
                lambda: 0.01,
                standardize,
                ..PenaltyConfig::default()
            };
            let fit = fit_elastic_net(&z, &y, &cfg).unwrap();
            assert_eq!(fit.coefficients[1], 0.0);
            assert!(fit.coefficients.iter().all(|c| c.is_finite()));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (mut z, y) = random_problem(2, 20, 3);
        assert!(fit_elastic_net(&z, &y, &PenaltyConfig::lasso(-1.0)).is_err());
        assert!(fit_elastic_net(&z, &y, &PenaltyConfig::elastic_net(0.1, 1.5)).is_err());
        assert!(fit_elastic_net(&z.rows(0, 1).into_owned(), &y.rows(0, 1).into_owned(), &PenaltyConfig::default()).is_err());
        z[(0, 0)] = f64::NAN;
        assert!(matches!(
            fit_elastic_net(&z, &y, &PenaltyConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn objective_never_increases() {
        let (z, y) = random_problem(9, 40, 60);
        for cfg in [PenaltyConfig::lasso(0.05), PenaltyConfig::elastic_net(0.2, 0.5)] {
            let (_, trace) = fit_elastic_net_traced(&z, &y, &cfg).unwrap();
            assert!(trace.len() > 2);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn active_set_examples() {
        assert_eq!(active_set(&fit_with(&[0.0, 0.3, 0.0]), 1e-10).indices(), &[1]);
        assert!(active_set(&fit_with(&[0.0, 0.0]), 1e-10).is_empty());
    }

    #[test]
    fn active_set_matches_scan() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let coefs: Vec<f64> = (0..200).map(|_| rng.random_range(-0.2..0.2)).collect();
        let got = active_set(&fit_with(&coefs), 0.05);
        let mut want = Vec::new();
        for (i, c) in coefs.iter().enumerate() {
            if c.abs() > 0.05 {
                want.push(i);
            }
        }
        assert_eq!(got.indices(), want.as_slice());
    }

    #[test]
    fn combine_examples() {
        let a = ActiveSet::new([1, 2]);
        let b = ActiveSet::new([2, 3]);
        let sets = [a, b];
        assert_eq!(combine_active_sets(&sets, CombineMode::Union).unwrap().indices(), &[1, 2, 3]);
        assert_eq!(combine_active_sets(&sets, CombineMode::Intersection).unwrap().indices(), &[2]);
        assert!(combine_active_sets(&[], CombineMode::Union).is_err());
    }

    #[test]
    fn combine_matches_bitset_oracle() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let universe = 64;
        let sets: Vec<ActiveSet> = (0..5)
            .map(|_| ActiveSet::new((0..universe).filter(|_| rng.random_bool(0.4))))
            .collect();
        let bits: Vec<u64> = sets
            .iter()
            .map(|s| s.indices().iter().fold(0u64, |acc, &i| acc | (1 << i)))
            .collect();
        let union = bits.iter().fold(0u64, |a, b| a | b);
        let inter = bits.iter().fold(u64::MAX, |a, b| a & b);
        let expand = |w: u64| (0..universe).filter(|i| w >> i & 1 == 1).collect::<Vec<_>>();
        assert_eq!(combine_active_sets(&sets, CombineMode::Union).unwrap().indices(), expand(union).as_slice());
        assert_eq!(
            combine_active_sets(&sets, CombineMode::Intersection).unwrap().indices(),
            expand(inter).as_slice()
        );
    }

    #[test]
    fn cap_examples() {
        let fit = fit_with(&[0.9, -0.8, 0.1]);
        let all = ActiveSet::new([0, 1, 2]);
        assert_eq!(cap_active_set(&all, &fit, 5).unwrap(), all);
        assert_eq!(cap_active_set(&all, &fit, 2).unwrap().indices(), &[0, 1]);
        let tie = fit_with(&[0.5, -0.5, 0.5]);
        assert_eq!(cap_active_set(&all, &tie, 2).unwrap().indices(), &[0, 1]);
        assert!(cap_active_set(&all, &fit, 0).is_err());
    }

    #[test]
    fn cap_matches_sort_oracle() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let coefs: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let set = ActiveSet::new((0..40).filter(|i| i % 4 != 0).take(30));
        assert_eq!(set.len(), 30);
        let got = cap_active_set(&set, &fit_with(&coefs), 10).unwrap();
        let mut pairs: Vec<(f64, usize)> = set.indices().iter().map(|&i| (coefs[i].abs(), i)).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut want: Vec<usize> = pairs[..10].iter().map(|p| p.1).collect();
        want.sort();
        assert_eq!(got.indices(), want.as_slice());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn kkt_conditions_hold(seed in 0u64..10_000, n in 10usize..60, p in 2usize..40, lam in 0.01f64..0.5) {
            let (z, y) = random_problem(seed, n, p);
            let cfg = PenaltyConfig::lasso(lam);
            let fit = fit_elastic_net(&z, &y, &cfg).unwrap();
            prop_assert!(fit.converged);
            prop_assert!(kkt_violation(&z, &y, &fit, lam) <= 10.0 * cfg.tol);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn selection_is_scale_invariant(seed in 0u64..1000, c in 0.1f64..20.0) {
            let (z, y) = random_problem(seed, 30, 12);
            let lam = 0.15;
            let base = active_set(&fit_elastic_net(&z, &y, &PenaltyConfig::lasso(lam)).unwrap(), 1e-6);
            let ys = &y * c;
            let scaled = active_set(&fit_elastic_net(&z, &ys, &PenaltyConfig::lasso(lam * c)).unwrap(), 1e-6 * c);
            prop_assert_eq!(base, scaled);
        }
    }
}
