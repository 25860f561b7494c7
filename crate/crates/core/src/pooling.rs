//! Rubin's rules for combining per-imputation estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Reference distribution for the interval multiplier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantile {
    #[default]
    Gaussian,
    /// Student t with caller-supplied degrees of freedom.
    T(f64),
}

impl Quantile {
    /// Upper `(1 + level)/2` quantile.
    pub fn multiplier(self, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::invalid(format!("level {level} is not in (0, 1)")));
        }
        let p = 0.5 + level / 2.0;
        match self {
            Quantile::Gaussian => Ok(Normal::standard().inverse_cdf(p)),
            Quantile::T(df) => {
                let t = StudentsT::new(0.0, 1.0, df)
                    .map_err(|_| Error::invalid(format!("degrees of freedom {df} must be positive")))?;
                Ok(t.inverse_cdf(p))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub theta_bar: DVector<f64>,
    pub var_within: DMatrix<f64>,
    pub var_between: DMatrix<f64>,
    pub var_total: DMatrix<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
    pub level: f64,
    pub m: usize,
}

impl PooledEstimate {
    /// `√diag(Var_total)`.
    pub fn standard_errors(&self) -> DVector<f64> {
        self.var_total.diagonal().map(f64::sqrt)
    }

    pub fn covers(&self, j: usize, value: f64) -> bool {
        self.ci_lower[j] <= value && value <= self.ci_upper[j]
    }
}

/// Pools `M ≥ 2` estimate vectors and their standard errors.
///
/// Within-imputation variance is diagonal (only standard errors are given);
/// between-imputation variance is the full sample covariance of the estimates.
pub fn pool(
    estimates: &[DVector<f64>],
    standard_errors: &[DVector<f64>],
    level: f64,
    quantile: Quantile,
) -> Result<PooledEstimate> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::invalid(format!(
            "pooling needs at least 2 imputations, got {m}; between-imputation variance is undefined"
        )));
    }
    if standard_errors.len() != m {
        return Err(Error::invalid(format!("{m} estimates but {} standard-error vectors", standard_errors.len())));
    }
    let d = estimates[0].len();
    if d == 0 {
        return Err(Error::invalid("estimates are empty"));
    }
    if estimates.iter().chain(standard_errors).any(|v| v.len() != d) {
        return Err(Error::invalid("estimate and standard-error vectors differ in length"));
    }
    if estimates.iter().chain(standard_errors).any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::invalid("estimates and standard errors must be finite"));
    }
    if standard_errors.iter().any(|v| v.iter().any(|&x| x < 0.0)) {
        return Err(Error::invalid("standard errors must be nonnegative"));
    }
    let q = quantile.multiplier(level)?;

    let mf = m as f64;
    let theta_bar = estimates.iter().fold(DVector::zeros(d), |a, e| a + e) / mf;
    let within_diag = standard_errors
        .iter()
        .fold(DVector::zeros(d), |a: DVector<f64>, s| a + s.component_mul(s))
        / mf;
    let var_within = DMatrix::from_diagonal(&within_diag);
    let var_between = estimates.iter().fold(DMatrix::zeros(d, d), |a, e| {
        let c = e - &theta_bar;
        a + &c * c.transpose()
    }) / (mf - 1.0);
    let var_total = &var_within + &var_between * (1.0 + 1.0 / mf);
    let half = var_total.diagonal().map(|v| q * v.max(0.0).sqrt());
    Ok(PooledEstimate {
        ci_lower: &theta_bar - &half,
        ci_upper: &theta_bar + &half,
        theta_bar,
        var_within,
        var_between,
        var_total,
        level,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| DVector::from_vec(vec![x])).collect()
    }

    #[test]
    fn three_imputation_hand_example() {
        let p = pool(&scalars(&[1.0, 1.2, 0.8]), &scalars(&[0.1; 3]), 0.95, Quantile::Gaussian).unwrap();
        assert!((p.theta_bar[0] - 1.0).abs() < 1e-12);
        assert!((p.var_within[(0, 0)] - 0.01).abs() < 1e-12);
        assert!((p.var_between[(0, 0)] - 0.04).abs() < 1e-12);
        assert!((p.var_total[(0, 0)] - (0.01 + 4.0 / 3.0 * 0.04)).abs() < 1e-12);
        let half = 1.959963984540054 * (0.01f64 + 4.0 / 3.0 * 0.04).sqrt();
        assert!((p.ci_upper[0] - 1.0 - half).abs() < 1e-9);
        assert!((1.0 - p.ci_lower[0] - half).abs() < 1e-9);
    }

    #[test]
    fn identical_estimates_have_no_between_variance() {
        let p = pool(&scalars(&[2.0; 4]), &scalars(&[0.3; 4]), 0.9, Quantile::Gaussian).unwrap();
        assert_eq!(p.var_between[(0, 0)], 0.0);
        assert_eq!(p.var_total, p.var_within);
    }

    #[test]
    fn rejects_single_imputation_and_mismatch() {
        assert!(pool(&scalars(&[1.0]), &scalars(&[0.1]), 0.95, Quantile::Gaussian).is_err());
        assert!(pool(&scalars(&[1.0, 2.0]), &scalars(&[0.1]), 0.95, Quantile::Gaussian).is_err());
        let mixed = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0, 2.0])];
        assert!(pool(&mixed, &mixed, 0.95, Quantile::Gaussian).is_err());
        assert!(pool(&scalars(&[1.0, 2.0]), &scalars(&[0.1, 0.1]), 1.0, Quantile::Gaussian).is_err());
        assert!(pool(&scalars(&[1.0, 2.0]), &scalars(&[0.1, 0.1]), 0.9, Quantile::T(0.0)).is_err());
    }

    #[test]
    fn t_quantile_widens_interval_only() {
        let est = scalars(&[1.0, 1.4, 0.9]);
        let se = scalars(&[0.2, 0.1, 0.3]);
        let g = pool(&est, &se, 0.95, Quantile::Gaussian).unwrap();
        let t = pool(&est, &se, 0.95, Quantile::T(5.0)).unwrap();
        assert_eq!(g.theta_bar, t.theta_bar);
        assert_eq!(g.var_total, t.var_total);
        assert!(t.ci_upper[0] > g.ci_upper[0]);
    }

    /// Recomputes every term with explicit loops.
    fn oracle(est: &[Vec<f64>], se: &[Vec<f64>], q: f64) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
        let m = est.len();
        let d = est[0].len();
        let mut mean = vec![0.0; d];
        for e in est {
            for j in 0..d {
                mean[j] += e[j] / m as f64;
            }
        }
        let mut b = vec![vec![0.0; d]; d];
        for e in est {
            for i in 0..d {
                for j in 0..d {
                    b[i][j] += (e[i] - mean[i]) * (e[j] - mean[j]) / (m as f64 - 1.0);
                }
            }
        }
        let mut t = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                let w = if i == j { se.iter().map(|s| s[i] * s[i]).sum::<f64>() / m as f64 } else { 0.0 };
                t[i][j] = w + (1.0 + 1.0 / m as f64) * b[i][j];
            }
        }
        let half = (0..d).map(|j| q * t[j][j].sqrt()).collect();
        (mean, b, t, half)
    }

    #[test]
    fn agrees_with_term_by_term_oracle() {
        let q = Quantile::Gaussian.multiplier(0.95).unwrap();
        for rep in 0..100 {
            let mut rng = stream(30, &[rep]);
            let m = rng.random_range(2..12);
            let d = rng.random_range(1..4);
            let est: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
            let se: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
            let to_dv = |v: &Vec<Vec<f64>>| v.iter().map(|x| DVector::from_vec(x.clone())).collect::<Vec<_>>();
            let p = pool(&to_dv(&est), &to_dv(&se), 0.95, Quantile::Gaussian).unwrap();
            let (mean, b, t, half) = oracle(&est, &se, q);
            for i in 0..d {
                assert!((p.theta_bar[i] - mean[i]).abs() <= 1e-12);
                assert!((p.ci_upper[i] - mean[i] - half[i]).abs() <= 1e-12);
                for j in 0..d {
                    assert!((p.var_between[(i, j)] - b[i][j]).abs() <= 1e-12);
                    assert!((p.var_total[(i, j)] - t[i][j]).abs() <= 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn pooled_invariants(
            vals in prop::collection::vec((-10.0f64..10.0, 0.0f64..3.0), 2..15),
            c in -3.0f64..3.0,
            b in -5.0f64..5.0,
            rot in 0usize..15,
        ) {
            let est: Vec<_> = vals.iter().map(|v| DVector::from_vec(vec![v.0])).collect();
            let se: Vec<_> = vals.iter().map(|v| DVector::from_vec(vec![v.1])).collect();
            let p = pool(&est, &se, 0.95, Quantile::Gaussian).unwrap();
            let mf = vals.len() as f64;
            prop_assert!((p.var_total[(0, 0)] - p.var_within[(0, 0)] - (1.0 + 1.0 / mf) * p.var_between[(0, 0)]).abs() <= 1e-12);
            prop_assert!(p.var_total[(0, 0)] >= p.var_within[(0, 0)] + p.var_between[(0, 0)] - 1e-12);
            prop_assert!(((p.ci_upper[0] - p.theta_bar[0]) - (p.theta_bar[0] - p.ci_lower[0])).abs() <= 1e-9);

            let k = rot % vals.len();
            let mut est_r = est.clone();
            let mut se_r = se.clone();
            est_r.rotate_left(k);
            se_r.rotate_left(k);
            let pr = pool(&est_r, &se_r, 0.95, Quantile::Gaussian).unwrap();
            prop_assert!((pr.theta_bar[0] - p.theta_bar[0]).abs() <= 1e-9);
            prop_assert!((pr.var_total[(0, 0)] - p.var_total[(0, 0)]).abs() <= 1e-9);

            let est_a: Vec<_> = est.iter().map(|e| e * c + DVector::from_element(1, b)).collect();
            let se_a: Vec<_> = se.iter().map(|s| s * c.abs()).collect();
            let pa = pool(&est_a, &se_a, 0.95, Quantile::Gaussian).unwrap();
            prop_assert!((pa.theta_bar[0] - (c * p.theta_bar[0] + b)).abs() <= 1e-9);
            prop_assert!((pa.var_total[(0, 0)] - c * c * p.var_total[(0, 0)]).abs() <= 1e-9 * (1.0 + p.var_total[(0, 0)]));
        }
    }
}
