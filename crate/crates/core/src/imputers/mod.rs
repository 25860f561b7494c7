//! End-to-end imputers: MISNN (single and multiple target columns), its
//! single-imputation variant SISNN, and the baselines.

mod baselines;
mod misnn;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::NetConfig;
use crate::plm::PosteriorDraw;
use crate::selector::{cap_by_magnitude, ActiveSet, CombineMode, PenaltyConfig};
use crate::tabular::DataMatrix;

pub use baselines::{complete_case, durr_impute, iurr_impute, mean_impute};
pub use misnn::{misnn_multi, misnn_multi_with, misnn_single, sisnn, sisnn_multi, Nuisance};

/// Fewest complete cases any selecting imputer accepts.
pub const MIN_COMPLETE_CASES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeConfig {
    pub penalty: PenaltyConfig,
    pub net: NetConfig,
    /// Number of imputed datasets.
    pub m: usize,
    pub combine_mode: CombineMode,
    /// Active sets are capped at `max(1, ⌊fraction · n_cc⌋)` features.
    pub active_cap_fraction: f64,
    pub seed: u64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self {
            penalty: PenaltyConfig::default(),
            net: NetConfig::default(),
            m: 30,
            combine_mode: CombineMode::Union,
            active_cap_fraction: 0.5,
            seed: 0,
        }
    }
}

impl ImputeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("m must be at least 1"));
        }
        if !(self.active_cap_fraction > 0.0 && self.active_cap_fraction <= 1.0) {
            return Err(Error::invalid("active_cap_fraction must be in (0, 1]"));
        }
        self.penalty.validate()?;
        self.net.validate()
    }

    pub(crate) fn cap(&self, n_cc: usize) -> usize {
        ((self.active_cap_fraction * n_cc as f64).floor() as usize).max(1)
    }
}

/// Imputation methods understood by the harness and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Misnn,
    Sisnn,
    Mean,
    Durr,
    Iurr,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Misnn, Method::Sisnn, Method::Mean, Method::Durr, Method::Iurr];

    pub fn name(self) -> &'static str {
        match self {
            Method::Misnn => "misnn",
            Method::Sisnn => "sisnn",
            Method::Mean => "mean",
            Method::Durr => "durr",
            Method::Iurr => "iurr",
        }
    }

    /// Multiple imputation methods are pooled; the rest yield one dataset.
    pub fn is_multiple(self) -> bool {
        matches!(self, Method::Misnn | Method::Durr | Method::Iurr)
    }

    /// Runs the method on `cols`. DURR and IURR handle a single column only.
    pub fn impute(self, data: &DataMatrix, cols: &[usize], cfg: &ImputeConfig) -> Result<ImputationSet> {
        let single = || match cols {
            [c] => Ok(*c),
            _ => Err(Error::invalid(format!("{} imputes exactly one column", self.name()))),
        };
        match self {
            Method::Misnn => misnn_multi(data, cols, cfg),
            Method::Sisnn => {
                let out = sisnn_multi(data, cols, cfg)?;
                Ok(ImputationSet::single(self, data, out, cols, cfg))
            }
            Method::Mean => {
                let out = mean_impute(data)?;
                Ok(ImputationSet::single(self, data, out, cols, cfg))
            }
            Method::Durr => durr_impute(data, single()?, cfg),
            Method::Iurr => iurr_impute(data, single()?, cfg),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub columns: Vec<usize>,
    pub config: ImputeConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationSet {
    /// Completed copies, one per imputation.
    pub datasets: Vec<DataMatrix>,
    /// `draws[m][k]`: posterior draw behind copy `m`, target column `k`. Empty
    /// for methods without a parametric posterior.
    pub draws: Vec<Vec<PosteriorDraw>>,
    /// Mask of the input, so imputed cells can be located afterwards.
    pub original_mask: DMatrix<bool>,
    pub provenance: Provenance,
}

impl ImputationSet {
    pub fn m(&self) -> usize {
        self.datasets.len()
    }

    pub(crate) fn single(method: Method, input: &DataMatrix, out: DataMatrix, cols: &[usize], cfg: &ImputeConfig) -> Self {
        Self {
            datasets: vec![out],
            draws: Vec::new(),
            original_mask: input.mask().clone(),
            provenance: Provenance {
                method,
                columns: cols.to_vec(),
                config: cfg.clone(),
                seed: cfg.seed,
            },
        }
    }

    pub(crate) fn copies(method: Method, input: &DataMatrix, cols: &[usize], cfg: &ImputeConfig) -> Self {
        Self {
            datasets: vec![input.clone(); cfg.m],
            draws: Vec::new(),
            original_mask: input.mask().clone(),
            provenance: Provenance {
                method,
                columns: cols.to_vec(),
                config: cfg.clone(),
                seed: cfg.seed,
            },
        }
    }
}

/// Checks the targets and that nothing outside them is missing.
pub(crate) fn check_targets(data: &DataMatrix, cols: &[usize]) -> Result<()> {
    if cols.is_empty() {
        return Err(Error::invalid("no target columns given"));
    }
    for (i, &c) in cols.iter().enumerate() {
        data.check_column(c)?;
        if cols[..i].contains(&c) {
            return Err(Error::invalid(format!("column {c} listed twice")));
        }
    }
    if let Some(c) = data.missing_columns().into_iter().find(|c| !cols.contains(c)) {
        return Err(Error::invalid(format!("column {c} has missing entries but is not a target")));
    }
    if data.ncols() <= cols.len() {
        return Err(Error::invalid("no predictor columns left"));
    }
    Ok(())
}

/// Pearson correlation; zero when either side is constant.
pub(crate) fn correlation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let ma = a.mean();
    let mb = b.mean();
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Index of the predictor with the largest absolute correlation to any target;
/// ties go to the smaller index.
pub(crate) fn fallback_feature(targets: &[DVector<f64>], predictors: &[DMatrix<f64>]) -> usize {
    let p = predictors[0].ncols();
    let mut best = (0usize, f64::NEG_INFINITY);
    for j in 0..p {
        let score = targets
            .iter()
            .zip(predictors)
            .map(|(t, z)| correlation(t, &z.column(j).into_owned()).abs())
            .fold(0.0, f64::max);
        if score > best.1 {
            best = (j, score);
        }
    }
    best.0
}

/// Empty sets fall back to one feature; large sets keep the `limit` largest
/// scores.
pub(crate) fn finalize_active_set(
    set: ActiveSet,
    scores: &[f64],
    limit: usize,
    fallback: impl FnOnce() -> usize,
) -> Result<ActiveSet> {
    if set.is_empty() {
        let j = fallback();
        log::debug!("empty active set; falling back to feature {j}");
        return Ok(ActiveSet::new([j]));
    }
    if set.len() > limit {
        return cap_by_magnitude(&set, scores, limit);
    }
    Ok(set)
}

#[cfg(test)]
pub(crate) mod test_support {
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    use crate::rng::stream;
    use crate::tabular::DataMatrix;

    /// Linear design `D0 = Z·w + noise` over `p` predictors with roughly
    /// `rate` of `D0` masked completely at random.
    pub fn linear_table(n: usize, p: usize, rate: f64, seed: u64) -> (DataMatrix, DataMatrix) {
        let mut rng = stream(seed, &[77]);
        let mut v = DMatrix::from_fn(n, p + 1, |_, _| StandardNormal.sample(&mut rng));
        for i in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            v[(i, 0)] = 2.0 * v[(i, 1)] - v[(i, 2)] + 0.5 * v[(i, 3)] + 0.5 * e;
        }
        let truth = DataMatrix::complete(v, DataMatrix::default_names("c", p + 1)).unwrap();
        let mut data = truth.clone();
        for i in 0..n {
            if rng.random::<f64>() < rate {
                data.hide(i, 0);
            }
        }
        (data, truth)
    }
}
