//! Synthetic designs with logit-MAR missingness.
//!
//! Feature labels in the generator descriptions are 1-based (`D1`, `D2`, ...);
//! `D_j` lives in column `j - 1` of the returned matrices.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plm::sigmoid;
use crate::rng::{derive_seed, label, stream};
use crate::tabular::{write_csv, DataMatrix};

/// Autoregressive Gaussian design: `Cov(col i, col j) = rho^|i-j|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Spec {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub seed: u64,
}

/// A term of the missingness logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Column(usize),
    Response,
}

/// `P(target missing) = sigmoid(intercept + Σ w·source)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitMissSpec {
    pub target: usize,
    pub coeffs: Vec<(Source, f64)>,
    pub intercept: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    SingleCol,
    MultiCol,
}

impl Generator {
    pub fn id(self) -> &'static str {
        match self {
            Generator::SingleCol => "single_col",
            Generator::MultiCol => "multi_col",
        }
    }

    pub fn generate(self, seed: u64) -> Result<SyntheticBundle> {
        match self {
            Generator::SingleCol => gen_single_col(seed),
            Generator::MultiCol => gen_multi_col(seed),
        }
    }
}

impl std::str::FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_col" | "single" => Ok(Generator::SingleCol),
            "multi_col" | "multi" => Ok(Generator::MultiCol),
            other => Err(Error::invalid(format!("unknown generator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    /// Features with the missingness mask applied.
    pub data: DataMatrix,
    /// Ground-truth features.
    pub complete: DataMatrix,
    pub y: DVector<f64>,
    /// Coefficients of the analysis regressors, in order.
    pub true_theta: DVector<f64>,
    /// 0-based feature columns used as regressors in the analysis model.
    pub analysis_cols: Vec<usize>,
    /// 0-based feature columns that may contain missing values.
    pub masked_cols: Vec<usize>,
    pub generator_id: String,
    pub seed: u64,
}

/// Provenance sidecar written next to exported bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub generator_id: String,
    pub seed: u64,
    pub true_theta: Vec<f64>,
    pub analysis_cols: Vec<usize>,
    pub masked_cols: Vec<usize>,
    pub n: usize,
    pub p: usize,
}

impl SyntheticBundle {
    /// Features plus the response as a last, fully observed column `y`.
    pub fn imputation_table(&self) -> Result<DataMatrix> {
        self.data.append_columns(&DMatrix::from_column_slice(self.y.len(), 1, self.y.as_slice()), &["y".to_string()])
    }

    /// Complete counterpart of [`SyntheticBundle::imputation_table`].
    pub fn truth_table(&self) -> Result<DataMatrix> {
        self.complete.append_columns(&DMatrix::from_column_slice(self.y.len(), 1, self.y.as_slice()), &["y".to_string()])
    }

    pub fn meta(&self) -> BundleMeta {
        BundleMeta {
            generator_id: self.generator_id.clone(),
            seed: self.seed,
            true_theta: self.true_theta.iter().copied().collect(),
            analysis_cols: self.analysis_cols.clone(),
            masked_cols: self.masked_cols.clone(),
            n: self.data.nrows(),
            p: self.data.ncols(),
        }
    }

    /// Writes `<prefix>_masked.csv`, `<prefix>_truth.csv` and `<prefix>_meta.json`.
    pub fn export(&self, prefix: &Path, missing_token: &str) -> Result<[PathBuf; 3]> {
        let with_suffix = |s: &str| {
            let mut name = prefix.file_name().map(|f| f.to_os_string()).unwrap_or_default();
            name.push(s);
            prefix.with_file_name(name)
        };
        let masked = with_suffix("_masked.csv");
        let truth = with_suffix("_truth.csv");
        let meta = with_suffix("_meta.json");
        write_csv(&self.imputation_table()?, &masked, missing_token)?;
        write_csv(&self.truth_table()?, &truth, missing_token)?;
        let text = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(&meta, text + "\n").map_err(|e| Error::io(&meta, e))?;
        Ok([masked, truth, meta])
    }
}

fn ar1_into<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, rng: &mut R) -> DMatrix<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev: f64 = StandardNormal.sample(rng);
        z[(i, 0)] = prev;
        for j in 1..p {
            let e: f64 = StandardNormal.sample(rng);
            prev = rho * prev + innov * e;
            z[(i, j)] = prev;
        }
    }
    z
}

/// `n × p` draws with AR(1) correlation across columns.
pub fn gen_ar1(spec: &Ar1Spec) -> Result<DMatrix<f64>> {
    if spec.n == 0 || spec.p == 0 {
        return Err(Error::invalid("n and p must be positive"));
    }
    if !(spec.rho > -1.0 && spec.rho < 1.0) {
        return Err(Error::invalid(format!("rho {} is not in (-1, 1)", spec.rho)));
    }
    let mut rng = stream(spec.seed, &[label::GENERATE]);
    Ok(ar1_into(spec.n, spec.p, spec.rho, &mut rng))
}

/// Masks `spec.target` row by row with the logit probability.
pub fn inject_mar(data: &DataMatrix, y: Option<&DVector<f64>>, spec: &LogitMissSpec) -> Result<DataMatrix> {
    data.check_column(spec.target)?;
    if data.observed_count(spec.target) != data.nrows() {
        return Err(Error::invalid(format!("target column {} already has missing entries", spec.target)));
    }
    for &(src, w) in &spec.coeffs {
        if !w.is_finite() {
            return Err(Error::invalid("logit weights must be finite"));
        }
        match src {
            Source::Column(c) => {
                data.check_column(c)?;
                if c == spec.target {
                    return Err(Error::invalid("the target cannot drive its own missingness"));
                }
                if data.observed_count(c) != data.nrows() {
                    return Err(Error::invalid(format!("source column {c} has missing entries")));
                }
            }
            Source::Response => match y {
                Some(y) if y.len() == data.nrows() => {}
                Some(y) => return Err(Error::dims(format!("{} responses for {} rows", y.len(), data.nrows()))),
                None => return Err(Error::invalid("logit uses the response but none was given")),
            },
        }
    }
    if spec.intercept.is_nan() {
        return Err(Error::invalid("intercept is NaN"));
    }
    let mut rng = stream(spec.seed, &[label::MASK]);
    let mut out = data.clone();
    for i in 0..data.nrows() {
        let eta = spec.coeffs.iter().fold(spec.intercept, |acc, &(src, w)| {
            let v = match src {
                Source::Column(c) => data.values()[(i, c)],
                Source::Response => y.map_or(0.0, |y| y[i]),
            };
            acc + w * v
        });
        let u: f64 = rng.random();
        if u < sigmoid(eta) {
            out.hide(i, spec.target);
        }
    }
    Ok(out)
}

const SIGNAL_WEIGHT_SQ: f64 = 0.2;
const AR_RHO: f64 = 0.5;

/// 1-based labels `2..=11` and `50..=59`.
fn signal_labels() -> impl Iterator<Item = usize> {
    (2..=11).chain(50..=59)
}

fn finish(
    complete: DMatrix<f64>,
    y: DVector<f64>,
    specs: Vec<LogitMissSpec>,
    analysis_cols: Vec<usize>,
    generator: Generator,
    seed: u64,
) -> Result<SyntheticBundle> {
    let names = DataMatrix::default_names("D", complete.ncols());
    let complete = DataMatrix::complete(complete, names)?;
    let masked_cols = specs.iter().map(|s| s.target).collect();
    let mut data = complete.clone();
    // every logit reads the complete features, so masking one target never
    // changes the probabilities of another
    for spec in &specs {
        let masked = inject_mar(&complete, Some(&y), spec)?;
        for i in masked.missing_rows(spec.target) {
            data.hide(i, spec.target);
        }
    }
    Ok(SyntheticBundle {
        data,
        complete,
        y,
        true_theta: DVector::from_element(analysis_cols.len(), 1.0),
        analysis_cols,
        masked_cols,
        generator_id: generator.id().to_string(),
        seed,
    })
}

/// `n = 100`, `p = 1000`; only `D1` is masked.
///
/// `D2..D1000` are AR(1) with `rho = 0.5`; `D1 ~ N(Σ_S √0.2·D_j, 1)` with
/// `S = {D2..D11, D50..D59}`; `y ~ N(D1 + D2 + D3, 1)`;
/// `logit P(D1 missing) = 3 − 0.1·D2 + 3·D3 − 2·y`.
pub fn gen_single_col(seed: u64) -> Result<SyntheticBundle> {
    let (n, p) = (100, 1000);
    let mut rng = stream(seed, &[label::GENERATE]);
    let mut d = DMatrix::zeros(n, p);
    d.columns_mut(1, p - 1).copy_from(&ar1_into(n, p - 1, AR_RHO, &mut rng));
    let alpha = SIGNAL_WEIGHT_SQ.sqrt();
    for i in 0..n {
        let mean: f64 = signal_labels().map(|l| alpha * d[(i, l - 1)]).sum();
        let e: f64 = StandardNormal.sample(&mut rng);
        d[(i, 0)] = mean + e;
    }
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        d[(i, 0)] + d[(i, 1)] + d[(i, 2)] + e
    });
    let spec = LogitMissSpec {
        target: 0,
        coeffs: vec![(Source::Column(1), -0.1), (Source::Column(2), 3.0), (Source::Response, -2.0)],
        intercept: 3.0,
        seed: derive_seed(seed, &[label::MASK, 0]),
    };
    finish(d, y, vec![spec], vec![0, 1, 2], Generator::SingleCol, seed)
}

/// `n = 200`, `p = 1000`; `D1..D3` are masked.
///
/// `D4..D1000` are AR(1) with `rho = 0.5`. Given them, `D1, D2, D3` are
/// independent `N(Σ √0.2·D_j, 1)` over the signal labels available among
/// `D4..D1000` (`D4..D11`, `D50..D59`). `y ~ N(D1 + ... + D5, 6)`. Logits:
/// `−1 − D4 + 2·D5 − y`, `−1 − D4 + 2·D51 − y`, `−1 − D50 + 2·D51 − y`.
pub fn gen_multi_col(seed: u64) -> Result<SyntheticBundle> {
    let (n, p) = (200, 1000);
    let mut rng = stream(seed, &[label::GENERATE]);
    let mut d = DMatrix::zeros(n, p);
    d.columns_mut(3, p - 3).copy_from(&ar1_into(n, p - 3, AR_RHO, &mut rng));
    let alpha = SIGNAL_WEIGHT_SQ.sqrt();
    for i in 0..n {
        let mean: f64 = signal_labels().filter(|&l| l >= 4).map(|l| alpha * d[(i, l - 1)]).sum();
        for k in 0..3 {
            let e: f64 = StandardNormal.sample(&mut rng);
            d[(i, k)] = mean + e;
        }
    }
    let sd = 6f64.sqrt();
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        (0..5).map(|j| d[(i, j)]).sum::<f64>() + sd * e
    });
    let logit = |k: usize, a: usize, b: usize| LogitMissSpec {
        target: k,
        coeffs: vec![(Source::Column(a - 1), -1.0), (Source::Column(b - 1), 2.0), (Source::Response, -1.0)],
        intercept: -1.0,
        seed: derive_seed(seed, &[label::MASK, k as u64]),
    };
    let specs = vec![logit(0, 4, 5), logit(1, 4, 51), logit(2, 50, 51)];
    finish(d, y, specs, vec![0, 1, 2, 3, 4], Generator::MultiCol, seed)
}
