use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::analysis::{fit_analysis, imputation_mse, AnalysisFit};
use crate::error::{Error, Result};
use crate::imputers::{ImputeConfig, Method};
use crate::pooling::{pool, Quantile};
use crate::rng::{derive_seed, label};
use crate::synthgen::{Generator, SyntheticBundle};
use crate::tabular::{format_float, split_cases, DataMatrix};

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entry {
    CompleteData,
    CompleteCase,
    Method(Method),
}

impl Entry {
    pub fn label(&self) -> &'static str {
        match self {
            Entry::CompleteData => "Complete Data",
            Entry::CompleteCase => "Complete Case",
            Entry::Method(Method::Misnn) => "MISNN",
            Entry::Method(Method::Sisnn) => "SISNN",
            Entry::Method(Method::Mean) => "Mean-Impute",
            Entry::Method(Method::Durr) => "DURR",
            Entry::Method(Method::Iurr) => "IURR",
        }
    }

    pub fn style(&self) -> Style {
        match self {
            Entry::CompleteData | Entry::CompleteCase => Style::Reference,
            Entry::Method(m) if m.is_multiple() => Style::Multiple,
            Entry::Method(_) => Style::Single,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Style {
    #[serde(rename = "ref")]
    Reference,
    #[serde(rename = "SI")]
    Single,
    #[serde(rename = "MI")]
    Multiple,
}

impl Style {
    fn as_str(self) -> &'static str {
        match self {
            Style::Reference => "ref",
            Style::Single => "SI",
            Style::Multiple => "MI",
        }
    }
}

/// Outcome of one (rep, entry) pair. Estimates refer to the first analysis
/// regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub entry: Entry,
    pub theta_true: Option<f64>,
    pub theta_hat: Option<f64>,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub covered: Option<bool>,
    pub imp_mse: Option<f64>,
    pub seconds: Option<f64>,
    pub failed: bool,
    pub error: Option<String>,
}

/// Aggregates for one method. Statistics are absent when no rep succeeded
/// (and `sd` when fewer than two did).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub style: Style,
    pub bias: Option<f64>,
    pub imp_mse: Option<f64>,
    pub coverage: Option<f64>,
    pub seconds: Option<f64>,
    pub se_mean: Option<f64>,
    pub sd: Option<f64>,
    pub pred_mse: Option<f64>,
    pub reps: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub generator: Generator,
    pub methods: Vec<Method>,
    pub reps: usize,
    /// `impute.seed` is the master seed of the run.
    pub impute: ImputeConfig,
    pub level: f64,
    /// When false, no wall-clock time is recorded and repeated runs are
    /// byte-identical.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<MetricsRow>,
    pub records: Vec<RepRecord>,
}

impl BenchmarkReport {
    pub fn row(&self, entry: &Entry) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == entry.label())
    }
}

/// Runs the harness with timing enabled; the master seed is `cfg.seed`.
pub fn run_benchmark(
    generator: Generator,
    methods: &[Method],
    reps: usize,
    cfg: &ImputeConfig,
    level: f64,
) -> Result<BenchmarkReport> {
    run_benchmark_with(&BenchmarkSpec {
        generator,
        methods: methods.to_vec(),
        reps,
        impute: cfg.clone(),
        level,
        timing: true,
    })
}

pub fn entries(methods: &[Method]) -> Vec<Entry> {
    let mut out = vec![Entry::CompleteData, Entry::CompleteCase];
    for &m in methods {
        if !out.contains(&Entry::Method(m)) {
            out.push(Entry::Method(m));
        }
    }
    out
}

pub fn run_benchmark_with(spec: &BenchmarkSpec) -> Result<BenchmarkReport> {
    if spec.reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    if !(spec.level > 0.0 && spec.level < 1.0) {
        return Err(Error::invalid("level must lie in (0, 1)"));
    }
    spec.impute.validate()?;
    let list = entries(&spec.methods);
    let q = Quantile::Gaussian.multiplier(spec.level)?;
    let per_rep: Vec<Vec<RepRecord>> = (0..spec.reps)
        .into_par_iter()
        .map(|r| run_rep(spec, &list, r, q))
        .collect();
    let records: Vec<RepRecord> = per_rep.into_iter().flatten().collect();
    let rows = aggregate(&list, &records);
    Ok(BenchmarkReport { rows, records })
}

struct Estimate {
    theta: f64,
    se: f64,
    lower: f64,
    upper: f64,
}

impl Estimate {
    fn from_fit(fit: &AnalysisFit, q: f64) -> Self {
        let (theta, se) = (fit.theta_hat[0], fit.se[0]);
        Estimate {
            theta,
            se,
            lower: theta - q * se,
            upper: theta + q * se,
        }
    }
}

fn analysis_on(table: &DataMatrix, rows: &[usize], bundle: &SyntheticBundle) -> Result<AnalysisFit> {
    let z = table.block(rows, &bundle.analysis_cols)?;
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| bundle.y[i]));
    fit_analysis(&z, &y)
}

fn run_rep(spec: &BenchmarkSpec, list: &[Entry], r: usize, q: f64) -> Vec<RepRecord> {
    let seed = derive_seed(spec.impute.seed, &[label::REPLICATE, r as u64]);
    let bundle = spec.generator.generate(seed);
    let theta_true = bundle.as_ref().ok().map(|b| b.true_theta[0]);
    let mut out = Vec::with_capacity(list.len());
    for entry in list {
        let mut rec = RepRecord {
            rep: r,
            seed,
            entry: entry.clone(),
            theta_true,
            theta_hat: None,
            se: None,
            ci_lower: None,
            ci_upper: None,
            covered: None,
            imp_mse: None,
            seconds: None,
            failed: false,
            error: None,
        };
        let result = match &bundle {
            Ok(b) => evaluate(spec, entry, b, seed, q),
            Err(e) => Err(Error::Numerical(format!("generation failed: {e}"))),
        };
        match result {
            Ok((est, imp_mse, seconds)) => {
                rec.theta_hat = Some(est.theta);
                rec.se = Some(est.se);
                rec.ci_lower = Some(est.lower);
                rec.ci_upper = Some(est.upper);
                rec.covered = theta_true.map(|t| est.lower <= t && t <= est.upper);
                rec.imp_mse = imp_mse;
                rec.seconds = seconds;
            }
            Err(e) => {
                log::warn!("rep {r}, {}: {e}", entry.label());
                rec.failed = true;
                rec.error = Some(e.to_string());
            }
        }
        out.push(rec);
    }
    log::info!("rep {r} done");
    out
}

type Evaluation = (Estimate, Option<f64>, Option<f64>);

fn evaluate(spec: &BenchmarkSpec, entry: &Entry, b: &SyntheticBundle, seed: u64, q: f64) -> Result<Evaluation> {
    let n = b.data.nrows();
    let all: Vec<usize> = (0..n).collect();
    match entry {
        Entry::CompleteData => Ok((Estimate::from_fit(&analysis_on(&b.complete, &all, b)?, q), None, None)),
        Entry::CompleteCase => {
            let rows = split_cases(&b.data, &b.masked_cols)?.cc_rows;
            if rows.is_empty() {
                return Err(Error::EmptyResult("no complete cases".into()));
            }
            let fit = analysis_on(&b.data, &rows, b)?;
            Ok((Estimate::from_fit(&fit, q), None, None))
        }
        Entry::Method(method) => {
            let table = b.imputation_table()?;
            let truth = b.truth_table()?;
            let index = Method::ALL.iter().position(|m| m == method).unwrap_or(0) as u64;
            let cfg = ImputeConfig {
                seed: derive_seed(seed, &[label::METHOD, index]),
                ..spec.impute.clone()
            };
            let start = Instant::now();
            let set = method.impute(&table, &b.masked_cols, &cfg)?;
            let elapsed = start.elapsed().as_secs_f64();
            let mse = imputation_mse(&set, &truth, &b.masked_cols)?;
            let fits: Vec<AnalysisFit> = set.datasets.iter().map(|d| analysis_on(d, &all, b)).collect::<Result<_>>()?;
            let est = if fits.len() >= 2 {
                let thetas: Vec<DVector<f64>> = fits.iter().map(|f| f.theta_hat.clone()).collect();
                let ses: Vec<DVector<f64>> = fits.iter().map(|f| f.se.clone()).collect();
                let pooled = pool(&thetas, &ses, spec.level, Quantile::Gaussian)?;
                Estimate {
                    theta: pooled.theta_bar[0],
                    se: pooled.var_total[(0, 0)].sqrt(),
                    lower: pooled.ci_lower[0],
                    upper: pooled.ci_upper[0],
                }
            } else {
                Estimate::from_fit(&fits[0], q)
            };
            Ok((est, Some(mse), spec.timing.then_some(elapsed)))
        }
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v)?;
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Summary rows recomputed from per-rep records, in `list` order. Records are
/// sorted by rep first so the result does not depend on record order.
pub fn aggregate(list: &[Entry], records: &[RepRecord]) -> Vec<MetricsRow> {
    list.iter()
        .map(|entry| {
            let mut mine: Vec<&RepRecord> = records.iter().filter(|r| &r.entry == entry).collect();
            mine.sort_by_key(|r| r.rep);
            let ok: Vec<&RepRecord> = mine.iter().copied().filter(|r| !r.failed).collect();
            let pick = |f: &dyn Fn(&RepRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            let thetas = pick(&|r| r.theta_hat);
            let errors = pick(&|r| Some(r.theta_hat? - r.theta_true?));
            let covered = pick(&|r| r.covered.map(|c| if c { 1.0 } else { 0.0 }));
            let imp = pick(&|r| r.imp_mse);
            let secs = pick(&|r| r.seconds);
            MetricsRow {
                method: entry.label().to_string(),
                style: entry.style(),
                bias: mean(&errors),
                imp_mse: mean(&imp),
                coverage: mean(&covered),
                seconds: mean(&secs),
                se_mean: mean(&pick(&|r| r.se)),
                sd: sample_sd(&thetas),
                pred_mse: None,
                reps: ok.len(),
                failures: mine.len() - ok.len(),
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "Method", "Style", "Bias", "Imp MSE", "Coverage", "Seconds", "SE", "SD", "Pred MSE", "Reps", "Failures",
];

fn cell(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

pub fn write_summary_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.style.as_str().to_string(),
            cell(r.bias),
            cell(r.imp_mse),
            cell(r.coverage),
            cell(r.seconds),
            cell(r.se_mean),
            cell(r.sd),
            cell(r.pred_mse),
            r.reps.to_string(),
            r.failures.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

pub fn write_log<W: Write>(records: &[RepRecord], mut writer: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
    }
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<RepRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path.to_path_buf(), e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Paths written by [`write_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub log: PathBuf,
    pub summary_csv: PathBuf,
    pub summary_json: PathBuf,
}

fn close_enough(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0),
        _ => false,
    }
}

/// Checks that `rows` are what the records aggregate to.
pub fn verify_rows(list: &[Entry], records: &[RepRecord], rows: &[MetricsRow]) -> Result<()> {
    let again = aggregate(list, records);
    let same = again.len() == rows.len()
        && again.iter().zip(rows).all(|(a, b)| {
            a.method == b.method
                && a.reps == b.reps
                && a.failures == b.failures
                && [
                    (a.bias, b.bias),
                    (a.imp_mse, b.imp_mse),
                    (a.coverage, b.coverage),
                    (a.seconds, b.seconds),
                    (a.se_mean, b.se_mean),
                    (a.sd, b.sd),
                    (a.pred_mse, b.pred_mse),
                ]
                .into_iter()
                .all(|(x, y)| close_enough(x, y))
        });
    if same {
        Ok(())
    } else {
        Err(Error::Numerical("summary disagrees with the per-rep log".into()))
    }
}

/// Writes `reps.jsonl`, `summary.csv` and `summary.json` into `dir`, then
/// re-reads the log and checks the summary against it.
pub fn write_report(report: &BenchmarkReport, list: &[Entry], dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
    let files = ReportFiles {
        log: dir.join("reps.jsonl"),
        summary_csv: dir.join("summary.csv"),
        summary_json: dir.join("summary.json"),
    };
    let create = |p: &Path| fs::File::create(p).map(BufWriter::new).map_err(|e| Error::io(p.to_path_buf(), e));
    let mut log = create(&files.log)?;
    write_log(&report.records, &mut log)?;
    log.flush().map_err(|e| Error::io(files.log.clone(), e))?;
    write_summary_csv(&report.rows, create(&files.summary_csv)?)?;
    let mut json = create(&files.summary_json)?;
    serde_json::to_writer_pretty(&mut json, &report.rows)?;
    json.write_all(b"\n").map_err(|e| Error::io(files.summary_json.clone(), e))?;
    json.flush().map_err(|e| Error::io(files.summary_json.clone(), e))?;

    verify_rows(list, &read_log(&files.log)?, &report.rows)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::PenaltyConfig;

    fn quick(reps: usize) -> BenchmarkSpec {
        let mut impute = ImputeConfig {
            penalty: PenaltyConfig::lasso(0.1),
            m: 3,
            seed: 11,
            ..ImputeConfig::default()
        };
        impute.net.hidden_widths = vec![8];
        impute.net.epochs = 5;
        BenchmarkSpec {
            generator: Generator::SingleCol,
            methods: vec![Method::Mean, Method::Iurr],
            reps,
            impute,
            level: 0.95,
            timing: false,
        }
    }

    #[test]
    fn zero_reps_rejected() {
        assert!(matches!(run_benchmark_with(&quick(0)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rows_and_log_agree() {
        let spec = quick(3);
        let report = run_benchmark_with(&spec).unwrap();
        let list = entries(&spec.methods);
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.records.len(), 12);
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&report, &list, dir.path()).unwrap();
        let log = read_log(&files.log).unwrap();
        assert_eq!(log, report.records);

        // sd from the stored estimates, computed independently
        let iurr: Vec<f64> = log
            .iter()
            .filter(|r| r.entry == Entry::Method(Method::Iurr) && !r.failed)
            .map(|r| r.theta_hat.unwrap())
            .collect();
        let m = iurr.iter().sum::<f64>() / iurr.len() as f64;
        let sd = (iurr.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (iurr.len() - 1) as f64).sqrt();
        let row = report.row(&Entry::Method(Method::Iurr)).unwrap();
        assert!((row.sd.unwrap() - sd).abs() < 1e-12);

        let csv = fs::read_to_string(&files.summary_csv).unwrap();
        assert!(csv.starts_with("Method,Style,Bias,Imp MSE,Coverage,Seconds,SE,SD,Pred MSE,Reps,Failures\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn tampered_rows_are_caught() {
        let spec = quick(2);
        let report = run_benchmark_with(&spec).unwrap();
        let list = entries(&spec.methods);
        let mut rows = report.rows.clone();
        rows[2].bias = rows[2].bias.map(|b| b + 1e-6);
        assert!(verify_rows(&list, &report.records, &rows).is_err());
        assert!(verify_rows(&list, &report.records, &report.rows).is_ok());
    }

    #[test]
    fn aggregation_ignores_record_order() {
        let report = run_benchmark_with(&quick(3)).unwrap();
        let mut shuffled = report.records.clone();
        shuffled.reverse();
        assert_eq!(aggregate(&entries(&[Method::Mean, Method::Iurr]), &shuffled), report.rows);
    }

    #[test]
    fn runs_are_reproducible() {
        let a = run_benchmark_with(&quick(2)).unwrap();
        let b = run_benchmark_with(&quick(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failures_are_counted_not_fatal() {
        // DURR refuses several targets, so every multi-column rep fails for it
        let mut spec = quick(2);
        spec.generator = Generator::MultiCol;
        spec.methods = vec![Method::Durr];
        let report = run_benchmark_with(&spec).unwrap();
        let row = report.row(&Entry::Method(Method::Durr)).unwrap();
        assert_eq!((row.reps, row.failures), (0, 2));
        assert_eq!(row.bias, None);
        assert_eq!(report.row(&Entry::CompleteData).unwrap().reps, 2);
    }

    #[test]
    fn single_imputation_uses_own_standard_error() {
        let report = run_benchmark_with(&quick(1)).unwrap();
        let rec = report.records.iter().find(|r| r.entry == Entry::Method(Method::Mean)).unwrap();
        let half = rec.ci_upper.unwrap() - rec.theta_hat.unwrap();
        assert!((half - 1.959963984540054 * rec.se.unwrap()).abs() < 1e-9);
    }
}
