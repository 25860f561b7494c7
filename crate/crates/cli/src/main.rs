mod config;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use misnn::benchmark::{entries, run_benchmark_with, write_report, write_summary_csv, BenchmarkSpec};
use misnn::tabular::format_float;
use misnn::{pool, read_csv, write_csv, DataMatrix, Generator, Method, Quantile};
use nalgebra::DVector;
use serde::Serialize;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "misnn", version, about = "Multiple imputation with semi-parametric neural networks")]
struct Cli {
    /// Master seed; overrides `impute.seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration entry, e.g. `impute.net.hidden_widths=[50,50]`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Cell text marking a missing value (default: empty cell).
    #[arg(long, global = true, value_name = "TOKEN")]
    missing_token: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write `<out>_masked.csv`, `<out>_truth.csv`, `<out>_meta.json`.
    Generate {
        #[arg(long, default_value = "single_col")]
        generator: Generator,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Impute a CSV file and write one completed CSV per imputation plus a draws log.
    Impute {
        /// Input CSV with a header row.
        input: PathBuf,
        #[arg(long, default_value = "misnn")]
        method: Method,
        /// Comma-separated target columns (names or 0-based indices); default:
        /// every column with missing cells.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        /// Number of imputations; overrides `impute.m`.
        #[arg(long)]
        m: Option<usize>,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine per-imputation estimates with Rubin's rules.
    Pool {
        /// CSV with one row per imputation and columns `X`, `se_X` per parameter.
        input: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Use a Student t quantile with these degrees of freedom.
        #[arg(long, value_name = "DF")]
        t_df: Option<f64>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Monte Carlo harness and write `reps.jsonl`, `summary.csv`, `summary.json`.
    Benchmark {
        #[arg(long, default_value = "single_col")]
        generator: Generator,
        /// Comma-separated methods; overrides `benchmark.methods`.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        level: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Do not record wall-clock time, so reruns are byte-identical.
        #[arg(long)]
        no_timing: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.impute.seed = seed;
    }
    if let Some(token) = cli.missing_token {
        cfg.missing_token = token;
    }
    match cli.command {
        Command::Generate { generator, out } => generate(&cfg, generator, &out),
        Command::Impute {
            input,
            method,
            columns,
            m,
            out,
        } => {
            if let Some(m) = m {
                cfg.impute.m = m;
            }
            cfg.validate()?;
            impute(&cfg, &input, method, &columns, &out)
        }
        Command::Pool { input, level, t_df, out } => pool_file(&input, level, t_df, out.as_deref()),
        Command::Benchmark {
            generator,
            methods,
            reps,
            level,
            out,
            no_timing,
        } => {
            if !methods.is_empty() {
                cfg.benchmark.methods = methods;
            }
            if let Some(r) = reps {
                cfg.benchmark.reps = r;
            }
            if let Some(l) = level {
                cfg.benchmark.level = l;
            }
            if no_timing {
                cfg.benchmark.timing = false;
            }
            cfg.validate()?;
            benchmark(&cfg, generator, &out)
        }
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|f| f.to_os_string()).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

fn generate(cfg: &RunConfig, generator: Generator, out: &Path) -> Result<()> {
    let bundle = generator.generate(cfg.impute.seed)?;
    let paths = bundle.export(out, &cfg.missing_token)?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn resolve_columns(data: &DataMatrix, requested: &[String]) -> Result<Vec<usize>> {
    if requested.is_empty() {
        let cols = data.missing_columns();
        if cols.is_empty() {
            log::warn!("input has no missing cells; copies will equal the input");
            return Ok(vec![0]);
        }
        return Ok(cols);
    }
    requested
        .iter()
        .map(|r| {
            let r = r.trim();
            if let Some(i) = data.column_names().iter().position(|n| n == r) {
                return Ok(i);
            }
            match r.parse::<usize>() {
                Ok(i) if i < data.ncols() => Ok(i),
                _ => bail!("unknown column '{r}'"),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct DrawLine<'a> {
    imputation: usize,
    column: &'a str,
    beta: Vec<f64>,
    sigma: f64,
}

fn impute(cfg: &RunConfig, input: &Path, method: Method, columns: &[String], out: &Path) -> Result<()> {
    let data = read_csv(input, &cfg.missing_token).with_context(|| format!("reading {}", input.display()))?;
    let cols = resolve_columns(&data, columns)?;
    if !method.is_multiple() && cfg.impute.m > 1 {
        log::warn!("{method} is a single imputation method; writing one dataset instead of {}", cfg.impute.m);
    }
    let set = method.impute(&data, &cols, &cfg.impute)?;

    let mut written = Vec::new();
    for (k, d) in set.datasets.iter().enumerate() {
        let path = with_suffix(out, &format!("_{}.csv", k + 1));
        write_csv(d, &path, &cfg.missing_token)?;
        written.push(path);
    }
    let draws_path = with_suffix(out, "_draws.jsonl");
    let file = fs::File::create(&draws_path).with_context(|| format!("creating {}", draws_path.display()))?;
    let mut w = BufWriter::new(file);
    for (m, per_col) in set.draws.iter().enumerate() {
        for (k, d) in per_col.iter().enumerate() {
            let line = DrawLine {
                imputation: m + 1,
                column: &data.column_names()[cols[k]],
                beta: d.beta_m.iter().copied().collect(),
                sigma: d.sigma_m,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    written.push(draws_path);
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

/// Parameter names, per-imputation estimates and standard errors.
type Estimates = (Vec<String>, Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Reads `X, se_X, ...` columns; a column named `imputation` is ignored.
fn read_estimates(path: &Path) -> Result<Estimates> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let params: Vec<(String, usize, usize)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| !h.starts_with("se_") && h.as_str() != "imputation")
        .map(|(i, h)| {
            let se = header
                .iter()
                .position(|s| s == &format!("se_{h}"))
                .with_context(|| format!("column '{h}' has no matching 'se_{h}'"))?;
            Ok((h.clone(), i, se))
        })
        .collect::<Result<_>>()?;
    if params.is_empty() {
        bail!("no estimate columns found");
    }
    for h in header.iter().filter(|h| h.starts_with("se_")) {
        if !params.iter().any(|(p, _, _)| format!("se_{p}") == *h) {
            bail!("column '{h}' has no matching estimate column");
        }
    }
    let (mut est, mut ses) = (Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |i: usize| -> Result<f64> {
            let text = rec.get(i).unwrap_or("").trim();
            text.parse::<f64>()
                .with_context(|| format!("line {}: '{}' is not a number", row + 2, text))
        };
        est.push(DVector::from_iterator(params.len(), params.iter().map(|p| cell(p.1)).collect::<Result<Vec<_>>>()?));
        ses.push(DVector::from_iterator(params.len(), params.iter().map(|p| cell(p.2)).collect::<Result<Vec<_>>>()?));
    }
    Ok((params.into_iter().map(|p| p.0).collect(), est, ses))
}

fn pool_file(input: &Path, level: f64, t_df: Option<f64>, out: Option<&Path>) -> Result<()> {
    let (names, est, ses) = read_estimates(input)?;
    let quantile = t_df.map_or(Quantile::Gaussian, Quantile::T);
    let pooled = pool(&est, &ses, level, quantile)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record([
            "parameter", "estimate", "se", "var_within", "var_between", "var_total", "ci_lower", "ci_upper", "level", "m",
        ])?;
        let se = pooled.standard_errors();
        for (j, name) in names.iter().enumerate() {
            w.write_record([
                name.clone(),
                format_float(pooled.theta_bar[j]),
                format_float(se[j]),
                format_float(pooled.var_within[(j, j)]),
                format_float(pooled.var_between[(j, j)]),
                format_float(pooled.var_total[(j, j)]),
                format_float(pooled.ci_lower[j]),
                format_float(pooled.ci_upper[j]),
                format_float(level),
                pooled.m.to_string(),
            ])?;
        }
        w.flush()?;
    }
    io::stdout().write_all(&buf)?;
    if let Some(path) = out {
        fs::write(path, &buf).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn benchmark(cfg: &RunConfig, generator: Generator, out: &Path) -> Result<()> {
    let spec = BenchmarkSpec {
        generator,
        methods: cfg.benchmark.methods.clone(),
        reps: cfg.benchmark.reps,
        impute: cfg.impute.clone(),
        level: cfg.benchmark.level,
        timing: cfg.benchmark.timing,
    };
    let report = run_benchmark_with(&spec)?;
    let files = write_report(&report, &entries(&spec.methods), out)?;
    write_summary_csv(&report.rows, io::stdout())?;
    eprintln!("wrote {}, {}, {}", files.log.display(), files.summary_csv.display(), files.summary_json.display());
    Ok(())
}
