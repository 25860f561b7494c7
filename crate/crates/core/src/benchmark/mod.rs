//! Downstream analysis fits, evaluation metrics and the Monte Carlo harness.

mod analysis;
mod harness;

pub use analysis::{fit_analysis, imputation_mse, AnalysisFit};
pub use harness::{
    aggregate, entries, read_log, run_benchmark, run_benchmark_with, verify_rows, write_log, write_report,
    write_summary_csv, BenchmarkReport, BenchmarkSpec, Entry, MetricsRow, RepRecord, ReportFiles, Style,
    SUMMARY_HEADER,
};
