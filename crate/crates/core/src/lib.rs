pub mod error;
pub mod linalg;
pub mod nets;
pub mod rng;
pub mod selector;
pub mod tabular;
pub mod imputers;
pub mod plm;
pub mod pooling;
pub mod synthgen;
pub mod benchmark;

pub use benchmark::{fit_analysis, imputation_mse, run_benchmark, AnalysisFit, MetricsRow};
pub use error::{Error, Result};
pub use imputers::{ImputationSet, ImputeConfig, Method};
pub use nets::NetConfig;
pub use plm::{PartialLinearFit, PosteriorDraw};
pub use pooling::{pool, PooledEstimate, Quantile};
pub use selector::{CombineMode, PenaltyConfig};
pub use synthgen::{Generator, SyntheticBundle};
pub use tabular::{read_csv, write_csv, DataMatrix};
