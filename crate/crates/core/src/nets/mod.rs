//! Feed-forward regressors used as the nuisance estimates `E[D | T]` and
//! `E[X | T]`.
//!
//! Hidden blocks are `linear -> batchnorm -> relu -> dropout`; the output
//! layer is linear. Training minimises mean squared error (averaged over rows
//! and outputs) with mini-batch Adam.

mod mlp;
mod train;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mlp::{BatchNorm, Dense, Regressor, Scaler};
pub use train::{gradient_check, train_regressor, TrainingReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Starting weights of the output layer. Hidden layers always start from a
/// seeded Glorot-uniform draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputInit {
    /// Zero weights: the untrained net predicts its output bias, i.e. the
    /// (scaled) target mean.
    #[default]
    Zero,
    Glorot,
}

/// Multiplies the learning rate by `factor` after every `every_steps`
/// optimiser steps (one step per mini-batch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub factor: f64,
    pub every_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub use_batchnorm: bool,
    pub dropout_rate: f64,
    pub output_init: OutputInit,
    pub learning_rate: f64,
    pub lr_decay: Option<LrDecay>,
    /// Maximum number of passes over the training rows.
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: Option<usize>,
    pub validation_fraction: f64,
    /// Centre and scale inputs and targets with training-set moments.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    /// One hidden layer of width 500 with batchnorm, Adam at 1e-3 and early
    /// stopping with patience 1.
    fn default() -> Self {
        Self {
            hidden_widths: vec![500],
            activation: Activation::Relu,
            use_batchnorm: true,
            dropout_rate: 0.0,
            output_init: OutputInit::Zero,
            learning_rate: 1e-3,
            lr_decay: None,
            epochs: 100,
            batch_size: 32,
            early_stop_patience: Some(1),
            validation_fraction: 0.1,
            standardize: true,
            seed: 0,
        }
    }
}

impl NetConfig {
    /// Two hidden layers of width 50 with batchnorm and dropout 0.1, 15 epochs
    /// at 1e-3 decayed by 0.6 every two steps.
    pub fn narrow() -> Self {
        Self {
            hidden_widths: vec![50, 50],
            dropout_rate: 0.1,
            learning_rate: 1e-3,
            lr_decay: Some(LrDecay {
                factor: 0.6,
                every_steps: 2,
            }),
            epochs: 15,
            early_stop_patience: None,
            ..Self::default()
        }
    }

    /// Two hidden layers of width 500, otherwise as [`NetConfig::narrow`] but
    /// 5 epochs at 1e-2.
    pub fn wide() -> Self {
        Self {
            hidden_widths: vec![500, 500],
            learning_rate: 1e-2,
            epochs: 5,
            ..Self::narrow()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must be in [0, 1)"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if let Some(d) = self.lr_decay {
            if !(d.factor > 0.0) || d.every_steps == 0 {
                return Err(Error::invalid("lr_decay needs factor > 0 and every_steps >= 1"));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation_fraction must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Anything that maps a block of rows of `T` to conditional-mean estimates,
/// one output column per modelled variable.
pub trait ConditionalMean: Send + Sync {
    fn output_dim(&self) -> usize;
    fn predict(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

impl ConditionalMean for Regressor {
    fn output_dim(&self) -> usize {
        self.output_dim()
    }

    fn predict(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Regressor::predict(self, t)
    }
}

/// Constant prediction; used when no columns are left for `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantMean {
    pub means: DVector<f64>,
}

impl ConstantMean {
    pub fn fit(y: &DMatrix<f64>) -> Self {
        Self {
            means: y.row_mean().transpose(),
        }
    }
}

impl ConditionalMean for ConstantMean {
    fn output_dim(&self) -> usize {
        self.means.len()
    }

    fn predict(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_fn(t.nrows(), self.means.len(), |_, j| self.means[j]))
    }
}

/// Wraps a closure, e.g. a known regression function in simulations.
pub struct FnMean<F> {
    dim: usize,
    f: F,
}

impl<F> FnMean<F>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(output_dim: usize, f: F) -> Self {
        Self { dim: output_dim, f }
    }
}

impl<F> ConditionalMean for FnMean<F>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64> + Send + Sync,
{
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let out = (self.f)(t);
        if out.nrows() != t.nrows() || out.ncols() != self.dim {
            return Err(Error::dims("conditional-mean closure returned the wrong shape"));
        }
        Ok(out)
    }
}

/// Restricts a multi-output estimate to one output column.
pub struct OutputColumn<'a> {
    pub inner: &'a dyn ConditionalMean,
    pub column: usize,
}

impl ConditionalMean for OutputColumn<'_> {
    fn output_dim(&self) -> usize {
        1
    }

    fn predict(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let all = self.inner.predict(t)?;
        if self.column >= all.ncols() {
            return Err(Error::dims("output column out of range"));
        }
        Ok(all.columns(self.column, 1).into_owned())
    }
}
