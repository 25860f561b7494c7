use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{Regressor, Scaler};
use super::{NetConfig, OutputInit};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean mini-batch loss per epoch (scaled target units).
    pub train_loss: Vec<f64>,
    /// Held-out loss per epoch; empty without early stopping.
    pub validation_loss: Vec<f64>,
    /// Epoch (0-based) whose weights were kept.
    pub best_epoch: usize,
    pub steps: usize,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: Vec<&mut [f64]>, grads: &[DMatrix<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.as_slice()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn check_training_inputs(t: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if t.nrows() != y.nrows() {
        return Err(Error::dims(format!("{} input rows vs {} target rows", t.nrows(), y.nrows())));
    }
    if t.nrows() < 4 {
        return Err(Error::invalid("training needs at least four rows"));
    }
    if t.ncols() == 0 || y.ncols() == 0 {
        return Err(Error::invalid("inputs and targets need at least one column"));
    }
    if t.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data must be finite"));
    }
    Ok(())
}

/// Mean squared error over every cell and its gradient w.r.t. `pred`.
fn mse_and_grad(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let diff = pred - target;
    let count = diff.len() as f64;
    (diff.norm_squared() / count, diff * (2.0 / count))
}

fn mse(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    (pred - target).norm_squared() / pred.len() as f64
}

/// Splits shuffled row order into consecutive batches; a trailing single row
/// is merged into the previous batch so batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() == 1) {
        out.pop();
        let start = order.len() - 1 - out.last().map_or(0, |c| c.len());
        out.pop();
        out.push(&order[start..]);
    }
    out
}

/// Trains a regressor of `y` on `t`; deterministic given `cfg.seed`.
pub fn train_regressor(t: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &NetConfig) -> Result<Regressor> {
    cfg.validate()?;
    check_training_inputs(t, y)?;
    let n = t.nrows();
    let mut rng: StreamRng = stream(cfg.seed, &[]);

    let mut order: Vec<usize> = (0..n).collect();
    let (train_rows, val_rows) = match cfg.early_stop_patience {
        Some(_) => {
            order.shuffle(&mut rng);
            let n_val = ((cfg.validation_fraction * n as f64).ceil() as usize).clamp(1, n - 2);
            let (a, b) = order.split_at(n - n_val);
            (a.to_vec(), b.to_vec())
        }
        None => (order, Vec::new()),
    };

    let t_train = t.select_rows(&train_rows);
    let y_train = y.select_rows(&train_rows);
    let (in_scaler, out_scaler) = if cfg.standardize {
        (Some(Scaler::fit(&t_train)), Some(Scaler::fit(&y_train)))
    } else {
        (None, None)
    };
    let scale_in = |m: DMatrix<f64>| in_scaler.as_ref().map_or(m.clone(), |s| s.apply(&m));
    let scale_out = |m: DMatrix<f64>| out_scaler.as_ref().map_or(m.clone(), |s| s.apply(&m));
    let x_train = scale_in(t_train);
    let y_train = scale_out(y_train);
    let x_val = scale_in(t.select_rows(&val_rows));
    let y_val = scale_out(y.select_rows(&val_rows));

    let mut net = Regressor::init(
        t.ncols(),
        y.ncols(),
        &cfg.hidden_widths,
        cfg.use_batchnorm,
        cfg.dropout_rate,
        cfg.output_init,
        &mut rng,
    );
    let shapes: Vec<usize> = net.params_mut().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(&shapes);

    let mut report = TrainingReport {
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
        best_epoch: 0,
        steps: 0,
    };
    let mut best: Option<(f64, Regressor)> = None;
    let mut stale = 0usize;
    let mut idx: Vec<usize> = (0..x_train.nrows()).collect();

    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in batches(&idx, cfg.batch_size) {
            let xb = x_train.select_rows(batch);
            let yb = y_train.select_rows(batch);
            let (pred, cache) = net.forward_train(&xb, Some(&mut rng), true);
            let (loss, d_out) = mse_and_grad(&pred, &yb);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("training loss became non-finite at epoch {epoch}")));
            }
            let grads = net.backward(&cache, &d_out);
            let lr = match cfg.lr_decay {
                Some(d) => cfg.learning_rate * d.factor.powi((report.steps / d.every_steps) as i32),
                None => cfg.learning_rate,
            };
            adam.step(net.params_mut(), &grads, lr);
            report.steps += 1;
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
        }
        report.train_loss.push(epoch_loss / seen as f64);

        if let Some(patience) = cfg.early_stop_patience {
            let val = mse(&net.infer_scaled(&x_val), &y_val);
            if !val.is_finite() {
                return Err(Error::Numerical("validation loss became non-finite".into()));
            }
            report.validation_loss.push(val);
            if best.as_ref().is_none_or(|(b, _)| val < *b) {
                best = Some((val, net.clone()));
                report.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience.max(1) {
                    break;
                }
            }
        } else {
            report.best_epoch = epoch;
        }
    }

    if let Some((_, kept)) = best {
        net = kept;
    }
    net.input_scaler = in_scaler;
    net.output_scaler = out_scaler;
    net.frozen = true;
    net.report = Some(report);
    Ok(net)
}

/// Largest relative discrepancy between backpropagated gradients and central
/// finite differences (step `1e-5`) of the mean-squared-error loss, over all
/// parameters. The denominator is `max(|analytic|, |numeric|, 1e-3)`.
///
/// Batchnorm and dropout are switched off; the random batch is redrawn until
/// every hidden pre-activation is at least `1e-3` away from the relu kink.
pub fn gradient_check(cfg: &NetConfig, n: usize, dims: (usize, usize)) -> Result<f64> {
    let (input_dim, output_dim) = dims;
    if n == 0 || input_dim == 0 || output_dim == 0 {
        return Err(Error::invalid("gradient check needs positive sizes"));
    }
    const H: f64 = 1e-5;
    let mut rng: StreamRng = stream(cfg.seed, &[0x6772_6164]);
    let mut net = Regressor::init(input_dim, output_dim, &cfg.hidden_widths, false, 0.0, OutputInit::Glorot, &mut rng);
    // random biases so the check also covers them away from zero
    for p in net.params_mut() {
        if p.len() <= 64 {
            for v in p.iter_mut() {
                *v += 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            }
        }
    }

    let draw = |rng: &mut StreamRng| {
        (
            DMatrix::from_fn(n, input_dim, |_, _| StandardNormal.sample(rng)),
            DMatrix::from_fn(n, output_dim, |_, _| StandardNormal.sample(rng)),
        )
    };
    let (mut x, mut y) = draw(&mut rng);
    for _ in 0..100 {
        if near_kink(&pre_activations(&net, &x), 1e-3) {
            (x, y) = draw(&mut rng);
        } else {
            break;
        }
    }

    let (pred, cache) = net.forward_train::<StreamRng>(&x, None, false);
    let (_, d_out) = mse_and_grad(&pred, &y);
    let analytic = net.backward(&cache, &d_out);

    let loss_at = |net: &mut Regressor| {
        let (p, _) = net.forward_train::<StreamRng>(&x, None, false);
        mse(&p, &y)
    };
    let mut worst = 0.0f64;
    let n_tensors = analytic.len();
    for ti in 0..n_tensors {
        for k in 0..analytic[ti].len() {
            let orig = net.params_mut()[ti][k];
            net.params_mut()[ti][k] = orig + H;
            let up = loss_at(&mut net);
            net.params_mut()[ti][k] = orig - H;
            let down = loss_at(&mut net);
            net.params_mut()[ti][k] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[ti].as_slice()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn pre_activations(net: &Regressor, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    let mut a = x.clone();
    for dense in &net.hidden {
        let mut z = &a * &dense.weights;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(dense.bias[j]);
        }
        out.push(z.clone());
        z.apply(|v| *v = v.max(0.0));
        a = z;
    }
    out
}

fn near_kink(pre: &[DMatrix<f64>], margin: f64) -> bool {
    pre.iter().any(|z| z.iter().any(|v| v.abs() < margin))
}
