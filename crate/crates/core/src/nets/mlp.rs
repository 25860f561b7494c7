use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::train::TrainingReport;
use super::OutputInit;
use crate::error::{Error, Result};

/// Affine layer `x W + b` with `W` stored as `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        Self {
            weights: DMatrix::from_fn(fan_in, fan_out, |_, _| dist.sample(rng)),
            bias: DVector::zeros(fan_out),
        }
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weights;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[j]);
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: DVector::from_element(width, 1.0),
            beta: DVector::zeros(width),
            running_mean: DVector::zeros(width),
            running_var: DVector::from_element(width, 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn infer(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let inv = 1.0 / (self.running_var[j] + self.eps).sqrt();
            let (g, b, m) = (self.gamma[j], self.beta[j], self.running_mean[j]);
            col.apply(|v| *v = g * (*v - m) * inv + b);
        }
        out
    }
}

/// Affine rescaling `(x - mean) / scale`, column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Scaler {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = x.row_mean().transpose();
        let scale = DVector::from_fn(x.ncols(), |j, _| {
            let m = mean[j];
            let var = x.column(j).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            if var > 1e-24 * (1.0 + m * m) {
                var.sqrt()
            } else {
                1.0
            }
        });
        Self { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        out
    }

    pub fn invert(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            col.apply(|v| *v = *v * s + m);
        }
        out
    }
}

/// Feed-forward regressor. After training (or when assembled from explicit
/// weights) it is frozen: prediction is deterministic, with dropout off and
/// batchnorm on running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub(crate) hidden: Vec<Dense>,
    pub(crate) norms: Vec<Option<BatchNorm>>,
    pub(crate) output: Dense,
    pub(crate) dropout_rate: f64,
    pub(crate) input_scaler: Option<Scaler>,
    pub(crate) output_scaler: Option<Scaler>,
    pub(crate) frozen: bool,
    pub(crate) report: Option<TrainingReport>,
}

/// Everything the backward pass needs from one hidden block.
pub(crate) struct HiddenCache {
    input: DMatrix<f64>,
    xhat: Option<DMatrix<f64>>,
    inv_std: Option<DVector<f64>>,
    pre_relu: DMatrix<f64>,
    drop_mask: Option<DMatrix<f64>>,
}

pub(crate) struct ForwardCache {
    hidden: Vec<HiddenCache>,
    last: DMatrix<f64>,
}

impl Regressor {
    pub(crate) fn init<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        hidden_widths: &[usize],
        use_batchnorm: bool,
        dropout_rate: f64,
        output_init: OutputInit,
        rng: &mut R,
    ) -> Self {
        let mut hidden = Vec::with_capacity(hidden_widths.len());
        let mut norms = Vec::with_capacity(hidden_widths.len());
        let mut fan_in = input_dim;
        for &w in hidden_widths {
            hidden.push(Dense::glorot(fan_in, w, rng));
            norms.push(use_batchnorm.then(|| BatchNorm::new(w)));
            fan_in = w;
        }
        let mut output = Dense::glorot(fan_in, output_dim, rng);
        if output_init == OutputInit::Zero {
            output.weights.fill(0.0);
        }
        Self {
            hidden,
            norms,
            output,
            dropout_rate,
            input_scaler: None,
            output_scaler: None,
            frozen: false,
            report: None,
        }
    }

    /// Frozen relu network from explicit `(weights, bias)` pairs, the last
    /// pair being the output layer. No batchnorm, no scaling.
    pub fn from_layers(layers: Vec<(DMatrix<f64>, DVector<f64>)>) -> Result<Self> {
        let mut dense: Vec<Dense> = Vec::with_capacity(layers.len());
        for (w, b) in layers {
            if w.ncols() != b.len() {
                return Err(Error::dims("bias length must equal fan_out"));
            }
            if let Some(prev) = dense.last() {
                if prev.weights.ncols() != w.nrows() {
                    return Err(Error::dims("consecutive layers do not conform"));
                }
            }
            dense.push(Dense { weights: w, bias: b });
        }
        let output = dense.pop().ok_or_else(|| Error::invalid("need at least one layer"))?;
        let norms = vec![None; dense.len()];
        Ok(Self {
            hidden: dense,
            norms,
            output,
            dropout_rate: 0.0,
            input_scaler: None,
            output_scaler: None,
            frozen: true,
            report: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.output.weights.nrows(), |d| d.weights.nrows())
    }

    pub fn output_dim(&self) -> usize {
        self.output.weights.ncols()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn report(&self) -> Option<&TrainingReport> {
        self.report.as_ref()
    }

    pub fn parameter_count(&self) -> usize {
        let dense = |d: &Dense| d.weights.len() + d.bias.len();
        self.hidden.iter().map(dense).sum::<usize>()
            + dense(&self.output)
            + self
                .norms
                .iter()
                .flatten()
                .map(|bn| bn.gamma.len() + bn.beta.len())
                .sum::<usize>()
    }

    /// Inference-mode forward pass in original units.
    pub fn predict(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if !self.frozen {
            return Err(Error::invalid("regressor is still training"));
        }
        if t.ncols() != self.input_dim() {
            return Err(Error::dims(format!(
                "regressor expects {} inputs, got {}",
                self.input_dim(),
                t.ncols()
            )));
        }
        let x = match &self.input_scaler {
            Some(s) => s.apply(t),
            None => t.clone(),
        };
        let y = self.infer_scaled(&x);
        Ok(match &self.output_scaler {
            Some(s) => s.invert(&y),
            None => y,
        })
    }

    /// Inference-mode pass on already-scaled inputs, output on the scaled
    /// target scale.
    pub(crate) fn infer_scaled(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        for (dense, bn) in self.hidden.iter().zip(&self.norms) {
            let mut z = dense.forward(&a);
            if let Some(bn) = bn {
                z = bn.infer(&z);
            }
            z.apply(|v| *v = v.max(0.0));
            a = z;
        }
        self.output.forward(&a)
    }

    /// Training-mode forward pass. Uses batch statistics for batchnorm (and
    /// updates the running averages when `update_running` is set) and samples
    /// dropout masks from `rng` when given.
    pub(crate) fn forward_train<R: Rng + ?Sized>(
        &mut self,
        x: &DMatrix<f64>,
        mut rng: Option<&mut R>,
        update_running: bool,
    ) -> (DMatrix<f64>, ForwardCache) {
        let b = x.nrows();
        let bf = b as f64;
        let keep = 1.0 - self.dropout_rate;
        let mut caches = Vec::with_capacity(self.hidden.len());
        let mut a = x.clone();
        for (dense, bn) in self.hidden.iter().zip(self.norms.iter_mut()) {
            let z = dense.forward(&a);
            let (u, xhat, inv_std) = match bn {
                Some(bn) => {
                    let mut xhat = z.clone();
                    let mut inv_std = DVector::zeros(z.ncols());
                    let mut u = z.clone();
                    for j in 0..z.ncols() {
                        let col = z.column(j);
                        let mean = col.sum() / bf;
                        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / bf;
                        let inv = 1.0 / (var + bn.eps).sqrt();
                        inv_std[j] = inv;
                        for i in 0..b {
                            let h = (z[(i, j)] - mean) * inv;
                            xhat[(i, j)] = h;
                            u[(i, j)] = bn.gamma[j] * h + bn.beta[j];
                        }
                        if update_running {
                            let unbiased = if b > 1 { var * bf / (bf - 1.0) } else { var };
                            bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mean;
                            bn.running_var[j] = (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * unbiased;
                        }
                    }
                    (u, Some(xhat), Some(inv_std))
                }
                None => (z, None, None),
            };
            let mut h = u.map(|v| v.max(0.0));
            let drop_mask = match rng.as_deref_mut() {
                Some(r) if self.dropout_rate > 0.0 => {
                    let mask = DMatrix::from_fn(h.nrows(), h.ncols(), |_, _| {
                        if r.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    h.component_mul_assign(&mask);
                    Some(mask)
                }
                _ => None,
            };
            caches.push(HiddenCache {
                input: a,
                xhat,
                inv_std,
                pre_relu: u,
                drop_mask,
            });
            a = h;
        }
        let out = self.output.forward(&a);
        (
            out,
            ForwardCache {
                hidden: caches,
                last: a,
            },
        )
    }

    /// Gradients of the loss given `d_out = dL/d(output)`, in the order of
    /// [`Regressor::params_mut`].
    pub(crate) fn backward(&self, cache: &ForwardCache, d_out: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let b = d_out.nrows() as f64;
        let mut per_layer: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(self.hidden.len());
        let out_w = cache.last.tr_mul(d_out);
        let out_b = column_sums(d_out);
        let mut grad_a = d_out * self.output.weights.transpose();
        for l in (0..self.hidden.len()).rev() {
            let c = &cache.hidden[l];
            let mut d = grad_a;
            if let Some(mask) = &c.drop_mask {
                d.component_mul_assign(mask);
            }
            d.zip_apply(&c.pre_relu, |g, u| {
                if u <= 0.0 {
                    *g = 0.0
                }
            });
            let mut grads = Vec::with_capacity(4);
            let dz = match (&self.norms[l], &c.xhat, &c.inv_std) {
                (Some(bn), Some(xhat), Some(inv_std)) => {
                    let mut dgamma = DVector::zeros(d.ncols());
                    let dbeta = column_sums(&d);
                    let mut dz = d.clone();
                    for j in 0..d.ncols() {
                        let mut sum_dx = 0.0;
                        let mut sum_dx_xhat = 0.0;
                        let mut sum_d_xhat = 0.0;
                        for i in 0..d.nrows() {
                            let dx = d[(i, j)] * bn.gamma[j];
                            sum_dx += dx;
                            sum_dx_xhat += dx * xhat[(i, j)];
                            sum_d_xhat += d[(i, j)] * xhat[(i, j)];
                        }
                        dgamma[j] = sum_d_xhat;
                        let k = inv_std[j] / b;
                        for i in 0..d.nrows() {
                            let dx = d[(i, j)] * bn.gamma[j];
                            dz[(i, j)] = k * (b * dx - sum_dx - xhat[(i, j)] * sum_dx_xhat);
                        }
                    }
                    grads.push(DMatrix::from_column_slice(dgamma.len(), 1, dgamma.as_slice()));
                    grads.push(dbeta);
                    dz
                }
                _ => d,
            };
            let dw = c.input.tr_mul(&dz);
            let db = column_sums(&dz);
            grad_a = &dz * self.hidden[l].weights.transpose();
            let mut layer = vec![dw, db];
            layer.extend(grads);
            per_layer.push(layer);
        }
        per_layer.reverse();
        let mut all: Vec<DMatrix<f64>> = per_layer.into_iter().flatten().collect();
        all.push(out_w);
        all.push(out_b);
        all
    }

    /// Mutable parameter slices: for each hidden layer `W, b[, gamma, beta]`,
    /// then the output `W, b`.
    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (dense, bn) in self.hidden.iter_mut().zip(self.norms.iter_mut()) {
            out.push(dense.weights.as_mut_slice());
            out.push(dense.bias.as_mut_slice());
            if let Some(bn) = bn {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out.push(self.output.weights.as_mut_slice());
        out.push(self.output.bias.as_mut_slice());
        out
    }
}

fn column_sums(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.ncols(), 1, |j, _| m.column(j).sum())
}
