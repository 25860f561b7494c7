#![allow(dead_code)]

use misnn::rng::stream;
use misnn::{DataMatrix, ImputeConfig, Method, NetConfig, PenaltyConfig};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Linear table: the first `targets` columns depend on the remaining `p`,
/// and each target is masked completely at random with probability `rate`.
/// At least 12 rows stay complete on the targets and at least one cell is
/// hidden per target.
pub fn random_table(seed: u64, n: usize, p: usize, targets: usize, rate: f64) -> (DataMatrix, DataMatrix) {
    let mut rng = stream(seed, &[0x7461_626c]);
    let k = targets + p;
    let mut v = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    for t in 0..targets {
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            let a = v[(i, targets + t % p)];
            let b = v[(i, targets + (t + 1) % p)];
            v[(i, t)] = 1.5 * a - b + 0.5 * e;
        }
    }
    let truth = DataMatrix::complete(v, DataMatrix::default_names("c", k)).unwrap();
    let mut data = truth.clone();
    for i in 12..n {
        for t in 0..targets {
            if rng.random::<f64>() < rate {
                data.hide(i, t);
            }
        }
    }
    for t in 0..targets {
        if data.observed_count(t) == n {
            data.hide(n - 1 - t, t);
        }
    }
    (data, truth)
}

pub fn quick_cfg(m: usize, seed: u64) -> ImputeConfig {
    ImputeConfig {
        penalty: PenaltyConfig::lasso(0.05),
        net: NetConfig {
            hidden_widths: vec![8],
            epochs: 10,
            early_stop_patience: Some(2),
            ..NetConfig::default()
        },
        m,
        seed,
        ..ImputeConfig::default()
    }
}

/// Checks copy count, completeness, bitwise preservation of observed cells
/// and, for MISNN with `M ≥ 2`, that some imputed cell differs across copies.
pub fn check_invariants(method: Method, data: &DataMatrix, cols: &[usize], cfg: &ImputeConfig) -> Result<(), String> {
    let set = method.impute(data, cols, cfg).map_err(|e| format!("{method}: {e}"))?;
    let expect = if method.is_multiple() { cfg.m } else { 1 };
    if set.datasets.len() != expect {
        return Err(format!("{method}: {} copies, expected {expect}", set.datasets.len()));
    }
    for (k, d) in set.datasets.iter().enumerate() {
        if d.values().shape() != data.values().shape() || !d.is_complete() {
            return Err(format!("{method}: copy {k} is incomplete or reshaped"));
        }
        for i in 0..data.nrows() {
            for j in 0..data.ncols() {
                if data.is_observed(i, j) && d.values()[(i, j)].to_bits() != data.values()[(i, j)].to_bits() {
                    return Err(format!("{method}: copy {k} changed observed cell ({i}, {j})"));
                }
            }
        }
    }
    if method == Method::Misnn && cfg.m >= 2 {
        let first = &set.datasets[0];
        let differs = set.datasets[1..].iter().any(|d| {
            cols.iter()
                .any(|&c| data.missing_rows(c).iter().any(|&i| d.values()[(i, c)] != first.values()[(i, c)]))
        });
        if !differs {
            return Err(format!("{method}: all {} copies agree on every imputed cell", cfg.m));
        }
    }
    Ok(())
}

/// Methods applicable to the given number of target columns.
pub fn methods_for(targets: usize) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| targets == 1 || !matches!(m, Method::Durr | Method::Iurr))
        .collect()
}
