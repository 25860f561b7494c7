use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use misnn::imputers::misnn_single;
use misnn::nets::train_regressor;
use misnn::selector::fit_elastic_net;
use misnn::{pool, Generator, ImputeConfig, NetConfig, PenaltyConfig, Quantile};
use misnn_bench::{estimates, sparse_regression};
use nalgebra::DMatrix;

fn elastic_net(c: &mut Criterion) {
    let (z, y) = sparse_regression(100, 1000, 10, 1);
    let mut g = c.benchmark_group("elastic_net");
    for lambda in [0.05, 0.1, 0.2] {
        let cfg = PenaltyConfig::lasso(lambda);
        g.bench_function(format!("n100_p1000_lambda{lambda}"), |b| {
            b.iter(|| fit_elastic_net(&z, &y, &cfg).unwrap())
        });
    }
    g.finish();
}

fn regressor(c: &mut Criterion) {
    let (t, y) = sparse_regression(200, 20, 5, 2);
    let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let mut g = c.benchmark_group("train_regressor");
    g.sample_size(20);
    let default = NetConfig {
        epochs: 20,
        ..NetConfig::default()
    };
    g.bench_function("w500_20epochs", |b| b.iter(|| train_regressor(&t, &y, &default).unwrap()));
    g.bench_function("narrow", |b| b.iter(|| train_regressor(&t, &y, &NetConfig::narrow()).unwrap()));
    g.finish();
}

fn pooling(c: &mut Criterion) {
    let (est, se) = estimates(30, 10, 3);
    c.bench_function("pool_m30_d10", |b| b.iter(|| pool(&est, &se, 0.95, Quantile::Gaussian).unwrap()));
}

fn end_to_end(c: &mut Criterion) {
    let bundle = Generator::SingleCol.generate(4).unwrap();
    let table = bundle.imputation_table().unwrap();
    let cfg = ImputeConfig {
        m: 5,
        ..ImputeConfig::default()
    };
    let mut g = c.benchmark_group("misnn");
    g.sample_size(10);
    g.bench_function("single_col_m5", |b| {
        b.iter_batched(|| table.clone(), |t| misnn_single(&t, 0, &cfg).unwrap(), BatchSize::LargeInput)
    });
    g.finish();
}

criterion_group!(benches, elastic_net, regressor, pooling, end_to_end);
criterion_main!(benches);
