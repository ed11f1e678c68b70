//! Sequential vs parallel fan-out on the two workloads that dominate runs:
//! Monte Carlo balance audits and λ sweeps of full training runs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lindyn::init::{lambda_balanced_init, monte_carlo_balance_with, Scheme, SchemeSpec};
use lindyn::par::{map_with, Mode};
use lindyn::simulator::{train_on_stats, TrainConfig};
use lindyn::tasks::{compute_statistics, make_random_regression};

const MODES: [(&str, Mode); 2] = [("sequential", Mode::Sequential), ("parallel", Mode::Parallel)];

fn balance_audit(c: &mut Criterion) {
    let mut g = c.benchmark_group("balance_audit_160x80x120");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| monte_carlo_balance_with(mode, SchemeSpec::new(Scheme::LeCun), (160, 80, 120), 200, 0).unwrap())
        });
    }
    g.finish();
}

fn lambda_sweep(c: &mut Criterion) {
    let stats = compute_statistics(&make_random_regression(4, 4, 10, 3f64.sqrt(), 0).unwrap());
    let cfg = TrainConfig::new(0.01, 2000, 100);
    let lambdas: Vec<f64> = (0..16).map(|i| -9.0 + 18.0 * i as f64 / 15.0).collect();
    let mut g = c.benchmark_group("lambda_sweep_4x4x4");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                map_with(mode, lambdas.clone(), |l| {
                    let p = lambda_balanced_init(l, 4, 4, 4, 1.0, 7).unwrap();
                    black_box(train_on_stats(&p, &stats, &cfg).unwrap().0)
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, balance_audit, lambda_sweep);
criterion_main!(benches);
