//! Sequential against parallel execution of the data-parallel hot spots.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use psr::classifiers::batch_boundary_radii;
use psr::data::{generate_platoon_dataset, sample_gaussian, GaussianSpec, PlatoonRanges};
use psr::family::train_family;
use psr::kernels::gram;
use psr::{Execution, Hyperparameters, KernelSpec, ScalableModel, TrainOptions, Variant};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn gaussian(n_train: usize, n_test: usize) -> (psr::Dataset, psr::Dataset) {
    let spec = GaussianSpec {
        n_train,
        n_calib: 0,
        n_test,
        seed: 11,
        ..GaussianSpec::default()
    };
    let (train, _, test) = sample_gaussian(&spec).unwrap();
    (train, test)
}

fn family() -> Vec<Hyperparameters> {
    let mut out = Vec::new();
    for eta in [0.1, 1.0, 10.0] {
        for tau in [0.1, 0.5, 0.9] {
            out.push(Hyperparameters::new(eta, tau, KernelSpec::Gaussian { gamma: 0.5 }).unwrap());
        }
    }
    out
}

fn bench(c: &mut Criterion) {
    let (train, test) = gaussian(400, 20_000);
    let kernel = KernelSpec::Gaussian { gamma: 0.5 };
    let opts = TrainOptions::default();

    let mut g = c.benchmark_group("gram_1000");
    let (big, _) = gaussian(1000, 0);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| gram(&kernel, big.points(), exec).unwrap()));
    }
    g.finish();

    let mut g = c.benchmark_group("train_family_svm_9");
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| train_family(&train, &family(), Variant::Svm, &opts, exec).unwrap())
        });
    }
    g.finish();

    let members = train_family(&train, &family(), Variant::Svm, &opts, Execution::Parallel).unwrap();
    let models: Vec<&ScalableModel> = members.iter().map(|m| m.as_ref().unwrap().as_ref()).collect();
    let mut g = c.benchmark_group("batch_radii_9x20000");
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| batch_boundary_radii(&models, train.points(), test.points(), exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("platoon_generation");
    let ranges = PlatoonRanges::default();
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, 500), &500, |b, &n| {
            b.iter(|| generate_platoon_dataset(n, &ranges, 3, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default()
        .sample_size(10)
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(3));
    targets = bench
}
criterion_main!(benches);
