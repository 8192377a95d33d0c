//! Sequential vs parallel execution of the data-parallel paths.
//! Without the `parallel` feature both variants run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use kmcsvm::datagen::{self, CohortConfig};
use kmcsvm::kmeans::{self, KMeansConfig, KRule};
use kmcsvm::model_selection::{self, GridOptions, GridSpec, IntRange};
use kmcsvm::svm::{self, TrainConfig};
use kmcsvm::{Execution, Label};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn cohort(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate_cohort");
    for (name, exec) in MODES {
        let cfg = CohortConfig {
            exec,
            ..CohortConfig::new(5.0, 1, 1)
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| datagen::generate_cohort(4, 10, black_box(&cfg)).unwrap())
        });
    }
    group.finish();
}

fn lloyd(c: &mut Criterion) {
    let (data, _) = datagen::generate_cohort(4, 10, &CohortConfig::new(5.0, 2, 1)).unwrap();
    let points = data.class_points(Label::Aggressive);
    let k = kmeans::choose_k(points.len(), KRule::SqrtNOver2).unwrap();
    let mut group = c.benchmark_group("lloyd");
    group.sample_size(20);
    for (name, exec) in MODES {
        let cfg = KMeansConfig {
            exec,
            ..KMeansConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| kmeans::lloyd(black_box(&points), k, 3, &cfg).unwrap())
        });
    }
    group.finish();
}

fn smo(c: &mut Criterion) {
    let (data, _) = datagen::generate_cohort(2, 4, &CohortConfig::new(5.0, 4, 1)).unwrap();
    let (points, labels) = (data.points(), data.labels());
    let mut group = c.benchmark_group("train_smo");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = TrainConfig {
            exec,
            ..TrainConfig::new(128.0, 1.0 / 512.0).unwrap()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| svm::train_smo(black_box(&points), &labels, &cfg, 5).unwrap())
        });
    }
    group.finish();
}

fn grid(c: &mut Criterion) {
    let (data, _) = datagen::generate_cohort(2, 3, &CohortConfig::new(1.0, 6, 1)).unwrap();
    let spec = GridSpec {
        m_range: IntRange::new(-5, 10, 3).unwrap(),
        n_range: IntRange::new(-5, 10, 3).unwrap(),
        ..GridSpec::default()
    };
    let mut group = c.benchmark_group("grid_search");
    group.sample_size(10);
    for (name, exec) in MODES {
        let opts = GridOptions {
            exec,
            ..GridOptions::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                model_selection::grid_search(black_box(&data), &spec, 5, None, 7, &opts).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, cohort, lloyd, smo, grid);
criterion_main!(benches);
