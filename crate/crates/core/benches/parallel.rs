//! Sequential vs rayon on the three data-parallel stages: session rendering
//! plus feature extraction, per-class tree fitting, and cross-validation folds.
//!
//! `cargo bench -p sonarfield --bench parallel`

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sonarfield::eval::{kfold_eval, EvalConfig};
use sonarfield::gbdt::{fit_with, TrainConfig};
use sonarfield::pipeline::{extract_plan, PipelineConfig, WindowSet};
use sonarfield::scene_sim::DatasetPlan;
use sonarfield::{GestureClass, Parallelism};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)];

fn small_set() -> WindowSet {
    let plan = DatasetPlan::uniform(&GestureClass::MAIN, 3);
    extract_plan(&plan, 1, &PipelineConfig::default(), Parallelism::Rayon).unwrap()
}

fn extraction(c: &mut Criterion) {
    let plan = DatasetPlan::uniform(&GestureClass::MAIN, 1);
    let cfg = PipelineConfig::default();
    let mut g = c.benchmark_group("extract_12_sessions");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(extract_plan(&plan, 1, &cfg, mode).unwrap()))
        });
    }
    g.finish();
}

fn training(c: &mut Criterion, set: &WindowSet) {
    let labels: Vec<&str> = set.labels.iter().map(|g| g.name()).collect();
    let cfg = TrainConfig { n_rounds: 20, ..TrainConfig::default() };
    let mut g = c.benchmark_group("fit_12_class_20_rounds");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(fit_with(&set.rows, &labels, &cfg, mode).unwrap()))
        });
    }
    g.finish();
}

fn cross_validation(c: &mut Criterion, set: &WindowSet) {
    let cfg = EvalConfig { folds: 3, train: TrainConfig { n_rounds: 10, ..TrainConfig::default() }, ..EvalConfig::default() };
    let mut g = c.benchmark_group("kfold_3_folds_10_rounds");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(kfold_eval(set, &cfg, mode).unwrap()))
        });
    }
    g.finish();
}

fn all(c: &mut Criterion) {
    extraction(c);
    let set = small_set();
    training(c, &set);
    cross_validation(c, &set);
}

criterion_group!(benches, all);
criterion_main!(benches);
