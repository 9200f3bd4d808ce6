#![allow(dead_code)]

use alpool::engine::{ExperimentConfig, ExperimentData, Run};
use alpool_core::classifier::{ClassifierSpec, Head};
use alpool_core::data::{generate_synthetic, stratified_split, SyntheticSpec};
use alpool_core::strategies::{Strategy, StrategyKind};
use alpool_core::Dataset;

pub fn split(all: &Dataset, test_fraction: f64) -> ExperimentData {
    let (test, pool) = stratified_split(all, test_fraction, 99).unwrap();
    ExperimentData::new(all.subset(&pool, "pool"), all.subset(&test, "test")).unwrap()
}

/// 3 well-separated classes, 100 samples each, 4 features.
pub fn small_data() -> ExperimentData {
    let all = generate_synthetic(&SyntheticSpec {
        class_count: 3,
        clusters_per_class: 2,
        samples_per_cluster: 50,
        feature_dim: 4,
        cluster_std: 0.5,
        class_separation: 6.0,
        seed: 4,
    })
    .unwrap();
    split(&all, 0.2)
}

pub fn fast_spec(classes: usize) -> ClassifierSpec {
    let mut spec = ClassifierSpec::new(vec![8], Head::Flat { class_count: classes });
    spec.learning_rate = 0.1;
    spec.max_epochs = 30;
    spec.early_stop_patience = 10;
    spec
}

pub fn small_config(kind: StrategyKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(Strategy::new(kind), fast_spec(3));
    c.initial_per_class = 5;
    c.repetitions = 2;
    c
}

/// Runs with wall-clock times cleared, for equality checks.
pub fn untimed(mut runs: Vec<Run>) -> Vec<Run> {
    for r in runs.iter_mut().flat_map(|r| r.records.iter_mut()) {
        r.wall_time_ms = 0.0;
    }
    runs
}
