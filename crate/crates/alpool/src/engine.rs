//! The active learning loop and the experiment harnesses built on it.
//!
//! Every run is a pure function of its [`ExperimentConfig`], data and seed.
//! Repetitions and sweep values fan out over rayon; within a run the
//! iterations are sequential and only scoring is parallel.

use std::collections::BTreeMap;
use std::time::Instant;

use alpool_core::classifier::{confusion_result, Capacity, ClassifierSpec, Classifier, Learner};
use alpool_core::data::initial_seed_set;
use alpool_core::noise::inject_label_noise;
use alpool_core::seed;
use alpool_core::strategies::{self, Selection, SelectionContext, Strategy};
use alpool_core::{ConfusionMatrix, Dataset, Embedding, Error, Pool, Result, SampleId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Tolerance absorbing floating-point noise in the batch and stop arithmetic.
const SCHEDULE_EPS: f64 = 1e-9;

/// Unlabelled pool (whose labels act as the oracle) and held-out test set.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub pool: Dataset,
    pub test: Dataset,
}

impl ExperimentData {
    pub fn new(pool: Dataset, test: Dataset) -> Result<Self> {
        if pool.features().dim() != test.features().dim() {
            return Err(Error::input(format!(
                "pool has {} features, test set {}",
                pool.features().dim(),
                test.features().dim()
            )));
        }
        if pool.class_count() != test.class_count() {
            return Err(Error::input(format!(
                "pool has {} classes, test set {}",
                pool.class_count(),
                test.class_count()
            )));
        }
        if test.is_empty() {
            return Err(Error::input("test set is empty"));
        }
        Ok(ExperimentData { pool, test })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub classifier: ClassifierSpec,
    pub initial_per_class: usize,
    pub growth_fraction: f64,
    pub stop_fraction_of_pool: f64,
    pub repetitions: usize,
    pub label_noise_rate: f64,
    pub master_seed: u64,
    /// Last iteration index to run; `None` runs until the stop rule fires.
    pub max_iterations: Option<usize>,
}

impl ExperimentConfig {
    /// Defaults: 100 per class, growth 0.2, stop at a third of the pool,
    /// 5 repetitions, no label noise, seed 0.
    pub fn new(strategy: Strategy, classifier: ClassifierSpec) -> Self {
        ExperimentConfig {
            strategy,
            classifier,
            initial_per_class: 100,
            growth_fraction: 0.2,
            stop_fraction_of_pool: 1.0 / 3.0,
            repetitions: 5,
            label_noise_rate: 0.0,
            master_seed: 0,
            max_iterations: None,
        }
    }

    pub fn validate(&self, data: &ExperimentData) -> Result<()> {
        self.strategy.validate()?;
        self.classifier.validate()?;
        if self.initial_per_class == 0 {
            return Err(Error::config("initial_per_class must be positive"));
        }
        if !(self.growth_fraction > 0.0 && self.growth_fraction.is_finite()) {
            return Err(Error::config("growth_fraction must be positive"));
        }
        if !(self.stop_fraction_of_pool > 0.0 && self.stop_fraction_of_pool <= 1.0) {
            return Err(Error::config("stop_fraction_of_pool must be in (0, 1]"));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_noise_rate) {
            return Err(Error::config(format!(
                "label noise rate {} not in [0, 1)",
                self.label_noise_rate
            )));
        }
        let classes = self.classifier.head.class_count();
        if classes != data.pool.class_count() {
            return Err(Error::config(format!(
                "classifier has {classes} classes, dataset {}",
                data.pool.class_count()
            )));
        }
        let needed = self.initial_per_class * classes;
        if data.pool.len() < needed {
            return Err(Error::config(format!(
                "pool of {} cannot seed {} per class for {classes} classes",
                data.pool.len(),
                self.initial_per_class
            )));
        }
        Ok(())
    }

    /// Seed of repetition `rep`.
    pub fn repetition_seed(&self, rep: usize) -> u64 {
        seed::derive(self.master_seed, "repetition", rep as u64)
    }

    /// Query size for a labelled set of `labelled` samples.
    pub fn batch_size(&self, labelled: usize) -> usize {
        (self.growth_fraction * labelled as f64 - SCHEDULE_EPS).ceil().max(1.0) as usize
    }

    /// Whether a labelled set of `labelled` samples reached the stop size.
    pub fn reached_stop(&self, labelled: usize, pool: usize) -> bool {
        labelled as f64 >= self.stop_fraction_of_pool * pool as f64 - SCHEDULE_EPS
    }
}

/// Why a balanced strategy ended a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Termination {
    pub class: usize,
    pub quota: usize,
    pub available: usize,
}

/// One train-evaluate-select iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iteration: usize,
    pub labelled_size: usize,
    pub test_accuracy: f64,
    pub dev_accuracy: Option<f64>,
    pub confusion: ConfusionMatrix,
    /// Ids that entered the labelled set right before this iteration's
    /// training: the initial seed set at iteration 0, the previous batch after.
    pub added_ids: Vec<SampleId>,
    /// Ids queried after this iteration's evaluation.
    pub selected_ids: Vec<SampleId>,
    /// Not serialized, so that logs are deterministic.
    #[serde(skip)]
    pub wall_time_ms: f64,
    /// Training seed of this iteration.
    pub seed: u64,
    pub terminated: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub seed: u64,
    pub records: Vec<RunRecord>,
}

impl Run {
    pub fn termination(&self) -> Option<(usize, &Termination)> {
        self.records
            .iter()
            .find_map(|r| r.terminated.as_ref().map(|t| (r.iteration, t)))
    }

    /// Labelled set used for training at `iteration`.
    pub fn labelled_at(&self, iteration: usize) -> Result<Vec<SampleId>> {
        if iteration >= self.records.len() {
            return Err(Error::config(format!(
                "iteration {iteration} beyond a run of {} iterations",
                self.records.len()
            )));
        }
        let mut ids: Vec<SampleId> = self.records[..=iteration]
            .iter()
            .flat_map(|r| r.added_ids.iter().copied())
            .collect();
        ids.sort_unstable();
        Ok(ids)
    }
}

/// Test accuracy and confusion matrix, predicting in parallel.
pub fn evaluate_parallel<C: Classifier>(model: &C, test: &Dataset) -> Result<(f64, ConfusionMatrix)> {
    let pairs = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let id = SampleId::from(i);
            Ok((test.label(id), model.predict_class(test.row(id))?))
        })
        .collect::<Result<Vec<_>>>()?;
    confusion_result(&pairs, test.class_count())
}

fn embed_all<C: Classifier>(
    model: &C,
    pool: &Dataset,
    ids: &[SampleId],
) -> Result<BTreeMap<SampleId, Embedding>> {
    ids.par_iter()
        .map(|&id| Ok((id, model.embed(pool.row(id))?)))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

fn selection_context<C: Classifier>(
    model: &C,
    pool: &Dataset,
    state: &Pool,
    strategy: &Strategy,
    confusion: &ConfusionMatrix,
    rng_seed: u64,
) -> Result<SelectionContext> {
    let unlabelled: Vec<SampleId> = state.unlabelled().iter().copied().collect();
    let scored = unlabelled
        .par_iter()
        .map(|&id| {
            let x = pool.row(id);
            Ok((id, model.class_scores(x)?, model.predict_class(x)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ctx = SelectionContext {
        rng_seed,
        ..SelectionContext::default()
    };
    for (id, p, c) in scored {
        ctx.probs.insert(id, p);
        ctx.predicted_class.insert(id, c);
    }
    if strategy.name.needs_embeddings() {
        let labelled: Vec<SampleId> = state.labelled().iter().copied().collect();
        ctx.embeddings_unlabelled = Some(embed_all(model, pool, &unlabelled)?);
        ctx.embeddings_labelled = Some(embed_all(model, pool, &labelled)?);
    }
    if strategy.name.needs_confusion() {
        ctx.confusion = Some(confusion.clone());
    }
    Ok(ctx)
}

/// One active learning run with the configured MLP.
pub fn run_active_learning(data: &ExperimentData, config: &ExperimentConfig, seed: u64) -> Result<Run> {
    run_with_learner(data, config, &config.classifier, seed)
}

/// One active learning run: seed the labelled set, then train, evaluate and
/// query until the stop size, pool exhaustion, the iteration cap or a
/// strategy's termination.
pub fn run_with_learner<L: Learner>(
    data: &ExperimentData,
    config: &ExperimentConfig,
    learner: &L,
    run_seed: u64,
) -> Result<Run> {
    config.validate(data)?;
    let pool_data = &data.pool;
    let initial = initial_seed_set(
        pool_data,
        config.initial_per_class,
        seed::derive(run_seed, "initial", 0),
    )?;
    let labels = inject_label_noise(
        pool_data.labels(),
        pool_data.class_count(),
        config.label_noise_rate,
        seed::derive(run_seed, "noise", 0),
    )?
    .labels;
    let mut state = Pool::new(pool_data.len(), initial.iter().copied())?;
    let mut added: Vec<SampleId> = initial.into_iter().collect();
    let mut records = Vec::new();

    for iteration in 0.. {
        let start = Instant::now();
        let ids: Vec<SampleId> = state.labelled().iter().copied().collect();
        let train_labels: Vec<usize> = ids.iter().map(|id| labels[id.index()]).collect();
        let train_seed = seed::derive(run_seed, "train", iteration as u64);
        let model = learner.fit(pool_data.features(), &ids, &train_labels, train_seed)?;
        let (test_accuracy, confusion) = evaluate_parallel(&model, &data.test)?;
        let dev_accuracy = model.dev_accuracy();

        let done = config.reached_stop(ids.len(), pool_data.len())
            || state.unlabelled().is_empty()
            || config.max_iterations.is_some_and(|m| iteration >= m);
        let mut selected_ids = Vec::new();
        let mut terminated = None;
        if !done {
            let n = config.batch_size(ids.len()).min(state.unlabelled().len());
            let ctx = selection_context(
                &model,
                pool_data,
                &state,
                &config.strategy,
                &confusion,
                seed::derive(run_seed, "select", iteration as u64),
            )?;
            match strategies::select(&config.strategy, &ctx, n)? {
                Selection::Batch(batch) if batch.is_empty() => {
                    log::info!(
                        "{}: no admissible samples at iteration {iteration}, stopping",
                        config.strategy
                    );
                }
                Selection::Batch(batch) => {
                    state.label(&batch)?;
                    selected_ids = batch.ids().to_vec();
                }
                Selection::Terminate {
                    class,
                    quota,
                    available,
                } => {
                    log::info!(
                        "{}: terminated at iteration {iteration}, class {class} needs {quota}, {available} left",
                        config.strategy
                    );
                    terminated = Some(Termination {
                        class,
                        quota,
                        available,
                    });
                }
            }
        }
        log::debug!(
            "{} seed {run_seed} iteration {iteration}: |L| = {}, accuracy {test_accuracy:.4}, {:.0} ms",
            config.strategy,
            ids.len(),
            start.elapsed().as_secs_f64() * 1e3
        );
        let stop = done || terminated.is_some() || selected_ids.is_empty();
        records.push(RunRecord {
            iteration,
            labelled_size: ids.len(),
            test_accuracy,
            dev_accuracy,
            confusion,
            added_ids: std::mem::replace(&mut added, selected_ids.clone()),
            selected_ids,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            seed: train_seed,
            terminated,
        });
        if stop {
            break;
        }
    }
    Ok(Run {
        seed: run_seed,
        records,
    })
}

/// `config.repetitions` runs with seeds derived from `master_seed`, in
/// repetition order.
pub fn repeat_runs(data: &ExperimentData, config: &ExperimentConfig) -> Result<Vec<Run>> {
    config.validate(data)?;
    (0..config.repetitions)
        .into_par_iter()
        .map(|rep| run_active_learning(data, config, config.repetition_seed(rep)))
        .collect()
}

/// Median and spread of test accuracy at one labelled-set size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub labelled_size: usize,
    pub accuracy_median: f64,
    pub accuracy_std: f64,
    pub repetitions: usize,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    assert!(n > 0, "median of an empty set");
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Sample standard deviation; 0 for a single value.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Per-labelled-size aggregate over runs. Runs that stopped earlier simply
/// contribute to fewer points.
pub fn aggregate(runs: &[Run]) -> Vec<CurvePoint> {
    let mut by_size: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    for r in runs.iter().flat_map(|run| &run.records) {
        let entry = by_size.entry(r.labelled_size).or_insert((r.iteration, Vec::new()));
        entry.0 = entry.0.min(r.iteration);
        entry.1.push(r.test_accuracy);
    }
    by_size
        .into_iter()
        .map(|(labelled_size, (iteration, acc))| CurvePoint {
            iteration,
            labelled_size,
            accuracy_median: median(&acc),
            accuracy_std: std_dev(&acc),
            repetitions: acc.len(),
        })
        .collect()
}

/// Hyperparameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LearningRate,
    BatchSize,
    Dropout,
    NoiseRate,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 4] = [
        SweepAxis::LearningRate,
        SweepAxis::BatchSize,
        SweepAxis::Dropout,
        SweepAxis::NoiseRate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::LearningRate => "learning_rate",
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::Dropout => "dropout",
            SweepAxis::NoiseRate => "noise_rate",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        match self {
            SweepAxis::LearningRate => c.classifier.learning_rate = value,
            SweepAxis::BatchSize => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::config(format!("batch size {value} is not a positive integer")));
                }
                c.classifier.batch_size = value as usize;
            }
            SweepAxis::Dropout => c.classifier.dropout_rate = value,
            SweepAxis::NoiseRate => c.label_noise_rate = value,
        }
        Ok(c)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::config(format!("unsupported sweep axis '{s}'")))
    }
}

/// One [`repeat_runs`] per value with everything else fixed. Repetition
/// seeds, and hence initial labelled sets, are shared across values.
pub fn run_sweep(
    data: &ExperimentData,
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<(f64, Vec<Run>)>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|&v| {
            let c = axis.apply(base, v)?;
            c.validate(data)?;
            Ok((v, c))
        })
        .collect::<Result<Vec<_>>>()?;
    configs
        .par_iter()
        .map(|(v, c)| Ok((*v, repeat_runs(data, c)?)))
        .collect()
}

/// Checkpoint accuracy of a classifier trained on another run's selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRecord {
    pub checkpoint: usize,
    pub labelled_size: usize,
    pub test_accuracy: f64,
}

/// Trains `trainee` from scratch on the selector run's labelled set at each
/// checkpoint, with the same training seed the selector used there.
pub fn run_cross_training(
    data: &ExperimentData,
    config: &ExperimentConfig,
    selector_run: &Run,
    trainee: &ClassifierSpec,
    checkpoints: &[usize],
) -> Result<Vec<CrossRecord>> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("checkpoints must be strictly ascending"));
    }
    let labels = inject_label_noise(
        data.pool.labels(),
        data.pool.class_count(),
        config.label_noise_rate,
        seed::derive(selector_run.seed, "noise", 0),
    )?
    .labels;
    checkpoints
        .iter()
        .map(|&k| {
            let ids = selector_run.labelled_at(k)?;
            let y: Vec<usize> = ids.iter().map(|id| labels[id.index()]).collect();
            let model = trainee.fit(data.pool.features(), &ids, &y, selector_run.records[k].seed)?;
            let (test_accuracy, _) = evaluate_parallel(&model, &data.test)?;
            Ok(CrossRecord {
                checkpoint: k,
                labelled_size: ids.len(),
                test_accuracy,
            })
        })
        .collect()
}

/// Source of the selections in a cross-training grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Capacity(Capacity),
    Random,
}

impl Selector {
    pub fn name(self) -> &'static str {
        match self {
            Selector::Capacity(c) => c.as_str(),
            Selector::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossTrainPlan<'a> {
    pub capacities: &'a [Capacity],
    pub checkpoints: &'a [usize],
}

/// Selector runs of one repetition, keyed by selector.
pub type SelectorRuns = BTreeMap<Selector, Run>;

/// Selection runs for every capacity with the configured strategy plus one
/// random-selection run, per repetition, stopping at the last checkpoint.
pub fn selector_runs(
    data: &ExperimentData,
    config: &ExperimentConfig,
    plan: CrossTrainPlan<'_>,
) -> Result<Vec<SelectorRuns>> {
    let last = *plan
        .checkpoints
        .last()
        .ok_or_else(|| Error::config("cross-training needs at least one checkpoint"))?;
    let mut base = config.clone();
    base.max_iterations = Some(last);
    let mut jobs: Vec<(Selector, ExperimentConfig)> = plan
        .capacities
        .iter()
        .map(|&c| {
            let mut cfg = base.clone();
            cfg.classifier.hidden_layers = c.hidden_layers();
            (Selector::Capacity(c), cfg)
        })
        .collect();
    let mut random = base.clone();
    random.strategy = Strategy::new(strategies::StrategyKind::Random);
    jobs.push((Selector::Random, random));
    (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            jobs.par_iter()
                .map(|(sel, cfg)| Ok((*sel, run_active_learning(data, cfg, cfg.repetition_seed(rep))?)))
                .collect::<Result<SelectorRuns>>()
        })
        .collect()
}

/// One cell of the cross-training grid, aggregated over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCell {
    pub checkpoint: usize,
    pub trainee: Capacity,
    pub selector: Selector,
    pub labelled_size_median: f64,
    pub accuracy_median: f64,
    pub accuracy_std: f64,
    pub repetitions: usize,
}

/// Every trainee capacity trained on every selector's labelled sets.
pub fn cross_training_grid(
    data: &ExperimentData,
    config: &ExperimentConfig,
    plan: CrossTrainPlan<'_>,
    runs: &[SelectorRuns],
) -> Result<Vec<CrossCell>> {
    let mut jobs = Vec::new();
    for &trainee in plan.capacities {
        for rep_runs in runs {
            for (&sel, run) in rep_runs {
                jobs.push((trainee, sel, run));
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|&(trainee, sel, run)| {
            let mut spec = config.classifier.clone();
            spec.hidden_layers = trainee.hidden_layers();
            Ok((trainee, sel, run_cross_training(data, config, run, &spec, plan.checkpoints)?))
        })
        .collect::<Result<Vec<_>>>()?;
    // (checkpoint, trainee, selector) -> (labelled sizes, accuracies)
    type Cell = (usize, Capacity, Selector);
    let mut cells: BTreeMap<Cell, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (trainee, sel, records) in results {
        for r in records {
            let e = cells.entry((r.checkpoint, trainee, sel)).or_default();
            e.0.push(r.test_accuracy);
            e.1.push(r.labelled_size as f64);
        }
    }
    Ok(cells
        .into_iter()
        .map(|((checkpoint, trainee, selector), (acc, sizes))| CrossCell {
            checkpoint,
            trainee,
            selector,
            labelled_size_median: median(&sizes),
            accuracy_median: median(&acc),
            accuracy_std: std_dev(&acc),
            repetitions: acc.len(),
        })
        .collect())
}
