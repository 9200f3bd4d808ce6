//! The TOML run configuration and dataset resolution.

use std::path::{Path, PathBuf};

use alpool_core::classifier::{Capacity, ClassifierSpec, Head};
use alpool_core::data::{generate_hierarchical, generate_synthetic, stratified_split, SyntheticSpec};
use alpool_core::strategies::Strategy;
use alpool_core::{seed, Dataset, Features};
use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};

use crate::engine::{ExperimentConfig, ExperimentData, SweepAxis};
use crate::loaders::{load_csv, load_idx};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn default_test_fraction() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

/// Where the data comes from. Without an explicit test set, a stratified
/// `test_fraction` of the data is held out as the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetDescriptor {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        class_count: Option<usize>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        test_path: Option<PathBuf>,
        class_count: Option<usize>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        /// Min-max scale every feature to [0, 1] over pool and test together.
        #[serde(default = "default_true")]
        normalize: bool,
    },
    Synthetic {
        class_count: usize,
        clusters_per_class: usize,
        samples_per_cluster: usize,
        feature_dim: usize,
        cluster_std: f64,
        class_separation: f64,
        seed: u64,
        /// Subclass counts per top-level group; makes a two-level hierarchy.
        hierarchy: Option<Vec<usize>>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_learning_rate() -> f64 {
    0.05
}

fn default_batch_size() -> usize {
    32
}

fn default_max_epochs() -> usize {
    1000
}

fn default_patience() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    /// Preset widths; mutually exclusive with `hidden_layers`.
    pub capacity: Option<Capacity>,
    pub hidden_layers: Option<Vec<usize>>,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    /// Per-node sigmoid head over the dataset's label hierarchy.
    #[serde(default)]
    pub hierarchical: bool,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            capacity: None,
            hidden_layers: None,
            dropout_rate: 0.0,
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            early_stop_patience: default_patience(),
            hierarchical: false,
        }
    }
}

fn default_initial() -> usize {
    100
}

fn default_growth() -> f64 {
    0.2
}

fn default_stop() -> f64 {
    1.0 / 3.0
}

fn default_reps() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_initial")]
    pub initial_per_class: usize,
    #[serde(default = "default_growth")]
    pub growth_fraction: f64,
    #[serde(default = "default_stop")]
    pub stop_fraction_of_pool: f64,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub label_noise_rate: f64,
    #[serde(default)]
    pub master_seed: u64,
    pub max_iterations: Option<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            initial_per_class: default_initial(),
            growth_fraction: default_growth(),
            stop_fraction_of_pool: default_stop(),
            repetitions: default_reps(),
            label_noise_rate: 0.0,
            master_seed: 0,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

fn default_checkpoints() -> Vec<usize> {
    vec![3, 5, 10, 15]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossTrainSection {
    pub capacities: Vec<Capacity>,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub schema_version: u32,
    pub dataset: DatasetDescriptor,
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub sweep: Option<SweepSection>,
    pub crosstrain: Option<CrossTrainSection>,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let c: RunConfigFile = toml::from_str(text)?;
        ensure!(
            c.schema_version == CONFIG_SCHEMA_VERSION,
            "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
            c.schema_version
        );
        ensure!(!c.strategies.is_empty(), "at least one strategy is required");
        for s in &c.strategies {
            s.validate()?;
        }
        if let Some(ct) = &c.crosstrain {
            ensure!(!ct.capacities.is_empty(), "crosstrain.capacities is empty");
            ensure!(!ct.checkpoints.is_empty(), "crosstrain.checkpoints is empty");
            ensure!(
                ct.checkpoints.windows(2).all(|w| w[0] < w[1]),
                "crosstrain.checkpoints must be strictly ascending"
            );
        }
        Ok(c)
    }

    /// Reads `path`; relative dataset paths are resolved against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut c = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut c.dataset {
            DatasetDescriptor::Idx {
                images,
                labels,
                test_images,
                test_labels,
                ..
            } => {
                fix(images);
                fix(labels);
                test_images.as_mut().map(fix);
                test_labels.as_mut().map(fix);
            }
            DatasetDescriptor::Csv {
                path, test_path, ..
            } => {
                fix(path);
                test_path.as_mut().map(fix);
            }
            DatasetDescriptor::Synthetic { .. } => {}
        }
        Ok(c)
    }

    /// Seed of the held-out test split.
    pub fn test_split_seed(&self) -> u64 {
        seed::derive(self.experiment.master_seed, "test-split", 0)
    }

    pub fn classifier_spec(&self, data: &ExperimentData) -> anyhow::Result<ClassifierSpec> {
        let c = &self.classifier;
        let hidden = match (&c.capacity, &c.hidden_layers) {
            (Some(_), Some(_)) => bail!("set either classifier.capacity or classifier.hidden_layers"),
            (Some(cap), None) => cap.hidden_layers(),
            (None, Some(h)) => h.clone(),
            (None, None) => Capacity::Min.hidden_layers(),
        };
        let head = if c.hierarchical {
            let tree = data
                .pool
                .tree()
                .context("hierarchical classifier needs a dataset with a label hierarchy")?;
            Head::Hierarchical { tree: tree.clone() }
        } else {
            Head::Flat {
                class_count: data.pool.class_count(),
            }
        };
        let spec = ClassifierSpec {
            hidden_layers: hidden,
            dropout_rate: c.dropout_rate,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            max_epochs: c.max_epochs,
            early_stop_patience: c.early_stop_patience,
            head,
            seed: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Engine configuration for one strategy.
    pub fn experiment(&self, strategy: Strategy, data: &ExperimentData) -> anyhow::Result<ExperimentConfig> {
        let e = &self.experiment;
        let config = ExperimentConfig {
            strategy,
            classifier: self.classifier_spec(data)?,
            initial_per_class: e.initial_per_class,
            growth_fraction: e.growth_fraction,
            stop_fraction_of_pool: e.stop_fraction_of_pool,
            repetitions: e.repetitions,
            label_noise_rate: e.label_noise_rate,
            master_seed: e.master_seed,
            max_iterations: e.max_iterations,
        };
        config.validate(data)?;
        Ok(config)
    }
}

/// Loaded pool and test set, with CSV class names when there are any.
#[derive(Debug, Clone)]
pub struct ResolvedData {
    pub data: ExperimentData,
    pub class_names: Option<Vec<String>>,
}

fn split_off_test(all: Dataset, fraction: f64, seed: u64) -> anyhow::Result<ExperimentData> {
    let (test, pool) = stratified_split(&all, fraction, seed)?;
    Ok(ExperimentData::new(
        all.subset(&pool, format!("{}-pool", all.name)),
        all.subset(&test, format!("{}-test", all.name)),
    )?)
}

fn check_class_count(declared: Option<usize>, found: usize) -> anyhow::Result<()> {
    if let Some(d) = declared {
        ensure!(d == found, "config declares {d} classes, data has {found}");
    }
    Ok(())
}

/// Scales every column to [0, 1] using the range over both sets.
fn normalize_jointly(pool: Dataset, test: Dataset) -> anyhow::Result<(Dataset, Dataset)> {
    let dim = pool.features().dim();
    let mut data = pool.features().as_slice().to_vec();
    data.extend_from_slice(test.features().as_slice());
    let mut all = Features::new(dim, data)?;
    all.normalize_min_max();
    let n = pool.len();
    let p_rows: Vec<usize> = (0..n).collect();
    let t_rows: Vec<usize> = (n..n + test.len()).collect();
    let classes = pool.class_count().max(test.class_count());
    Ok((
        Dataset::new(pool.name.clone(), all.select(&p_rows), pool.labels().to_vec(), classes)?,
        Dataset::new(test.name.clone(), all.select(&t_rows), test.labels().to_vec(), classes)?,
    ))
}

impl DatasetDescriptor {
    pub fn resolve(&self, split_seed: u64) -> anyhow::Result<ResolvedData> {
        match self {
            DatasetDescriptor::Synthetic {
                class_count,
                clusters_per_class,
                samples_per_cluster,
                feature_dim,
                cluster_std,
                class_separation,
                seed,
                hierarchy,
                test_fraction,
            } => {
                let spec = SyntheticSpec {
                    class_count: *class_count,
                    clusters_per_class: *clusters_per_class,
                    samples_per_cluster: *samples_per_cluster,
                    feature_dim: *feature_dim,
                    cluster_std: *cluster_std,
                    class_separation: *class_separation,
                    seed: *seed,
                };
                let all = match hierarchy {
                    Some(groups) => generate_hierarchical(&spec, groups)?,
                    None => generate_synthetic(&spec)?,
                };
                Ok(ResolvedData {
                    data: split_off_test(all, *test_fraction, split_seed)?,
                    class_names: None,
                })
            }
            DatasetDescriptor::Idx {
                images,
                labels,
                test_images,
                test_labels,
                class_count,
                test_fraction,
            } => {
                let pool = load_idx(images, labels)?;
                let data = match (test_images, test_labels) {
                    (Some(ti), Some(tl)) => {
                        let test = load_idx(ti, tl)?;
                        let classes = pool.class_count().max(test.class_count());
                        let widen = |d: Dataset| {
                            Dataset::new(d.name.clone(), d.features().clone(), d.labels().to_vec(), classes)
                        };
                        ExperimentData::new(widen(pool)?, widen(test)?)?
                    }
                    (None, None) => split_off_test(pool, *test_fraction, split_seed)?,
                    _ => bail!("set both test_images and test_labels, or neither"),
                };
                check_class_count(*class_count, data.pool.class_count())?;
                Ok(ResolvedData {
                    data,
                    class_names: None,
                })
            }
            DatasetDescriptor::Csv {
                path,
                label_column,
                test_path,
                class_count,
                test_fraction,
                normalize,
            } => {
                let pool = load_csv(path, label_column, &[])?;
                let (data, names) = match test_path {
                    Some(tp) => {
                        let test = load_csv(tp, label_column, &pool.class_names)?;
                        let names = test.class_names;
                        let classes = names.len();
                        let p = pool.dataset;
                        let p = Dataset::new(p.name.clone(), p.features().clone(), p.labels().to_vec(), classes)?;
                        let (p, t) = if *normalize {
                            normalize_jointly(p, test.dataset)?
                        } else {
                            (p, test.dataset)
                        };
                        (ExperimentData::new(p, t)?, names)
                    }
                    None => {
                        let mut all = pool.dataset;
                        if *normalize {
                            let mut f = all.features().clone();
                            f.normalize_min_max();
                            all = Dataset::new(all.name.clone(), f, all.labels().to_vec(), all.class_count())?;
                        }
                        (split_off_test(all, *test_fraction, split_seed)?, pool.class_names)
                    }
                };
                check_class_count(*class_count, data.pool.class_count())?;
                Ok(ResolvedData {
                    data,
                    class_names: Some(names),
                })
            }
        }
    }
}
