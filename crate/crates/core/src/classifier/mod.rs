//! Classifier contract and the built-in multilayer perceptron.
//!
//! Training is minibatch SGD with a constant learning rate, inverted dropout
//! on hidden layers and early stopping on a stratified 10% development split
//! of the labelled data. The returned model carries the weights of the best
//! development epoch.

pub mod network;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::stratified_split_ids;
use crate::error::{Error, Result};
use crate::seed;
use crate::types::{
    argmax, build_confusion_matrix, derive_hier_label, ConfusionMatrix, Dataset, Embedding,
    Features, HierLabel, LabelTree, NodeId, NodeState, ProbabilityVector, SampleId,
};
use network::{sigmoid, softmax, Network, Target};

/// Share of the labelled data held out for early stopping.
pub const DEV_FRACTION: f64 = 0.1;

/// Smallest labelled set [`train`] accepts.
pub const MIN_TRAINING_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Flat { class_count: usize },
    Hierarchical { tree: LabelTree },
}

impl Head {
    /// Number of leaf classes.
    pub fn class_count(&self) -> usize {
        match self {
            Head::Flat { class_count } => *class_count,
            Head::Hierarchical { tree } => tree.leaves().len(),
        }
    }

    /// Width of the output layer.
    pub fn output_dim(&self) -> usize {
        match self {
            Head::Flat { class_count } => *class_count,
            Head::Hierarchical { tree } => tree.node_count(),
        }
    }
}

fn default_max_epochs() -> usize {
    1000
}

fn default_patience() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub hidden_layers: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    pub head: Head,
    pub seed: u64,
}

/// Preset network sizes of strictly increasing parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacity {
    Min,
    Med,
    Max,
}

impl Capacity {
    pub const ALL: [Capacity; 3] = [Capacity::Min, Capacity::Med, Capacity::Max];

    pub fn hidden_layers(self) -> Vec<usize> {
        match self {
            Capacity::Min => vec![32],
            Capacity::Med => vec![128, 64],
            Capacity::Max => vec![256, 128, 64],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Capacity::Min => "min",
            Capacity::Med => "med",
            Capacity::Max => "max",
        }
    }
}

impl ClassifierSpec {
    /// Defaults: no dropout, learning rate 0.05, batch 32, 1000 epochs,
    /// patience 200, seed 0.
    pub fn new(hidden_layers: Vec<usize>, head: Head) -> Self {
        ClassifierSpec {
            hidden_layers,
            dropout_rate: 0.0,
            learning_rate: 0.05,
            batch_size: 32,
            max_epochs: default_max_epochs(),
            early_stop_patience: default_patience(),
            head,
            seed: 0,
        }
    }

    pub fn with_capacity(capacity: Capacity, head: Head) -> Self {
        ClassifierSpec::new(capacity.hidden_layers(), head)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::config(
                "batch_size, max_epochs and early_stop_patience must be positive",
            ));
        }
        if self.head.class_count() < 2 {
            return Err(Error::config("classifier needs at least two classes"));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(&self.hidden_layers);
        sizes.push(self.head.output_dim());
        sizes
    }

    pub fn param_count(&self, input_dim: usize) -> usize {
        self.layer_sizes(input_dim)
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }
}

/// What the engine and strategies need from a trained model. Implementations
/// must be usable from several scoring threads at once.
pub trait Classifier: Sync {
    /// Number of leaf classes.
    fn class_count(&self) -> usize;
    /// Class outputs fed to the strategies: a probability vector for flat
    /// models, raw per-node activations for hierarchical ones.
    fn class_scores(&self, x: &[f32]) -> Result<ProbabilityVector>;
    fn embed(&self, x: &[f32]) -> Result<Embedding>;
    /// Predicted leaf class.
    fn predict_class(&self, x: &[f32]) -> Result<usize>;
    /// Best development accuracy seen in training, if the model tracks one.
    fn dev_accuracy(&self) -> Option<f64> {
        None
    }
}

/// Produces a [`Classifier`] from labelled samples.
pub trait Learner: Sync {
    type Model: Classifier + Send;

    /// `labels` are leaf class indices aligned with `ids`.
    fn fit(
        &self,
        features: &Features,
        ids: &[SampleId],
        labels: &[usize],
        seed: u64,
    ) -> Result<Self::Model>;
}

impl Learner for ClassifierSpec {
    type Model = TrainedModel;

    fn fit(
        &self,
        features: &Features,
        ids: &[SampleId],
        labels: &[usize],
        seed: u64,
    ) -> Result<TrainedModel> {
        let spec = ClassifierSpec {
            seed,
            ..self.clone()
        };
        fit(features, ids, labels, spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ClassifierSpec,
    pub network: Network,
    pub dev_accuracy_best: f64,
    /// Epoch whose weights were kept (1-based).
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Trains a flat softmax model. `labels[i]` is the class of `ids[i]`.
pub fn train(
    features: &Features,
    ids: &[SampleId],
    labels: &[usize],
    spec: &ClassifierSpec,
) -> Result<TrainedModel> {
    if !matches!(spec.head, Head::Flat { .. }) {
        return Err(Error::config("train needs a flat head; use train_hierarchical"));
    }
    fit(features, ids, labels, spec.clone())
}

/// Trains per-node sigmoid outputs with NA-masked binary cross-entropy.
pub fn train_hierarchical(
    features: &Features,
    ids: &[SampleId],
    labels: &[HierLabel],
    spec: &ClassifierSpec,
) -> Result<TrainedModel> {
    let Head::Hierarchical { tree } = &spec.head else {
        return Err(Error::config("train_hierarchical needs a hierarchical head"));
    };
    let classes = labels
        .iter()
        .map(|l| {
            let leaf = l.leaf(tree)?;
            Ok(tree.leaf_index(leaf).expect("leaf() returns a leaf"))
        })
        .collect::<Result<Vec<_>>>()?;
    fit(features, ids, &classes, spec.clone())
}

/// Per-leaf 0/1 targets and NA masks.
fn node_targets(tree: &LabelTree) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    (0..tree.leaves().len())
        .map(|c| {
            let label = derive_hier_label(tree, &tree.leaf_path(c))?;
            let target = label
                .states()
                .iter()
                .map(|s| if *s == NodeState::Pos { 1.0 } else { 0.0 })
                .collect();
            let mask = label
                .states()
                .iter()
                .map(|s| if *s == NodeState::Na { 0.0 } else { 1.0 })
                .collect();
            Ok((target, mask))
        })
        .collect()
}

/// Stratified dev/train split. Single-sample classes go to training only.
fn dev_split(
    ids: &[SampleId],
    labels: &[usize],
    class_count: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut counts = vec![0usize; class_count];
    for &l in labels {
        counts[l] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class });
    }
    let positions: Vec<SampleId> = (0..ids.len()).map(SampleId::from).collect();
    let (multi, single): (Vec<_>, Vec<_>) = positions
        .into_iter()
        .partition(|p| counts[labels[p.index()]] > 1);
    let multi_labels: Vec<usize> = multi.iter().map(|p| labels[p.index()]).collect();
    let (dev, mut train) = if multi.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        stratified_split_ids(&multi, &multi_labels, class_count, DEV_FRACTION, seed)?
    };
    train.extend(single);
    train.sort_unstable();
    Ok((
        dev.into_iter().map(SampleId::index).collect(),
        train.into_iter().map(SampleId::index).collect(),
    ))
}

fn fit(
    features: &Features,
    ids: &[SampleId],
    labels: &[usize],
    spec: ClassifierSpec,
) -> Result<TrainedModel> {
    spec.validate()?;
    if ids.len() != labels.len() {
        return Err(Error::input("ids and labels differ in length"));
    }
    if ids.len() < MIN_TRAINING_SAMPLES {
        return Err(Error::input(format!(
            "training needs at least {MIN_TRAINING_SAMPLES} samples, got {}",
            ids.len()
        )));
    }
    let class_count = spec.head.class_count();
    if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
        return Err(Error::input(format!("label {bad} out of range")));
    }
    if let Some(bad) = ids.iter().find(|id| id.index() >= features.len()) {
        return Err(Error::input(format!("sample {} out of range", bad.0)));
    }
    let node_targets = match &spec.head {
        Head::Flat { .. } => Vec::new(),
        Head::Hierarchical { tree } => node_targets(tree)?,
    };
    let target = |class: usize| match spec.head {
        Head::Flat { .. } => Target::Class(class),
        Head::Hierarchical { .. } => Target::Nodes {
            target: &node_targets[class].0,
            mask: &node_targets[class].1,
        },
    };

    let (dev, mut order) = dev_split(ids, labels, class_count, seed::derive(spec.seed, "dev", 0))?;
    let mut rng = seed::rng(seed::derive(spec.seed, "train", 0));
    let mut net = Network::new(&spec.layer_sizes(features.dim()), &mut rng);
    let mut grads = net.gradients();
    let mut trace = net.trace();
    let dropout = (spec.dropout_rate > 0.0).then_some(spec.dropout_rate);

    // Best dev accuracy, ties going to the lower dev loss. Patience counts
    // epochs since the accuracy last improved.
    let mut best = (f64::NEG_INFINITY, f64::INFINITY, net.clone(), 0usize);
    let mut improved_at = 0;
    let mut epochs_run = 0;
    for epoch in 1..=spec.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.batch_size) {
            let w = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let x = features.row(ids[i].index());
                net.forward(x, &mut trace, dropout.map(|p| (p, &mut rng)));
                net.backward(&trace, target(labels[i]), w, &mut grads);
            }
            net.step(&mut grads, spec.learning_rate);
        }
        // With no dev samples every epoch scores 1.0 and the first one is kept.
        let (mut correct, mut loss) = (0, 0.0);
        for &i in &dev {
            net.forward(features.row(ids[i].index()), &mut trace, None);
            loss += Network::loss(&trace, target(labels[i]));
            if head_class(&spec.head, trace.logits()) == labels[i] {
                correct += 1;
            }
        }
        let acc = if dev.is_empty() {
            1.0
        } else {
            correct as f64 / dev.len() as f64
        };
        if acc > best.0 {
            improved_at = epoch;
        }
        if acc > best.0 || (acc == best.0 && loss < best.1) {
            best = (acc, loss, net.clone(), epoch);
        }
        if epoch - improved_at >= spec.early_stop_patience {
            break;
        }
    }
    let (dev_accuracy_best, _, network, best_epoch) = best;
    Ok(TrainedModel {
        spec,
        network,
        dev_accuracy_best,
        best_epoch,
        epochs_run,
    })
}

/// Dropout-free inference over a network and head.
struct Probe<'a> {
    net: &'a Network,
    head: &'a Head,
}

impl Probe<'_> {
    fn logits(&self, x: &[f32]) -> Vec<f64> {
        let mut trace = self.net.trace();
        self.net.forward(x, &mut trace, None);
        trace.logits().to_vec()
    }

    fn class(&self, x: &[f32]) -> usize {
        head_class(self.head, &self.logits(x))
    }
}

/// Class predicted by `head` from the output layer's pre-activations.
fn head_class(head: &Head, logits: &[f64]) -> usize {
    match head {
        Head::Flat { .. } => argmax(logits),
        Head::Hierarchical { tree } => {
            let acts: Vec<f64> = logits.iter().copied().map(sigmoid).collect();
            let leaf = *decode_path(tree, &acts).last().expect("non-empty tree");
            tree.leaf_index(leaf).expect("decoding ends at a leaf")
        }
    }
}

/// Root-to-leaf path choosing, at each level, the child of the previous
/// choice with the highest activation (lowest node id on ties).
pub fn decode_path(tree: &LabelTree, activations: &[f64]) -> Vec<NodeId> {
    let mut path = Vec::new();
    let mut candidates = tree.roots();
    while !candidates.is_empty() {
        let mut pick = candidates[0];
        for &c in &candidates[1..] {
            if activations[c.0] > activations[pick.0] {
                pick = c;
            }
        }
        path.push(pick);
        candidates = tree.children(pick);
    }
    path
}

impl TrainedModel {
    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.network.embedding_dim()
    }

    pub fn class_count(&self) -> usize {
        self.spec.head.class_count()
    }

    fn check_dim(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn probe(&self) -> Probe<'_> {
        Probe {
            net: &self.network,
            head: &self.spec.head,
        }
    }

    /// Softmax output of a flat model.
    pub fn predict_proba(&self, x: &[f32]) -> Result<ProbabilityVector> {
        self.check_dim(x)?;
        if !matches!(self.spec.head, Head::Flat { .. }) {
            return Err(Error::config("predict_proba needs a flat model; use predict_hier"));
        }
        ProbabilityVector::new(softmax(&self.probe().logits(x)))
    }

    /// Per-node sigmoid activations (unnormalized) and the decoded path.
    pub fn predict_hier(&self, x: &[f32]) -> Result<(Vec<f64>, Vec<NodeId>)> {
        self.check_dim(x)?;
        let Head::Hierarchical { tree } = &self.spec.head else {
            return Err(Error::config("predict_hier needs a hierarchical model"));
        };
        let acts: Vec<f64> = self.probe().logits(x).into_iter().map(sigmoid).collect();
        let path = decode_path(tree, &acts);
        Ok((acts, path))
    }

    /// Output of the last hidden layer, dropout disabled.
    pub fn embed(&self, x: &[f32]) -> Result<Embedding> {
        self.check_dim(x)?;
        let mut trace = self.network.trace();
        self.network.forward(x, &mut trace, None);
        Ok(Embedding(trace.embedding().to_vec()))
    }

    pub fn predict_class(&self, x: &[f32]) -> Result<usize> {
        self.check_dim(x)?;
        Ok(self.probe().class(x))
    }
}

impl Classifier for TrainedModel {
    fn class_count(&self) -> usize {
        TrainedModel::class_count(self)
    }

    fn class_scores(&self, x: &[f32]) -> Result<ProbabilityVector> {
        match self.spec.head {
            Head::Flat { .. } => self.predict_proba(x),
            Head::Hierarchical { .. } => ProbabilityVector::raw(self.predict_hier(x)?.0),
        }
    }

    fn embed(&self, x: &[f32]) -> Result<Embedding> {
        TrainedModel::embed(self, x)
    }

    fn predict_class(&self, x: &[f32]) -> Result<usize> {
        TrainedModel::predict_class(self, x)
    }

    fn dev_accuracy(&self) -> Option<f64> {
        Some(self.dev_accuracy_best)
    }
}

/// Accuracy and confusion matrix of `model` on `ids`. A hierarchical
/// prediction is correct when its decoded leaf, and hence its whole path,
/// matches the label.
pub fn evaluate<C: Classifier + ?Sized>(
    model: &C,
    features: &Features,
    ids: &[SampleId],
    labels: &[usize],
) -> Result<(f64, ConfusionMatrix)> {
    if ids.is_empty() {
        return Err(Error::input("cannot evaluate on an empty set"));
    }
    if ids.len() != labels.len() {
        return Err(Error::input("ids and labels differ in length"));
    }
    let pairs = ids
        .iter()
        .zip(labels)
        .map(|(id, &y)| Ok((y, model.predict_class(features.row(id.index()))?)))
        .collect::<Result<Vec<_>>>()?;
    confusion_result(&pairs, model.class_count())
}

pub fn evaluate_dataset<C: Classifier + ?Sized>(
    model: &C,
    dataset: &Dataset,
) -> Result<(f64, ConfusionMatrix)> {
    let ids: Vec<SampleId> = dataset.ids().collect();
    evaluate(model, dataset.features(), &ids, dataset.labels())
}

/// `(truth, predicted)` pairs to accuracy and confusion matrix.
pub fn confusion_result(
    pairs: &[(usize, usize)],
    class_count: usize,
) -> Result<(f64, ConfusionMatrix)> {
    let cm = build_confusion_matrix(pairs, class_count)?;
    let acc = cm
        .accuracy()
        .ok_or_else(|| Error::input("cannot evaluate on an empty set"))?;
    Ok((acc, cm))
}
