//! Domain types shared by every module.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a sample inside its [`Dataset`]. Ascending id order is the
/// global tie-break everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u32);

impl SampleId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for SampleId {
    fn from(i: usize) -> Self {
        SampleId(i as u32)
    }
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    dim: usize,
    data: Vec<f32>,
}

impl Features {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("feature dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::input(format!(
                "feature buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Features { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::input(format!(
                    "row {i} has {} features, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Features::new(dim, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Rescales every column to `[0, 1]` by min-max. Constant columns become 0.
    pub fn normalize_min_max(&mut self) {
        let n = self.len();
        if n == 0 {
            return;
        }
        for j in 0..self.dim {
            let mut lo = f32::INFINITY;
            let mut hi = f32::NEG_INFINITY;
            for i in 0..n {
                let v = self.data[i * self.dim + j];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let range = f64::from(hi) - f64::from(lo);
            for i in 0..n {
                let v = &mut self.data[i * self.dim + j];
                *v = if range > 0.0 {
                    ((f64::from(*v) - f64::from(lo)) / range) as f32
                } else {
                    0.0
                };
            }
        }
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select(&self, rows: &[usize]) -> Features {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Features {
            dim: self.dim,
            data,
        }
    }
}

/// Features plus flat class labels. For hierarchical problems the label is
/// the index of the sample's leaf in [`LabelTree::leaves`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    features: Features,
    labels: Vec<usize>,
    class_count: usize,
    tree: Option<LabelTree>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Features,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::input("class_count must be positive"));
        }
        if labels.len() != features.len() {
            return Err(Error::input(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.len()
            )));
        }
        if labels.len() > u32::MAX as usize {
            return Err(Error::input("too many samples"));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::input(format!(
                "sample {i} has label {l}, class_count is {class_count}"
            )));
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            class_count,
            tree: None,
        })
    }

    /// Attaches a label hierarchy whose leaves are the dataset's classes.
    pub fn with_tree(mut self, tree: LabelTree) -> Result<Self> {
        if tree.leaves().len() != self.class_count {
            return Err(Error::input(format!(
                "label tree has {} leaves, dataset has {} classes",
                tree.leaves().len(),
                self.class_count
            )));
        }
        self.tree = Some(tree);
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        (0..self.len()).map(SampleId::from)
    }

    #[inline]
    pub fn features(&self) -> &Features {
        &self.features
    }

    #[inline]
    pub fn row(&self, id: SampleId) -> &[f32] {
        self.features.row(id.index())
    }

    #[inline]
    pub fn label(&self, id: SampleId) -> usize {
        self.labels[id.index()]
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    #[inline]
    pub fn tree(&self) -> Option<&LabelTree> {
        self.tree.as_ref()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// New dataset holding the given rows; ids are renumbered from 0 in the
    /// order given.
    pub fn subset(&self, ids: &[SampleId], name: impl Into<String>) -> Dataset {
        let rows: Vec<usize> = ids.iter().map(|id| id.index()).collect();
        Dataset {
            name: name.into(),
            features: self.features.select(&rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_count: self.class_count,
            tree: self.tree.clone(),
        }
    }
}

/// Partition of a dataset's ids into labelled and unlabelled sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pool {
    labelled: BTreeSet<SampleId>,
    unlabelled: BTreeSet<SampleId>,
}

impl Pool {
    /// Pool over ids `0..size` with the given ids labelled.
    pub fn new(size: usize, labelled: impl IntoIterator<Item = SampleId>) -> Result<Self> {
        let labelled: BTreeSet<SampleId> = labelled.into_iter().collect();
        if let Some(bad) = labelled.iter().find(|id| id.index() >= size) {
            return Err(Error::input(format!(
                "sample {} is outside a pool of {size}",
                bad.0
            )));
        }
        let unlabelled = (0..size)
            .map(SampleId::from)
            .filter(|id| !labelled.contains(id))
            .collect();
        Ok(Pool {
            labelled,
            unlabelled,
        })
    }

    pub fn labelled(&self) -> &BTreeSet<SampleId> {
        &self.labelled
    }

    pub fn unlabelled(&self) -> &BTreeSet<SampleId> {
        &self.unlabelled
    }

    pub fn len(&self) -> usize {
        self.labelled.len() + self.unlabelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Moves every id of `batch` from the unlabelled to the labelled set.
    /// Fails without modifying the pool if any id is not unlabelled.
    pub fn label(&mut self, batch: &QueryBatch) -> Result<()> {
        if let Some(id) = batch.ids().iter().find(|id| !self.unlabelled.contains(id)) {
            return Err(Error::input(format!(
                "sample {} is not in the unlabelled set",
                id.0
            )));
        }
        for id in batch.ids() {
            self.unlabelled.remove(id);
            self.labelled.insert(*id);
        }
        Ok(())
    }
}

/// Per-class classifier output. Flat classifiers produce a distribution;
/// hierarchical ones produce independent sigmoid activations, stored with
/// [`ProbabilityVector::raw`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::input("empty probability vector"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::input("probability outside [0, 1]"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::input(format!("probabilities sum to {sum}")));
        }
        Ok(ProbabilityVector(probs))
    }

    /// Activations that need not sum to one; entries must still lie in `[0, 1]`.
    pub fn raw(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("empty activation vector"));
        }
        if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::input("activation outside [0, 1]"));
        }
        Ok(ProbabilityVector(values))
    }

    pub fn uniform(classes: usize) -> Self {
        ProbabilityVector(vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(classes: usize, hot: usize) -> Self {
        let mut v = vec![0.0; classes];
        v[hot] = 1.0;
        ProbabilityVector(v)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest entry; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Penultimate-layer activations of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Ordered, duplicate-free set of samples chosen in one query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryBatch {
    ids: Vec<SampleId>,
    scores: Vec<f64>,
}

impl QueryBatch {
    pub fn new(ids: Vec<SampleId>, scores: Vec<f64>) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::input("ids and scores differ in length"));
        }
        let unique: BTreeSet<_> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::input("duplicate sample in query batch"));
        }
        Ok(QueryBatch { ids, scores })
    }

    pub(crate) fn from_pairs(pairs: Vec<(SampleId, f64)>) -> Self {
        let (ids, scores) = pairs.into_iter().unzip();
        QueryBatch { ids, scores }
    }

    #[inline]
    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    #[inline]
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Class-by-class prediction counts. Rows are the true class, columns the
/// predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(class_count: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; class_count]; class_count],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if counts.iter().any(|r| r.len() != c) {
            return Err(Error::input("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix { counts })
    }

    #[inline]
    pub fn class_count(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.class_count()).map(|i| self.counts[i][i]).sum()
    }

    /// `counts[i][i] / rowsum(i)`, or `None` for a class absent from the
    /// evaluation set.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let row = self.row_sum(class);
        (row > 0).then(|| self.counts[class][class] as f64 / row as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    pub(crate) fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }
}

/// Tallies `(true_class, predicted_class)` pairs.
pub fn build_confusion_matrix(
    predictions: &[(usize, usize)],
    class_count: usize,
) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::zeros(class_count);
    for &(t, p) in predictions {
        if t >= class_count || p >= class_count {
            return Err(Error::input(format!(
                "class pair ({t}, {p}) out of range for {class_count} classes"
            )));
        }
        m.add(t, p);
    }
    Ok(m)
}

/// Index of a node in a [`LabelTree`]; doubles as the node's output neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub name: String,
    pub parent: Option<NodeId>,
}

/// Class hierarchy. Level-0 nodes have no parent; every other node has a
/// parent on the previous level. A sample's label is a root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TreeNode>", into = "Vec<TreeNode>")]
pub struct LabelTree {
    nodes: Vec<TreeNode>,
    level: Vec<usize>,
    children: Vec<Vec<NodeId>>,
    roots: Vec<NodeId>,
    leaves: Vec<NodeId>,
    leaf_index: Vec<Option<usize>>,
}

impl LabelTree {
    /// Builds a tree from nodes listed so that every parent precedes its
    /// children.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::input("label tree has no nodes"));
        }
        let n = nodes.len();
        let mut level = vec![0; n];
        let mut children = vec![Vec::new(); n];
        let mut roots = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            match node.parent {
                None => roots.push(NodeId(i)),
                Some(NodeId(p)) if p < i => {
                    level[i] = level[p] + 1;
                    children[p].push(NodeId(i));
                }
                Some(NodeId(p)) => {
                    return Err(Error::input(format!(
                        "node {i} ('{}') has parent {p} which does not precede it",
                        node.name
                    )))
                }
            }
        }
        let leaves: Vec<NodeId> = (0..n)
            .filter(|&i| children[i].is_empty())
            .map(NodeId)
            .collect();
        let mut leaf_index = vec![None; n];
        for (k, leaf) in leaves.iter().enumerate() {
            leaf_index[leaf.0] = Some(k);
        }
        Ok(LabelTree {
            nodes,
            level,
            children,
            roots,
            leaves,
            leaf_index,
        })
    }

    /// One level, one node per class.
    pub fn flat<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::from_nodes(
            names
                .iter()
                .map(|s| TreeNode {
                    name: s.as_ref().to_string(),
                    parent: None,
                })
                .collect(),
        )
    }

    /// Two levels: each group becomes a level-0 node whose children are the
    /// listed subclasses. A group with no subclasses is itself a leaf.
    pub fn two_level<S: AsRef<str>>(groups: &[(S, Vec<S>)]) -> Result<Self> {
        let mut nodes = Vec::new();
        for (g, _) in groups {
            nodes.push(TreeNode {
                name: g.as_ref().to_string(),
                parent: None,
            });
        }
        for (gi, (_, subs)) in groups.iter().enumerate() {
            for s in subs {
                nodes.push(TreeNode {
                    name: s.as_ref().to_string(),
                    parent: Some(NodeId(gi)),
                });
            }
        }
        Self::from_nodes(nodes)
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn name(&self, n: NodeId) -> &str {
        &self.nodes[n.0].name
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|x| x.name == name).map(NodeId)
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.nodes[n.0].parent
    }

    pub fn level(&self, n: NodeId) -> usize {
        self.level[n.0]
    }

    pub fn depth(&self) -> usize {
        self.level.iter().max().map_or(0, |&l| l + 1)
    }

    pub fn children(&self, n: NodeId) -> &[NodeId] {
        &self.children[n.0]
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    /// Nodes sharing `n`'s parent (all roots for a root), including `n`.
    pub fn siblings(&self, n: NodeId) -> &[NodeId] {
        match self.parent(n) {
            Some(p) => self.children(p),
            None => &self.roots,
        }
    }

    /// Leaves in node order; a leaf's position here is its class index.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn leaf_index(&self, n: NodeId) -> Option<usize> {
        self.leaf_index.get(n.0).copied().flatten()
    }

    /// Root-to-node chain ending at `n`.
    pub fn path_to(&self, n: NodeId) -> Vec<NodeId> {
        let mut path = vec![n];
        let mut cur = n;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn leaf_path(&self, class: usize) -> Vec<NodeId> {
        self.path_to(self.leaves[class])
    }
}

impl TryFrom<Vec<TreeNode>> for LabelTree {
    type Error = Error;

    fn try_from(nodes: Vec<TreeNode>) -> Result<Self> {
        LabelTree::from_nodes(nodes)
    }
}

impl From<LabelTree> for Vec<TreeNode> {
    fn from(t: LabelTree) -> Self {
        t.nodes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeState {
    Pos,
    Neg,
    Na,
}

/// Per-node target states of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierLabel {
    states: Vec<NodeState>,
}

impl HierLabel {
    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    pub fn state(&self, n: NodeId) -> NodeState {
        self.states[n.0]
    }

    /// Deepest positive node, checked to be a leaf whose whole path is
    /// positive and consistent with `tree`.
    pub fn leaf(&self, tree: &LabelTree) -> Result<NodeId> {
        if self.states.len() != tree.node_count() {
            return Err(Error::input(format!(
                "label covers {} nodes, tree has {}",
                self.states.len(),
                tree.node_count()
            )));
        }
        let leaf = tree
            .leaves()
            .iter()
            .copied()
            .find(|&l| self.state(l) == NodeState::Pos)
            .ok_or_else(|| Error::input("label has no positive leaf"))?;
        let expected = derive_hier_label(tree, &tree.path_to(leaf))?;
        if &expected != self {
            return Err(Error::input("label is inconsistent with the label tree"));
        }
        Ok(leaf)
    }
}

/// Marks the path nodes positive, their siblings negative and every other
/// node not-applicable.
pub fn derive_hier_label(tree: &LabelTree, leaf_path: &[NodeId]) -> Result<HierLabel> {
    let (&first, _) = leaf_path
        .split_first()
        .ok_or_else(|| Error::input("empty label path"))?;
    if let Some(bad) = leaf_path.iter().find(|n| n.0 >= tree.node_count()) {
        return Err(Error::input(format!("unknown node {}", bad.0)));
    }
    if tree.parent(first).is_some() {
        return Err(Error::input(format!(
            "path starts at '{}' which is not a level-0 node",
            tree.name(first)
        )));
    }
    for w in leaf_path.windows(2) {
        if tree.parent(w[1]) != Some(w[0]) {
            return Err(Error::input(format!(
                "broken parent chain: '{}' is not a child of '{}'",
                tree.name(w[1]),
                tree.name(w[0])
            )));
        }
    }
    let last = leaf_path[leaf_path.len() - 1];
    if !tree.children(last).is_empty() {
        return Err(Error::input(format!(
            "path ends at '{}' which is not a leaf",
            tree.name(last)
        )));
    }

    let mut states = vec![NodeState::Na; tree.node_count()];
    for &n in leaf_path {
        for &s in tree.siblings(n) {
            states[s.0] = NodeState::Neg;
        }
    }
    for &n in leaf_path {
        states[n.0] = NodeState::Pos;
    }
    Ok(HierLabel { states })
}
