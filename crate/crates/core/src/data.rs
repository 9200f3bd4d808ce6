//! Synthetic datasets and seeded, stratified id selection.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::types::{Dataset, Features, LabelTree, SampleId};

/// Gaussian mixture with several modes per class.
///
/// Class means sit `class_separation` apart (exactly, on orthogonal axes,
/// when `feature_dim >= class_count`; in expectation otherwise). Each class
/// has `clusters_per_class` modes scattered within `class_separation / 3` of
/// its mean, and each mode emits `samples_per_cluster` isotropic samples with
/// standard deviation `cluster_std`. Many samples per mode make the data
/// redundant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub clusters_per_class: usize,
    pub samples_per_cluster: usize,
    pub feature_dim: usize,
    pub cluster_std: f64,
    pub class_separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0
            || self.clusters_per_class == 0
            || self.samples_per_cluster == 0
            || self.feature_dim == 0
        {
            return Err(Error::config("synthetic counts and dimension must be positive"));
        }
        if [self.cluster_std, self.class_separation].iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(Error::config(
                "cluster_std and class_separation must be positive",
            ));
        }
        Ok(())
    }
}

fn normal(rng: &mut seed::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_means(count: usize, dim: usize, sep: f64, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    if dim >= count {
        let r = sep / libm::sqrt(2.0);
        (0..count)
            .map(|k| {
                let mut m = vec![0.0; dim];
                m[k] = r;
                m
            })
            .collect()
    } else {
        let s = sep / libm::sqrt(2.0 * dim as f64);
        (0..count)
            .map(|_| (0..dim).map(|_| s * normal(rng)).collect())
            .collect()
    }
}

fn random_unit(dim: usize, rng: &mut seed::Rng) -> Vec<f64> {
    let dir: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let norm = libm::sqrt(dir.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
    dir.into_iter().map(|x| x / norm).collect()
}

/// Emits the modes and samples around the given class means, in class order.
fn sample_mixture(
    spec: &SyntheticSpec,
    means: &[Vec<f64>],
    rng: &mut seed::Rng,
    name: String,
) -> Result<Dataset> {
    let d = spec.feature_dim;
    let n = means.len() * spec.clusters_per_class * spec.samples_per_cluster;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..spec.clusters_per_class {
            let mode: Vec<f64> = if spec.clusters_per_class == 1 {
                mean.clone()
            } else {
                let dir = random_unit(d, rng);
                let radius = spec.class_separation / 3.0 * rng.random::<f64>();
                mean.iter().zip(&dir).map(|(m, u)| m + radius * u).collect()
            };
            for _ in 0..spec.samples_per_cluster {
                for &c in &mode {
                    data.push((c + spec.cluster_std * normal(rng)) as f32);
                }
                labels.push(k);
            }
        }
    }
    let mut features = Features::new(d, data)?;
    features.normalize_min_max();
    Dataset::new(name, features, labels, means.len())
}

/// Draws the mixture described by `spec`, then min-max normalizes features.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let means = gaussian_means(spec.class_count, spec.feature_dim, spec.class_separation, &mut rng);
    let name = format!("synthetic-{}x{}", spec.class_count, spec.clusters_per_class);
    sample_mixture(spec, &means, &mut rng, name)
}

/// Synthetic data whose classes are the leaves of a two-level hierarchy.
/// `groups[g]` is the number of subclasses under top-level node `g` (0 makes
/// the group a leaf). Subclasses of one group share a nearby mean.
pub fn generate_hierarchical(spec: &SyntheticSpec, groups: &[usize]) -> Result<Dataset> {
    let mut names: Vec<(String, Vec<String>)> = Vec::new();
    for (g, &subs) in groups.iter().enumerate() {
        names.push((
            format!("g{g}"),
            (0..subs).map(|s| format!("g{g}.{s}")).collect(),
        ));
    }
    let tree = LabelTree::two_level(&names)?;
    let leaves = tree.leaves().len();
    if leaves != spec.class_count {
        return Err(Error::config(format!(
            "hierarchy has {leaves} leaves but class_count is {}",
            spec.class_count
        )));
    }
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let group_means =
        gaussian_means(groups.len(), spec.feature_dim, spec.class_separation, &mut rng);
    let mut means = Vec::with_capacity(leaves);
    for (mean, &subs) in group_means.iter().zip(groups) {
        if subs == 0 {
            means.push(mean.clone());
        }
    }
    // leaves follow the tree's node order: childless groups first, then subclasses
    for (mean, &subs) in group_means.iter().zip(groups) {
        for _ in 0..subs {
            let dir = random_unit(spec.feature_dim, &mut rng);
            means.push(
                mean.iter()
                    .zip(&dir)
                    .map(|(m, u)| m + 0.5 * spec.class_separation * u)
                    .collect(),
            );
        }
    }
    let ds = sample_mixture(spec, &means, &mut rng, format!("hierarchical-{leaves}"))?;
    ds.with_tree(tree)
}

/// Splits `ids` class by class. Each class contributes
/// `clamp(round(fraction * n_c), 1, n_c - 1)` ids to the first part, chosen
/// uniformly by `seed`. Both parts come back sorted.
pub fn stratified_split_ids(
    ids: &[SampleId],
    labels: &[usize],
    class_count: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SampleId>, Vec<SampleId>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("split fraction {fraction} not in (0, 1)")));
    }
    if ids.len() != labels.len() {
        return Err(Error::input("ids and labels differ in length"));
    }
    let mut by_class: Vec<Vec<SampleId>> = vec![Vec::new(); class_count];
    for (&id, &l) in ids.iter().zip(labels) {
        if l >= class_count {
            return Err(Error::input(format!("label {l} out of range")));
        }
        by_class[l].push(id);
    }
    let mut rng = seed::rng(seed);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class.into_iter().enumerate() {
        let n = members.len();
        if n == 0 {
            continue;
        }
        if n == 1 {
            return Err(Error::Split { class, count: 1 });
        }
        members.sort_unstable();
        members.shuffle(&mut rng);
        let take = (libm::round(fraction * n as f64) as usize).clamp(1, n - 1);
        a.extend_from_slice(&members[..take]);
        b.extend_from_slice(&members[take..]);
    }
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

pub fn stratified_split(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SampleId>, Vec<SampleId>)> {
    let ids: Vec<SampleId> = dataset.ids().collect();
    stratified_split_ids(&ids, dataset.labels(), dataset.class_count(), fraction, seed)
}

/// Exactly `per_class` ids from every class, chosen uniformly by `seed`.
pub fn initial_seed_set(
    dataset: &Dataset,
    per_class: usize,
    seed: u64,
) -> Result<BTreeSet<SampleId>> {
    let mut by_class: Vec<Vec<SampleId>> = vec![Vec::new(); dataset.class_count()];
    for id in dataset.ids() {
        by_class[dataset.label(id)].push(id);
    }
    let mut rng = seed::rng(seed);
    let mut out = BTreeSet::new();
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::Insufficient {
                class,
                available: members.len(),
                requested: per_class,
            });
        }
        let picks = rand::seq::index::sample(&mut rng, members.len(), per_class);
        out.extend(picks.into_iter().map(|i| members[i]));
    }
    Ok(out)
}
