//! Batch selection rules.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::seed;
use crate::types::{Embedding, QueryBatch, SampleId};

use super::{Selection, SelectionContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    Ok(())
}

/// Orders `(id, key)` pairs by key in `direction`, then by ascending id.
fn rank(pairs: &mut [(SampleId, f64)], direction: Direction) {
    pairs.sort_by(|a, b| {
        let o = match direction {
            Direction::Maximize => b.1.total_cmp(&a.1),
            Direction::Minimize => a.1.total_cmp(&b.1),
        };
        o.then(a.0.cmp(&b.0))
    });
}

/// The `n` best-scoring ids; ties go to the lower id.
pub fn select_top_n(
    scores: &BTreeMap<SampleId, f64>,
    n: usize,
    direction: Direction,
) -> Result<QueryBatch> {
    check_n(n)?;
    let mut pairs: Vec<(SampleId, f64)> = scores.iter().map(|(&id, &s)| (id, s)).collect();
    rank(&mut pairs, direction);
    pairs.truncate(n);
    Ok(QueryBatch::from_pairs(pairs))
}

fn max_probs(ctx: &SelectionContext) -> Vec<(SampleId, f64)> {
    ctx.probs.iter().map(|(&id, p)| (id, p.max())).collect()
}

/// Lowest maximum activation first.
pub fn select_nc_low(ctx: &SelectionContext, n: usize) -> Result<QueryBatch> {
    let scores: BTreeMap<_, _> = max_probs(ctx).into_iter().collect();
    select_top_n(&scores, n, Direction::Minimize)
}

/// Samples whose maximum activation lies in `[lo, hi]`, closest to the
/// midpoint first. A shortfall is filled with the out-of-range samples
/// nearest to the interval.
pub fn select_nc_range(ctx: &SelectionContext, n: usize, range: (f64, f64)) -> Result<QueryBatch> {
    check_n(n)?;
    let (lo, hi) = range;
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::config(format!(
            "invalid activation range [{lo}, {hi}]"
        )));
    }
    let mid = 0.5 * (lo + hi);
    let (mut inside, mut outside): (Vec<_>, Vec<_>) = max_probs(ctx)
        .into_iter()
        .partition(|&(_, m)| (lo..=hi).contains(&m));
    let mut keyed: Vec<(SampleId, f64)> = inside
        .drain(..)
        .map(|(id, m)| (id, libm::fabs(m - mid)))
        .collect();
    rank(&mut keyed, Direction::Minimize);
    keyed.truncate(n);
    if keyed.len() < n {
        let mut fill: Vec<(SampleId, f64)> = outside
            .drain(..)
            .map(|(id, m)| (id, if m < lo { lo - m } else { m - hi }))
            .collect();
        rank(&mut fill, Direction::Minimize);
        fill.truncate(n - keyed.len());
        keyed.extend(fill);
    }
    let probs = &ctx.probs;
    Ok(QueryBatch::from_pairs(
        keyed
            .into_iter()
            .map(|(id, _)| (id, probs[&id].max()))
            .collect(),
    ))
}

fn unit(e: &Embedding) -> Vec<f64> {
    let norm = libm::sqrt(e.as_slice().iter().map(|x| x * x).sum::<f64>());
    if norm > 0.0 {
        e.as_slice().iter().map(|x| x / norm).collect()
    } else {
        vec![0.0; e.dim()]
    }
}

/// Cosine similarity; two zero vectors count as identical, a zero vector and
/// a non-zero one as orthogonal.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> f64 {
    cosine_units(&unit(a), &unit(b))
}

fn cosine_units(a: &[f64], b: &[f64]) -> f64 {
    let a_zero = a.iter().all(|&x| x == 0.0);
    let b_zero = b.iter().all(|&x| x == 0.0);
    match (a_zero, b_zero) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => a.iter().zip(b).map(|(x, y)| x * y).sum(),
    }
}

fn embeddings<'a>(
    map: &'a Option<BTreeMap<SampleId, Embedding>>,
    which: &str,
) -> Result<&'a BTreeMap<SampleId, Embedding>> {
    map.as_ref()
        .ok_or_else(|| Error::config(format!("strategy needs {which} embeddings")))
}

/// Walks candidates by ascending maximum activation and accepts one only if
/// its cosine similarity to every labelled sample and every sample accepted
/// so far is below `threshold`. May return fewer than `n`.
pub fn select_nc_diversity(
    ctx: &SelectionContext,
    n: usize,
    threshold: f64,
) -> Result<QueryBatch> {
    check_n(n)?;
    let unl = embeddings(&ctx.embeddings_unlabelled, "unlabelled")?;
    let lab = embeddings(&ctx.embeddings_labelled, "labelled")?;
    let mut reference: Vec<Vec<f64>> = lab.values().map(unit).collect();
    let mut order = max_probs(ctx);
    rank(&mut order, Direction::Minimize);
    let mut picked = Vec::new();
    for (id, m) in order {
        if picked.len() == n {
            break;
        }
        let e = unl
            .get(&id)
            .ok_or_else(|| Error::config(format!("no embedding for sample {}", id.0)))?;
        let u = unit(e);
        if reference.iter().all(|r| cosine_units(r, &u) < threshold) {
            reference.push(u);
            picked.push((id, m));
        }
    }
    Ok(QueryBatch::from_pairs(picked))
}

/// Per-class quotas proportional to `1 / max(recall, eps)`, rounded by
/// largest remainder (ties to the lower class) so they sum to `n`.
pub fn balanced_quotas(recalls: &[Option<f64>], n: usize, eps: f64) -> Vec<usize> {
    let weights: Vec<f64> = recalls
        .iter()
        .map(|r| 1.0 / r.unwrap_or(0.0).max(eps))
        .collect();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|&x| libm::floor(x) as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - quotas[a] as f64;
        let fb = exact[b] - quotas[b] as f64;
        fb.partial_cmp(&fa).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    for &c in order.iter().take(n.saturating_sub(assigned)) {
        quotas[c] += 1;
    }
    quotas
}

/// Floor applied to per-class recall before taking its reciprocal.
pub const RECALL_FLOOR: f64 = 1e-3;

/// Fills per-class quotas derived from the confusion matrix with each
/// predicted class's least confident samples. Yields
/// [`Selection::Terminate`] when some class cannot fill its quota.
pub fn select_nc_balanced(ctx: &SelectionContext, n: usize) -> Result<Selection> {
    check_n(n)?;
    let confusion = ctx
        .confusion
        .as_ref()
        .ok_or_else(|| Error::config("nc_balanced needs a confusion matrix"))?;
    let classes = confusion.class_count();
    let recalls: Vec<Option<f64>> = (0..classes).map(|c| confusion.recall(c)).collect();
    let quotas = balanced_quotas(&recalls, n, RECALL_FLOOR);

    let mut by_class: Vec<Vec<(SampleId, f64)>> = vec![Vec::new(); classes];
    for (id, m) in max_probs(ctx) {
        let c = *ctx
            .predicted_class
            .get(&id)
            .ok_or_else(|| Error::config(format!("no predicted class for sample {}", id.0)))?;
        if c >= classes {
            return Err(Error::input(format!(
                "predicted class {c} outside confusion matrix of {classes}"
            )));
        }
        by_class[c].push((id, m));
    }
    for (class, (cands, &quota)) in by_class.iter().zip(&quotas).enumerate() {
        if cands.len() < quota {
            return Ok(Selection::Terminate {
                class,
                quota,
                available: cands.len(),
            });
        }
    }
    let mut picked = Vec::with_capacity(n);
    for (mut cands, quota) in by_class.into_iter().zip(quotas) {
        rank(&mut cands, Direction::Minimize);
        picked.extend(cands.into_iter().take(quota));
    }
    rank(&mut picked, Direction::Minimize);
    Ok(Selection::Batch(QueryBatch::from_pairs(picked)))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Farthest-first traversal: repeatedly takes the unlabelled sample whose
/// Euclidean distance to the nearest centre (labelled or already picked) is
/// largest. Scores are those distances at pick time.
pub fn select_coreset_greedy(ctx: &SelectionContext, n: usize) -> Result<QueryBatch> {
    check_n(n)?;
    let unl = embeddings(&ctx.embeddings_unlabelled, "unlabelled")?;
    let lab = embeddings(&ctx.embeddings_labelled, "labelled")?;
    if lab.is_empty() {
        return Err(Error::config("core-set selection needs a non-empty labelled set"));
    }
    let cands: Vec<(SampleId, &[f64])> = unl.iter().map(|(&id, e)| (id, e.as_slice())).collect();
    let mut nearest: Vec<f64> = cands
        .iter()
        .map(|(_, e)| {
            lab.values()
                .map(|c| sq_dist(e, c.as_slice()))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; cands.len()];
    let mut picked = Vec::new();
    while picked.len() < n {
        // candidates are in ascending id order, so `>` keeps the lower id on ties
        let mut best: Option<usize> = None;
        for i in 0..cands.len() {
            if !taken[i] && best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        taken[b] = true;
        picked.push((cands[b].0, libm::sqrt(nearest[b])));
        let centre = cands[b].1;
        for i in 0..cands.len() {
            if !taken[i] {
                nearest[i] = nearest[i].min(sq_dist(cands[i].1, centre));
            }
        }
    }
    Ok(QueryBatch::from_pairs(picked))
}

/// Uniform sample without replacement, reproducible from `seed`.
pub fn select_random(unlabelled: &BTreeSet<SampleId>, n: usize, seed: u64) -> Result<QueryBatch> {
    check_n(n)?;
    let ids: Vec<SampleId> = unlabelled.iter().copied().collect();
    let k = n.min(ids.len());
    let mut rng = seed::rng(seed);
    let picks = rand::seq::index::sample(&mut rng, ids.len(), k);
    Ok(QueryBatch::from_pairs(
        picks.into_iter().map(|i| (ids[i], 0.0)).collect(),
    ))
}

/// Radius of the k-center cover: the largest distance from any point to its
/// nearest centre.
pub fn cover_radius(points: &[Vec<f64>], centres: &[usize]) -> f64 {
    let worst = points
        .iter()
        .map(|p| {
            centres
                .iter()
                .map(|&c| sq_dist(p, &points[c]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    libm::sqrt(worst)
}
