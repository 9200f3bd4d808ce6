//! Query strategies.
//!
//! Every strategy is a pure function of a [`SelectionContext`] (class
//! outputs, embeddings, predicted classes and the previous model's confusion
//! matrix) and never looks inside the classifier. The scalar strategies
//! extend the single-sample query to batches by taking the top `n` scores.

mod scores;
mod select;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ConfusionMatrix, Embedding, ProbabilityVector, QueryBatch, SampleId};

pub use scores::{score_entropy, score_least_confident, score_margin, score_sosl};
pub use select::{
    balanced_quotas, cosine_similarity, cover_radius, select_coreset_greedy, select_nc_balanced,
    select_nc_diversity, select_nc_low, select_nc_range, select_random, select_top_n, Direction,
    RECALL_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    NcLow,
    NcRange,
    NcDiversity,
    NcBalanced,
    Margin,
    EntropyHigh,
    Sosl,
    CoresetGreedy,
    Random,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 9] = [
        StrategyKind::NcLow,
        StrategyKind::NcRange,
        StrategyKind::NcDiversity,
        StrategyKind::NcBalanced,
        StrategyKind::Margin,
        StrategyKind::EntropyHigh,
        StrategyKind::Sosl,
        StrategyKind::CoresetGreedy,
        StrategyKind::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::NcLow => "nc_low",
            StrategyKind::NcRange => "nc_range",
            StrategyKind::NcDiversity => "nc_diversity",
            StrategyKind::NcBalanced => "nc_balanced",
            StrategyKind::Margin => "margin",
            StrategyKind::EntropyHigh => "entropy_high",
            StrategyKind::Sosl => "sosl",
            StrategyKind::CoresetGreedy => "coreset_greedy",
            StrategyKind::Random => "random",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(self, StrategyKind::NcDiversity | StrategyKind::CoresetGreedy)
    }

    pub fn needs_confusion(self) -> bool {
        self == StrategyKind::NcBalanced
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(alloc::format!("unknown strategy '{s}'")))
    }
}

fn default_range() -> (f64, f64) {
    (0.1, 0.9)
}

fn default_threshold() -> f64 {
    0.95
}

/// A strategy together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strategy {
    pub name: StrategyKind,
    /// Admissible maximum-activation band for `nc_range`.
    #[serde(default = "default_range")]
    pub range: (f64, f64),
    /// Cosine similarity cut-off for `nc_diversity`.
    #[serde(default = "default_threshold")]
    pub similarity_threshold: f64,
}

impl Strategy {
    pub fn new(name: StrategyKind) -> Self {
        Strategy {
            name,
            range: default_range(),
            similarity_threshold: default_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::config(alloc::format!(
                "invalid activation range [{lo}, {hi}]"
            )));
        }
        if !self.similarity_threshold.is_finite() {
            return Err(Error::config("similarity threshold must be finite"));
        }
        Ok(())
    }
}

impl From<StrategyKind> for Strategy {
    fn from(k: StrategyKind) -> Self {
        Strategy::new(k)
    }
}

/// Everything a strategy may look at for one query. Maps are keyed by the
/// pool's unlabelled (resp. labelled) ids at selection time.
#[derive(Debug, Clone, Default)]
pub struct SelectionContext {
    pub probs: BTreeMap<SampleId, ProbabilityVector>,
    pub predicted_class: BTreeMap<SampleId, usize>,
    pub embeddings_unlabelled: Option<BTreeMap<SampleId, Embedding>>,
    pub embeddings_labelled: Option<BTreeMap<SampleId, Embedding>>,
    pub confusion: Option<ConfusionMatrix>,
    pub rng_seed: u64,
}

impl SelectionContext {
    pub fn unlabelled_ids(&self) -> BTreeSet<SampleId> {
        self.probs.keys().copied().collect()
    }
}

/// Outcome of one query.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Batch(QueryBatch),
    /// A balanced strategy ran out of samples for `class`.
    Terminate {
        class: usize,
        quota: usize,
        available: usize,
    },
}

impl Selection {
    pub fn batch(self) -> Option<QueryBatch> {
        match self {
            Selection::Batch(b) => Some(b),
            Selection::Terminate { .. } => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Selection::Batch(b) => alloc::format!("batch of {}", b.len()),
            Selection::Terminate {
                class,
                quota,
                available,
            } => alloc::format!(
                "terminate: class {class} needs {quota} samples, {available} left"
            ),
        }
    }
}

fn top_n_by(
    ctx: &SelectionContext,
    n: usize,
    direction: Direction,
    f: impl Fn(&ProbabilityVector) -> Result<f64>,
) -> Result<QueryBatch> {
    let scores = ctx
        .probs
        .iter()
        .map(|(&id, p)| f(p).map(|s| (id, s)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    select_top_n(&scores, n, direction)
}

/// Runs `strategy` over `ctx` and picks up to `n` samples.
pub fn select(strategy: &Strategy, ctx: &SelectionContext, n: usize) -> Result<Selection> {
    strategy.validate()?;
    let batch = match strategy.name {
        StrategyKind::NcLow => select_nc_low(ctx, n)?,
        StrategyKind::NcRange => select_nc_range(ctx, n, strategy.range)?,
        StrategyKind::NcDiversity => select_nc_diversity(ctx, n, strategy.similarity_threshold)?,
        StrategyKind::NcBalanced => return select_nc_balanced(ctx, n),
        StrategyKind::Margin => top_n_by(ctx, n, Direction::Minimize, score_margin)?,
        StrategyKind::EntropyHigh => {
            top_n_by(ctx, n, Direction::Maximize, |p| Ok(score_entropy(p)))?
        }
        StrategyKind::Sosl => top_n_by(ctx, n, Direction::Maximize, |p| Ok(score_sosl(p)))?,
        StrategyKind::CoresetGreedy => select_coreset_greedy(ctx, n)?,
        StrategyKind::Random => select_random(&ctx.unlabelled_ids(), n, ctx.rng_seed)?,
    };
    Ok(Selection::Batch(batch))
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name.as_str())
    }
}

#[cfg(test)]
mod tests;
