//! Pool-based active learning primitives.
//!
//! This crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation: the domain types, the query strategies, the built-in
//! multilayer perceptron, synthetic data generation, stratified splits and
//! label-noise injection. Loading files, running experiments in parallel and
//! the command-line interface live in the `alpool` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod classifier;
pub mod data;
pub mod error;
pub mod noise;
pub mod seed;
pub mod strategies;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    build_confusion_matrix, derive_hier_label, ConfusionMatrix, Dataset, Embedding, Features,
    HierLabel, LabelTree, NodeId, NodeState, Pool, ProbabilityVector, QueryBatch, SampleId,
};
