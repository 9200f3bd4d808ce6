//! Synthetic annotation errors.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Labels as seen by training, with the positions that were corrupted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoisyLabels {
    pub labels: Vec<usize>,
    pub flipped: Vec<usize>,
}

/// Replaces exactly `round(rate * labels.len())` labels, at positions chosen
/// by `seed`, with a uniformly drawn different class. The input is left
/// untouched.
pub fn inject_label_noise(
    labels: &[usize],
    class_count: usize,
    rate: f64,
    seed: u64,
) -> Result<NoisyLabels> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("noise rate {rate} not in [0, 1)")));
    }
    let count = libm::round(rate * labels.len() as f64) as usize;
    if count > 0 && class_count < 2 {
        return Err(Error::config("label noise needs at least two classes"));
    }
    let mut rng = seed::rng(seed);
    let mut flipped: Vec<usize> = rand::seq::index::sample(&mut rng, labels.len(), count).into_vec();
    flipped.sort_unstable();
    let mut noisy = labels.to_vec();
    for &i in &flipped {
        let r = rng.random_range(0..class_count - 1);
        noisy[i] = if r < labels[i] { r } else { r + 1 };
    }
    Ok(NoisyLabels {
        labels: noisy,
        flipped,
    })
}
