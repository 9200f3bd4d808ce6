//! Per-sample uncertainty scores over a classifier's class outputs.

use crate::error::{Error, Result};
use crate::types::ProbabilityVector;

/// `1 - max_i p_i`.
pub fn score_least_confident(p: &ProbabilityVector) -> f64 {
    1.0 - p.max()
}

/// Difference between the two largest entries. Small means uncertain.
pub fn score_margin(p: &ProbabilityVector) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::input("margin needs at least two classes"));
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &x in p.as_slice() {
        if x > first {
            second = first;
            first = x;
        } else if x > second {
            second = x;
        }
    }
    Ok(first - second)
}

/// Shannon entropy in nats, with `0 * ln 0 = 0`.
pub fn score_entropy(p: &ProbabilityVector) -> f64 {
    -p.as_slice()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * libm::log(x))
        .sum::<f64>()
}

/// Simpson diversity `1 - sum_i p_i^2`, evaluated in compensated
/// arithmetic (error-free products and sums) so the result is as accurate
/// as if computed in twice the working precision.
pub fn score_sosl(p: &ProbabilityVector) -> f64 {
    let (mut hi, mut lo) = (1.0f64, 0.0f64);
    for &x in p.as_slice() {
        let sq = x * x;
        let sq_err = libm::fma(x, x, -sq);
        let sum = hi - sq;
        let v = sum - hi;
        let sum_err = (hi - (sum - v)) + (-sq - v);
        hi = sum;
        lo += sum_err - sq_err;
    }
    hi + lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn least_confident_values() {
        assert_eq!(score_least_confident(&ProbabilityVector::one_hot(3, 0)), 0.0);
        let u = score_least_confident(&ProbabilityVector::uniform(10));
        assert!((u - 0.9).abs() < 1e-15);
        // independent max: sort descending
        let v: [f64; 3] = [0.5, 0.3, 0.2];
        let mut s = v.to_vec();
        s.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(score_least_confident(&pv(&v)), 1.0 - s[0]);
        assert_eq!(score_least_confident(&pv(&v)), 0.5);
    }

    #[test]
    fn margin_values() {
        assert_eq!(score_margin(&pv(&[0.5, 0.5])).unwrap(), 0.0);
        assert_eq!(score_margin(&ProbabilityVector::one_hot(4, 2)).unwrap(), 1.0);
        let v: [f64; 3] = [0.5, 0.3, 0.2];
        let mut s = v.to_vec();
        s.sort_by(|a, b| b.total_cmp(a));
        let m = score_margin(&pv(&v)).unwrap();
        assert_eq!(m, s[0] - s[1]);
        assert!((m - 0.2).abs() < 1e-15);
        assert!(score_margin(&pv(&[1.0])).is_err());
    }

    #[test]
    fn entropy_values() {
        assert_eq!(score_entropy(&ProbabilityVector::one_hot(5, 1)), 0.0);
        let u = score_entropy(&ProbabilityVector::uniform(10));
        assert!((u - libm::log(10.0)).abs() < 1e-12);
        let mut two = vec![0.0; 10];
        two[0] = 0.5;
        two[1] = 0.5;
        // two-term evaluation: -2 * 0.5 ln 0.5
        assert!((score_entropy(&pv(&two)) - libm::log(2.0)).abs() < 1e-15);
    }

    #[test]
    fn sosl_values() {
        assert_eq!(score_sosl(&ProbabilityVector::one_hot(10, 3)), 0.0);
        assert_eq!(score_sosl(&ProbabilityVector::uniform(10)), 0.9);
        let mut two = vec![0.0; 10];
        two[0] = 0.5;
        two[1] = 0.5;
        assert_eq!(score_sosl(&pv(&two)), 0.5);
    }

    #[test]
    fn sosl_prefers_split_peak_over_single_peak() {
        let mut two = vec![0.0; 10];
        two[0] = 0.5;
        two[1] = 0.5;
        let mut peak = vec![0.0; 10];
        peak[0] = 0.9;
        peak[1] = 0.1;
        let spread = ProbabilityVector::uniform(10);
        let (two, peak) = (pv(&two), pv(&peak));
        assert!(score_sosl(&spread) > score_sosl(&two));
        assert!(score_entropy(&spread) > score_entropy(&two));
        assert!(score_sosl(&two) > score_sosl(&peak));
    }

    fn arb_probs() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 2..12).prop_filter_map("non-zero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-9).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn scores_stay_in_bounds(v in arb_probs()) {
            let c = v.len() as f64;
            let p = pv(&v);
            let eps = 1e-12;
            let s = score_sosl(&p);
            prop_assert!(s >= -eps && s <= 1.0 - 1.0 / c + eps);
            let h = score_entropy(&p);
            prop_assert!(h >= -eps && h <= libm::log(c) + eps);
            let lc = score_least_confident(&p);
            prop_assert!(lc >= -eps && lc <= 1.0 - 1.0 / c + eps);
            let m = score_margin(&p).unwrap();
            prop_assert!((-eps..=1.0 + eps).contains(&m));
        }

        #[test]
        fn scores_ignore_class_order(v in arb_probs(), rot in 0usize..12) {
            let mut w = v.clone();
            let k = rot % w.len();
            w.rotate_left(k);
            w.reverse();
            let (p, q) = (pv(&v), pv(&w));
            let tol = 1e-12;
            prop_assert!((score_sosl(&p) - score_sosl(&q)).abs() < tol);
            prop_assert!((score_entropy(&p) - score_entropy(&q)).abs() < tol);
            prop_assert_eq!(score_least_confident(&p), score_least_confident(&q));
            prop_assert_eq!(score_margin(&p).unwrap(), score_margin(&q).unwrap());
        }

        #[test]
        fn entropy_ranking_is_base_independent(a in arb_probs(), b in arb_probs()) {
            let nats = (score_entropy(&pv(&a)), score_entropy(&pv(&b)));
            let bits = |v: &[f64]| -v.iter().filter(|&&x| x > 0.0).map(|&x| x * libm::log2(x)).sum::<f64>();
            let bits = (bits(&a), bits(&b));
            // skip near-ties where rounding may flip the order
            prop_assume!((nats.0 - nats.1).abs() > 1e-9);
            prop_assert_eq!(nats.0 > nats.1, bits.0 > bits.1);
        }
    }
}
