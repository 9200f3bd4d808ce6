use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::types::{ConfusionMatrix, Embedding, ProbabilityVector, SampleId};

fn ids(v: &[u32]) -> Vec<SampleId> {
    v.iter().map(|&i| SampleId(i)).collect()
}

/// Context with two-class vectors `(m, 1 - m)` built from max-probabilities.
fn ctx_from_max(maxes: &[(u32, f64)]) -> SelectionContext {
    let mut ctx = SelectionContext::default();
    for &(id, m) in maxes {
        ctx.probs
            .insert(SampleId(id), ProbabilityVector::new(vec![m, 1.0 - m]).unwrap());
        ctx.predicted_class.insert(SampleId(id), 0);
    }
    ctx
}

#[test]
fn top_n_orders_by_score() {
    let scores: BTreeMap<_, _> = [(SampleId(1), 0.9), (SampleId(2), 0.1), (SampleId(3), 0.5)]
        .into_iter()
        .collect();
    let b = select_top_n(&scores, 2, Direction::Maximize).unwrap();
    assert_eq!(b.ids(), ids(&[1, 3]).as_slice());
    let all = select_top_n(&scores, 10, Direction::Maximize).unwrap();
    assert_eq!(all.len(), 3);
    let low = select_top_n(&scores, 1, Direction::Minimize).unwrap();
    assert_eq!(low.ids(), ids(&[2]).as_slice());
}

#[test]
fn top_n_breaks_ties_by_id() {
    let scores: BTreeMap<_, _> = [(SampleId(2), 0.5), (SampleId(1), 0.5)].into_iter().collect();
    let b = select_top_n(&scores, 1, Direction::Maximize).unwrap();
    assert_eq!(b.ids(), ids(&[1]).as_slice());
    assert!(select_top_n(&BTreeMap::new(), 3, Direction::Maximize)
        .unwrap()
        .is_empty());
    assert!(select_top_n(&scores, 0, Direction::Maximize).is_err());
}

#[test]
fn nc_range_only_in_range_candidate() {
    // 20 classes so that a maximum of 0.05 is attainable
    let mut ctx = SelectionContext::default();
    for (id, m) in [(1u32, 0.95), (2, 0.5), (3, 0.05)] {
        let mut v = vec![(1.0 - m) / 19.0; 20];
        v[0] = m;
        ctx.probs
            .insert(SampleId(id), ProbabilityVector::new(v).unwrap());
    }
    let b = select_nc_range(&ctx, 1, (0.1, 0.9)).unwrap();
    assert_eq!(b.ids(), ids(&[2]).as_slice());
}

#[test]
fn nc_range_fills_from_nearest_to_interval() {
    // everything outside [0.6, 0.7]
    let maxes = [(1u32, 0.55), (2, 0.95), (3, 0.72), (4, 0.51), (5, 0.8)];
    let ctx = ctx_from_max(&maxes);
    let b = select_nc_range(&ctx, 2, (0.6, 0.7)).unwrap();
    // oracle: exhaustive scan of distance-to-interval
    let mut dist: Vec<(f64, u32)> = maxes
        .iter()
        .map(|&(id, m)| {
            let d = if m < 0.6 {
                0.6 - m
            } else if m > 0.7 {
                m - 0.7
            } else {
                0.0
            };
            (d, id)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let expected: Vec<SampleId> = dist.iter().take(2).map(|&(_, id)| SampleId(id)).collect();
    assert_eq!(b.ids(), expected.as_slice());
    assert_eq!(b.ids(), ids(&[3, 1]).as_slice());
}

#[test]
fn nc_range_both_in_range_and_validation() {
    let ctx = ctx_from_max(&[(1, 0.5), (2, 0.51)]);
    let b = select_nc_range(&ctx, 2, (0.1, 0.9)).unwrap();
    assert_eq!(b.ids(), ids(&[1, 2]).as_slice());
    assert!(matches!(
        select_nc_range(&ctx, 2, (0.9, 0.1)),
        Err(crate::Error::Config(_))
    ));
    assert!(select_nc_range(&ctx, 2, (-0.1, 0.5)).is_err());
}

fn emb(v: &[f64]) -> Embedding {
    Embedding(v.to_vec())
}

#[test]
fn nc_diversity_vacuous_threshold_matches_nc_low() {
    let maxes = [(1u32, 0.7), (2, 0.55), (3, 0.9), (4, 0.6), (5, 0.51)];
    let mut ctx = ctx_from_max(&maxes);
    let unl: BTreeMap<_, _> = maxes
        .iter()
        .map(|&(id, _)| (SampleId(id), emb(&[1.0, id as f64])))
        .collect();
    ctx.embeddings_unlabelled = Some(unl);
    ctx.embeddings_labelled = Some([(SampleId(0), emb(&[1.0, 0.0]))].into_iter().collect());
    let div = select_nc_diversity(&ctx, 3, 1.0 + 1e-9).unwrap();
    let low = select_nc_low(&ctx, 3).unwrap();
    assert_eq!(div.ids(), low.ids());
}

#[test]
fn nc_diversity_rejects_duplicates() {
    let mut ctx = ctx_from_max(&[(1, 0.5), (2, 0.52), (3, 0.9)]);
    ctx.embeddings_unlabelled = Some(
        [
            (SampleId(1), emb(&[0.0, 1.0])),
            (SampleId(2), emb(&[0.0, 1.0])),
            (SampleId(3), emb(&[1.0, 1.0])),
        ]
        .into_iter()
        .collect(),
    );
    ctx.embeddings_labelled = Some([(SampleId(0), emb(&[1.0, 0.0]))].into_iter().collect());
    let b = select_nc_diversity(&ctx, 2, 0.95).unwrap();
    assert!(b.ids().contains(&SampleId(1)));
    assert!(!b.ids().contains(&SampleId(2)));
    assert_eq!(b.len(), 2);
}

#[test]
fn nc_diversity_matches_brute_force_greedy() {
    // five points on the line x = 1, in clustered pairs plus one loner
    let ys = [(1u32, 0.0, 0.52), (2, 0.05, 0.55), (3, 2.0, 0.53), (4, 2.1, 0.6), (5, 8.0, 0.7)];
    let mut ctx = ctx_from_max(&ys.iter().map(|&(id, _, m)| (id, m)).collect::<Vec<_>>());
    ctx.embeddings_unlabelled = Some(
        ys.iter()
            .map(|&(id, y, _)| (SampleId(id), emb(&[1.0, y])))
            .collect(),
    );
    ctx.embeddings_labelled = Some([(SampleId(0), emb(&[1.0, -3.0]))].into_iter().collect());
    let threshold = 0.99;
    let got = select_nc_diversity(&ctx, 5, threshold).unwrap();

    // oracle: angles on the line, cos of angle difference
    let angle = |y: f64| libm::atan2(y, 1.0);
    let mut order: Vec<_> = ys.to_vec();
    order.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    let mut accepted_angles = vec![angle(-3.0)];
    let mut expected = Vec::new();
    for (id, y, _) in order {
        let a = angle(y);
        if accepted_angles.iter().all(|&b| libm::cos(a - b) < threshold) {
            accepted_angles.push(a);
            expected.push(SampleId(id));
        }
    }
    assert_eq!(got.ids(), expected.as_slice());
    assert!(expected.len() < 5, "clustered pairs must be thinned");
}

#[test]
fn nc_diversity_needs_embeddings() {
    let ctx = ctx_from_max(&[(1, 0.5)]);
    assert!(matches!(
        select_nc_diversity(&ctx, 1, 0.9),
        Err(crate::Error::Config(_))
    ));
}

/// Largest-remainder quotas in exact rational arithmetic. Recalls are given
/// as `num/den`.
fn rational_quotas(recalls: &[(u64, u64)], n: u64) -> Vec<u64> {
    // weight_i = den_i / num_i ; quota_i = n * w_i / sum w. Common denominator.
    let l: u64 = recalls.iter().map(|&(num, _)| num).product();
    let w: Vec<u64> = recalls.iter().map(|&(num, den)| den * (l / num)).collect();
    let total: u64 = w.iter().sum();
    let mut q: Vec<u64> = w.iter().map(|&wi| n * wi / total).collect();
    let rem: Vec<u64> = w.iter().map(|&wi| n * wi % total).collect();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(a.cmp(&b)));
    let left = n - q.iter().sum::<u64>();
    for &c in order.iter().take(left as usize) {
        q[c] += 1;
    }
    q
}

#[test]
fn balanced_quotas_reciprocal_recall() {
    let q = balanced_quotas(&[Some(1.0), Some(0.25)], 5, RECALL_FLOOR);
    let oracle = rational_quotas(&[(1, 1), (1, 4)], 5);
    assert_eq!(q, vec![1, 4]);
    assert_eq!(q.iter().map(|&x| x as u64).collect::<Vec<_>>(), oracle);

    let q = balanced_quotas(&[Some(0.5), Some(0.75), Some(1.0)], 13, RECALL_FLOOR);
    let oracle = rational_quotas(&[(2, 4), (3, 4), (4, 4)], 13);
    assert_eq!(q.iter().map(|&x| x as u64).collect::<Vec<_>>(), oracle);

    let uniform = balanced_quotas(&[Some(1.0); 4], 8, RECALL_FLOOR);
    assert_eq!(uniform, vec![2, 2, 2, 2]);
    let zero = balanced_quotas(&[Some(0.0), Some(1.0)], 1001, RECALL_FLOOR);
    assert_eq!(zero, vec![1000, 1]);
}

fn balanced_ctx(preds: &[(u32, usize, f64)], confusion: ConfusionMatrix) -> SelectionContext {
    let mut ctx = SelectionContext::default();
    let c = confusion.class_count();
    for &(id, class, m) in preds {
        let mut v = vec![(1.0 - m) / (c - 1) as f64; c];
        v[class] = m;
        ctx.probs
            .insert(SampleId(id), ProbabilityVector::new(v).unwrap());
        ctx.predicted_class.insert(SampleId(id), class);
    }
    ctx.confusion = Some(confusion);
    ctx
}

#[test]
fn nc_balanced_uniform_for_perfect_confusion() {
    let confusion =
        ConfusionMatrix::from_counts(vec![vec![5, 0, 0], vec![0, 5, 0], vec![0, 0, 5]]).unwrap();
    let preds: Vec<(u32, usize, f64)> = (0..30)
        .map(|i| (i, (i % 3) as usize, 0.4 + 0.01 * i as f64))
        .collect();
    let ctx = balanced_ctx(&preds, confusion);
    let b = select_nc_balanced(&ctx, 6).unwrap().batch().unwrap();
    let mut per_class = [0; 3];
    for id in b.ids() {
        per_class[ctx.predicted_class[id]] += 1;
    }
    assert_eq!(per_class, [2, 2, 2]);
    // least confident per class
    assert!(b.ids().contains(&SampleId(0)) && b.ids().contains(&SampleId(3)));
}

#[test]
fn nc_balanced_follows_recalls() {
    let confusion = ConfusionMatrix::from_counts(vec![vec![4, 0], vec![3, 1]]).unwrap();
    let preds: Vec<(u32, usize, f64)> = (0..20)
        .map(|i| (i, (i % 2) as usize, 0.55 + 0.01 * i as f64))
        .collect();
    let ctx = balanced_ctx(&preds, confusion);
    let b = select_nc_balanced(&ctx, 5).unwrap().batch().unwrap();
    let ones = b.ids().iter().filter(|id| ctx.predicted_class[id] == 1).count();
    assert_eq!(ones, 4);
    assert_eq!(b.len(), 5);
}

#[test]
fn nc_balanced_terminates_when_class_exhausted() {
    let confusion = ConfusionMatrix::from_counts(vec![vec![5, 0], vec![0, 5]]).unwrap();
    let preds: Vec<(u32, usize, f64)> = (0..10).map(|i| (i, 0, 0.8)).collect();
    let ctx = balanced_ctx(&preds, confusion);
    let s = select_nc_balanced(&ctx, 4).unwrap();
    assert_eq!(
        s,
        Selection::Terminate {
            class: 1,
            quota: 2,
            available: 0
        }
    );
    let mut no_conf = ctx.clone();
    no_conf.confusion = None;
    assert!(matches!(
        select_nc_balanced(&no_conf, 4),
        Err(crate::Error::Config(_))
    ));
}

fn coreset_ctx(labelled: &[(u32, f64)], unlabelled: &[(u32, f64)]) -> SelectionContext {
    let mut ctx = ctx_from_max(&unlabelled.iter().map(|&(id, _)| (id, 0.5)).collect::<Vec<_>>());
    ctx.embeddings_unlabelled = Some(
        unlabelled
            .iter()
            .map(|&(id, x)| (SampleId(id), emb(&[x])))
            .collect(),
    );
    ctx.embeddings_labelled = Some(
        labelled
            .iter()
            .map(|&(id, x)| (SampleId(id), emb(&[x])))
            .collect(),
    );
    ctx
}

#[test]
fn coreset_picks_farthest_point() {
    let ctx = coreset_ctx(&[(0, 0.0)], &[(1, 0.1), (2, 0.9), (3, 1.0)]);
    let b = select_coreset_greedy(&ctx, 1).unwrap();
    assert_eq!(b.ids(), ids(&[3]).as_slice());
}

/// Exhaustive replay of the greedy rule, written independently.
fn greedy_oracle(labelled: &[f64], unlabelled: &[(u32, f64)], n: usize) -> Vec<SampleId> {
    let mut centres: Vec<f64> = labelled.to_vec();
    let mut left: Vec<(u32, f64)> = unlabelled.to_vec();
    let mut out = Vec::new();
    for _ in 0..n {
        let mut best: Option<(f64, u32, usize)> = None;
        for (k, &(id, x)) in left.iter().enumerate() {
            let d = centres.iter().map(|c| (x - c).abs()).fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((bd, bid, _)) => d > bd || (d == bd && id < bid),
            };
            if better {
                best = Some((d, id, k));
            }
        }
        let Some((_, id, k)) = best else { break };
        centres.push(left.remove(k).1);
        out.push(SampleId(id));
    }
    out
}

#[test]
fn coreset_second_pick_after_centre_joins() {
    let unl = [(1, 0.1), (2, 0.9), (3, 1.0)];
    let ctx = coreset_ctx(&[(0, 0.0)], &unl);
    let b = select_coreset_greedy(&ctx, 2).unwrap();
    assert_eq!(b.ids(), greedy_oracle(&[0.0], &unl, 2).as_slice());
    // both remaining points sit ~0.1 from a centre; the lower id wins
    assert_eq!(b.ids(), ids(&[3, 1]).as_slice());
}

#[test]
fn coreset_needs_labelled_set() {
    let ctx = coreset_ctx(&[], &[(1, 0.1)]);
    assert!(matches!(
        select_coreset_greedy(&ctx, 1),
        Err(crate::Error::Config(_))
    ));
}

#[test]
fn coreset_is_two_approximation_on_small_instances() {
    use rand::Rng;
    let mut rng = crate::seed::rng(99);
    for _ in 0..50 {
        let npts = rng.random_range(2..=10);
        let k = rng.random_range(1..=3.min(npts));
        let pts: Vec<Vec<f64>> = (0..npts)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let greedy = greedy_radius(&pts, k);
        let opt = brute_force_radius(&pts, k);
        assert!(greedy <= 2.0 * opt + 1e-12, "greedy {greedy} opt {opt}");
    }
}

pub(crate) fn greedy_radius(pts: &[Vec<f64>], k: usize) -> f64 {
    let mut ctx = SelectionContext::default();
    ctx.embeddings_labelled = Some([(SampleId(0), Embedding(pts[0].clone()))].into_iter().collect());
    ctx.embeddings_unlabelled = Some(
        pts.iter()
            .enumerate()
            .skip(1)
            .map(|(i, p)| (SampleId::from(i), Embedding(p.clone())))
            .collect(),
    );
    let mut centres = vec![0usize];
    if k > 1 {
        let b = select_coreset_greedy(&ctx, k - 1).unwrap();
        centres.extend(b.ids().iter().map(|id| id.index()));
    }
    cover_radius(pts, &centres)
}

fn brute_force_radius(pts: &[Vec<f64>], k: usize) -> f64 {
    let n = pts.len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let centres: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let r = pts
            .iter()
            .map(|p| {
                centres
                    .iter()
                    .map(|&c| {
                        p.iter()
                            .zip(&pts[c])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        best = best.min(r);
    }
    best
}

#[test]
fn random_is_deterministic_and_saturates() {
    let unl: BTreeSet<SampleId> = (0..20u32).map(SampleId).collect();
    let a = select_random(&unl, 5, 42).unwrap();
    let b = select_random(&unl, 5, 42).unwrap();
    assert_eq!(a, b);
    let c = select_random(&unl, 5, 43).unwrap();
    assert_ne!(a.ids(), c.ids());
    let all = select_random(&unl, 20, 1).unwrap();
    let set: BTreeSet<_> = all.ids().iter().copied().collect();
    assert_eq!(set, unl);
    assert_eq!(select_random(&unl, 50, 1).unwrap().len(), 20);
}

#[test]
fn random_is_uniform() {
    let unl: BTreeSet<SampleId> = (0..10u32).map(SampleId).collect();
    let mut counts = [0usize; 10];
    let draws = 10_000;
    for s in 0..draws {
        let b = select_random(&unl, 1, crate::seed::derive(5, "freq", s)).unwrap();
        counts[b.ids()[0].index()] += 1;
    }
    for c in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 0.1).abs() <= 0.01, "frequency {f}");
    }
}

#[test]
fn binary_strategies_agree() {
    use rand::Rng;
    let mut rng = crate::seed::rng(3);
    let mut ctx = SelectionContext::default();
    for i in 0..300u32 {
        let p: f64 = rng.random();
        ctx.probs
            .insert(SampleId(i), ProbabilityVector::new(vec![p, 1.0 - p]).unwrap());
    }
    for n in [1, 10, 100] {
        let get = |k: StrategyKind| select(&Strategy::new(k), &ctx, n).unwrap().batch().unwrap();
        let reference = get(StrategyKind::NcLow);
        let ref_set: BTreeSet<_> = reference.ids().iter().collect();
        for k in [StrategyKind::EntropyHigh, StrategyKind::Sosl, StrategyKind::Margin] {
            let b = get(k);
            assert_eq!(b.ids().iter().collect::<BTreeSet<_>>(), ref_set, "{k} n={n}");
        }
    }
}

#[test]
fn strategy_names_round_trip() {
    for k in StrategyKind::ALL {
        assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
    }
    assert_eq!(StrategyKind::CoresetGreedy.as_str(), "coreset_greedy");
    assert!("entropy".parse::<StrategyKind>().is_err());
}

#[test]
fn selection_is_pure() {
    let ctx = coreset_ctx(&[(0, 0.0)], &[(1, 0.3), (2, 0.7), (3, 0.2), (4, 0.9)]);
    for k in StrategyKind::ALL {
        if k == StrategyKind::NcBalanced {
            continue;
        }
        let s = Strategy::new(k);
        assert_eq!(select(&s, &ctx, 2).unwrap(), select(&s, &ctx, 2).unwrap());
    }
}
