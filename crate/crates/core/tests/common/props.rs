//! Property checks driven by an explicit proptest runner so that both the
//! `properties` test target and the acceptance runner can call them.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use xornet::em::{fit, HyperParams};
use xornet::eval::auc;
use xornet::graph::{make_folds, DirectedWeightedGraph, TrainView};
use xornet::ranking::{expected_count_s, RankingParams};

pub const CASES: u32 = 128;

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

/// Shifting every score by a constant leaves every `S_ij` unchanged; exact
/// on a dyadic grid where the differences are representable.
pub fn gauge_invariance(cases: u32) -> Result<(), String> {
    let strat = (prop::collection::vec(-320i32..320, 2..10), -6400i32..6400, 0.0f64..10.0, 0.1f64..5.0);
    check(cases, strat, |(raw, shift, beta, c)| {
        let s: Vec<f64> = raw.iter().map(|&x| x as f64 / 64.0).collect();
        let t: Vec<f64> = s.iter().map(|x| x + shift as f64 / 64.0).collect();
        let a = RankingParams { s, c, beta };
        let b = RankingParams { s: t, c, beta };
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                prop_assert_eq!(expected_count_s(i, j, &a), expected_count_s(i, j, &b));
            }
        }
        Ok(())
    })?;
    let strat = (prop::collection::vec(-5.0f64..5.0, 2..10), -50.0f64..50.0, 0.0f64..10.0);
    check(cases, strat, |(s, shift, beta)| {
        let t: Vec<f64> = s.iter().map(|x| x + shift).collect();
        let a = RankingParams { s: s.clone(), c: 1.0, beta };
        let b = RankingParams { s: t, c: 1.0, beta };
        for i in 0..s.len() {
            for j in 0..s.len() {
                let (x, y) = (expected_count_s(i, j, &a), expected_count_s(i, j, &b));
                prop_assert!((x - y).abs() <= 1e-9 * x.max(1e-300) + 1e-300, "{} vs {}", x, y);
            }
        }
        Ok(())
    })
}

/// `2 Q_i Q_j - Q_i - Q_j + 1 = Q_i Q_j + (1 - Q_i)(1 - Q_j)`.
pub fn x_identity(cases: u32) -> Result<(), String> {
    check(cases, (0.0f64..=1.0, 0.0f64..=1.0), |(a, b)| {
        let lhs = 2.0 * a * b - a - b + 1.0;
        let rhs = a * b + (1.0 - a) * (1.0 - b);
        prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON, "{} vs {}", lhs, rhs);
        prop_assert!((0.0..=1.0 + 4.0 * f64::EPSILON).contains(&lhs));
        Ok(())
    })
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// AUC is unchanged by strictly increasing transforms and agrees with the
/// pairwise count.
pub fn auc_monotone_invariance(cases: u32) -> Result<(), String> {
    let strat = prop::collection::vec((-40i32..40, any::<bool>()), 2..60);
    check(cases, strat, |pts| {
        let scores: Vec<f64> = pts.iter().map(|p| p.0 as f64 / 4.0).collect();
        let labels: Vec<bool> = pts.iter().map(|p| p.1).collect();
        let base = auc(&scores, &labels);
        let brute = brute_auc(&scores, &labels);
        prop_assert_eq!(base.is_some(), brute.is_some());
        let Some(base) = base else { return Ok(()) };
        prop_assert!((base - brute.unwrap()).abs() < 1e-12);
        let transforms: [fn(f64) -> f64; 3] = [|x| (x / 3.0).exp(), |x| 2.5 * x - 7.0, |x| x * x * x + x];
        for f in transforms {
            let t: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(auc(&t, &labels), Some(base));
        }
        Ok(())
    })
}

/// Folds partition the off-diagonal pairs exactly once, with sizes that
/// differ by at most one, and depend only on the seed.
pub fn fold_partition(cases: u32) -> Result<(), String> {
    check(cases, (2usize..14, 2usize..7, any::<u64>()), |(n, k, seed)| {
        let g = DirectedWeightedGraph::from_edges(n, [(0, 1, 1)]).unwrap();
        let res = make_folds(&g, k, seed);
        if k > n * (n - 1) {
            prop_assert!(res.is_err());
            return Ok(());
        }
        let folds = res.unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0u32; n * n];
        for f in &folds {
            for &(i, j) in f.pairs() {
                prop_assert!(i != j);
                seen[i * n + j] += 1;
            }
        }
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(seen[i * n + j], u32::from(i != j));
            }
        }
        let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(make_folds(&g, k, seed).unwrap(), folds);
        Ok(())
    })
}

fn edges_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize, u32)>)> {
    (5usize..10).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n, 1u32..4), 8..40)))
}

/// Fitting on a masked view never reads a hidden pair, and rewriting the
/// hidden entries leaves the fit bit-for-bit unchanged.
pub fn mask_non_leakage(cases: u32) -> Result<(), String> {
    let strat = (edges_strategy(), 2usize..4, any::<u64>(), prop::collection::vec(0u32..6, 100));
    check(cases, strat, |((n, raw), k, seed, noise)| {
        let edges: Vec<(usize, usize, u32)> = raw.into_iter().filter(|e| e.0 != e.1).collect();
        let g = DirectedWeightedGraph::from_edges(n, edges.clone()).unwrap();
        let folds = make_folds(&g, k, seed).unwrap();
        let mask = &folds[0];
        let mut other: Vec<(usize, usize, u32)> = edges.into_iter().filter(|e| !mask.contains(e.0, e.1)).collect();
        for (idx, &(i, j)) in mask.pairs().iter().enumerate() {
            let w = noise[idx % noise.len()];
            if w > 0 {
                other.push((i, j, w));
            }
        }
        let g2 = DirectedWeightedGraph::from_edges(n, other).unwrap();
        let hp = HyperParams { k: 2, max_iter: 15, n_restarts: 2, seed, ..HyperParams::default() };
        let v1 = TrainView::masked(&g, mask).unwrap();
        let v2 = TrainView::masked(&g2, mask).unwrap();
        let (f1, f2) = (fit(&v1, &hp, None), fit(&v2, &hp, None));
        prop_assert_eq!(v1.masked_reads(), 0);
        prop_assert_eq!(v2.masked_reads(), 0);
        match (f1, f2) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.theta(), b.theta());
                prop_assert_eq!(a.q(), b.q());
                prop_assert_eq!(a.elbo_trace, b.elbo_trace);
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "fits disagree: {:?} / {:?}", a.is_ok(), b.is_ok()),
        }
        Ok(())
    })
}
