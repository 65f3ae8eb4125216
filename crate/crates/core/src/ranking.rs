//! Hierarchy mechanism: spring-model expected counts `S_ij`, the Q-weighted
//! score and sparsity updates, and the standalone SpringRank baseline.

use serde::{Deserialize, Serialize};

use crate::graph::TrainView;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingParams {
    pub s: Vec<f64>,
    /// sparsity coefficient, > 0
    pub c: f64,
    /// inverse temperature, fixed during a fit
    pub beta: f64,
}

#[inline]
pub fn spring_kernel(si: f64, sj: f64, beta: f64) -> f64 {
    let d = si - sj - 1.0;
    (-0.5 * beta * d * d).exp()
}

/// `S_ij = c exp(-β/2 (s_i - s_j - 1)²)`.
pub fn expected_count_s(i: usize, j: usize, r: &RankingParams) -> f64 {
    r.c * spring_kernel(r.s[i], r.s[j], r.beta)
}

/// Dense row-major kernel matrix `exp(-β/2 (s_i - s_j - 1)²)`, zero diagonal.
pub fn kernel_matrix(s: &[f64], beta: f64) -> Vec<f64> {
    let n = s.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            if j != i {
                row[j] = spring_kernel(s[i], s[j], beta);
            }
        }
    }
    out
}

/// How the score fixed-point equation is iterated inside one M-step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub enum ScoreSchedule {
    /// one Gauss-Seidel sweep
    #[default]
    SingleSweep,
    /// sweeps until the largest score change is below `tol`
    Converge { tol: f64, max_sweeps: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreUpdate {
    pub s: Vec<f64>,
    /// nodes whose Q-weighted incident weight is zero; their score is kept
    pub degenerate: Vec<usize>,
    pub sweeps: usize,
}

/// One in-place Gauss-Seidel sweep over nodes `0..N`.
///
/// `s_i ← [Σ_j Q_j A_ij (s_j + 1) + Σ_j Q_j A_ji (s_j - 1)] / Σ_j Q_j (A_ij + A_ji)`,
/// the common `Q_i` factor having been cancelled. Returns the largest change.
fn gauss_seidel_sweep(view: &TrainView, s: &mut [f64], q: &[f64], degenerate: &mut Vec<usize>) -> f64 {
    degenerate.clear();
    let mut max_delta: f64 = 0.0;
    for i in 0..s.len() {
        let (mut num, mut den) = (0.0, 0.0);
        for (j, a) in view.out_edges(i) {
            let wt = q[j] * a;
            num += wt * (s[j] + 1.0);
            den += wt;
        }
        for (j, a) in view.in_edges(i) {
            let wt = q[j] * a;
            num += wt * (s[j] - 1.0);
            den += wt;
        }
        if den > 0.0 {
            let next = num / den;
            max_delta = max_delta.max((next - s[i]).abs());
            s[i] = next;
        } else {
            degenerate.push(i);
        }
    }
    max_delta
}

/// Shift scores so that their Q-weighted mean is zero (plain mean if `Q ≡ 0`).
pub fn gauge_fix(s: &mut [f64], q: &[f64]) {
    let wsum: f64 = q.iter().sum();
    let shift = if wsum > 0.0 {
        s.iter().zip(q).map(|(x, w)| x * w).sum::<f64>() / wsum
    } else {
        s.iter().sum::<f64>() / s.len() as f64
    };
    s.iter_mut().for_each(|x| *x -= shift);
}

pub fn update_scores(view: &TrainView, r: &RankingParams, q: &[f64], schedule: ScoreSchedule) -> ScoreUpdate {
    let mut s = r.s.clone();
    let mut degenerate = Vec::new();
    let sweeps = match schedule {
        ScoreSchedule::SingleSweep => {
            gauss_seidel_sweep(view, &mut s, q, &mut degenerate);
            1
        }
        ScoreSchedule::Converge { tol, max_sweeps } => {
            let mut done = 0;
            for sweep in 1..=max_sweeps {
                done = sweep;
                if gauss_seidel_sweep(view, &mut s, q, &mut degenerate) < tol {
                    break;
                }
            }
            done
        }
    };
    gauge_fix(&mut s, q);
    ScoreUpdate { s, degenerate, sweeps }
}

/// `(Σ Q_iQ_j A_ij, Σ Q_iQ_j K_ij)` over training pairs for a precomputed kernel.
pub(crate) fn c_moments(view: &TrainView, kernel: &[f64], q: &[f64]) -> (f64, f64) {
    let n = q.len();
    let mut num = 0.0;
    for i in 0..n {
        if q[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (j, a) in view.out_edges(i) {
            row += q[j] * a;
        }
        num += q[i] * row;
    }
    let mut den = 0.0;
    for i in 0..n {
        if q[i] == 0.0 {
            continue;
        }
        let krow = &kernel[i * n..(i + 1) * n];
        let mut row = 0.0;
        for j in 0..n {
            row += q[j] * krow[j];
        }
        for &j in view.hidden_out(i) {
            row -= q[j as usize] * krow[j as usize];
        }
        den += q[i] * row;
    }
    (num, den)
}

/// Sparsity update `c = Σ Q_iQ_j A_ij / Σ Q_iQ_j exp(...)`; `None` when the
/// denominator vanishes (the caller keeps the old `c`).
pub fn update_c(view: &TrainView, r: &RankingParams, q: &[f64]) -> Option<f64> {
    let kernel = kernel_matrix(&r.s, r.beta);
    c_from_kernel(view, &kernel, q)
}

pub(crate) fn c_from_kernel(view: &TrainView, kernel: &[f64], q: &[f64]) -> Option<f64> {
    let (num, den) = c_moments(view, kernel, q);
    if den > 0.0 && den.is_finite() {
        Some(num / den)
    } else {
        None
    }
}

/// Largest violation of the stationarity system
/// `Σ_j (A_ij + A_ji)(s_i - s_j) = Σ_j (A_ij - A_ji)`.
pub fn springrank_residual(view: &TrainView, s: &[f64]) -> f64 {
    (0..s.len())
        .map(|i| {
            let mut r = 0.0;
            for (j, a) in view.out_edges(i) {
                r += a * (s[i] - s[j]) - a;
            }
            for (j, a) in view.in_edges(i) {
                r += a * (s[i] - s[j]) + a;
            }
            r.abs()
        })
        .fold(0.0, f64::max)
}

/// Weakly connected components over training edges, as a label per node.
fn components(view: &TrainView) -> Vec<usize> {
    let n = view.n_nodes();
    let mut label = vec![usize::MAX; n];
    let mut stack = Vec::new();
    let mut next = 0;
    for root in 0..n {
        if label[root] != usize::MAX {
            continue;
        }
        label[root] = next;
        stack.push(root);
        while let Some(i) = stack.pop() {
            for (j, _) in view.out_edges(i).chain(view.in_edges(i)) {
                if label[j] == usize::MAX {
                    label[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    label
}

/// SpringRank scores: Gauss-Seidel with `Q ≡ 1` run to convergence, each
/// weakly connected component shifted to zero mean.
pub fn springrank_scores(view: &TrainView, tol: f64, max_sweeps: usize) -> Vec<f64> {
    let n = view.n_nodes();
    let ones = vec![1.0; n];
    let mut s = vec![0.0; n];
    let mut degenerate = Vec::new();
    for _ in 0..max_sweeps {
        if gauss_seidel_sweep(view, &mut s, &ones, &mut degenerate) < tol {
            break;
        }
    }
    let label = components(view);
    let n_comp = label.iter().max().map_or(0, |m| m + 1);
    let mut sum = vec![0.0; n_comp];
    let mut count = vec![0usize; n_comp];
    for i in 0..n {
        sum[label[i]] += s[i];
        count[label[i]] += 1;
    }
    for i in 0..n {
        s[i] -= sum[label[i]] / count[label[i]] as f64;
    }
    s
}

/// Standalone SpringRank baseline, with `c` fitted by the sparsity update.
pub fn springrank_baseline(view: &TrainView, beta: f64) -> RankingParams {
    let s = springrank_scores(view, 1e-13, 1_000_000);
    let q = vec![1.0; s.len()];
    let mut r = RankingParams { s, c: 1.0, beta };
    if let Some(c) = update_c(view, &r, &q) {
        if c > 0.0 {
            r.c = c;
        }
    }
    r
}
