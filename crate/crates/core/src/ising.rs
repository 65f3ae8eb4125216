//! Ising form of the type posterior.
//!
//! With spins `x_i = 2σ_i - 1`, the log joint over σ at fixed `θ` is, up to a
//! constant, `Σ_{(i,j)} J_ij x_i x_j + Σ_i h_i x_i` with
//! `J_ij = (ℓS_ij + ℓM_ij - 2 ℓ0_ij) / 4` and
//! `h_i = ¼ Σ_j (ℓS_ij + ℓS_ji - ℓM_ij - ℓM_ji) + ½ logit μ`,
//! where `ℓX_ij = log Pois(A_ij; X_ij)` and the sum runs over training pairs.
//! The mean-field fixed point is `m_i = tanh(h_i + Σ_j (J_ij + J_ji) m_j)`,
//! `Q_i = (1 + m_i) / 2`.

use serde::{Deserialize, Serialize};

use crate::em::{log_poisson, Theta};
use crate::error::{Error, Result};
use crate::graph::TrainView;
use crate::ranking::expected_count_s;

/// Largest network handled by [`exact_posterior`].
pub const ENUMERATION_CAP: usize = 20;

/// Couplings (dense, row-major, zero on the diagonal and on hidden pairs)
/// and fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingFields {
    pub n: usize,
    pub j: Vec<f64>,
    pub h: Vec<f64>,
}

impl IsingFields {
    #[inline]
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.j[i * self.n + j]
    }

    /// `Σ J_ij x_i x_j + Σ h_i x_i`, the negative Hamiltonian.
    pub fn neg_energy(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let mut e = 0.0;
        for i in 0..n {
            e += self.h[i] * x[i];
            for j in 0..n {
                e += self.j[i * n + j] * x[i] * x[j];
            }
        }
        e
    }

    /// Mean-field map `Q ↦ (1 + tanh(h + (J + Jᵀ) m)) / 2`.
    pub fn mean_field_map(&self, q: &[f64]) -> Vec<f64> {
        let n = self.n;
        let m: Vec<f64> = q.iter().map(|&x| 2.0 * x - 1.0).collect();
        (0..n)
            .map(|i| {
                let mut field = self.h[i];
                for j in 0..n {
                    field += (self.j[i * n + j] + self.j[j * n + i]) * m[j];
                }
                0.5 * (1.0 + field.tanh())
            })
            .collect()
    }
}

fn pair_logs(view: &TrainView, theta: &Theta, i: usize, j: usize) -> (f64, f64, f64) {
    let a = view.weight(i, j);
    let ls = log_poisson(a, expected_count_s(i, j, &theta.ranking));
    let lm = log_poisson(a, crate::community::expected_count_m(i, j, &theta.community));
    let l0 = log_poisson(a, theta.delta0);
    (ls, lm, l0)
}

/// Build `J` and `h` for fixed `θ`. Dense `O(N² K)`, intended for checks.
pub fn compute_fields(view: &TrainView, theta: &Theta) -> IsingFields {
    let n = view.n_nodes();
    let mut jm = vec![0.0; n * n];
    let half_logit = 0.5 * (theta.mu.ln() - (1.0 - theta.mu).ln());
    let mut h = vec![half_logit; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || view.is_hidden(i, j) {
                continue;
            }
            let (ls, lm, l0) = pair_logs(view, theta, i, j);
            jm[i * n + j] = 0.25 * (ls + lm - 2.0 * l0);
            let d = 0.25 * (ls - lm);
            h[i] += d;
            h[j] += d;
        }
    }
    IsingFields { n, j: jm, h }
}

/// `log p(A, σ | θ)` over training pairs, including all constants.
pub fn log_joint(view: &TrainView, theta: &Theta, sigma: &[bool]) -> f64 {
    let n = view.n_nodes();
    let mut total = 0.0;
    for &si in sigma {
        total += if si { theta.mu.ln() } else { (1.0 - theta.mu).ln() };
    }
    for i in 0..n {
        for j in 0..n {
            if i == j || view.is_hidden(i, j) {
                continue;
            }
            let (ls, lm, l0) = pair_logs(view, theta, i, j);
            total += match (sigma[i], sigma[j]) {
                (true, true) => ls,
                (false, false) => lm,
                _ => l0,
            };
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPosterior {
    /// `P(σ_i = 1 | A, θ)`
    pub marginals: Vec<f64>,
    /// `log p(A | θ)`
    pub log_evidence: f64,
}

/// Enumerate all `2^N` type configurations. Errors above [`ENUMERATION_CAP`].
pub fn exact_posterior(view: &TrainView, theta: &Theta) -> Result<ExactPosterior> {
    let n = view.n_nodes();
    if n > ENUMERATION_CAP {
        return Err(Error::EnumerationCap { n, cap: ENUMERATION_CAP });
    }
    // per-pair log-likelihood table indexed by (σ_i, σ_j)
    let mut pair = vec![[0.0f64; 3]; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && !view.is_hidden(i, j) {
                let (ls, lm, l0) = pair_logs(view, theta, i, j);
                pair[i * n + j] = [ls, lm, l0];
            }
        }
    }
    let (lmu, l1mu) = (theta.mu.ln(), (1.0 - theta.mu).ln());
    let total = 1usize << n;
    let mut logs = Vec::with_capacity(total);
    for cfg in 0..total {
        let bit = |i: usize| (cfg >> i) & 1 == 1;
        let mut l = 0.0;
        for i in 0..n {
            l += if bit(i) { lmu } else { l1mu };
            for j in 0..n {
                let t = &pair[i * n + j];
                l += match (bit(i), bit(j)) {
                    (true, true) => t[0],
                    (false, false) => t[1],
                    _ => t[2],
                };
            }
        }
        logs.push(l);
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut marg = vec![0.0; n];
    for (cfg, &l) in logs.iter().enumerate() {
        let w = (l - max).exp();
        z += w;
        for (i, m) in marg.iter_mut().enumerate() {
            if (cfg >> i) & 1 == 1 {
                *m += w;
            }
        }
    }
    marg.iter_mut().for_each(|m| *m /= z);
    Ok(ExactPosterior {
        marginals: marg,
        log_evidence: max + z.ln(),
    })
}

/// `max_i |Q_i - (1 + tanh(h_i + Σ_j (J_ij + J_ji)(2Q_j - 1))) / 2|`.
pub fn self_consistency_residual(fields: &IsingFields, q: &[f64]) -> f64 {
    fields
        .mean_field_map(q)
        .iter()
        .zip(q)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n_nodes: usize,
    pub self_consistency_residual: f64,
    pub max_marginal_gap: Option<f64>,
    pub log_evidence: Option<f64>,
    pub elbo: f64,
    pub mean_field_q: Vec<f64>,
    pub exact_marginals: Option<Vec<f64>>,
}
