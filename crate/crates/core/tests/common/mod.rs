//! Dense reference implementations used as test oracles. Everything here is
//! written directly from the model definition with plain loops over all
//! ordered pairs, so it shares no code with the library beyond data types.

#![allow(dead_code)]

pub mod props;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xornet::community::{CommunityParams, Regularization};
use xornet::em::Theta;
use xornet::graph::DirectedWeightedGraph;
use xornet::ranking::RankingParams;

pub const EPS_P: f64 = 1e-12;
pub const EPS_MU: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_graph(n: usize, density: f64, max_w: u32, seed: u64) -> DirectedWeightedGraph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && r.random::<f64>() < density {
                edges.push((i, j, r.random_range(1..=max_w)));
            }
        }
    }
    DirectedWeightedGraph::from_edges(n, edges).unwrap()
}

pub fn random_theta(n: usize, k: usize, seed: u64) -> Theta {
    let mut r = rng(seed);
    let u = (0..n * k).map(|_| 0.05 + r.random::<f64>()).collect();
    let v = (0..n * k).map(|_| 0.05 + r.random::<f64>()).collect();
    let w = (0..k * k).map(|_| 0.05 + r.random::<f64>()).collect();
    let s = (0..n).map(|_| 2.0 * r.random::<f64>() - 1.0).collect();
    Theta {
        community: CommunityParams::new(n, k, u, v, w).unwrap(),
        ranking: RankingParams { s, c: 0.3 + r.random::<f64>(), beta: 0.5 + 2.0 * r.random::<f64>() },
        delta0: 0.02 + 0.3 * r.random::<f64>(),
        mu: 0.2 + 0.6 * r.random::<f64>(),
    }
}

pub fn random_q(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random::<f64>()).collect()
}

pub fn ln_fact(a: f64) -> f64 {
    let mut t = 0.0;
    let mut x = 2.0;
    while x <= a {
        t += f64::ln(x);
        x += 1.0;
    }
    t
}

pub fn lpois(a: f64, m: f64) -> f64 {
    let lin = if a > 0.0 { a * m.max(EPS_P).ln() } else { 0.0 };
    lin - m - ln_fact(a)
}

pub fn s_mean(t: &Theta, i: usize, j: usize) -> f64 {
    let d = t.ranking.s[i] - t.ranking.s[j] - 1.0;
    t.ranking.c * (-0.5 * t.ranking.beta * d * d).exp()
}

pub fn m_mean(p: &CommunityParams, i: usize, j: usize) -> f64 {
    let k = p.n_communities();
    let mut m = 0.0;
    for a in 0..k {
        for b in 0..k {
            m += p.u[i * k + a] * p.v[j * k + b] * p.w[a * k + b];
        }
    }
    m
}

pub struct Dense<'a> {
    pub a: Vec<Vec<f64>>,
    pub hidden: &'a dyn Fn(usize, usize) -> bool,
}

impl<'a> Dense<'a> {
    pub fn new(g: &DirectedWeightedGraph, hidden: &'a dyn Fn(usize, usize) -> bool) -> Self {
        Self { a: g.to_dense(), hidden }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn train(&self, i: usize, j: usize) -> bool {
        i != j && !(self.hidden)(i, j)
    }

    /// `log P(A, σ | θ)` over training pairs.
    pub fn log_joint(&self, t: &Theta, sigma: &[bool]) -> f64 {
        let n = self.n();
        let mut l = 0.0;
        for &x in sigma {
            l += if x { t.mu.ln() } else { (1.0 - t.mu).ln() };
        }
        for i in 0..n {
            for j in 0..n {
                if !self.train(i, j) {
                    continue;
                }
                let a = self.a[i][j];
                l += match (sigma[i], sigma[j]) {
                    (true, true) => lpois(a, s_mean(t, i, j)),
                    (false, false) => lpois(a, m_mean(&t.community, i, j)),
                    _ => lpois(a, t.delta0),
                };
            }
        }
        l
    }

    fn configs(&self) -> impl Iterator<Item = Vec<bool>> + '_ {
        let n = self.n();
        (0..1usize << n).map(move |c| (0..n).map(|i| (c >> i) & 1 == 1).collect())
    }

    /// `Σ_σ q(σ) log[P(σ, A | θ) / q(σ)]` by enumeration.
    pub fn enumerated_elbo(&self, t: &Theta, q: &[f64]) -> f64 {
        let mut total = 0.0;
        for sigma in self.configs() {
            let mut lq = 0.0;
            for (i, &x) in sigma.iter().enumerate() {
                let p = if x { q[i] } else { 1.0 - q[i] };
                if p == 0.0 {
                    lq = f64::NEG_INFINITY;
                    break;
                }
                lq += p.ln();
            }
            if lq == f64::NEG_INFINITY {
                continue;
            }
            total += lq.exp() * (self.log_joint(t, &sigma) - lq);
        }
        total
    }

    pub fn log_evidence(&self, t: &Theta) -> f64 {
        let logs: Vec<f64> = self.configs().map(|s| self.log_joint(t, &s)).collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
    }

    pub fn marginals(&self, t: &Theta) -> Vec<f64> {
        let n = self.n();
        let logs: Vec<(Vec<bool>, f64)> = self.configs().map(|s| {
            let l = self.log_joint(t, &s);
            (s, l)
        }).collect();
        let m = logs.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut out = vec![0.0; n];
        for (s, l) in &logs {
            let w = (l - m).exp();
            z += w;
            for i in 0..n {
                if s[i] {
                    out[i] += w;
                }
            }
        }
        out.iter().map(|x| x / z).collect()
    }

    /// Closed-form ELBO with dense pair sums.
    pub fn elbo(&self, t: &Theta, q: &[f64], reg: &Regularization) -> f64 {
        let n = self.n();
        let mut l = 0.0;
        for i in 0..n {
            for j in 0..n {
                if !self.train(i, j) {
                    continue;
                }
                let a = self.a[i][j];
                let y = q[i] * q[j];
                let x = (1.0 - q[i]) * (1.0 - q[j]);
                let z = 1.0 - y - x;
                l += y * lpois(a, s_mean(t, i, j)) + x * lpois(a, m_mean(&t.community, i, j)) + z * lpois(a, t.delta0);
            }
        }
        for &qi in q {
            l += qi * t.mu.ln() + (1.0 - qi) * (1.0 - t.mu).ln();
            if qi > 0.0 {
                l -= qi * qi.ln();
            }
            if qi < 1.0 {
                l -= (1.0 - qi) * (1.0 - qi).ln();
            }
        }
        let c = &t.community;
        l - reg.lambda_u * c.u.iter().sum::<f64>() - reg.lambda_v * c.v.iter().sum::<f64>() - reg.lambda_w * c.w.iter().sum::<f64>()
    }

    /// `ln μ/(1-μ) + Σ_j [Q_j ℓS - (1-Q_j) ℓM + (1-2Q_j) ℓ0]` over both
    /// directions of every training pair touching `i`.
    pub fn logit(&self, t: &Theta, q: &[f64], i: usize) -> f64 {
        let n = self.n();
        let mut l = t.mu.ln() - (1.0 - t.mu).ln();
        for j in 0..n {
            for (a, b) in [(i, j), (j, i)] {
                if !self.train(a, b) {
                    continue;
                }
                let x = self.a[a][b];
                let ls = lpois(x, s_mean(t, a, b));
                let lm = lpois(x, m_mean(&t.community, a, b));
                let l0 = lpois(x, t.delta0);
                l += q[j] * ls - (1.0 - q[j]) * lm + (1.0 - 2.0 * q[j]) * l0;
            }
        }
        l
    }

    pub fn e_step(&self, t: &Theta, q_old: &[f64], sequential: bool) -> Vec<f64> {
        let mut q = q_old.to_vec();
        for i in 0..self.n() {
            let base = if sequential { q.clone() } else { q_old.to_vec() };
            q[i] = 1.0 / (1.0 + (-self.logit(t, &base, i)).exp());
        }
        q
    }

    pub fn memberships(&self, p: &CommunityParams, q: &[f64], reg: &Regularization) -> CommunityParams {
        let n = self.n();
        let k = p.n_communities();
        let x = |i: usize, j: usize| (1.0 - q[i]) * (1.0 - q[j]);
        let mut next = p.clone();
        for i in 0..n {
            for c in 0..k {
                let (mut num, mut den) = (0.0, reg.lambda_u);
                for j in 0..n {
                    if !self.train(i, j) {
                        continue;
                    }
                    let m = m_mean(p, i, j);
                    for h in 0..k {
                        if self.a[i][j] > 0.0 {
                            num += x(i, j) * self.a[i][j] * p.u[i * k + c] * p.v[j * k + h] * p.w[c * k + h] / m;
                        }
                        den += x(i, j) * p.v[j * k + h] * p.w[c * k + h];
                    }
                }
                next.u[i * k + c] = if den > 0.0 { num / den } else { 0.0 };
            }
        }
        let cur = next.clone();
        for j in 0..n {
            for h in 0..k {
                let (mut num, mut den) = (0.0, reg.lambda_v);
                for i in 0..n {
                    if !self.train(i, j) {
                        continue;
                    }
                    let m = m_mean(&cur, i, j);
                    for c in 0..k {
                        if self.a[i][j] > 0.0 {
                            num += x(i, j) * self.a[i][j] * cur.u[i * k + c] * p.v[j * k + h] * p.w[c * k + h] / m;
                        }
                        den += x(i, j) * cur.u[i * k + c] * p.w[c * k + h];
                    }
                }
                next.v[j * k + h] = if den > 0.0 { num / den } else { 0.0 };
            }
        }
        let cur = next.clone();
        for c in 0..k {
            for h in 0..k {
                let (mut num, mut den) = (0.0, reg.lambda_w);
                for i in 0..n {
                    for j in 0..n {
                        if !self.train(i, j) {
                            continue;
                        }
                        if self.a[i][j] > 0.0 {
                            num += x(i, j) * self.a[i][j] * cur.u[i * k + c] * cur.v[j * k + h] * p.w[c * k + h] / m_mean(&cur, i, j);
                        }
                        den += x(i, j) * cur.u[i * k + c] * cur.v[j * k + h];
                    }
                }
                next.w[c * k + h] = if den > 0.0 { num / den } else { 0.0 };
            }
        }
        next
    }

    /// One ordered Gauss-Seidel pass of the weighted spring fixed point
    /// (common `Q_i` factor cancelled), then the Q-weighted mean gauge.
    pub fn score_proposal(&self, s: &[f64], q: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut s = s.to_vec();
        for i in 0..n {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..n {
                if self.train(i, j) {
                    num += q[j] * self.a[i][j] * (s[j] + 1.0);
                    den += q[j] * self.a[i][j];
                }
                if self.train(j, i) {
                    num += q[j] * self.a[j][i] * (s[j] - 1.0);
                    den += q[j] * self.a[j][i];
                }
            }
            if den > 0.0 {
                s[i] = num / den;
            }
        }
        let qs: f64 = q.iter().sum();
        let shift = if qs > 0.0 { s.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / qs } else { s.iter().sum::<f64>() / n as f64 };
        s.iter().map(|x| x - shift).collect()
    }

    /// ELBO as a function of `s` alone, with `c` set to its optimum.
    pub fn score_profile(&self, s: &[f64], beta: f64, q: &[f64]) -> f64 {
        let n = self.n();
        let (mut na, mut den, mut quad) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if !self.train(i, j) {
                    continue;
                }
                let d = s[i] - s[j] - 1.0;
                let y = q[i] * q[j];
                na += y * self.a[i][j];
                quad += y * self.a[i][j] * d * d;
                den += y * (-0.5 * beta * d * d).exp();
            }
        }
        if na > 0.0 && den > 0.0 {
            -0.5 * beta * quad - na * den.ln()
        } else {
            0.0
        }
    }

    pub fn c_update(&self, s: &[f64], beta: f64, q: &[f64]) -> Option<f64> {
        let n = self.n();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if self.train(i, j) {
                    let d = s[i] - s[j] - 1.0;
                    num += q[i] * q[j] * self.a[i][j];
                    den += q[i] * q[j] * (-0.5 * beta * d * d).exp();
                }
            }
        }
        let c = num / den;
        (den > 0.0 && c > 0.0 && c.is_finite()).then_some(c)
    }

    pub fn delta0_update(&self, q: &[f64]) -> Option<f64> {
        let n = self.n();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if self.train(i, j) {
                    let w = 2.0 * q[i] * q[j] - q[i] - q[j];
                    num += self.a[i][j] * w;
                    den += w;
                }
            }
        }
        (den < 0.0).then(|| num / den)
    }

    /// Full M-step: memberships, safeguarded scores, `c`, δ₀, μ.
    pub fn m_step(&self, t: &Theta, q: &[f64], reg: &Regularization) -> Theta {
        let mut next = t.clone();
        next.community = self.memberships(&t.community, q, reg);
        let beta = t.ranking.beta;
        let base = self.score_profile(&t.ranking.s, beta, q);
        let mut cand = self.score_proposal(&t.ranking.s, q);
        let mut accepted = None;
        for _ in 0..=8 {
            if self.score_profile(&cand, beta, q) >= base {
                accepted = Some(cand.clone());
                break;
            }
            cand = cand.iter().zip(&t.ranking.s).map(|(c, o)| o + 0.5 * (c - o)).collect();
        }
        next.ranking.s = accepted.unwrap_or_else(|| t.ranking.s.clone());
        if let Some(c) = self.c_update(&next.ranking.s, beta, q) {
            next.ranking.c = c;
        }
        if let Some(d) = self.delta0_update(q) {
            next.delta0 = d;
        }
        next.mu = (q.iter().sum::<f64>() / q.len() as f64).clamp(EPS_MU, 1.0 - EPS_MU);
        next
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest relative difference across every parameter of two `θ`.
pub fn theta_gap(a: &Theta, b: &Theta) -> f64 {
    let rel = |x: f64, y: f64| (x - y).abs() / (1.0 + y.abs());
    let mut g: f64 = 0.0;
    let pa = a.community.u.iter().chain(&a.community.v).chain(&a.community.w).chain(&a.ranking.s);
    let pb = b.community.u.iter().chain(&b.community.v).chain(&b.community.w).chain(&b.ranking.s);
    for (x, y) in pa.zip(pb) {
        g = g.max(rel(*x, *y));
    }
    g.max(rel(a.ranking.c, b.ranking.c)).max(rel(a.delta0, b.delta0)).max(rel(a.mu, b.mu))
}
