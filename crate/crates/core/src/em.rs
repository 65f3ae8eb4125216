//! Variational EM for the two-mechanism model.
//!
//! Each node carries a Bernoulli posterior `Q_i` for preferring the
//! hierarchy mechanism. One EM iteration is a mean-field E-step on `Q`
//! followed by an M-step on all parameters; the evidence lower bound is
//! recorded after every iteration.
//!
//! Per-iteration cost is `O(E K² + N²)`: the only dense objects are the
//! spring kernel `exp(-β/2 (s_i - s_j - 1)²)` and the `Q_i Q_j` sums that
//! multiply it. Community terms over non-edges are factorized through
//! `Σ_j (1 - Q_j) v_j`, with explicit corrections for the diagonal and for
//! hidden pairs.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::{update_memberships, CommunityParams, Regularization};
use crate::error::{invalid, Error, Result};
use crate::graph::{ln_factorial, TrainView};
use crate::ranking::{c_moments, kernel_matrix, springrank_scores, update_scores, RankingParams, ScoreSchedule};
use crate::rng;

/// Floor for Poisson means inside logarithms.
pub const EPS_POISSON: f64 = 1e-12;
/// `μ` is clipped to `[EPS_MU, 1 - EPS_MU]`.
pub const EPS_MU: f64 = 1e-6;

#[inline]
fn ln_floor(x: f64) -> f64 {
    x.max(EPS_POISSON).ln()
}

/// `log Pois(a; mean)` with the mean floored inside the logarithm.
pub fn log_poisson(a: f64, mean: f64) -> f64 {
    let lin = if a > 0.0 { a * ln_floor(mean) } else { 0.0 };
    lin - mean - ln_factorial(a)
}

#[inline]
fn entropy(q: f64) -> f64 {
    let mut h = 0.0;
    if q > 0.0 {
        h -= q * q.ln();
    }
    if q < 1.0 {
        h -= (1.0 - q) * (1.0 - q).ln();
    }
    h
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UpdateSchedule {
    /// node by node, each update seeing the fresh values of earlier nodes
    #[default]
    Sequential,
    /// all nodes from the previous iterate
    Parallel,
}

/// Starting scores of each restart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScoreInit {
    /// `s_i ~ N(0, 1)`
    Random,
    /// SpringRank scores of the training graph plus `N(0, 0.2²)` noise
    SpringRank,
    /// even restarts `Random`, odd restarts `SpringRank`
    #[default]
    Mixed,
}

impl ScoreInit {
    fn uses_springrank(self, restart: usize) -> bool {
        match self {
            ScoreInit::Random => false,
            ScoreInit::SpringRank => true,
            ScoreInit::Mixed => restart % 2 == 1,
        }
    }
}

const SCORE_INIT_NOISE: f64 = 0.2;

/// Freeze `Q` to recover a single-mechanism baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pin {
    /// `Q ≡ 0`: community only (MultiTensor)
    Community,
    /// `Q ≡ 1`: hierarchy only (SpringRank)
    Ranking,
}

impl Pin {
    pub fn q_value(self) -> f64 {
        match self {
            Pin::Community => 0.0,
            Pin::Ranking => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub k: usize,
    pub beta: f64,
    pub reg: Regularization,
    /// relative ELBO tolerance
    pub tol: f64,
    pub max_iter: usize,
    pub n_restarts: usize,
    pub seed: u64,
    pub decision_threshold: f64,
    pub update_schedule: UpdateSchedule,
    pub score_schedule: ScoreSchedule,
    pub score_init: ScoreInit,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            k: 3,
            beta: 5.0,
            reg: Regularization::NONE,
            tol: 1e-6,
            max_iter: 500,
            n_restarts: 5,
            seed: 0,
            decision_threshold: 0.5,
            update_schedule: UpdateSchedule::Sequential,
            score_schedule: ScoreSchedule::SingleSweep,
            score_init: ScoreInit::Mixed,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("K must be positive");
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return invalid("beta must be a positive real");
        }
        if !(self.tol > 0.0) {
            return invalid("tol must be positive");
        }
        if self.max_iter == 0 || self.n_restarts == 0 {
            return invalid("max_iter and n_restarts must be positive");
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return invalid("decision threshold must lie in (0, 1)");
        }
        self.reg.validate()
    }
}

/// Full parameter vector `θ = (u, v, w, s, c, δ₀, μ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub community: CommunityParams,
    pub ranking: RankingParams,
    pub delta0: f64,
    pub mu: f64,
}

impl Theta {
    pub fn n_nodes(&self) -> usize {
        self.ranking.s.len()
    }

    fn check_finite(&self) -> Result<()> {
        let c = &self.community;
        let bad = |name: &str| Err(Error::NonFinite { context: format!("M-step parameter {name}") });
        if c.u.iter().any(|x| !x.is_finite()) {
            return bad("u");
        }
        if c.v.iter().any(|x| !x.is_finite()) {
            return bad("v");
        }
        if c.w.iter().any(|x| !x.is_finite()) {
            return bad("w");
        }
        if self.ranking.s.iter().any(|x| !x.is_finite()) {
            return bad("s");
        }
        if !self.ranking.c.is_finite() {
            return bad("c");
        }
        if !self.delta0.is_finite() {
            return bad("delta0");
        }
        if !self.mu.is_finite() {
            return bad("mu");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTypePosterior {
    pub q: Vec<f64>,
    pub mu: f64,
}

impl NodeTypePosterior {
    pub fn hard_types(&self, threshold: f64) -> Vec<bool> {
        self.q.iter().map(|&q| q >= threshold).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub community: CommunityParams,
    pub ranking: RankingParams,
    pub posterior: NodeTypePosterior,
    pub delta0: f64,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub best_restart: usize,
    /// final ELBO of every restart, `None` for restarts that failed
    pub restart_elbos: Vec<Option<f64>>,
    pub pin: Option<Pin>,
    pub decision_threshold: f64,
}

impl FitResult {
    pub fn theta(&self) -> Theta {
        Theta {
            community: self.community.clone(),
            ranking: self.ranking.clone(),
            delta0: self.delta0,
            mu: self.posterior.mu,
        }
    }

    pub fn q(&self) -> &[f64] {
        &self.posterior.q
    }

    pub fn final_elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("non-empty trace")
    }

    pub fn hard_types(&self) -> Vec<bool> {
        self.posterior.hard_types(self.decision_threshold)
    }

    /// Write `theta.json`, `u.csv`, `v.csv`, `w.csv`, `scores.csv` and
    /// `elbo_trace.csv` into `dir`.
    pub fn write_dir(&self, labels: &[String], dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = ThetaFile {
            c: self.ranking.c,
            delta0: self.delta0,
            mu: self.posterior.mu,
            beta: self.ranking.beta,
            k: self.community.n_communities(),
            converged: self.converged,
            best_restart: self.best_restart,
            iterations: self.elbo_trace.len(),
            final_elbo: self.elbo_trace.last().copied(),
            pin: self.pin,
        };
        std::fs::write(dir.join("theta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        self.community.write_csv(labels, dir)?;
        let hard = self.hard_types();
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("scores.csv"))?);
        writeln!(f, "label,s,Q,sigma_hat")?;
        for i in 0..labels.len() {
            writeln!(f, "{},{:e},{:e},{}", labels[i], self.ranking.s[i], self.posterior.q[i], hard[i] as u8)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("elbo_trace.csv"))?);
        writeln!(f, "iteration,elbo")?;
        for (t, l) in self.elbo_trace.iter().enumerate() {
            writeln!(f, "{},{:e}", t + 1, l)?;
        }
        Ok(())
    }

    /// Read back the parameters written by [`FitResult::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<(Theta, Vec<f64>)> {
        let meta: ThetaFile = serde_json::from_str(&std::fs::read_to_string(dir.join("theta.json"))?)?;
        let community = CommunityParams::read_csv(dir)?;
        let text = std::fs::read_to_string(dir.join("scores.csv"))?;
        let mut s = Vec::new();
        let mut q = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 3 {
                return invalid(format!("scores.csv line {}: expected label,s,Q", ln + 1));
            }
            let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| Error::Invalid(format!("scores.csv line {}: {e}", ln + 1)));
            s.push(parse(cols[1])?);
            q.push(parse(cols[2])?);
        }
        if s.len() != community.n_nodes() {
            return invalid("scores.csv and u.csv disagree on the number of nodes");
        }
        let theta = Theta {
            community,
            ranking: RankingParams { s, c: meta.c, beta: meta.beta },
            delta0: meta.delta0,
            mu: meta.mu,
        };
        Ok((theta, q))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ThetaFile {
    c: f64,
    delta0: f64,
    mu: f64,
    beta: f64,
    #[serde(rename = "K")]
    k: usize,
    converged: bool,
    best_restart: usize,
    iterations: usize,
    final_elbo: Option<f64>,
    pin: Option<Pin>,
}

/// Quantities fixed for the duration of one E-step or ELBO evaluation.
struct Cache {
    kernel: Vec<f64>,
    uw: Vec<f64>,
    wv: Vec<f64>,
}

impl Cache {
    fn new(theta: &Theta, with_kernel: bool) -> Self {
        Self {
            kernel: if with_kernel {
                kernel_matrix(&theta.ranking.s, theta.ranking.beta)
            } else {
                Vec::new()
            },
            uw: theta.community.u_times_w(),
            wv: theta.community.w_times_v(),
        }
    }
}

/// Running sums over `Q` used by the factorized dense terms.
struct Aggregates {
    /// Σ_j (1-Q_j) u_j
    ubar: Vec<f64>,
    /// Σ_j (1-Q_j) v_j
    vbar: Vec<f64>,
    qsum: f64,
}

impl Aggregates {
    fn new(theta: &Theta, q: &[f64]) -> Self {
        let k = theta.community.n_communities();
        let mut ubar = vec![0.0; k];
        let mut vbar = vec![0.0; k];
        for (i, &qi) in q.iter().enumerate() {
            let a = 1.0 - qi;
            for c in 0..k {
                ubar[c] += a * theta.community.u_row(i)[c];
                vbar[c] += a * theta.community.v_row(i)[c];
            }
        }
        Self { ubar, vbar, qsum: q.iter().sum() }
    }

    fn shift(&mut self, theta: &Theta, i: usize, old: f64, new: f64) {
        let d = old - new;
        for c in 0..self.ubar.len() {
            self.ubar[c] += d * theta.community.u_row(i)[c];
            self.vbar[c] += d * theta.community.v_row(i)[c];
        }
        self.qsum += new - old;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log f_i1 - log f_i2` for node `i` given the current `Q`.
///
/// Per partner `j` (both directions) this collects
/// `Q_j ℓS - (1 - Q_j) ℓM + (1 - 2 Q_j) ℓ0`, the derivative of the ELBO in
/// `Q_i`; the `log A!` parts cancel and are skipped.
fn node_logit(view: &TrainView, theta: &Theta, cache: &Cache, agg: &Aggregates, q: &[f64], i: usize, with_ranking: bool) -> f64 {
    let n = q.len();
    let k = theta.community.n_communities();
    let c = theta.ranking.c;
    let delta0 = theta.delta0;
    let ln_d0 = ln_floor(delta0);
    let uw_i = &cache.uw[i * k..(i + 1) * k];
    let wv_i = &cache.wv[i * k..(i + 1) * k];
    let u_i = theta.community.u_row(i);
    let v_i = theta.community.v_row(i);
    let a_i = 1.0 - q[i];

    // Σ Q_j (S_ij + S_ji) over training partners
    let mut t_s = 0.0;
    if with_ranking {
        let mut acc = 0.0;
        let row = &cache.kernel[i * n..(i + 1) * n];
        for j in 0..n {
            acc += q[j] * (row[j] + cache.kernel[j * n + i]);
        }
        for &j in view.hidden_out(i) {
            acc -= q[j as usize] * row[j as usize];
        }
        for &j in view.hidden_in(i) {
            acc -= q[j as usize] * cache.kernel[j as usize * n + i];
        }
        t_s = c * acc;
    }

    // Σ (1-Q_j)(M_ij + M_ji) over training partners
    let mut t_m = 0.0;
    for h in 0..k {
        t_m += uw_i[h] * (agg.vbar[h] - a_i * v_i[h]);
        t_m += (agg.ubar[h] - a_i * u_i[h]) * wv_i[h];
    }
    for &j in view.hidden_out(i) {
        let j = j as usize;
        t_m -= (1.0 - q[j]) * dot(uw_i, theta.community.v_row(j));
    }
    for &j in view.hidden_in(i) {
        let j = j as usize;
        t_m -= (1.0 - q[j]) * dot(theta.community.u_row(j), wv_i);
    }

    // Σ (1-2Q_j) over training partners, both directions
    let mut z = 2.0 * ((n as f64 - 1.0) - 2.0 * (agg.qsum - q[i]));
    for &j in view.hidden_out(i).iter().chain(view.hidden_in(i)) {
        z -= 1.0 - 2.0 * q[j as usize];
    }
    let t_0 = delta0 * z;

    let mut edge = 0.0;
    for (j, a) in view.out_edges(i) {
        let m = dot(uw_i, theta.community.v_row(j));
        let ls = if with_ranking { ln_floor(c * cache.kernel[i * n + j]) } else { 0.0 };
        edge += a * (q[j] * ls - (1.0 - q[j]) * ln_floor(m) + (1.0 - 2.0 * q[j]) * ln_d0);
    }
    for (j, a) in view.in_edges(i) {
        let m = dot(theta.community.u_row(j), wv_i);
        let ls = if with_ranking { ln_floor(c * cache.kernel[j * n + i]) } else { 0.0 };
        edge += a * (q[j] * ls - (1.0 - q[j]) * ln_floor(m) + (1.0 - 2.0 * q[j]) * ln_d0);
    }

    theta.mu.ln() - (1.0 - theta.mu).ln() - t_s + t_m - t_0 + edge
}

fn e_step_cached(view: &TrainView, theta: &Theta, cache: &Cache, q: &mut [f64], schedule: UpdateSchedule) -> Result<()> {
    let n = q.len();
    let mut agg = Aggregates::new(theta, q);
    let check = |i: usize, logit: f64| -> Result<()> {
        if logit.is_nan() {
            let partner = view
                .out_edges(i)
                .chain(view.in_edges(i))
                .map(|(j, _)| j)
                .next()
                .map_or(String::from("-"), |j| j.to_string());
            return Err(Error::NonFinite {
                context: format!("E-step log-odds for node {i} (first partner {partner})"),
            });
        }
        Ok(())
    };
    match schedule {
        UpdateSchedule::Sequential => {
            for i in 0..n {
                let logit = node_logit(view, theta, cache, &agg, q, i, true);
                check(i, logit)?;
                let new = logistic(logit);
                agg.shift(theta, i, q[i], new);
                q[i] = new;
            }
        }
        UpdateSchedule::Parallel => {
            let logits: Vec<f64> = (0..n).map(|i| node_logit(view, theta, cache, &agg, q, i, true)).collect();
            for (i, &l) in logits.iter().enumerate() {
                check(i, l)?;
                q[i] = logistic(l);
            }
        }
    }
    Ok(())
}

const POLISH_TOL: f64 = 1e-12;
const POLISH_SWEEPS: usize = 1000;

/// Sequential sweeps at fixed `θ` until `Q` stops moving, so that the
/// returned posterior is a mean-field fixed point of the final parameters.
fn polish_q(view: &TrainView, theta: &Theta, cache: &Cache, q: &mut [f64]) -> Result<()> {
    for _ in 0..POLISH_SWEEPS {
        let before = q.to_vec();
        e_step_cached(view, theta, cache, q, UpdateSchedule::Sequential)?;
        let moved = before.iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved < POLISH_TOL {
            break;
        }
    }
    Ok(())
}

/// Mean-field update of `Q` for fixed `θ`.
pub fn e_step_q(view: &TrainView, theta: &Theta, q_old: &[f64], schedule: UpdateSchedule) -> Result<Vec<f64>> {
    let cache = Cache::new(theta, true);
    let mut q = q_old.to_vec();
    e_step_cached(view, theta, &cache, &mut q, schedule)?;
    Ok(q)
}

/// Dense pair sums entering the ELBO.
struct PairSums {
    /// Σ_P Q_iQ_j K_ij
    yk: f64,
    /// Σ_P (1-Q_i)(1-Q_j) M_ij
    xm: f64,
    /// Σ_P [Q_i(1-Q_j) + (1-Q_i)Q_j]
    z: f64,
}

fn pair_sums(view: &TrainView, theta: &Theta, cache: &Cache, q: &[f64], with_ranking: bool) -> PairSums {
    let n = q.len();
    let k = theta.community.n_communities();
    let agg = Aggregates::new(theta, q);
    let yk = if with_ranking { c_moments(view, &cache.kernel, q).1 } else { 0.0 };
    let mut xm = 0.0;
    for i in 0..n {
        let a_i = 1.0 - q[i];
        let uw_i = &cache.uw[i * k..(i + 1) * k];
        let v_i = theta.community.v_row(i);
        let mut row = 0.0;
        for h in 0..k {
            row += uw_i[h] * (agg.vbar[h] - a_i * v_i[h]);
        }
        for &j in view.hidden_out(i) {
            let j = j as usize;
            row -= (1.0 - q[j]) * dot(uw_i, theta.community.v_row(j));
        }
        xm += a_i * row;
    }
    PairSums { yk, xm, z: mixed_pair_mass(view, q) }
}

fn elbo_cached(view: &TrainView, theta: &Theta, cache: &Cache, q: &[f64], reg: &Regularization, with_ranking: bool) -> f64 {
    let n = q.len();
    let k = theta.community.n_communities();
    let c = theta.ranking.c;
    let sums = pair_sums(view, theta, cache, q, with_ranking);
    let ln_d0 = ln_floor(theta.delta0);
    let mut total = -c * sums.yk - sums.xm - theta.delta0 * sums.z;
    for i in 0..n {
        let uw_i = &cache.uw[i * k..(i + 1) * k];
        for (j, a) in view.out_edges(i) {
            let y = q[i] * q[j];
            let x = (1.0 - q[i]) * (1.0 - q[j]);
            let zz = q[i] * (1.0 - q[j]) + (1.0 - q[i]) * q[j];
            let m = dot(uw_i, theta.community.v_row(j));
            let ls = if with_ranking { ln_floor(c * cache.kernel[i * n + j]) } else { 0.0 };
            total += a * (y * ls + x * ln_floor(m) + zz * ln_d0);
        }
    }
    total -= view.log_factorial_sum();
    let (ln_mu, ln_1mu) = (theta.mu.ln(), (1.0 - theta.mu).ln());
    for &qi in q {
        total += qi * ln_mu + (1.0 - qi) * ln_1mu + entropy(qi);
    }
    total - theta.community.l1_penalty(reg)
}

/// Evidence lower bound `L(q, θ)`, minus the L1 penalty when `reg` is active.
pub fn elbo(view: &TrainView, theta: &Theta, q: &[f64], reg: &Regularization) -> f64 {
    let with_ranking = q.iter().any(|&x| x > 0.0);
    let cache = Cache::new(theta, with_ranking);
    elbo_cached(view, theta, &cache, q, reg, with_ranking)
}

/// Diagnostics of one M-step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MStepReport {
    pub degenerate_scores: usize,
    pub c_retained: bool,
    pub delta0_retained: bool,
    /// halvings applied to the score step; `None` if the old scores were kept
    pub score_backtracks: Option<usize>,
}

/// Profile of the ELBO in `s` with `c` at its optimum:
/// `-β/2 Σ Q_iQ_j A_ij (s_i - s_j - 1)² - N_A ln Σ Q_iQ_j K_ij`,
/// with `N_A = Σ Q_iQ_j A_ij`. Returns it with the kernel.
fn score_profile(view: &TrainView, s: &[f64], beta: f64, q: &[f64]) -> (f64, Vec<f64>) {
    let kmat = kernel_matrix(s, beta);
    let (na, den) = c_moments(view, &kmat, q);
    let mut quad = 0.0;
    for i in 0..q.len() {
        for (j, a) in view.out_edges(i) {
            let d = s[i] - s[j] - 1.0;
            quad += q[i] * q[j] * a * d * d;
        }
    }
    let value = if na > 0.0 && den > 0.0 { -0.5 * beta * quad - na * den.ln() } else { 0.0 };
    (value, kmat)
}

const MAX_BACKTRACKS: usize = 8;

/// Accept the fixed-point proposal for `s` only if it does not lower the
/// profiled ELBO; otherwise halve the step towards the old scores.
fn safeguarded_scores(view: &TrainView, old: &[f64], proposal: Vec<f64>, beta: f64, q: &[f64]) -> (Vec<f64>, Vec<f64>, Option<usize>) {
    let (base, old_kernel) = score_profile(view, old, beta, q);
    let mut cand = proposal;
    for halvings in 0..=MAX_BACKTRACKS {
        let (value, kmat) = score_profile(view, &cand, beta, q);
        if value >= base {
            return (cand, kmat, Some(halvings));
        }
        for (c, &o) in cand.iter_mut().zip(old) {
            *c = o + 0.5 * (*c - o);
        }
    }
    (old.to_vec(), old_kernel, None)
}

/// `Σ_P [Q_i(1-Q_j) + (1-Q_i)Q_j]` over training pairs, written as
/// `Σ_i Q_i (Σ_{j≠i} (1-Q_j)) + (1-Q_i)(Σ_{j≠i} Q_j)` to avoid cancellation.
fn mixed_pair_mass(view: &TrainView, q: &[f64]) -> f64 {
    let n = q.len();
    let qsum: f64 = q.iter().sum();
    let abar = n as f64 - qsum;
    let mut z = 0.0;
    for i in 0..n {
        let a_i = 1.0 - q[i];
        let mut zi = q[i] * (abar - a_i) + a_i * (qsum - q[i]);
        for &j in view.hidden_out(i) {
            let qj = q[j as usize];
            zi -= q[i] * (1.0 - qj) + a_i * qj;
        }
        z += zi;
    }
    z
}

/// δ₀ update `Σ A_ij Z_ij / Σ Z_ij`, `Z_ij = Q_i(1-Q_j) + (1-Q_i)Q_j`.
fn delta0_update(view: &TrainView, q: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    for i in 0..q.len() {
        for (j, a) in view.out_edges(i) {
            num += a * (q[i] * (1.0 - q[j]) + (1.0 - q[i]) * q[j]);
        }
    }
    let den = mixed_pair_mass(view, q);
    if den > 0.0 && den.is_finite() {
        Some(num / den)
    } else {
        None
    }
}

/// Returns the new `θ` and, unless the hierarchy is pinned off, the spring
/// kernel for the new scores.
fn m_step_inner(view: &TrainView, theta: &Theta, q: &[f64], hp: &HyperParams, pin: Option<Pin>) -> Result<(Theta, Option<Vec<f64>>, MStepReport)> {
    let mut next = theta.clone();
    let mut report = MStepReport::default();

    if pin != Some(Pin::Ranking) {
        next.community = update_memberships(view, &theta.community, q, &hp.reg);
    }

    let mut kernel = None;
    if pin != Some(Pin::Community) {
        let schedule = match pin {
            Some(Pin::Ranking) => ScoreSchedule::Converge { tol: 1e-13, max_sweeps: 200_000 },
            _ => hp.score_schedule,
        };
        let up = update_scores(view, &theta.ranking, q, schedule);
        report.degenerate_scores = up.degenerate.len();
        let kmat = if pin == Some(Pin::Ranking) {
            next.ranking.s = up.s;
            kernel_matrix(&next.ranking.s, next.ranking.beta)
        } else {
            let (s, kmat, steps) = safeguarded_scores(view, &theta.ranking.s, up.s, theta.ranking.beta, q);
            report.score_backtracks = steps;
            next.ranking.s = s;
            kmat
        };
        let (num, den) = c_moments(view, &kmat, q);
        let c = num / den;
        if den > 0.0 && c > 0.0 && c.is_finite() {
            next.ranking.c = c;
        } else {
            report.c_retained = true;
        }
        kernel = Some(kmat);
    }

    match delta0_update(view, q) {
        Some(d) => next.delta0 = d,
        None => report.delta0_retained = true,
    }

    let mean_q = q.iter().sum::<f64>() / q.len() as f64;
    next.mu = mean_q.clamp(EPS_MU, 1.0 - EPS_MU);

    next.check_finite()?;
    Ok((next, kernel, report))
}

/// M-step: memberships, affinity, scores then `c`, δ₀, μ, in that order.
/// Updates belonging to a pinned-off mechanism are skipped.
pub fn m_step(view: &TrainView, theta: &Theta, q: &[f64], hp: &HyperParams, pin: Option<Pin>) -> Result<(Theta, MStepReport)> {
    m_step_inner(view, theta, q, hp, pin).map(|(t, _, r)| (t, r))
}

/// Random starting point for restart `restart`.
///
/// `base_scores` are the SpringRank scores of the training graph; they are
/// only read when [`HyperParams::score_init`] asks for them.
pub fn initialize(view: &TrainView, hp: &HyperParams, pin: Option<Pin>, restart: usize, base_scores: Option<&[f64]>) -> (Theta, Vec<f64>) {
    let n = view.n_nodes();
    let k = hp.k;
    let mut r = rng::substream(hp.seed, "init", restart as u64);
    let mut u: Vec<f64> = (0..n * k).map(|_| r.random::<f64>()).collect();
    let mut v: Vec<f64> = (0..n * k).map(|_| r.random::<f64>()).collect();
    let mut w = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            w[a * k + b] = if a == b { 1.0 } else { 0.1 * r.random::<f64>() };
        }
    }
    let mut s: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    if let Some(base) = base_scores.filter(|_| hp.score_init.uses_springrank(restart)) {
        for (x, b) in s.iter_mut().zip(base) {
            *x = b + SCORE_INIT_NOISE * *x;
        }
    }
    let q: Vec<f64> = match pin {
        Some(p) => vec![p.q_value(); n],
        None => (0..n).map(|_| r.random::<f64>()).collect(),
    };

    // scale memberships so that Σ_{i≠j} M_ij matches the observed total
    let mut community = CommunityParams::new(n, k, u.clone(), v.clone(), w.clone()).expect("valid shapes");
    let usum: Vec<f64> = (0..k).map(|c| (0..n).map(|i| community.u_row(i)[c]).sum()).collect();
    let vsum: Vec<f64> = (0..k).map(|c| (0..n).map(|i| community.v_row(i)[c]).sum()).collect();
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            total += usum[a] * w[a * k + b] * vsum[b];
        }
    }
    let uw = community.u_times_w();
    for i in 0..n {
        total -= dot(&uw[i * k..(i + 1) * k], community.v_row(i));
    }
    if total > 0.0 && view.train_weight() > 0.0 {
        let scale = (view.train_weight() / total).sqrt();
        u.iter_mut().for_each(|x| *x *= scale);
        v.iter_mut().for_each(|x| *x *= scale);
        community = CommunityParams::new(n, k, u, v, w).expect("valid shapes");
    }

    let mean_a = view.train_weight() / view.n_train_pairs().max(1) as f64;
    let mut ranking = RankingParams { s, c: 1.0, beta: hp.beta };
    let kmat = kernel_matrix(&ranking.s, hp.beta);
    let (num, den) = c_moments(view, &kmat, &q);
    if den > 0.0 && num > 0.0 {
        ranking.c = num / den;
    }
    let mu = match pin {
        Some(Pin::Community) => EPS_MU,
        Some(Pin::Ranking) => 1.0 - EPS_MU,
        None => 0.5,
    };
    let theta = Theta {
        community,
        ranking,
        delta0: (mean_a / 10.0).max(1e-3),
        mu,
    };
    (theta, q)
}

/// One EM run from a given starting point.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub theta: Theta,
    pub q: Vec<f64>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

/// Run EM from `(theta, q)`. When `pin` is set, `Q` is frozen and the
/// E-step is skipped; otherwise the last trace entry is the ELBO after `Q`
/// has been iterated to a fixed point of the final `θ`.
pub fn run_em(view: &TrainView, mut theta: Theta, mut q: Vec<f64>, hp: &HyperParams, pin: Option<Pin>) -> Result<Trajectory> {
    let with_ranking = pin != Some(Pin::Community);
    let mut cache = Cache::new(&theta, with_ranking);
    let mut trace = Vec::new();
    let mut calm = 0;
    let mut converged = false;
    for _ in 0..hp.max_iter {
        if pin.is_none() {
            e_step_cached(view, &theta, &cache, &mut q, hp.update_schedule)?;
        }
        let (next, kernel, _) = m_step_inner(view, &theta, &q, hp, pin)?;
        theta = next;
        cache = Cache {
            kernel: kernel.unwrap_or_default(),
            uw: theta.community.u_times_w(),
            wv: theta.community.w_times_v(),
        };
        let l = elbo_cached(view, &theta, &cache, &q, &hp.reg, with_ranking);
        if !l.is_finite() {
            return Err(Error::NonFinite { context: format!("ELBO at iteration {}", trace.len() + 1) });
        }
        if let Some(&prev) = trace.last() {
            let rel = ((l - prev) / f64::abs(prev)).abs();
            calm = if rel < hp.tol { calm + 1 } else { 0 };
        }
        trace.push(l);
        if calm >= 3 {
            converged = true;
            break;
        }
    }
    if pin.is_none() {
        polish_q(view, &theta, &cache, &mut q)?;
        let l = elbo_cached(view, &theta, &cache, &q, &hp.reg, with_ranking);
        trace.push(l);
    }
    Ok(Trajectory { theta, q, elbo_trace: trace, converged })
}

/// Full fit with restarts; the restart with the highest final ELBO wins.
pub fn fit(view: &TrainView, hp: &HyperParams, pin: Option<Pin>) -> Result<FitResult> {
    hp.validate()?;
    if view.n_nodes() < 2 {
        return invalid("fit needs at least two nodes");
    }
    if view.n_train_edges() == 0 {
        return invalid("no training edges");
    }
    let base = (pin.is_none() && hp.score_init != ScoreInit::Random).then(|| springrank_scores(view, 1e-10, 100_000));
    let runs: Vec<Result<Trajectory>> = (0..hp.n_restarts)
        .into_par_iter()
        .map(|r| {
            let (theta, q) = initialize(view, hp, pin, r, base.as_deref());
            run_em(view, theta, q, hp, pin)
        })
        .collect();

    let mut best: Option<(usize, Trajectory)> = None;
    let mut restart_elbos = Vec::with_capacity(runs.len());
    let mut failures = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(t) => {
                let l = *t.elbo_trace.last().expect("max_iter > 0");
                restart_elbos.push(Some(l));
                let better = best.as_ref().is_none_or(|(_, b)| l > *b.elbo_trace.last().unwrap());
                if better {
                    best = Some((r, t));
                }
            }
            Err(e) => {
                restart_elbos.push(None);
                failures.push(format!("restart {r}: {e}"));
            }
        }
    }
    let (best_restart, t) = best.ok_or_else(|| Error::AllRestartsFailed {
        restarts: hp.n_restarts,
        diagnostics: failures.join("; "),
    })?;
    for f in &failures {
        log::warn!("{f}");
    }
    Ok(FitResult {
        community: t.theta.community,
        ranking: t.theta.ranking,
        posterior: NodeTypePosterior { q: t.q, mu: t.theta.mu },
        delta0: t.theta.delta0,
        elbo_trace: t.elbo_trace,
        converged: t.converged,
        best_restart,
        restart_elbos,
        pin,
        decision_threshold: hp.decision_threshold,
    })
}
