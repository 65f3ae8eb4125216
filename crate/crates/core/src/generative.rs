//! Synthetic networks with planted node types, communities and leagues.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::CommunityParams;
use crate::error::{invalid, Error, Result};
use crate::graph::DirectedWeightedGraph;
use crate::ranking::spring_kernel;
use crate::rng;

/// Gaussian mixture for the planted scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeagueSpec {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LeagueSpec {
    /// Three equally weighted leagues at −4, 0, 4 with spreads 1, 0.5, 1.
    pub fn three_leagues() -> Self {
        Self {
            means: vec![-4.0, 0.0, 4.0],
            stds: vec![1.0, 0.5, 1.0],
            weights: vec![1.0 / 3.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.means.len();
        if n == 0 || self.stds.len() != n || self.weights.len() != n {
            return invalid("league means, stds and weights must be non-empty and of equal length");
        }
        if self.stds.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return invalid("league standard deviations must be positive");
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return invalid("league means must be finite");
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return invalid("league weights must be non-negative");
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("league weights sum to {total}, expected 1"));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.means.iter().zip(&self.weights).map(|(m, w)| m * w).sum()
    }

    fn sample<R: Rng>(&self, r: &mut R) -> f64 {
        let x: f64 = r.random();
        let mut acc = 0.0;
        let mut which = self.weights.len() - 1;
        for (l, &w) in self.weights.iter().enumerate() {
            acc += w;
            if x < acc {
                which = l;
                break;
            }
        }
        Normal::new(self.means[which], self.stds[which]).expect("validated").sample(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MembershipRule {
    /// contiguous blocks of (nearly) equal size, one community per node
    HardEqual,
    /// rows drawn from a symmetric Dirichlet
    Dirichlet { alpha: f64 },
}

/// Everything needed to draw a [`GroundTruth`] before degree control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub n: usize,
    pub k: usize,
    pub mu: f64,
    pub beta: f64,
    pub delta0: f64,
    pub leagues: LeagueSpec,
    pub membership: MembershipRule,
    pub p_in: f64,
    pub p_out: f64,
}

impl TruthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return invalid("need at least two nodes");
        }
        if self.k == 0 {
            return invalid("K must be positive");
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return invalid(format!("mu = {} is outside [0, 1]", self.mu));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return invalid("beta must be positive");
        }
        if !(self.delta0 >= 0.0 && self.delta0.is_finite()) {
            return invalid("delta0 must be non-negative");
        }
        if !(self.p_in >= 0.0 && self.p_out >= 0.0) || self.p_in + self.p_out == 0.0 {
            return invalid("affinities p_in, p_out must be non-negative and not both zero");
        }
        if let MembershipRule::Dirichlet { alpha } = self.membership {
            if !(alpha > 0.0) {
                return invalid("Dirichlet concentration must be positive");
            }
        }
        self.leagues.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub sigma: Vec<bool>,
    pub community: CommunityParams,
    pub s: Vec<f64>,
    pub c: f64,
    pub delta0: f64,
    pub mu: f64,
    pub beta: f64,
}

impl GroundTruth {
    pub fn n_nodes(&self) -> usize {
        self.sigma.len()
    }

    /// Poisson mean of `A_ij` given the planted types.
    pub fn mean(&self, i: usize, j: usize) -> f64 {
        match (self.sigma[i], self.sigma[j]) {
            (true, true) => self.c * spring_kernel(self.s[i], self.s[j], self.beta),
            (false, false) => crate::community::expected_count_m(i, j, &self.community),
            _ => self.delta0,
        }
    }

    /// `ground_truth.json` plus `nodes.csv` (label, sigma, s) and the
    /// membership CSVs.
    pub fn write_dir(&self, labels: &[String], dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ground_truth.json"), serde_json::to_string(self)? + "\n")?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("nodes.csv"))?);
        writeln!(f, "node,sigma,s")?;
        for (i, l) in labels.iter().enumerate() {
            writeln!(f, "{l},{},{:e}", self.sigma[i] as u8, self.s[i])?;
        }
        f.flush()?;
        self.community.write_csv(labels, dir)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("ground_truth.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sample_ground_truth(spec: &TruthSpec, seed: u64) -> Result<GroundTruth> {
    spec.validate()?;
    let (n, k) = (spec.n, spec.k);
    let mut r = rng::substream(seed, "truth", 0);
    let sigma: Vec<bool> = (0..n).map(|_| r.random::<f64>() < spec.mu).collect();
    let s: Vec<f64> = (0..n).map(|_| spec.leagues.sample(&mut r)).collect();
    let mut u = vec![0.0; n * k];
    match spec.membership {
        MembershipRule::HardEqual => {
            for i in 0..n {
                u[i * k + i * k / n] = 1.0;
            }
        }
        MembershipRule::Dirichlet { alpha } => {
            let gamma = Gamma::new(alpha, 1.0).expect("validated");
            for i in 0..n {
                let row = &mut u[i * k..(i + 1) * k];
                row.iter_mut().for_each(|x| *x = gamma.sample(&mut r));
                let t: f64 = row.iter().sum();
                if t > 0.0 {
                    row.iter_mut().for_each(|x| *x /= t);
                } else {
                    row[0] = 1.0;
                }
            }
        }
    }
    let mut w = vec![spec.p_out; k * k];
    for a in 0..k {
        w[a * k + a] = spec.p_in;
    }
    let community = CommunityParams::new(n, k, u.clone(), u, w)?;
    Ok(GroundTruth {
        sigma,
        community,
        s,
        c: 1.0,
        delta0: spec.delta0,
        mu: spec.mu,
        beta: spec.beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeControl {
    /// `None` when `μ = 0`
    pub c_sr: Option<f64>,
    /// `None` when `μ = 1`
    pub c_mt: Option<f64>,
    pub epsilon: f64,
}

/// Largest δ₀ compatible with a total mean degree `k`.
pub fn delta0_bound(mean_degree: f64, mu: f64, n: usize) -> f64 {
    let d = 2.0 * mu * (1.0 - mu) * n as f64;
    if d > 0.0 {
        mean_degree / d
    } else {
        f64::INFINITY
    }
}

/// Split a total mean degree into hierarchy and community targets.
///
/// The targets `μ(k - ε)` and `(1 - μ)(k - ε)` make the expected realized
/// degree equal to `k` under [`degree_control`].
pub fn split_mean_degree(mean_degree: f64, mu: f64, delta0: f64, n: usize) -> Result<(f64, f64)> {
    if !(mean_degree > 0.0) {
        return invalid("target mean degree must be positive");
    }
    let bound = delta0_bound(mean_degree, mu, n);
    if delta0 > bound {
        return Err(Error::DeltaBound { delta0, bound });
    }
    let eps = 2.0 * mu * (1.0 - mu) * delta0 * n as f64;
    let rest = mean_degree - eps;
    Ok((mu * rest, (1.0 - mu) * rest))
}

/// Set `c` and rescale `w` so that the hierarchy and community parts carry
/// the requested mean degrees. The current `w` is taken as the shape `ŵ`.
pub fn degree_control(target_sr: f64, target_mt: f64, gt: &mut GroundTruth) -> Result<DegreeControl> {
    if !(target_sr >= 0.0 && target_mt >= 0.0) {
        return invalid("degree targets must be non-negative");
    }
    let n = gt.n_nodes();
    let nf = n as f64;
    let mu = gt.mu;
    let epsilon = 2.0 * mu * (1.0 - mu) * gt.delta0 * nf;
    let bound = delta0_bound(target_sr + target_mt + epsilon, mu, n);
    if gt.delta0 > bound {
        return Err(Error::DeltaBound { delta0: gt.delta0, bound });
    }
    let same = mu * mu + (1.0 - mu) * (1.0 - mu);

    let c_sr = if mu > 0.0 {
        let mut ksum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    ksum += spring_kernel(gt.s[i], gt.s[j], gt.beta);
                }
            }
        }
        let den = mu * same * ksum;
        if !(den > 0.0) {
            return invalid("hierarchy normalization vanishes");
        }
        let c = target_sr * nf / den;
        gt.c = c;
        Some(c)
    } else {
        None
    };

    let c_mt = if mu < 1.0 {
        let p = &gt.community;
        let k = p.n_communities();
        let uw = p.u_times_w();
        let mut vsum = vec![0.0; k];
        for j in 0..n {
            for h in 0..k {
                vsum[h] += p.v_row(j)[h];
            }
        }
        let mut msum = 0.0;
        for i in 0..n {
            let uwi = &uw[i * k..(i + 1) * k];
            for h in 0..k {
                msum += uwi[h] * (vsum[h] - p.v_row(i)[h]);
            }
        }
        let den = (1.0 - mu) * same * msum;
        if !(den > 0.0) {
            return invalid("community normalization vanishes");
        }
        let c = target_mt * nf / den;
        gt.community.w.iter_mut().for_each(|x| *x *= c);
        Some(c)
    } else {
        None
    };

    Ok(DegreeControl { c_sr, c_mt, epsilon })
}

fn poisson<R: Rng>(mean: f64, r: &mut R) -> u32 {
    if mean > 0.0 {
        Poisson::new(mean).expect("finite positive mean").sample(r) as u32
    } else {
        0
    }
}

/// Draw `A` given the planted latents. Row `i` uses its own substream, so
/// the result does not depend on scheduling.
pub fn sample_network(gt: &GroundTruth, seed: u64) -> Result<DirectedWeightedGraph> {
    let n = gt.n_nodes();
    let k = gt.community.n_communities();
    let uw = gt.community.u_times_w();
    let rows: Vec<Vec<(usize, usize, u32)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(seed, "network", i as u64);
            let uwi = &uw[i * k..(i + 1) * k];
            let mut row = Vec::new();
            for j in 0..n {
                if j == i {
                    continue;
                }
                let mean = match (gt.sigma[i], gt.sigma[j]) {
                    (true, true) => gt.c * spring_kernel(gt.s[i], gt.s[j], gt.beta),
                    (false, false) => uwi.iter().zip(gt.community.v_row(j)).map(|(a, b)| a * b).sum(),
                    _ => gt.delta0,
                };
                let a = poisson(mean, &mut r);
                if a > 0 {
                    row.push((i, j, a));
                }
            }
            row
        })
        .collect();
    DirectedWeightedGraph::from_edges(n, rows.into_iter().flatten())
}

/// A complete synthetic protocol: truth spec plus target mean degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub truth: TruthSpec,
    pub mean_degree: f64,
}

impl SyntheticConfig {
    /// Named presets: `paper-synthetic` (N = 500) and
    /// `paper-synthetic-small` (N = 200), both at ⟨k⟩ = 20, β = 5, K = 3,
    /// δ₀ = 0.01 and three leagues.
    pub fn preset(name: &str) -> Option<Self> {
        let n = match name {
            "paper-synthetic" => 500,
            "paper-synthetic-small" => 200,
            _ => return None,
        };
        Some(Self {
            truth: TruthSpec {
                n,
                k: 3,
                mu: 0.5,
                beta: 5.0,
                delta0: 0.01,
                leagues: LeagueSpec::three_leagues(),
                membership: MembershipRule::HardEqual,
                p_in: 1.0,
                p_out: 0.1,
            },
            mean_degree: 20.0,
        })
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.truth.mu = mu;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub truth: GroundTruth,
    pub graph: DirectedWeightedGraph,
    pub control: DegreeControl,
}

/// Truth, degree control and network in one call.
pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<SyntheticSample> {
    let t = &config.truth;
    t.validate()?;
    let (k_sr, k_mt) = split_mean_degree(config.mean_degree, t.mu, t.delta0, t.n)?;
    let mut truth = sample_ground_truth(t, seed)?;
    let control = degree_control(k_sr, k_mt, &mut truth)?;
    let graph = sample_network(&truth, seed)?;
    Ok(SyntheticSample { truth, graph, control })
}
