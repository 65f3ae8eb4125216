//! Scoring of held-out entries, latent-recovery metrics, cross-validation
//! and the synthetic benchmark sweep.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::{CommunityParams, Regularization};
use crate::em::{fit, FitResult, HyperParams, Pin, Theta};
use crate::error::{invalid, Result};
use crate::generative::{generate, GroundTruth, SyntheticConfig};
use crate::graph::{make_folds, DirectedWeightedGraph, EntryMask, TrainView};
use crate::ranking::expected_count_s;
use crate::rng;

/// Posterior-expected Poisson mean of `A_ij`.
pub fn expected_entry(theta: &Theta, q: &[f64], i: usize, j: usize) -> f64 {
    let (qi, qj) = (q[i], q[j]);
    let s = expected_count_s(i, j, &theta.ranking);
    let m = crate::community::expected_count_m(i, j, &theta.community);
    qi * qj * s + (1.0 - qi) * (1.0 - qj) * m + (qi * (1.0 - qj) + (1.0 - qi) * qj) * theta.delta0
}

pub fn edge_score(i: usize, j: usize, fit: &FitResult) -> f64 {
    let theta = fit.theta();
    expected_entry(&theta, fit.q(), i, j)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` when either class is empty.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        // midrank over the tie block, 1-based
        let mid = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            if labels[k] {
                rank_sum += mid;
            }
        }
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeAuc {
    /// `max(AUC, 1 - AUC)`
    pub auc: f64,
    /// whether `1 - AUC` was reported
    pub flipped: bool,
}

/// AUC of `Q` against planted types, symmetrized over label swap.
pub fn type_auc(q: &[f64], sigma: &[bool]) -> Option<TypeAuc> {
    auc(q, sigma).map(|a| {
        if a >= 0.5 {
            TypeAuc { auc: a, flipped: false }
        } else {
            TypeAuc { auc: 1.0 - a, flipped: true }
        }
    })
}

/// Pearson correlation, optionally restricted to a node subset. `None` for
/// fewer than two points or zero variance.
pub fn score_correlation(inferred: &[f64], truth: &[f64], restrict: Option<&[usize]>) -> Option<f64> {
    let all: Vec<usize>;
    let idx = match restrict {
        Some(r) => r,
        None => {
            all = (0..inferred.len()).collect();
            &all
        }
    };
    if idx.len() < 2 {
        return None;
    }
    let n = idx.len() as f64;
    let ma = idx.iter().map(|&i| inferred[i]).sum::<f64>() / n;
    let mb = idx.iter().map(|&i| truth[i]).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &i in idx {
        let (a, b) = (inferred[i] - ma, truth[i] - mb);
        sab += a * b;
        saa += a * a;
        sbb += b * b;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn padded_row(p: &[f64], k: usize, kmax: usize, i: usize) -> Vec<f64> {
    let mut row = p[i * k..(i + 1) * k].to_vec();
    row.resize(kmax, 0.0);
    row
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Column gain `G[a][b] = Σ_i x_ia y_ib / (|x_i| |y_i|)` over rows where both
/// are nonzero, plus the count contributed by rows that are both zero.
fn cosine_gain(x: &[f64], kx: usize, y: &[f64], ky: usize, kmax: usize, nodes: &[usize]) -> (Vec<f64>, f64) {
    let mut g = vec![0.0; kmax * kmax];
    let mut both_zero = 0.0;
    for &i in nodes {
        let (a, b) = (padded_row(x, kx, kmax, i), padded_row(y, ky, kmax, i));
        let (na, nb) = (norm(&a), norm(&b));
        if na == 0.0 && nb == 0.0 {
            both_zero += 1.0;
        } else if na > 0.0 && nb > 0.0 {
            for r in 0..kmax {
                for c in 0..kmax {
                    g[r * kmax + c] += a[r] * b[c] / (na * nb);
                }
            }
        }
    }
    (g, both_zero)
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Column assignment maximizing `Σ_a G[a][π(a)]`: exhaustive up to six
/// columns, greedy beyond.
fn best_assignment(g: &[f64], k: usize) -> Vec<usize> {
    if k <= 6 {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for p in permutations(k) {
            let v: f64 = p.iter().enumerate().map(|(a, &b)| g[a * k + b]).sum();
            if v > best.0 {
                best = (v, p);
            }
        }
        return best.1;
    }
    let mut pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).collect();
    pairs.sort_by(|x, y| g[y.0 * k + y.1].total_cmp(&g[x.0 * k + x.1]));
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (a, b) in pairs {
        if perm[a] == usize::MAX && !used[b] {
            perm[a] = b;
            used[b] = true;
        }
    }
    perm
}

/// Mean row cosine between inferred and true memberships over `u` and `v`,
/// after the column permutation that maximizes it. Rows that are zero in
/// both score 1; a zero row against a nonzero one scores 0.
pub fn membership_similarity(inferred: &CommunityParams, truth: &CommunityParams) -> f64 {
    let nodes: Vec<usize> = (0..truth.n_nodes()).collect();
    membership_similarity_on(inferred, truth, &nodes).unwrap_or(f64::NAN)
}

/// [`membership_similarity`] restricted to `nodes`; `None` if empty.
pub fn membership_similarity_on(inferred: &CommunityParams, truth: &CommunityParams, nodes: &[usize]) -> Option<f64> {
    assert_eq!(inferred.n_nodes(), truth.n_nodes());
    if nodes.is_empty() {
        return None;
    }
    let (ki, kt) = (inferred.n_communities(), truth.n_communities());
    let kmax = ki.max(kt);
    let (gu, zu) = cosine_gain(&inferred.u, ki, &truth.u, kt, kmax, nodes);
    let (gv, zv) = cosine_gain(&inferred.v, ki, &truth.v, kt, kmax, nodes);
    let g: Vec<f64> = gu.iter().zip(&gv).map(|(a, b)| a + b).collect();
    let perm = best_assignment(&g, kmax);
    let total: f64 = perm.iter().enumerate().map(|(a, &b)| g[a * kmax + b]).sum::<f64>() + zu + zv;
    Some(total / (2.0 * nodes.len() as f64))
}

/// Test AUC of a fitted model on the hidden pairs of `mask`: positives are
/// pairs with `A_ij ≥ 1`.
pub fn held_out_auc(g: &DirectedWeightedGraph, mask: &EntryMask, theta: &Theta, q: &[f64]) -> Option<f64> {
    let mut scores = Vec::with_capacity(mask.len());
    let mut labels = Vec::with_capacity(mask.len());
    for &(i, j) in mask.pairs() {
        scores.push(expected_entry(theta, q, i, j));
        labels.push(g.weight(i, j) >= 1);
    }
    auc(&scores, &labels)
}

/// Recovery metrics of one fit against planted latents.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Recovery {
    pub type_auc: Option<f64>,
    pub type_flipped: Option<bool>,
    /// membership cosine over all nodes
    pub cs_all: Option<f64>,
    /// membership cosine over nodes with `σ̂ = 0`
    pub cs_community: Option<f64>,
    /// score correlation over all nodes
    pub pc_all: Option<f64>,
    /// score correlation over nodes with `σ̂ = 1`
    pub pc_ranked: Option<f64>,
}

pub fn recovery(fit: &FitResult, truth: &GroundTruth) -> Recovery {
    let hard = fit.hard_types();
    let ranked: Vec<usize> = (0..hard.len()).filter(|&i| hard[i]).collect();
    let community: Vec<usize> = (0..hard.len()).filter(|&i| !hard[i]).collect();
    let ta = if fit.pin.is_none() { type_auc(fit.q(), &truth.sigma) } else { None };
    let all: Vec<usize> = (0..hard.len()).collect();
    let (use_cs, use_pc) = match fit.pin {
        Some(Pin::Community) => (true, false),
        Some(Pin::Ranking) => (false, true),
        None => (true, true),
    };
    Recovery {
        type_auc: ta.map(|t| t.auc),
        type_flipped: ta.map(|t| t.flipped),
        cs_all: use_cs.then(|| membership_similarity_on(&fit.community, &truth.community, &all)).flatten(),
        cs_community: use_cs.then(|| membership_similarity_on(&fit.community, &truth.community, &community)).flatten(),
        pc_all: use_pc.then(|| score_correlation(&fit.ranking.s, &truth.s, None)).flatten(),
        pc_ranked: use_pc.then(|| score_correlation(&fit.ranking.s, &truth.s, Some(&ranked))).flatten(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub ks: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl CvGrid {
    pub fn points(&self) -> Vec<(usize, f64)> {
        self.ks.iter().flat_map(|&k| self.lambdas.iter().map(move |&l| (k, l))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda: f64,
    pub fold: usize,
    pub edge_auc: Option<f64>,
    pub recovery: Option<Recovery>,
    pub converged: bool,
    pub final_elbo: f64,
    pub runtime_s: f64,
    pub masked_reads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub n_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub rows: Vec<CvRow>,
    pub summary: Vec<CvSummary>,
    #[serde(rename = "chosen_K")]
    pub chosen_k: usize,
    pub chosen_lambda: f64,
}

impl CvReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)? + "\n")?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("folds.csv"))?);
        writeln!(f, "K,lambda,fold,edge_auc,type_auc,cs,pc,converged,final_elbo,runtime_s")?;
        for r in &self.rows {
            let rec = r.recovery.unwrap_or_default();
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{:e},{:.3}",
                r.k,
                r.lambda,
                r.fold,
                opt(r.edge_auc),
                opt(rec.type_auc),
                opt(rec.cs_all),
                opt(rec.pc_all),
                r.converged,
                r.final_elbo,
                r.runtime_s
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v}"))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v.sqrt())
}

#[derive(Debug, Clone)]
pub struct CvOptions<'a> {
    pub folds: usize,
    /// seeds fold assignment; restarts use `hp.seed`
    pub seed: u64,
    pub hp: HyperParams,
    pub pin: Option<Pin>,
    pub truth: Option<&'a GroundTruth>,
}

/// Fit on each training split of every grid point and score the held-out
/// pairs. Selects the grid point with the best mean test AUC, ties going to
/// smaller `K` then smaller `λ`.
pub fn cross_validate(g: &DirectedWeightedGraph, grid: &CvGrid, opts: &CvOptions) -> Result<CvReport> {
    if grid.ks.is_empty() || grid.lambdas.is_empty() {
        return invalid("empty hyperparameter grid");
    }
    let masks = make_folds(g, opts.folds, opts.seed)?;
    let points = grid.points();
    let jobs: Vec<(usize, f64, usize)> = points.iter().flat_map(|&(k, l)| (0..masks.len()).map(move |f| (k, l, f))).collect();
    let rows: Vec<Result<Option<CvRow>>> = jobs
        .par_iter()
        .map(|&(k, lambda, fold)| {
            let mask = &masks[fold];
            let view = TrainView::masked(g, mask)?;
            let hp = HyperParams { k, reg: Regularization::coupled(lambda), ..opts.hp.clone() };
            let t0 = Instant::now();
            let result = fit(&view, &hp, opts.pin)?;
            let runtime_s = t0.elapsed().as_secs_f64();
            let edge_auc = held_out_auc(g, mask, &result.theta(), result.q());
            if edge_auc.is_none() {
                log::warn!("fold {fold} has a single-class test set, skipped");
            }
            Ok(Some(CvRow {
                k,
                lambda,
                fold,
                edge_auc,
                recovery: opts.truth.map(|t| recovery(&result, t)),
                converged: result.converged,
                final_elbo: result.final_elbo(),
                runtime_s,
                masked_reads: view.masked_reads(),
            }))
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        if let Some(row) = r? {
            out.push(row);
        }
    }
    let mut summary = Vec::new();
    for &(k, lambda) in &points {
        let aucs: Vec<f64> = out.iter().filter(|r| r.k == k && r.lambda == lambda).filter_map(|r| r.edge_auc).collect();
        let (m, s) = mean_std(&aucs);
        summary.push(CvSummary { k, lambda, mean_auc: m, std_auc: s, n_folds: aucs.len() });
    }
    let best = summary
        .iter()
        .filter(|s| s.mean_auc.is_finite())
        .fold(None::<&CvSummary>, |best, s| match best {
            Some(b) if b.mean_auc > s.mean_auc => Some(b),
            Some(b) if b.mean_auc == s.mean_auc && (b.k, b.lambda) <= (s.k, s.lambda) => Some(b),
            _ => Some(s),
        });
    let best = match best {
        Some(b) => b.clone(),
        None => return invalid("every fold had a single-class test set"),
    };
    Ok(CvReport {
        rows: out,
        summary,
        chosen_k: best.k,
        chosen_lambda: best.lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "XOR")]
    Xor,
    #[serde(rename = "MT")]
    MultiTensor,
    #[serde(rename = "SR")]
    SpringRank,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Xor, Model::MultiTensor, Model::SpringRank];

    pub fn pin(self) -> Option<Pin> {
        match self {
            Model::Xor => None,
            Model::MultiTensor => Some(Pin::Community),
            Model::SpringRank => Some(Pin::Ranking),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Model::Xor => "XOR",
            Model::MultiTensor => "MT",
            Model::SpringRank => "SR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub synthetic: SyntheticConfig,
    pub mus: Vec<f64>,
    pub samples: usize,
    pub folds: usize,
    pub lambda: f64,
    pub hp: HyperParams,
    pub seed: u64,
    pub models: Vec<Model>,
}

impl SweepConfig {
    /// Five samples, five folds and the three models, with `K` and `β` taken
    /// from the synthetic preset.
    pub fn new(synthetic: SyntheticConfig, mus: Vec<f64>) -> Self {
        let hp = HyperParams { k: synthetic.truth.k, beta: synthetic.truth.beta, ..HyperParams::default() };
        Self {
            synthetic,
            mus,
            samples: 5,
            folds: 5,
            lambda: 0.0,
            hp,
            seed: 0,
            models: Model::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mu: f64,
    pub sample: usize,
    pub fold: usize,
    pub model: Model,
    pub edge_auc: Option<f64>,
    pub recovery: Recovery,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MetricSummary {
    fn of(xs: &[f64]) -> Option<Self> {
        (!xs.is_empty()).then(|| {
            let (mean, std) = mean_std(xs);
            Self { mean, std, count: xs.len() }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub mu: f64,
    pub model: Model,
    pub edge_auc: Option<MetricSummary>,
    pub type_auc: Option<MetricSummary>,
    pub cs_all: Option<MetricSummary>,
    pub cs_community: Option<MetricSummary>,
    pub pc_all: Option<MetricSummary>,
    pub pc_ranked: Option<MetricSummary>,
    /// fraction of folds where the type AUC was reported flipped
    pub type_flip_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepTable {
    pub fn get(&self, mu: f64, model: Model) -> Option<&SweepSummary> {
        self.summary.iter().find(|s| s.mu == mu && s.model == model)
    }

    /// `figure2.csv` (one row per run), `figure2_summary.csv` and
    /// `figure2.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("figure2.csv"))?);
        writeln!(f, "mu,sample,fold,model,edge_auc,type_auc,type_flipped,cs_all,cs_community,pc_all,pc_ranked,converged")?;
        for r in &self.rows {
            let c = &r.recovery;
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.mu,
                r.sample,
                r.fold,
                r.model.name(),
                opt(r.edge_auc),
                opt(c.type_auc),
                c.type_flipped.map_or(String::new(), |b| b.to_string()),
                opt(c.cs_all),
                opt(c.cs_community),
                opt(c.pc_all),
                opt(c.pc_ranked),
                r.converged
            )?;
        }
        f.flush()?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("figure2_summary.csv"))?);
        let metrics = ["edge_auc", "type_auc", "cs_all", "cs_community", "pc_all", "pc_ranked"];
        let header: Vec<String> = metrics.iter().flat_map(|m| [format!("{m}_mean"), format!("{m}_std")]).collect();
        writeln!(f, "mu,model,{}", header.join(","))?;
        for s in &self.summary {
            let ms = [&s.edge_auc, &s.type_auc, &s.cs_all, &s.cs_community, &s.pc_all, &s.pc_ranked];
            let cols: Vec<String> = ms
                .iter()
                .flat_map(|m| match m {
                    Some(m) => [format!("{}", m.mean), format!("{}", m.std)],
                    None => [String::new(), String::new()],
                })
                .collect();
            writeln!(f, "{},{},{}", s.mu, s.model.name(), cols.join(","))?;
        }
        f.flush()?;
        std::fs::write(dir.join("figure2.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Cross-validated comparison of the models over a grid of planted `μ`.
/// `progress` is called after every finished synthetic sample.
pub fn benchmark_sweep(cfg: &SweepConfig, progress: &(dyn Fn(f64, usize) + Sync)) -> Result<SweepTable> {
    if cfg.mus.is_empty() || cfg.samples == 0 || cfg.models.is_empty() {
        return invalid("sweep needs at least one mu value, sample and model");
    }
    let mut rows = Vec::new();
    for (mi, &mu) in cfg.mus.iter().enumerate() {
        let synth = cfg.synthetic.clone().with_mu(mu);
        for sample in 0..cfg.samples {
            let seed = rng::derive_seed(cfg.seed, "sample", (mi * cfg.samples + sample) as u64);
            let sm = generate(&synth, seed)?;
            let masks = make_folds(&sm.graph, cfg.folds, rng::derive_seed(seed, "folds", 0))?;
            let jobs: Vec<(usize, Model)> = (0..masks.len()).flat_map(|f| cfg.models.iter().map(move |&m| (f, m))).collect();
            let out: Vec<Result<SweepRow>> = jobs
                .par_iter()
                .map(|&(fold, model)| {
                    let view = TrainView::masked(&sm.graph, &masks[fold])?;
                    let hp = HyperParams {
                        reg: Regularization::coupled(cfg.lambda),
                        seed: rng::derive_seed(seed, "fit", fold as u64),
                        ..cfg.hp.clone()
                    };
                    let res = fit(&view, &hp, model.pin())?;
                    Ok(SweepRow {
                        mu,
                        sample,
                        fold,
                        model,
                        edge_auc: held_out_auc(&sm.graph, &masks[fold], &res.theta(), res.q()),
                        recovery: recovery(&res, &sm.truth),
                        converged: res.converged,
                    })
                })
                .collect();
            for r in out {
                rows.push(r?);
            }
            progress(mu, sample);
        }
    }
    let mut summary = Vec::new();
    for &mu in &cfg.mus {
        for &model in &cfg.models {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.mu == mu && r.model == model).collect();
            let pick = |f: &dyn Fn(&SweepRow) -> Option<f64>| MetricSummary::of(&sel.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            let flips: Vec<bool> = sel.iter().filter_map(|r| r.recovery.type_flipped).collect();
            summary.push(SweepSummary {
                mu,
                model,
                edge_auc: pick(&|r| r.edge_auc),
                type_auc: pick(&|r| r.recovery.type_auc),
                cs_all: pick(&|r| r.recovery.cs_all),
                cs_community: pick(&|r| r.recovery.cs_community),
                pc_all: pick(&|r| r.recovery.pc_all),
                pc_ranked: pick(&|r| r.recovery.pc_ranked),
                type_flip_rate: (!flips.is_empty()).then(|| flips.iter().filter(|&&b| b).count() as f64 / flips.len() as f64),
            });
        }
    }
    Ok(SweepTable { rows, summary })
}
