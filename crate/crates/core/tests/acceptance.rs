//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit status
//! if any criterion fails.
//!
//! `cargo test --test acceptance` runs everything; criterion ids may be given
//! as arguments (`-- 1 3 7`) to run a subset. Set `XORNET_FULL_SCALE=1` to
//! add the N = 500 benchmark at the undiscounted thresholds (hours).

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{random_graph, random_q, random_theta, theta_gap, Dense};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xornet::community::{multitensor_update, Regularization};
use xornet::em::{e_step_q, elbo, fit, initialize, m_step, run_em, HyperParams, Pin, ScoreInit, UpdateSchedule};
use xornet::eval::{benchmark_sweep, cross_validate, CvGrid, CvOptions, Model, SweepConfig, SweepTable};
use xornet::generative::{generate, SyntheticConfig};
use xornet::graph::{EntryMask, TrainView};
use xornet::ising::{compute_fields, exact_posterior, log_joint, self_consistency_residual};
use xornet::ranking::springrank_residual;

// criterion 1
const SPRINGRANK_RESIDUAL: f64 = 1e-8;
// criterion 2
const N_ORACLE_INSTANCES: usize = 50;
const ENERGY_SHIFT_TOL: f64 = 1e-10;
const JENSEN_SLACK: f64 = 1e-9;
const M_STEP_TOL: f64 = 1e-10;
// criterion 3
const N_MONOTONE_FITS: usize = 100;
const MONOTONE_SLACK: f64 = 1e-9;
// criterion 4
const SELF_CONSISTENCY_TOL: f64 = 1e-6;
// criterion 5, downscaled: full-scale thresholds minus 0.05
const EDGE_AUC_MIN: f64 = 0.65;
const TYPE_AUC_MEAN_MIN: f64 = 0.80;
const PC_MIN: f64 = 0.65;
const CS_MIN: f64 = 0.65;
// criterion 5, full scale
const FULL_EDGE_AUC_MIN: f64 = 0.70;
const FULL_TYPE_AUC_MEAN_MIN: f64 = 0.85;
const FULL_PC_MIN: f64 = 0.70;
const FULL_CS_MIN: f64 = 0.70;
// criterion 6
const K_SELECTION_MIN_HITS: usize = 4;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn criterion_1() -> Outcome {
    let mut worst_residual: f64 = 0.0;
    let mut community_ok = true;
    for (seed, lambda) in [(1u64, 0.0), (2, 0.1), (3, 0.0)] {
        let s = generate(&SyntheticConfig::preset("paper-synthetic-small").unwrap().with_mu(0.0), seed).unwrap();
        let view = TrainView::full(&s.graph);
        let hp = HyperParams { k: 3, reg: Regularization::coupled(lambda), tol: 0.0, max_iter: 60, seed, ..HyperParams::default() };
        let (theta, q) = initialize(&view, &hp, Some(Pin::Community), 0, None);
        let traj = run_em(&view, theta.clone(), q, &hp, Some(Pin::Community)).unwrap();
        let mut p = theta.community.clone();
        for _ in 0..traj.elbo_trace.len() {
            p = multitensor_update(&view, &p, &hp.reg);
        }
        community_ok &= traj.theta.community == p;

        let s = generate(&SyntheticConfig::preset("paper-synthetic-small").unwrap().with_mu(1.0), seed).unwrap();
        let view = TrainView::full(&s.graph);
        let res = fit(&view, &HyperParams { seed, ..HyperParams::default() }, Some(Pin::Ranking)).unwrap();
        worst_residual = worst_residual.max(springrank_residual(&view, &res.ranking.s));
    }
    for seed in 0..5 {
        let g = random_graph(30, 0.15, 3, 40 + seed);
        let view = TrainView::full(&g);
        let res = fit(&view, &HyperParams { k: 2, seed, ..HyperParams::default() }, Some(Pin::Ranking)).unwrap();
        worst_residual = worst_residual.max(springrank_residual(&view, &res.ranking.s));
    }
    Outcome::new(
        community_ok && worst_residual < SPRINGRANK_RESIDUAL,
        format!("Q=0 memberships bitwise equal to MultiTensor: {community_ok}; Q=1 max SpringRank residual {worst_residual:.2e} (< {SPRINGRANK_RESIDUAL:e})"),
    )
}

fn criterion_2() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_shift, mut worst_jensen, mut worst_m): (f64, f64, f64) = (0.0, f64::NEG_INFINITY, 0.0);
    for inst in 0..N_ORACLE_INSTANCES {
        let n = r.random_range(3..=8);
        let k = r.random_range(1..=3);
        let seed = 1000 + inst as u64;
        let g = random_graph(n, r.random_range(0.2..0.7), 4, seed);
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .filter(|_| r.random::<f64>() < 0.15)
            .collect();
        let mask = EntryMask::new(n, pairs).unwrap();
        let hidden = |i, j| mask.contains(i, j);
        let dense = Dense::new(&g, &hidden);
        let view = TrainView::masked(&g, &mask).unwrap();
        let theta = random_theta(n, k, seed + 1);

        let f = compute_fields(&view, &theta);
        let mut offsets = Vec::new();
        for cfg in 0..1usize << n {
            let sigma: Vec<bool> = (0..n).map(|i| (cfg >> i) & 1 == 1).collect();
            let x: Vec<f64> = sigma.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
            offsets.push(log_joint(&view, &theta, &sigma) - f.neg_energy(&x));
        }
        let spread = offsets.iter().map(|o| (o - offsets[0]).abs()).fold(0.0, f64::max) / (1.0 + offsets[0].abs());
        worst_shift = worst_shift.max(spread);

        let evidence = exact_posterior(&view, &theta).unwrap().log_evidence;
        let mut q = random_q(n, seed + 2);
        for _ in 0..30 {
            worst_jensen = worst_jensen.max(elbo(&view, &theta, &q, &Regularization::NONE) - evidence);
            q = e_step_q(&view, &theta, &q, UpdateSchedule::Sequential).unwrap();
        }
        worst_jensen = worst_jensen.max(elbo(&view, &theta, &q, &Regularization::NONE) - evidence);

        let hp = HyperParams { k, reg: Regularization::coupled(r.random_range(0.0..0.3)), ..HyperParams::default() };
        let q = random_q(n, seed + 3);
        let (lib, _) = m_step(&view, &theta, &q, &hp, None).unwrap();
        worst_m = worst_m.max(theta_gap(&lib, &dense.m_step(&theta, &q, &hp.reg)));
    }
    Outcome::new(
        worst_shift < ENERGY_SHIFT_TOL && worst_jensen <= JENSEN_SLACK && worst_m < M_STEP_TOL,
        format!(
            "{N_ORACLE_INSTANCES} instances, N<=8: energy shift spread {worst_shift:.1e}; max ELBO - log evidence {worst_jensen:.2e}; M-step vs dense {worst_m:.1e}"
        ),
    )
}

fn first_drop(trace: &[f64]) -> Option<(usize, f64)> {
    trace.windows(2).enumerate().find_map(|(i, w)| {
        let drop = (w[0] - w[1]) / w[0].abs();
        (drop > MONOTONE_SLACK).then_some((i + 1, drop))
    })
}

fn criterion_3() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let (mut violations, mut sweeps, mut parallel_violations) = (Vec::new(), 0usize, 0usize);
    for fit_id in 0..N_MONOTONE_FITS {
        let seed = 3000 + fit_id as u64;
        let g = if fit_id % 2 == 0 {
            let mut cfg = SyntheticConfig::preset("paper-synthetic-small").unwrap().with_mu(r.random_range(0.0..=1.0));
            cfg.truth.n = r.random_range(40..=120);
            generate(&cfg, seed).unwrap().graph
        } else {
            random_graph(r.random_range(10..=50), r.random_range(0.05..0.3), 3, seed)
        };
        let view = TrainView::full(&g);
        let score_init = [ScoreInit::Random, ScoreInit::Mixed][fit_id % 4 / 2];
        let hp = HyperParams { k: r.random_range(1..=4), max_iter: 200, seed, score_init, ..HyperParams::default() };
        let base = xornet::ranking::springrank_scores(&view, 1e-10, 100_000);
        let (theta, q) = initialize(&view, &hp, None, fit_id % 2, Some(&base));
        let traj = run_em(&view, theta.clone(), q.clone(), &hp, None).unwrap();
        sweeps += traj.elbo_trace.len();
        if let Some((at, drop)) = first_drop(&traj.elbo_trace) {
            violations.push(format!("fit {fit_id} sweep {at} drop {drop:.1e}"));
        }
        let hp_par = HyperParams { update_schedule: UpdateSchedule::Parallel, ..hp };
        if let Ok(t) = run_em(&view, theta, q, &hp_par, None) {
            parallel_violations += usize::from(first_drop(&t.elbo_trace).is_some());
        }
    }
    Outcome::new(
        violations.is_empty(),
        format!(
            "{N_MONOTONE_FITS} sequential fits, {sweeps} sweeps, {} drops beyond {MONOTONE_SLACK:e} relative{}; parallel schedule (warning only): {parallel_violations} fits with a drop",
            violations.len(),
            if violations.is_empty() { String::new() } else { format!(" [{}]", violations.join(", ")) }
        ),
    )
}

fn criterion_4() -> Outcome {
    let (mut worst_converged, mut worst_all): (f64, f64) = (0.0, 0.0);
    let (mut fits, mut converged) = (0usize, 0usize);
    for mu in [0.2, 0.5, 0.8] {
        for seed in 0..4u64 {
            let mut cfg = SyntheticConfig::preset("paper-synthetic-small").unwrap().with_mu(mu);
            cfg.truth.n = 50;
            let s = generate(&cfg, 4000 + seed).unwrap();
            let view = TrainView::full(&s.graph);
            let res = fit(&view, &HyperParams { seed, ..HyperParams::default() }, None).unwrap();
            let f = compute_fields(&view, &res.theta());
            let r = self_consistency_residual(&f, res.q());
            worst_all = worst_all.max(r);
            fits += 1;
            if res.converged {
                converged += 1;
                worst_converged = worst_converged.max(r);
            }
        }
    }
    Outcome::new(
        converged > 0 && worst_converged < SELF_CONSISTENCY_TOL,
        format!(
            "{converged}/{fits} N=50 fits converged; max tanh residual over converged fits {worst_converged:.2e} (< {SELF_CONSISTENCY_TOL:e}), over all fits {worst_all:.2e}"
        ),
    )
}

struct Thresholds {
    edge: f64,
    type_mean: f64,
    pc: f64,
    cs: f64,
}

fn metric(t: &SweepTable, mu: f64, model: Model, f: fn(&xornet::eval::SweepSummary) -> Option<&xornet::eval::MetricSummary>) -> Option<f64> {
    t.get(mu, model).and_then(f).map(|m| m.mean)
}

fn judge_sweep(t: &SweepTable, mus: &[f64], th: &Thresholds) -> Outcome {
    let edge: Vec<(f64, f64)> = mus.iter().map(|&m| (m, metric(t, m, Model::Xor, |s| s.edge_auc.as_ref()).unwrap_or(f64::NAN))).collect();
    let edge_ok = edge.iter().all(|&(_, a)| a >= th.edge);

    let types: Vec<(f64, f64)> = mus.iter().filter_map(|&m| metric(t, m, Model::Xor, |s| s.type_auc.as_ref()).map(|a| (m, a))).collect();
    let type_mean = types.iter().map(|x| x.1).sum::<f64>() / types.len().max(1) as f64;
    let middle = types.iter().filter(|x| (0.35..=0.65).contains(&x.0)).map(|x| x.1).fold(f64::INFINITY, f64::min);
    let ends = match (types.first(), types.last()) {
        (Some(a), Some(b)) => a.1.min(b.1),
        _ => f64::NAN,
    };
    let type_ok = !types.is_empty() && type_mean >= th.type_mean && middle < ends;

    let pc: Vec<(f64, f64)> = mus.iter().filter(|&&m| m > 0.6).map(|&m| (m, metric(t, m, Model::Xor, |s| s.pc_ranked.as_ref()).unwrap_or(f64::NAN))).collect();
    let cs: Vec<(f64, f64)> = mus.iter().filter(|&&m| m < 0.4).map(|&m| (m, metric(t, m, Model::Xor, |s| s.cs_community.as_ref()).unwrap_or(f64::NAN))).collect();
    let pc_ok = pc.iter().all(|&(_, x)| x > th.pc);
    let cs_ok = cs.iter().all(|&(_, x)| x > th.cs);

    let fmt = |v: &[(f64, f64)]| v.iter().map(|(m, x)| format!("{m:.1}:{x:.3}")).collect::<Vec<_>>().join(" ");
    let mut detail = format!(
        "(a) edge AUC >= {} [{}] {}; (b) type AUC mean {type_mean:.3} >= {}, middle min {middle:.3} < ends min {ends:.3} [{}] {}; (c) PC(sigma_hat=1) > {} [{}] {}, CS(sigma_hat=0) > {} [{}] {}",
        th.edge, fmt(&edge), ok(edge_ok), th.type_mean, fmt(&types), ok(type_ok), th.pc, fmt(&pc), ok(pc_ok), th.cs, fmt(&cs), ok(cs_ok)
    );
    if let (Some(x), Some(b)) = (metric(t, 0.0, Model::Xor, |s| s.cs_all.as_ref()), metric(t, 0.0, Model::MultiTensor, |s| s.cs_all.as_ref())) {
        detail += &format!("; mu=0 CS XOR {x:.3} vs MT {b:.3}");
    }
    if let (Some(x), Some(b)) = (metric(t, 1.0, Model::Xor, |s| s.pc_all.as_ref()), metric(t, 1.0, Model::SpringRank, |s| s.pc_all.as_ref())) {
        detail += &format!("; mu=1 PC XOR {x:.3} vs SR {b:.3}");
    }
    Outcome::new(edge_ok && type_ok && pc_ok && cs_ok, detail)
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn run_sweep(preset: &str, tag: &str) -> (SweepTable, Vec<f64>) {
    let mus: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut cfg = SweepConfig::new(SyntheticConfig::preset(preset).unwrap(), mus.clone());
    cfg.seed = 5;
    let t0 = Instant::now();
    let table = benchmark_sweep(&cfg, &|mu, sample| eprintln!("  [{tag}] mu={mu:.1} sample {} done, {:.0}s", sample + 1, t0.elapsed().as_secs_f64())).unwrap();
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-{tag}"));
    if let Err(e) = table.write(&dir) {
        eprintln!("  could not write sweep table: {e}");
    } else {
        eprintln!("  sweep table written to {}", dir.display());
    }
    (table, mus)
}

fn criterion_5() -> Outcome {
    let (table, mus) = run_sweep("paper-synthetic-small", "n200");
    judge_sweep(&table, &mus, &Thresholds { edge: EDGE_AUC_MIN, type_mean: TYPE_AUC_MEAN_MIN, pc: PC_MIN, cs: CS_MIN })
}

fn criterion_5_full() -> Outcome {
    let (table, mus) = run_sweep("paper-synthetic", "n500");
    judge_sweep(&table, &mus, &Thresholds { edge: FULL_EDGE_AUC_MIN, type_mean: FULL_TYPE_AUC_MEAN_MIN, pc: FULL_PC_MIN, cs: FULL_CS_MIN })
}

fn criterion_6() -> Outcome {
    let cfg = SyntheticConfig::preset("paper-synthetic-small").unwrap().with_mu(0.0);
    let grid = CvGrid { ks: (1..=5).collect(), lambdas: vec![0.0] };
    let mut chosen = Vec::new();
    for sample in 0..5u64 {
        let s = generate(&cfg, 6000 + sample).unwrap();
        let opts = CvOptions { folds: 5, seed: sample, hp: HyperParams { seed: sample, ..HyperParams::default() }, pin: None, truth: None };
        let report = cross_validate(&s.graph, &grid, &opts).unwrap();
        chosen.push(report.chosen_k);
    }
    let hits = chosen.iter().filter(|&&k| k == 3).count();
    Outcome::new(hits >= K_SELECTION_MIN_HITS, format!("chosen K per sample {chosen:?}; K=3 in {hits}/5 (need >= {K_SELECTION_MIN_HITS})"))
}

fn criterion_7() -> Outcome {
    use common::props;
    let checks: [(&str, fn(u32) -> Result<(), String>, u32); 5] = [
        ("gauge invariance", props::gauge_invariance, props::CASES),
        ("X identity", props::x_identity, props::CASES),
        ("AUC monotone invariance", props::auc_monotone_invariance, props::CASES),
        ("fold partition", props::fold_partition, props::CASES),
        ("mask non-leakage", props::mask_non_leakage, 24),
    ];
    let mut parts = Vec::new();
    let mut all = true;
    for (name, f, cases) in checks {
        match f(cases) {
            Ok(()) => parts.push(format!("{name} ok ({cases} cases)")),
            Err(e) => {
                all = false;
                parts.push(format!("{name} FAILED: {e}"));
            }
        }
    }
    Outcome::new(all, parts.join("; "))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |id: &str| args.is_empty() || args.iter().any(|a| a == id);
    let mut table: Vec<(&str, &str, fn() -> Outcome)> = vec![
        ("1", "degenerate equivalence", criterion_1),
        ("2", "exact-oracle suite", criterion_2),
        ("3", "ELBO monotonicity", criterion_3),
        ("4", "mean-field self-consistency", criterion_4),
        ("5", "synthetic benchmark, N=200", criterion_5),
        ("6", "K selection by cross-validation", criterion_6),
        ("7", "property suite", criterion_7),
    ];
    if std::env::var("XORNET_FULL_SCALE").is_ok_and(|v| v == "1") {
        table.push(("5-full", "synthetic benchmark, N=500", criterion_5_full));
    }
    let mut failed = 0;
    for (id, name, run) in table {
        if !selected(id) {
            continue;
        }
        let t0 = Instant::now();
        let out = run();
        let status = if out.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!out.pass);
        println!("{status} criterion {id} ({name}, {:.1}s): {}", t0.elapsed().as_secs_f64(), out.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
