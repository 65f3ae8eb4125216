//! Command-line interface.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::em::{self, FitResult, HyperParams, Pin, ScoreInit, UpdateSchedule};
use crate::eval::{self, CvGrid, CvOptions, SweepConfig};
use crate::generative::{self, MembershipRule, SyntheticConfig};
use crate::graph::{self, degree_stats, TrainView};
use crate::ising;
use crate::ranking::ScoreSchedule;

#[derive(Debug, Parser)]
#[command(name = "xornet", version, about = "Community and hierarchy mixtures in directed networks")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key = value` file; flags given on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic network with planted types
    Generate(GenerateArgs),
    /// Fit the model to an edge list
    Fit(FitArgs),
    /// Cross-validate over a grid of K and lambda
    Cv(CvArgs),
    /// Benchmark XOR against both baselines over a grid of mu
    Sweep(SweepArgs),
    /// Mean-field and exact-posterior diagnostics for a small network
    IsingCheck(IsingArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PinArg {
    Mt,
    Sr,
}

impl From<PinArg> for Pin {
    fn from(p: PinArg) -> Self {
        match p {
            PinArg::Mt => Pin::Community,
            PinArg::Sr => Pin::Ranking,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScheduleArg {
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScoreInitArg {
    Random,
    Springrank,
    Mixed,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "paper-synthetic")]
    pub preset: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(short = 'K', long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub mean_degree: Option<f64>,
    #[arg(long)]
    pub p_in: Option<f64>,
    #[arg(long)]
    pub p_out: Option<f64>,
    /// Mixed memberships from a symmetric Dirichlet instead of hard blocks
    #[arg(long)]
    pub dirichlet_alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct FitOptions {
    #[arg(long, default_value_t = 5.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "sequential")]
    pub schedule: ScheduleArg,
    /// Iterate the score fixed point to this tolerance inside every M-step
    #[arg(long)]
    pub score_tol: Option<f64>,
    #[arg(long, value_enum, default_value = "mixed")]
    pub score_init: ScoreInitArg,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

impl FitOptions {
    fn hyper(&self, k: usize, lambda: f64) -> HyperParams {
        HyperParams {
            k,
            beta: self.beta,
            reg: crate::community::Regularization::coupled(lambda),
            tol: self.tol,
            max_iter: self.max_iter,
            n_restarts: self.restarts,
            seed: self.seed,
            decision_threshold: self.threshold,
            update_schedule: match self.schedule {
                ScheduleArg::Sequential => UpdateSchedule::Sequential,
                ScheduleArg::Parallel => UpdateSchedule::Parallel,
            },
            score_schedule: match self.score_tol {
                Some(tol) => ScoreSchedule::Converge { tol, max_sweeps: 10_000 },
                None => ScoreSchedule::SingleSweep,
            },
            score_init: match self.score_init {
                ScoreInitArg::Random => ScoreInit::Random,
                ScoreInitArg::Springrank => ScoreInit::SpringRank,
                ScoreInitArg::Mixed => ScoreInit::Mixed,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub graph: PathBuf,
    #[arg(short = 'K', long = "K", default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, value_enum)]
    pub pin: Option<PinArg>,
    #[command(flatten)]
    pub opts: FitOptions,
    #[arg(long, default_value = "fit")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    pub graph: PathBuf,
    /// Values of K, as a list `1,2,4` or a range `1..5`
    #[arg(short = 'K', long = "K", default_value = "1..5")]
    pub k: String,
    /// Values of lambda, e.g. `0,0.1,0.5`
    #[arg(long, default_value = "0")]
    pub lambda: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum)]
    pub pin: Option<PinArg>,
    #[command(flatten)]
    pub opts: FitOptions,
    #[arg(long, default_value = "cv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "paper-synthetic-small")]
    pub preset: String,
    /// Planted mu values, e.g. `0,0.5,1` or `0,0.2,...,1`
    #[arg(long, default_value = "0,0.1,...,1")]
    pub mu: String,
    #[arg(long, default_value_t = 5)]
    pub samples: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IsingArgs {
    pub graph: PathBuf,
    /// Directory written by `fit`
    pub theta_dir: PathBuf,
    /// Write the report here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `0,0.2,...,1` style list; the ellipsis extends the step of the two
/// preceding values up to the final one.
pub fn parse_real_list(text: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    let mut out: Vec<f64> = Vec::new();
    let mut i = 0;
    while i < parts.len() {
        if parts[i] == "..." {
            if out.len() < 2 || i + 1 >= parts.len() {
                bail!("'...' needs two values before it and one after in {text:?}");
            }
            let a = out[out.len() - 2];
            let b = out[out.len() - 1];
            let end: f64 = parts[i + 1].parse().with_context(|| format!("bad number {:?}", parts[i + 1]))?;
            let step = b - a;
            if !(step > 0.0) || end < b {
                bail!("'...' needs an increasing progression in {text:?}");
            }
            let steps = ((end - a) / step).round() as usize;
            let start = out.len() - 2;
            out.truncate(start);
            for t in 0..=steps {
                let v = a + step * t as f64;
                // keep grid values clean, e.g. 0.30000000000000004 -> 0.3
                out.push((v * 1e9).round() / 1e9);
            }
            i += 2;
            continue;
        }
        out.push(parts[i].parse().with_context(|| format!("bad number {:?}", parts[i]))?);
        i += 1;
    }
    if out.is_empty() {
        bail!("empty list");
    }
    Ok(out)
}

/// `1..5` (inclusive) or `1,2,3`.
pub fn parse_int_list(text: &str) -> anyhow::Result<Vec<usize>> {
    if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().context("bad range start")?;
        let b: usize = b.trim().trim_start_matches('=').parse().context("bad range end")?;
        if a > b {
            bail!("empty range {text:?}");
        }
        return Ok((a..=b).collect());
    }
    let list: Result<Vec<usize>, _> = text.split(',').map(|p| p.trim().parse::<usize>()).collect();
    let list = list.with_context(|| format!("bad integer list {text:?}"))?;
    if list.is_empty() {
        bail!("empty list");
    }
    Ok(list)
}

/// Turn a `key = value` file into flags, placed right after the subcommand
/// so that later command-line flags override them.
pub fn splice_config(args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let pos = args.iter().position(|a| a == "--config");
    let inline = args.iter().position(|a| a.to_string_lossy().starts_with("--config="));
    let (path, remove): (PathBuf, Vec<usize>) = match (pos, inline) {
        (Some(p), _) if p + 1 < args.len() => (PathBuf::from(&args[p + 1]), vec![p, p + 1]),
        (_, Some(p)) => (PathBuf::from(args[p].to_string_lossy().trim_start_matches("--config=").to_string()), vec![p]),
        _ => return Ok(args),
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let mut extra = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), ln + 1);
        };
        let key = k.trim().replace('_', "-");
        let value = v.trim().trim_matches('"');
        match value {
            "true" => extra.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => extra.push(OsString::from(format!("--{key}={value}"))),
        }
    }
    let mut rest: Vec<OsString> = args.into_iter().enumerate().filter(|(i, _)| !remove.contains(i)).map(|(_, a)| a).collect();
    let names = ["generate", "fit", "cv", "sweep", "ising-check"];
    let sub = rest.iter().position(|a| names.iter().any(|n| a == n));
    match sub {
        Some(s) => {
            let tail = rest.split_off(s + 1);
            rest.extend(extra);
            rest.extend(tail);
        }
        None => rest.extend(extra),
    }
    Ok(rest)
}

fn load(path: &std::path::Path) -> anyhow::Result<graph::DirectedWeightedGraph> {
    graph::load_edge_list(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let mut cfg = SyntheticConfig::preset(&a.preset).with_context(|| format!("unknown preset {:?}", a.preset))?;
    let t = &mut cfg.truth;
    if let Some(n) = a.n {
        t.n = n;
    }
    if let Some(k) = a.k {
        t.k = k;
    }
    if let Some(mu) = a.mu {
        t.mu = mu;
    }
    if let Some(b) = a.beta {
        t.beta = b;
    }
    if let Some(d) = a.delta0 {
        t.delta0 = d;
    }
    if let Some(p) = a.p_in {
        t.p_in = p;
    }
    if let Some(p) = a.p_out {
        t.p_out = p;
    }
    if let Some(alpha) = a.dirichlet_alpha {
        t.membership = MembershipRule::Dirichlet { alpha };
    }
    if let Some(k) = a.mean_degree {
        cfg.mean_degree = k;
    }
    let sample = generative::generate(&cfg, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    let graph_path = a.out.join("graph.tsv");
    graph::save_edge_list(&sample.graph, &graph_path)?;
    sample.truth.write_dir(sample.graph.labels(), &a.out.join("truth"))?;
    std::fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    let st = degree_stats(&sample.graph);
    println!("mean_degree\t{:.4}", st.mean_degree);
    eprintln!("wrote {} ({} nodes, {} edges)", graph_path.display(), sample.graph.n_nodes(), sample.graph.n_edges());
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> anyhow::Result<bool> {
    let g = load(&a.graph)?;
    let view = TrainView::full(&g);
    let hp = a.opts.hyper(a.k, a.lambda);
    eprintln!("fitting {} nodes, {} edges, K={}, {} restarts", g.n_nodes(), g.n_edges(), hp.k, hp.n_restarts);
    let res = em::fit(&view, &hp, a.pin.map(Pin::from))?;
    res.write_dir(g.labels(), &a.out)?;
    eprintln!(
        "restart {} won: ELBO {:.6} after {} iterations ({})",
        res.best_restart,
        res.final_elbo(),
        res.elbo_trace.len(),
        if res.converged { "converged" } else { "not converged" }
    );
    Ok(res.converged)
}

fn cmd_cv(a: &CvArgs) -> anyhow::Result<()> {
    let g = load(&a.graph)?;
    let grid = CvGrid {
        ks: parse_int_list(&a.k)?,
        lambdas: parse_real_list(&a.lambda)?,
    };
    let hp = a.opts.hyper(grid.ks[0], 0.0);
    let opts = CvOptions {
        folds: a.folds,
        seed: a.opts.seed,
        hp,
        pin: a.pin.map(Pin::from),
        truth: None,
    };
    eprintln!("cross-validating {} grid points over {} folds", grid.points().len(), a.folds);
    let report = eval::cross_validate(&g, &grid, &opts)?;
    report.write(&a.out)?;
    println!("K\t{}\nlambda\t{}", report.chosen_k, report.chosen_lambda);
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> anyhow::Result<()> {
    let synth = SyntheticConfig::preset(&a.preset).with_context(|| format!("unknown preset {:?}", a.preset))?;
    let mus = parse_real_list(&a.mu)?;
    if let Some(bad) = mus.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        bail!("mu = {bad} is outside [0, 1]");
    }
    let mut cfg = SweepConfig::new(synth, mus);
    cfg.samples = a.samples;
    cfg.folds = a.folds;
    cfg.lambda = a.lambda;
    cfg.seed = a.seed;
    cfg.hp.n_restarts = a.restarts;
    let total = cfg.mus.len() * cfg.samples;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let table = eval::benchmark_sweep(&cfg, &|mu, sample| {
        let d = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        eprintln!("[{d}/{total}] mu={mu} sample={sample}");
    })?;
    table.write(&a.out)?;
    eprintln!("wrote {}", a.out.join("figure2.csv").display());
    Ok(())
}

fn cmd_ising(a: &IsingArgs) -> anyhow::Result<()> {
    let g = load(&a.graph)?;
    if g.n_nodes() > ising::ENUMERATION_CAP {
        bail!(crate::Error::EnumerationCap { n: g.n_nodes(), cap: ising::ENUMERATION_CAP });
    }
    let (theta, q) = FitResult::read_dir(&a.theta_dir)?;
    if theta.n_nodes() != g.n_nodes() {
        bail!("fit has {} nodes but the graph has {}", theta.n_nodes(), g.n_nodes());
    }
    let view = TrainView::full(&g);
    let report = ising_report(&view, &theta, &q)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Residual, exact marginals and the Jensen gap `log p(A) - ELBO`.
pub fn ising_report(view: &TrainView, theta: &em::Theta, q: &[f64]) -> crate::Result<IsingReport> {
    let fields = ising::compute_fields(view, theta);
    let residual = ising::self_consistency_residual(&fields, q);
    let exact = ising::exact_posterior(view, theta)?;
    let elbo = em::elbo(view, theta, q, &Default::default());
    let gap = exact.marginals.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(IsingReport {
        n_nodes: view.n_nodes(),
        max_residual: residual,
        elbo,
        log_evidence: exact.log_evidence,
        jensen_gap: exact.log_evidence - elbo,
        max_marginal_gap: gap,
        q: q.to_vec(),
        exact_marginals: exact.marginals,
    })
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IsingReport {
    pub n_nodes: usize,
    pub max_residual: f64,
    pub elbo: f64,
    pub log_evidence: f64,
    pub jensen_gap: f64,
    pub max_marginal_gap: f64,
    pub q: Vec<f64>,
    pub exact_marginals: Vec<f64>,
}

/// Exit codes: 0 success, 1 error, 2 fit stopped at the iteration limit.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> ExitCode {
    let args = match splice_config(args.into_iter().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let outcome = match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| true),
        Command::Fit(a) => cmd_fit(a),
        Command::Cv(a) => cmd_cv(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::IsingCheck(a) => cmd_ising(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
