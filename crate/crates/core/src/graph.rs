//! Sparse directed multigraph storage, edge-list I/O and entry masks for
//! cross-validation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Observed adjacency `A`: non-negative integer counts on ordered pairs.
///
/// Stored twice, row-major (out-edges) and column-major (in-edges), so both
/// `A_ij` and `A_ji` are reachable in time proportional to the degree.
/// Self-loops are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedWeightedGraph {
    labels: Vec<String>,
    out_offsets: Vec<usize>,
    out_targets: Vec<u32>,
    out_weights: Vec<u32>,
    in_offsets: Vec<usize>,
    in_sources: Vec<u32>,
    in_weights: Vec<u32>,
    total_weight: u64,
}

fn build_csr(n: usize, mut entries: Vec<(u32, u32, u32)>) -> (Vec<usize>, Vec<u32>, Vec<u32>) {
    entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
    let mut offsets = vec![0usize; n + 1];
    for &(r, _, _) in &entries {
        offsets[r as usize + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let cols = entries.iter().map(|e| e.1).collect();
    let weights = entries.iter().map(|e| e.2).collect();
    (offsets, cols, weights)
}

impl DirectedWeightedGraph {
    /// Build from `(source, target, weight)` triples with integer labels `0..n`.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, u32)>,
    {
        let labels = (0..n).map(|i| i.to_string()).collect();
        Self::with_labels(labels, edges)
    }

    /// Build from triples; repeated pairs sum their weights, self-loops and
    /// zero weights are dropped.
    pub fn with_labels<I>(labels: Vec<String>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, u32)>,
    {
        let n = labels.len();
        if n == 0 {
            return invalid("graph must have at least one node");
        }
        let mut agg: HashMap<(u32, u32), u64> = HashMap::new();
        let mut self_loops = 0usize;
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return invalid(format!("edge ({i}, {j}) out of range for {n} nodes"));
            }
            if i == j {
                self_loops += 1;
                continue;
            }
            if w == 0 {
                continue;
            }
            *agg.entry((i as u32, j as u32)).or_insert(0) += w as u64;
        }
        if self_loops > 0 {
            log::warn!("dropped {self_loops} self-loop rows");
        }
        let mut entries = Vec::with_capacity(agg.len());
        let mut total_weight = 0u64;
        for ((i, j), w) in agg {
            let w = u32::try_from(w).map_err(|_| Error::Invalid(format!("weight overflow on ({i}, {j})")))?;
            total_weight += w as u64;
            entries.push((i, j, w));
        }
        let transposed = entries.iter().map(|&(i, j, w)| (j, i, w)).collect();
        let (out_offsets, out_targets, out_weights) = build_csr(n, entries);
        let (in_offsets, in_sources, in_weights) = build_csr(n, transposed);
        Ok(Self {
            labels,
            out_offsets,
            out_targets,
            out_weights,
            in_offsets,
            in_sources,
            in_weights,
            total_weight,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Number of stored (non-zero) ordered pairs.
    pub fn n_edges(&self) -> usize {
        self.out_targets.len()
    }

    pub fn total_weight(&self) -> u64 {
        self.total_weight
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn out_range(&self, i: usize) -> std::ops::Range<usize> {
        self.out_offsets[i]..self.out_offsets[i + 1]
    }

    pub fn in_range(&self, i: usize) -> std::ops::Range<usize> {
        self.in_offsets[i]..self.in_offsets[i + 1]
    }

    pub fn out_target(&self, idx: usize) -> usize {
        self.out_targets[idx] as usize
    }

    pub fn in_source(&self, idx: usize) -> usize {
        self.in_sources[idx] as usize
    }

    pub fn out_weight(&self, idx: usize) -> u32 {
        self.out_weights[idx]
    }

    pub fn in_weight(&self, idx: usize) -> u32 {
        self.in_weights[idx]
    }

    /// `(j, A_ij)` for every stored out-edge of `i`.
    pub fn out_edges(&self, i: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.out_range(i)
            .map(move |e| (self.out_targets[e] as usize, self.out_weights[e]))
    }

    /// `(j, A_ji)` for every stored in-edge of `i`.
    pub fn in_edges(&self, i: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.in_range(i)
            .map(move |e| (self.in_sources[e] as usize, self.in_weights[e]))
    }

    /// All stored `(i, j, A_ij)` in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        (0..self.n_nodes()).flat_map(move |i| self.out_edges(i).map(move |(j, w)| (i, j, w)))
    }

    pub fn weight(&self, i: usize, j: usize) -> u32 {
        let r = self.out_range(i);
        match self.out_targets[r.clone()].binary_search(&(j as u32)) {
            Ok(pos) => self.out_weights[r.start + pos],
            Err(_) => 0,
        }
    }

    /// Dense copy of the adjacency, for tests and tiny graphs.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n_nodes();
        let mut a = vec![vec![0.0; n]; n];
        for (i, j, w) in self.edges() {
            a[i][j] = w as f64;
        }
        a
    }
}

fn is_number(tok: &str) -> bool {
    tok.parse::<f64>().is_ok()
}

/// Parse an edge list: `source<sep>target[<sep>weight]` with sep in
/// {tab, comma, space}; `#` comments; optional header row.
pub fn parse_edge_list<R: BufRead>(reader: R, origin: &Path) -> Result<DirectedWeightedGraph> {
    parse_with_labels(reader, origin, Vec::new())
}

fn parse_with_labels<R: BufRead>(reader: R, origin: &Path, known: Vec<String>) -> Result<DirectedWeightedGraph> {
    let mut index: HashMap<String, usize> = known.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
    let mut labels = known;
    let mut edges = Vec::new();
    let mut seen_data = false;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed
            .split([',', '\t', ' '])
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .collect();
        if !seen_data {
            seen_data = true;
            let looks_like_header = (toks.len() >= 3 && !is_number(toks[2]))
                || (toks.len() >= 2
                    && toks[0].eq_ignore_ascii_case("source")
                    && toks[1].eq_ignore_ascii_case("target"));
            if looks_like_header {
                continue;
            }
        }
        if toks.len() < 2 || toks.len() > 3 {
            return Err(parse_err(lineno, format!("expected 2 or 3 columns, found {}", toks.len())));
        }
        let weight = match toks.get(2) {
            None => 1u32,
            Some(t) => match t.parse::<u32>() {
                Ok(w) => w,
                Err(_) => {
                    let msg = match t.parse::<f64>() {
                        Ok(x) if x < 0.0 => format!("negative weight {t}"),
                        Ok(_) => format!("non-integer weight {t}"),
                        Err(_) => format!("unparseable weight {t:?}"),
                    };
                    return Err(parse_err(lineno, msg));
                }
            },
        };
        let mut node = |label: &str| -> usize {
            if let Some(&i) = index.get(label) {
                return i;
            }
            let i = labels.len();
            labels.push(label.to_string());
            index.insert(label.to_string(), i);
            i
        };
        let i = node(toks[0]);
        let j = node(toks[1]);
        edges.push((i, j, weight));
    }
    if labels.is_empty() {
        return Err(parse_err(0, "no edges found".into()));
    }
    DirectedWeightedGraph::with_labels(labels, edges)
}

/// Sidecar path holding node labels in index order.
pub fn labels_sidecar(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".nodes");
    name.into()
}

/// Load an edge list. If a `<path>.nodes` sidecar exists its labels fix the
/// index order (and carry isolated nodes); otherwise labels are indexed in
/// order of first appearance.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<DirectedWeightedGraph> {
    let path = path.as_ref();
    let sidecar = labels_sidecar(path);
    let known = if sidecar.exists() {
        std::fs::read_to_string(&sidecar)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    } else {
        Vec::new()
    };
    let file = File::open(path)?;
    parse_with_labels(BufReader::new(file), path, known)
}

/// Write the graph as a tab-separated edge list plus the label sidecar.
pub fn save_edge_list(g: &DirectedWeightedGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "source\ttarget\tweight")?;
    for (i, j, w) in g.edges() {
        writeln!(out, "{}\t{}\t{}", g.label(i), g.label(j), w)?;
    }
    out.flush()?;
    let mut side = BufWriter::new(File::create(labels_sidecar(path))?);
    for l in g.labels() {
        writeln!(side, "{l}")?;
    }
    side.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeStats {
    pub mean_degree: f64,
    pub out_degree: Vec<f64>,
    pub in_degree: Vec<f64>,
}

pub fn degree_stats(g: &DirectedWeightedGraph) -> DegreeStats {
    let n = g.n_nodes();
    let mut out_degree = vec![0.0; n];
    let mut in_degree = vec![0.0; n];
    for (i, j, w) in g.edges() {
        out_degree[i] += w as f64;
        in_degree[j] += w as f64;
    }
    DegreeStats {
        mean_degree: g.total_weight() as f64 / n as f64,
        out_degree,
        in_degree,
    }
}

/// A set of ordered pairs hidden from training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryMask {
    n_nodes: usize,
    hidden: Vec<(usize, usize)>,
}

impl EntryMask {
    pub fn new(n_nodes: usize, mut hidden: Vec<(usize, usize)>) -> Result<Self> {
        for &(i, j) in &hidden {
            if i == j {
                return invalid(format!("mask contains self-pair ({i}, {i})"));
            }
            if i >= n_nodes || j >= n_nodes {
                return invalid(format!("mask pair ({i}, {j}) out of range"));
            }
        }
        hidden.sort_unstable();
        hidden.dedup();
        Ok(Self { n_nodes, hidden })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.hidden
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.hidden.binary_search(&(i, j)).is_ok()
    }

    /// JSON array of `[i, j]` pairs.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.hidden).expect("pairs serialize")
    }

    pub fn from_json(n_nodes: usize, s: &str) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = serde_json::from_str(s)?;
        Self::new(n_nodes, pairs)
    }
}

/// Partition all `N(N-1)` ordered off-diagonal pairs uniformly at random
/// into `k_folds` near-equal masks.
pub fn make_folds(g: &DirectedWeightedGraph, k_folds: usize, seed: u64) -> Result<Vec<EntryMask>> {
    let n = g.n_nodes();
    let n_pairs = n * n.saturating_sub(1);
    if k_folds < 2 {
        return invalid("k_folds must be at least 2");
    }
    if k_folds > n_pairs {
        return invalid(format!("k_folds = {k_folds} exceeds the {n_pairs} off-diagonal pairs"));
    }
    let mut order: Vec<usize> = (0..n_pairs).collect();
    order.shuffle(&mut rng::substream(seed, "folds", 0));
    let mut folds: Vec<Vec<(usize, usize)>> = vec![Vec::with_capacity(n_pairs / k_folds + 1); k_folds];
    for (pos, &p) in order.iter().enumerate() {
        let i = p / (n - 1);
        let r = p % (n - 1);
        let j = if r >= i { r + 1 } else { r };
        folds[pos % k_folds].push((i, j));
    }
    folds.into_iter().map(|h| EntryMask::new(n, h)).collect()
}

/// Training view of a graph: the adjacency with masked entries removed.
///
/// All inference code reads data through this type. Masked weights are
/// never copied in; [`TrainView::weight`] counts any lookup of a hidden
/// pair so that leakage can be audited.
#[derive(Debug)]
pub struct TrainView<'g> {
    graph: &'g DirectedWeightedGraph,
    out_offsets: Vec<usize>,
    out_targets: Vec<u32>,
    out_weights: Vec<f64>,
    in_offsets: Vec<usize>,
    in_sources: Vec<u32>,
    in_weights: Vec<f64>,
    hidden_bits: Vec<u64>,
    hidden_out_offsets: Vec<usize>,
    hidden_out: Vec<u32>,
    hidden_in_offsets: Vec<usize>,
    hidden_in: Vec<u32>,
    n_hidden: usize,
    train_weight: f64,
    log_factorial_sum: f64,
    masked_reads: AtomicUsize,
}

/// `ln(a!)` for a non-negative integer-valued `a`.
pub fn ln_factorial(a: f64) -> f64 {
    if a < 20.0 {
        let mut acc = 0.0;
        let mut k = 2.0;
        while k <= a {
            acc += f64::ln(k);
            k += 1.0;
        }
        return acc;
    }
    // Stirling series, error below 1e-15 for a >= 20
    let inv = 1.0 / a;
    let inv2 = inv * inv;
    a * a.ln() - a + 0.5 * (2.0 * std::f64::consts::PI * a).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

impl<'g> TrainView<'g> {
    pub fn full(graph: &'g DirectedWeightedGraph) -> Self {
        Self::build(graph, None)
    }

    pub fn masked(graph: &'g DirectedWeightedGraph, mask: &EntryMask) -> Result<Self> {
        if mask.n_nodes() != graph.n_nodes() {
            return invalid("mask and graph sizes differ");
        }
        Ok(Self::build(graph, Some(mask)))
    }

    pub fn new(graph: &'g DirectedWeightedGraph, mask: Option<&EntryMask>) -> Result<Self> {
        match mask {
            Some(m) => Self::masked(graph, m),
            None => Ok(Self::full(graph)),
        }
    }

    fn build(graph: &'g DirectedWeightedGraph, mask: Option<&EntryMask>) -> Self {
        let n = graph.n_nodes();
        let mut hidden_bits = Vec::new();
        let mut hidden_rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut hidden_cols: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut n_hidden = 0;
        if let Some(mask) = mask {
            hidden_bits = vec![0u64; (n * n).div_ceil(64)];
            for &(i, j) in mask.pairs() {
                let bit = i * n + j;
                hidden_bits[bit / 64] |= 1 << (bit % 64);
                hidden_rows[i].push(j as u32);
                hidden_cols[j].push(i as u32);
            }
            n_hidden = mask.len();
        }
        let is_hidden = |i: usize, j: usize| -> bool {
            if hidden_bits.is_empty() {
                return false;
            }
            let bit = i * n + j;
            hidden_bits[bit / 64] >> (bit % 64) & 1 == 1
        };

        let mut out_offsets = Vec::with_capacity(n + 1);
        let mut out_targets = Vec::new();
        let mut out_weights = Vec::new();
        let mut in_offsets = Vec::with_capacity(n + 1);
        let mut in_sources = Vec::new();
        let mut in_weights = Vec::new();
        let mut train_weight = 0.0;
        let mut log_factorial_sum = 0.0;
        out_offsets.push(0);
        in_offsets.push(0);
        for i in 0..n {
            for e in graph.out_range(i) {
                let j = graph.out_target(e);
                // structure is checked before the weight is touched
                if is_hidden(i, j) {
                    continue;
                }
                let a = graph.out_weight(e) as f64;
                out_targets.push(j as u32);
                out_weights.push(a);
                train_weight += a;
                log_factorial_sum += ln_factorial(a);
            }
            out_offsets.push(out_targets.len());
            for e in graph.in_range(i) {
                let j = graph.in_source(e);
                if is_hidden(j, i) {
                    continue;
                }
                in_sources.push(j as u32);
                in_weights.push(graph.in_weight(e) as f64);
            }
            in_offsets.push(in_sources.len());
        }

        let flatten = |rows: Vec<Vec<u32>>| {
            let mut offsets = vec![0usize];
            let mut flat = Vec::new();
            for mut r in rows {
                r.sort_unstable();
                flat.extend(r);
                offsets.push(flat.len());
            }
            (offsets, flat)
        };
        let (hidden_out_offsets, hidden_out) = flatten(hidden_rows);
        let (hidden_in_offsets, hidden_in) = flatten(hidden_cols);

        Self {
            graph,
            out_offsets,
            out_targets,
            out_weights,
            in_offsets,
            in_sources,
            in_weights,
            hidden_bits,
            hidden_out_offsets,
            hidden_out,
            hidden_in_offsets,
            hidden_in,
            n_hidden,
            train_weight,
            log_factorial_sum,
            masked_reads: AtomicUsize::new(0),
        }
    }

    pub fn graph(&self) -> &'g DirectedWeightedGraph {
        self.graph
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    /// Number of ordered off-diagonal pairs available for training.
    pub fn n_train_pairs(&self) -> usize {
        let n = self.n_nodes();
        n * (n - 1) - self.n_hidden
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn train_weight(&self) -> f64 {
        self.train_weight
    }

    /// `Σ log(A_ij!)` over training entries.
    pub fn log_factorial_sum(&self) -> f64 {
        self.log_factorial_sum
    }

    pub fn n_train_edges(&self) -> usize {
        self.out_targets.len()
    }

    #[inline]
    pub fn is_hidden(&self, i: usize, j: usize) -> bool {
        if self.hidden_bits.is_empty() {
            return false;
        }
        let bit = i * self.n_nodes() + j;
        self.hidden_bits[bit / 64] >> (bit % 64) & 1 == 1
    }

    /// Training out-edges of `i` as `(j, A_ij)`.
    #[inline]
    pub fn out_edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.out_offsets[i]..self.out_offsets[i + 1];
        self.out_targets[r.clone()]
            .iter()
            .zip(&self.out_weights[r])
            .map(|(&j, &a)| (j as usize, a))
    }

    /// Training in-edges of `i` as `(j, A_ji)`.
    #[inline]
    pub fn in_edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.in_offsets[i]..self.in_offsets[i + 1];
        self.in_sources[r.clone()]
            .iter()
            .zip(&self.in_weights[r])
            .map(|(&j, &a)| (j as usize, a))
    }

    /// Targets `j` with `(i, j)` hidden.
    #[inline]
    pub fn hidden_out(&self, i: usize) -> &[u32] {
        &self.hidden_out[self.hidden_out_offsets[i]..self.hidden_out_offsets[i + 1]]
    }

    /// Sources `j` with `(j, i)` hidden.
    #[inline]
    pub fn hidden_in(&self, i: usize) -> &[u32] {
        &self.hidden_in[self.hidden_in_offsets[i]..self.hidden_in_offsets[i + 1]]
    }

    /// Training value of `A_ij`; hidden pairs read as 0 and are counted.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.is_hidden(i, j) {
            self.masked_reads.fetch_add(1, Ordering::Relaxed);
            return 0.0;
        }
        let r = self.out_offsets[i]..self.out_offsets[i + 1];
        match self.out_targets[r.clone()].binary_search(&(j as u32)) {
            Ok(pos) => self.out_weights[r.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Number of lookups that touched a hidden pair.
    pub fn masked_reads(&self) -> usize {
        self.masked_reads.load(Ordering::Relaxed)
    }
}
