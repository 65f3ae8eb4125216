//! Community mechanism: mixed-membership expected counts `M_ij`, the
//! variational split `ρ_ijkh`, and the L1-regularized multiplicative updates
//! for `u`, `v` and `w`.
//!
//! `ρ` is never stored. Every update fuses it edge by edge, so numerators
//! cost `O(E K)` and the dense denominators use the factorization
//! `Σ_j a_i a_j v_jh = a_i (Σ_j a_j v_jh - a_i v_ih)` minus the hidden pairs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graph::TrainView;

/// Row-major `N×K` memberships and `K×K` affinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityParams {
    n: usize,
    k: usize,
    /// out-going memberships
    pub u: Vec<f64>,
    /// in-coming memberships
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl CommunityParams {
    pub fn new(n: usize, k: usize, u: Vec<f64>, v: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return invalid("K must be positive");
        }
        if u.len() != n * k || v.len() != n * k || w.len() != k * k {
            return invalid("membership/affinity shapes do not match N and K");
        }
        if u.iter().chain(&v).chain(&w).any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return invalid("community parameters must be finite and non-negative");
        }
        Ok(Self { n, k, u, v, w })
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            u: vec![0.0; n * k],
            v: vec![0.0; n * k],
            w: vec![0.0; k * k],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_communities(&self) -> usize {
        self.k
    }

    pub fn u_row(&self, i: usize) -> &[f64] {
        &self.u[i * self.k..(i + 1) * self.k]
    }

    pub fn v_row(&self, i: usize) -> &[f64] {
        &self.v[i * self.k..(i + 1) * self.k]
    }

    pub fn w_at(&self, k: usize, h: usize) -> f64 {
        self.w[k * self.k + h]
    }

    /// `(u_i W)_h = Σ_k u_ik w_kh` for every node, row-major.
    pub fn u_times_w(&self) -> Vec<f64> {
        let k = self.k;
        let mut out = vec![0.0; self.n * k];
        for i in 0..self.n {
            let ui = self.u_row(i);
            let row = &mut out[i * k..(i + 1) * k];
            for (kk, &uik) in ui.iter().enumerate() {
                if uik == 0.0 {
                    continue;
                }
                for h in 0..k {
                    row[h] += uik * self.w[kk * k + h];
                }
            }
        }
        out
    }

    /// `(W v_j)_k = Σ_h w_kh v_jh` for every node, row-major.
    pub fn w_times_v(&self) -> Vec<f64> {
        let k = self.k;
        let mut out = vec![0.0; self.n * k];
        for j in 0..self.n {
            let vj = self.v_row(j);
            let row = &mut out[j * k..(j + 1) * k];
            for kk in 0..k {
                let mut acc = 0.0;
                for h in 0..k {
                    acc += self.w[kk * k + h] * vj[h];
                }
                row[kk] = acc;
            }
        }
        out
    }

    pub fn l1_penalty(&self, reg: &Regularization) -> f64 {
        let s = |x: &[f64]| x.iter().sum::<f64>();
        reg.lambda_u * s(&self.u) + reg.lambda_v * s(&self.v) + reg.lambda_w * s(&self.w)
    }

    pub fn write_csv(&self, labels: &[String], dir: &Path) -> Result<()> {
        let k = self.k;
        let header: Vec<String> = (0..k).map(|c| format!("k{c}")).collect();
        for (name, mat) in [("u.csv", &self.u), ("v.csv", &self.v)] {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            writeln!(f, "node,{}", header.join(","))?;
            for i in 0..self.n {
                let row: Vec<String> = mat[i * k..(i + 1) * k].iter().map(|x| format!("{x:e}")).collect();
                writeln!(f, "{},{}", labels[i], row.join(","))?;
            }
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("w.csv"))?);
        writeln!(f, "k,{}", (0..k).map(|c| format!("h{c}")).collect::<Vec<_>>().join(","))?;
        for a in 0..k {
            let row: Vec<String> = self.w[a * k..(a + 1) * k].iter().map(|x| format!("{x:e}")).collect();
            writeln!(f, "k{a},{}", row.join(","))?;
        }
        Ok(())
    }

    /// Inverse of [`CommunityParams::write_csv`]; rows are matched by order.
    pub fn read_csv(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<Vec<f64>>> {
            let text = std::fs::read_to_string(dir.join(name))?;
            let mut rows = Vec::new();
            for (ln, line) in text.lines().enumerate().skip(1) {
                if line.trim().is_empty() {
                    continue;
                }
                let vals: std::result::Result<Vec<f64>, _> =
                    line.split(',').skip(1).map(|t| t.trim().parse::<f64>()).collect();
                match vals {
                    Ok(v) => rows.push(v),
                    Err(e) => return invalid(format!("{name} line {}: {e}", ln + 1)),
                }
            }
            Ok(rows)
        };
        let u = read("u.csv")?;
        let v = read("v.csv")?;
        let w = read("w.csv")?;
        let k = w.len();
        let n = u.len();
        Self::new(n, k, u.concat(), v.concat(), w.concat())
    }
}

/// Exponential-prior rates; zero disables the corresponding prior.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Regularization {
    pub lambda_u: f64,
    pub lambda_v: f64,
    pub lambda_w: f64,
}

impl Regularization {
    pub const NONE: Self = Self {
        lambda_u: 0.0,
        lambda_v: 0.0,
        lambda_w: 0.0,
    };

    /// Single grid value: `λ_u = λ_v = λ`, `λ_w = 10 λ`.
    pub fn coupled(lambda: f64) -> Self {
        Self {
            lambda_u: lambda,
            lambda_v: lambda,
            lambda_w: 10.0 * lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.lambda_u, self.lambda_v, self.lambda_w].iter().any(|&l| !(l >= 0.0)) {
            return invalid("regularization rates must be non-negative");
        }
        Ok(())
    }
}

/// `M_ij = Σ_kh u_ik v_jh w_kh`.
pub fn expected_count_m(i: usize, j: usize, p: &CommunityParams) -> f64 {
    let k = p.k;
    let (ui, vj) = (p.u_row(i), p.v_row(j));
    let mut m = 0.0;
    for a in 0..k {
        if ui[a] == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for b in 0..k {
            inner += p.w[a * k + b] * vj[b];
        }
        m += ui[a] * inner;
    }
    m
}

/// `ρ_ijkh`, row-major `K×K`. When `M_ij = 0` the split is undefined; the
/// uniform `1/K²` is returned with the degeneracy flag set.
pub fn compute_rho(i: usize, j: usize, p: &CommunityParams) -> (Vec<f64>, bool) {
    let k = p.k;
    let (ui, vj) = (p.u_row(i), p.v_row(j));
    let mut rho = vec![0.0; k * k];
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            let x = ui[a] * vj[b] * p.w[a * k + b];
            rho[a * k + b] = x;
            total += x;
        }
    }
    if total > 0.0 {
        rho.iter_mut().for_each(|x| *x /= total);
        (rho, false)
    } else {
        (vec![1.0 / (k * k) as f64; k * k], true)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// One round of the Q-weighted multiplicative updates, in the order
/// `u`, then `v` (using the new `u`), then `w` (using both).
///
/// Pairs are weighted by `(1 - Q_i)(1 - Q_j)`; hidden pairs and the diagonal
/// contribute to neither numerators nor denominators.
pub fn update_memberships(view: &TrainView, p: &CommunityParams, q: &[f64], reg: &Regularization) -> CommunityParams {
    let n = p.n;
    let k = p.k;
    let a: Vec<f64> = q.iter().map(|&qi| 1.0 - qi).collect();
    let mut next = p.clone();

    // u
    let wv = p.w_times_v();
    let mut vbar = vec![0.0; k];
    for j in 0..n {
        for h in 0..k {
            vbar[h] += a[j] * p.v[j * k + h];
        }
    }
    let mut num = vec![0.0; k];
    let mut corr = vec![0.0; k];
    let mut shifted = vec![0.0; k];
    for i in 0..n {
        let ui = p.u_row(i);
        num.iter_mut().for_each(|x| *x = 0.0);
        for (j, aij) in view.out_edges(i) {
            let wvj = &wv[j * k..(j + 1) * k];
            let m = dot(ui, wvj);
            let wt = a[i] * a[j] * aij;
            if m > 0.0 {
                for c in 0..k {
                    num[c] += wt * wvj[c] / m;
                }
            } else {
                for c in 0..k {
                    num[c] += wt / k as f64;
                }
            }
        }
        corr.iter_mut().for_each(|x| *x = 0.0);
        for &j in view.hidden_out(i) {
            let j = j as usize;
            for c in 0..k {
                corr[c] += a[j] * wv[j * k + c];
            }
        }
        for h in 0..k {
            shifted[h] = vbar[h] - a[i] * p.v[i * k + h];
        }
        for c in 0..k {
            let mut s = 0.0;
            for h in 0..k {
                s += p.w[c * k + h] * shifted[h];
            }
            let den = reg.lambda_u + a[i] * (s - corr[c]);
            let numer = if ui[c] == 0.0 { 0.0 } else { ui[c] * num[c] };
            next.u[i * k + c] = ratio(numer, den);
        }
    }

    // v
    let uw = next.u_times_w();
    let mut ubar = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            ubar[c] += a[i] * next.u[i * k + c];
        }
    }
    for j in 0..n {
        let vj = p.v_row(j);
        num.iter_mut().for_each(|x| *x = 0.0);
        for (i, aij) in view.in_edges(j) {
            let uwi = &uw[i * k..(i + 1) * k];
            let m = dot(uwi, vj);
            let wt = a[i] * a[j] * aij;
            if m > 0.0 {
                for h in 0..k {
                    num[h] += wt * uwi[h] / m;
                }
            } else {
                for h in 0..k {
                    num[h] += wt / k as f64;
                }
            }
        }
        corr.iter_mut().for_each(|x| *x = 0.0);
        for &i in view.hidden_in(j) {
            let i = i as usize;
            for h in 0..k {
                corr[h] += a[i] * uw[i * k + h];
            }
        }
        for c in 0..k {
            shifted[c] = ubar[c] - a[j] * next.u[j * k + c];
        }
        for h in 0..k {
            let mut s = 0.0;
            for c in 0..k {
                s += shifted[c] * p.w[c * k + h];
            }
            let den = reg.lambda_v + a[j] * (s - corr[h]);
            let numer = if vj[h] == 0.0 { 0.0 } else { vj[h] * num[h] };
            next.v[j * k + h] = ratio(numer, den);
        }
    }

    // w
    let mut wnum = vec![0.0; k * k];
    let mut wden_corr = vec![0.0; k * k];
    let mut vsum = vec![0.0; k];
    for i in 0..n {
        let ui = next.u_row(i);
        for (j, aij) in view.out_edges(i) {
            let vj = next.v_row(j);
            let wt = a[i] * a[j] * aij;
            let mut m = 0.0;
            for c in 0..k {
                for h in 0..k {
                    m += ui[c] * vj[h] * p.w[c * k + h];
                }
            }
            if m > 0.0 {
                for c in 0..k {
                    for h in 0..k {
                        wnum[c * k + h] += wt * ui[c] * vj[h] / m;
                    }
                }
            } else {
                let uniform = wt / (k * k) as f64;
                for x in wnum.iter_mut() {
                    *x += uniform;
                }
            }
        }
        // diagonal plus hidden pairs of row i, removed from the dense sum
        for h in 0..k {
            vsum[h] = a[i] * next.v[i * k + h];
        }
        for &j in view.hidden_out(i) {
            let j = j as usize;
            for h in 0..k {
                vsum[h] += a[j] * next.v[j * k + h];
            }
        }
        for c in 0..k {
            let aui = a[i] * ui[c];
            if aui == 0.0 {
                continue;
            }
            for h in 0..k {
                wden_corr[c * k + h] += aui * vsum[h];
            }
        }
    }
    let mut ubar_new = vec![0.0; k];
    let mut vbar_new = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            ubar_new[c] += a[i] * next.u[i * k + c];
            vbar_new[c] += a[i] * next.v[i * k + c];
        }
    }
    for c in 0..k {
        for h in 0..k {
            let idx = c * k + h;
            let den = reg.lambda_w + (ubar_new[c] * vbar_new[h] - wden_corr[idx]);
            let numer = if p.w[idx] == 0.0 { 0.0 } else { p.w[idx] * wnum[idx] };
            next.w[idx] = ratio(numer, den);
        }
    }
    next
}

/// Standalone MultiTensor update (no node-type weighting), written out
/// independently of [`update_memberships`]. With `Q ≡ 0` the two must agree
/// bit for bit.
pub fn multitensor_update(view: &TrainView, p: &CommunityParams, reg: &Regularization) -> CommunityParams {
    let n = p.n;
    let k = p.k;
    let mut next = p.clone();

    let wv = p.w_times_v();
    let mut vbar = vec![0.0; k];
    for j in 0..n {
        for h in 0..k {
            vbar[h] += p.v[j * k + h];
        }
    }
    for i in 0..n {
        let ui = p.u_row(i);
        let mut num = vec![0.0; k];
        for (j, aij) in view.out_edges(i) {
            let wvj = &wv[j * k..(j + 1) * k];
            let m = dot(ui, wvj);
            if m > 0.0 {
                for c in 0..k {
                    num[c] += aij * wvj[c] / m;
                }
            } else {
                for c in 0..k {
                    num[c] += aij / k as f64;
                }
            }
        }
        let mut corr = vec![0.0; k];
        for &j in view.hidden_out(i) {
            for c in 0..k {
                corr[c] += wv[j as usize * k + c];
            }
        }
        for c in 0..k {
            let mut s = 0.0;
            for h in 0..k {
                s += p.w[c * k + h] * (vbar[h] - p.v[i * k + h]);
            }
            let den = reg.lambda_u + (s - corr[c]);
            let numer = if ui[c] == 0.0 { 0.0 } else { ui[c] * num[c] };
            next.u[i * k + c] = ratio(numer, den);
        }
    }

    let uw = next.u_times_w();
    let mut ubar = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            ubar[c] += next.u[i * k + c];
        }
    }
    for j in 0..n {
        let vj = p.v_row(j);
        let mut num = vec![0.0; k];
        for (i, aij) in view.in_edges(j) {
            let uwi = &uw[i * k..(i + 1) * k];
            let m = dot(uwi, vj);
            if m > 0.0 {
                for h in 0..k {
                    num[h] += aij * uwi[h] / m;
                }
            } else {
                for h in 0..k {
                    num[h] += aij / k as f64;
                }
            }
        }
        let mut corr = vec![0.0; k];
        for &i in view.hidden_in(j) {
            for h in 0..k {
                corr[h] += uw[i as usize * k + h];
            }
        }
        for h in 0..k {
            let mut s = 0.0;
            for c in 0..k {
                s += (ubar[c] - next.u[j * k + c]) * p.w[c * k + h];
            }
            let den = reg.lambda_v + (s - corr[h]);
            let numer = if vj[h] == 0.0 { 0.0 } else { vj[h] * num[h] };
            next.v[j * k + h] = ratio(numer, den);
        }
    }

    let mut wnum = vec![0.0; k * k];
    let mut wden_corr = vec![0.0; k * k];
    for i in 0..n {
        let ui = next.u_row(i);
        for (j, aij) in view.out_edges(i) {
            let vj = next.v_row(j);
            let mut m = 0.0;
            for c in 0..k {
                for h in 0..k {
                    m += ui[c] * vj[h] * p.w[c * k + h];
                }
            }
            if m > 0.0 {
                for c in 0..k {
                    for h in 0..k {
                        wnum[c * k + h] += aij * ui[c] * vj[h] / m;
                    }
                }
            } else {
                for x in wnum.iter_mut() {
                    *x += aij / (k * k) as f64;
                }
            }
        }
        let mut vsum = next.v_row(i).to_vec();
        for &j in view.hidden_out(i) {
            for h in 0..k {
                vsum[h] += next.v[j as usize * k + h];
            }
        }
        for c in 0..k {
            if ui[c] == 0.0 {
                continue;
            }
            for h in 0..k {
                wden_corr[c * k + h] += ui[c] * vsum[h];
            }
        }
    }
    let mut ubar_new = vec![0.0; k];
    let mut vbar_new = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            ubar_new[c] += next.u[i * k + c];
            vbar_new[c] += next.v[i * k + c];
        }
    }
    for c in 0..k {
        for h in 0..k {
            let idx = c * k + h;
            let den = reg.lambda_w + (ubar_new[c] * vbar_new[h] - wden_corr[idx]);
            let numer = if p.w[idx] == 0.0 { 0.0 } else { p.w[idx] * wnum[idx] };
            next.w[idx] = ratio(numer, den);
        }
    }
    next
}
