//! Exact finite-`n` stationary analysis.
//!
//! The stationary law of the detailed FCFS-ALIS state aggregates to an
//! explicit weight over `(K, I1, I2)`, where `I1`, `I2` count idle servers
//! per pool and `K` counts the `s2` servers that follow the last `s1` server
//! in the ordered server sequence (busy servers in the arrival order of their
//! customers, then idle servers from most recently idle to longest idle).
//!
//! All weights live in log space; at `n = 200` individual factorials are far
//! beyond `f64` range.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{DoubleDouble, LogFactorials, LogSumExp};
use crate::model::{ServerKind, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub k: usize,
    pub i1: usize,
    pub i2: usize,
}

impl CellIndex {
    pub fn new(k: usize, i1: usize, i2: usize) -> Self {
        Self { k, i1, i2 }
    }
}

/// Which closed form a cell falls under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// At least one idle `s1` server; no customer waits.
    IdleFlexible,
    /// No idle `s1`, some idle `s2`; only `c2` customers wait.
    IdleDedicatedOnly,
    /// All servers busy.
    AllBusy,
}

/// Classifies a cell, or `None` when it is off the support.
pub fn region(n1: usize, n2: usize, c: CellIndex) -> Option<Region> {
    if c.k > n2 || c.i1 > n1 || c.i2 > n2 {
        return None;
    }
    if c.i1 >= 1 {
        (c.i2 >= c.k).then_some(Region::IdleFlexible)
    } else if c.i2 >= 1 {
        (c.i2 <= c.k).then_some(Region::IdleDedicatedOnly)
    } else {
        Some(Region::AllBusy)
    }
}

/// Precomputed logs shared by every cell of one system.
#[derive(Debug, Clone)]
pub struct WeightContext {
    params: SystemParams,
    lf: LogFactorials,
    ln_mu1: DoubleDouble,
    ln_mu2: DoubleDouble,
    ln_lambda: DoubleDouble,
    ln_lambda1: DoubleDouble,
    ln_n1: DoubleDouble,
    ln_slack: DoubleDouble,
    /// `prefix[t] = sum_{j = n1}^{n1 + t - 1} ln(mu1 n1 + mu2 (j - n1) - lambda2)`.
    prefix: Vec<DoubleDouble>,
}

impl WeightContext {
    pub fn new(params: &SystemParams) -> Result<Self> {
        params.validate()?;
        params.require_stable()?;
        if params.lambda1 <= 0.0 {
            return Err(Error::InvalidParams(
                "lambda1 = 0: the dedicated pool never serves, the K-law is degenerate".into(),
            ));
        }
        let p = *params;
        let (n1, n2) = (p.n1, p.n2);
        let lf = LogFactorials::new(n1 + 2 * n2 + 1);
        let mut prefix = Vec::with_capacity(n2 + 2);
        let mut acc = DoubleDouble::ZERO;
        prefix.push(acc);
        for t in 0..=n2 {
            let d = p.mu1 * n1 as f64 + p.mu2 * t as f64 - p.lambda2;
            acc = acc.add_f64(d.ln());
            prefix.push(acc);
        }
        let dd = |x: f64| DoubleDouble::from_f64(x.ln());
        Ok(Self {
            params: p,
            lf,
            ln_mu1: dd(p.mu1),
            ln_mu2: dd(p.mu2),
            ln_lambda: dd(p.lambda()),
            ln_lambda1: dd(p.lambda1),
            ln_n1: dd(n1 as f64),
            ln_slack: dd(p.capacity() - p.lambda()),
            prefix,
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    /// `sum_{j=a}^{b} ln D_j` over 1-based positions `a..=b` (empty when `a > b`).
    fn sum_ln_d(&self, a: usize, b: usize) -> DoubleDouble {
        if a > b {
            return DoubleDouble::ZERO;
        }
        let n1 = self.params.n1;
        self.prefix[b - n1 + 1].sub(self.prefix[a - n1])
    }

    /// Log of the unnormalized weight of `cell`; `-inf` off the support.
    pub fn log_weight(&self, c: CellIndex) -> f64 {
        let p = &self.params;
        let (n1, n2) = (p.n1, p.n2);
        let n = n1 + n2;
        let lf = &self.lf;
        match region(n1, n2, c) {
            None => f64::NEG_INFINITY,
            Some(Region::IdleFlexible) => {
                let (k, i1, i2) = (c.k, c.i1, c.i2);
                lf.ln_binomial(n1, i1)
                    .add(lf.ln_binomial(n2, i2))
                    .add_f64((i1 as f64).ln())
                    .add(lf.get(i2))
                    .add(lf.get(i1 + i2 - k - 1))
                    .sub(lf.get(i2 - k))
                    .add(self.ln_mu1.mul_f64(i1 as f64))
                    .add(self.ln_mu2.mul_f64(i2 as f64))
                    .sub(self.ln_lambda.mul_f64((i1 + i2 - k) as f64))
                    .sub(self.ln_lambda1.mul_f64(k as f64))
                    .to_f64()
            }
            Some(Region::IdleDedicatedOnly) => {
                let (k, i2) = (c.k, c.i2);
                self.ln_n1
                    .add(lf.get(n2))
                    .sub(lf.get(n2 - k))
                    .add(self.ln_mu1)
                    .add(self.ln_mu2.mul_f64(k as f64))
                    .sub(self.sum_ln_d(n - k, n - i2))
                    .sub(self.ln_lambda1.mul_f64(i2 as f64))
                    .to_f64()
            }
            Some(Region::AllBusy) => {
                let k = c.k;
                self.ln_n1
                    .add(lf.get(n2))
                    .sub(lf.get(n2 - k))
                    .add(self.ln_mu1)
                    .add(self.ln_mu2.mul_f64(k as f64))
                    .sub(self.sum_ln_d(n - k, n - 1))
                    .sub(self.ln_slack)
                    .to_f64()
            }
        }
    }
}

/// Log of the unnormalized stationary weight of `(K, I1, I2) = cell`.
pub fn log_weight_cell(params: &SystemParams, cell: CellIndex) -> Result<f64> {
    Ok(WeightContext::new(params)?.log_weight(cell))
}

/// Log-weights over the full `(k, i1, i2)` grid with their log normalizer.
#[derive(Debug, Clone)]
pub struct StationaryTable {
    params: SystemParams,
    log_w: Vec<f64>,
    log_z: f64,
}

impl StationaryTable {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    fn slice_len(&self) -> usize {
        (self.params.n1 + 1) * (self.params.n2 + 1)
    }

    fn index(&self, c: CellIndex) -> Option<usize> {
        let (n1, n2) = (self.params.n1, self.params.n2);
        if c.k > n2 || c.i1 > n1 || c.i2 > n2 {
            return None;
        }
        Some(c.k * self.slice_len() + c.i1 * (n2 + 1) + c.i2)
    }

    /// Unnormalized log-weight; `-inf` off the support.
    pub fn log_weight(&self, c: CellIndex) -> f64 {
        self.index(c).map_or(f64::NEG_INFINITY, |i| self.log_w[i])
    }

    pub fn prob(&self, c: CellIndex) -> f64 {
        (self.log_weight(c) - self.log_z).exp()
    }

    /// Every on-support cell with its normalized probability, in `k`-major order.
    pub fn support(&self) -> impl Iterator<Item = (CellIndex, f64)> + '_ {
        let (n1, n2) = (self.params.n1, self.params.n2);
        (0..=n2).flat_map(move |k| {
            (0..=n1).flat_map(move |i1| {
                (0..=n2).filter_map(move |i2| {
                    let c = CellIndex::new(k, i1, i2);
                    region(n1, n2, c).map(|_| (c, self.prob(c)))
                })
            })
        })
    }

    pub fn support_len(&self) -> usize {
        self.log_w.iter().filter(|x| x.is_finite()).count()
    }

    /// CSV with header `k,i1,i2,prob`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,i1,i2,prob")?;
        for (c, prob) in self.support() {
            writeln!(w, "{},{},{},{:e}", c.k, c.i1, c.i2, prob)?;
        }
        Ok(())
    }
}

fn fill_slice(ctx: &WeightContext, k: usize, slice: &mut [f64]) -> LogSumExp {
    let n2 = ctx.params.n2;
    let mut acc = LogSumExp::default();
    for (idx, out) in slice.iter_mut().enumerate() {
        let c = CellIndex::new(k, idx / (n2 + 1), idx % (n2 + 1));
        let lw = ctx.log_weight(c);
        acc.push(lw);
        *out = lw;
    }
    acc
}

/// Evaluates every cell and normalizes. `k`-slices are filled in parallel when
/// the `parallel` feature is on; the normalizer is reduced in slice order.
pub fn build_table(params: &SystemParams) -> Result<StationaryTable> {
    let ctx = WeightContext::new(params)?;
    let (n1, n2) = (params.n1, params.n2);
    let slice_len = (n1 + 1) * (n2 + 1);
    let mut log_w = vec![f64::NEG_INFINITY; slice_len * (n2 + 1)];

    #[cfg(feature = "parallel")]
    let partials: Vec<LogSumExp> = {
        use rayon::prelude::*;
        log_w.par_chunks_mut(slice_len).enumerate().map(|(k, s)| fill_slice(&ctx, k, s)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<LogSumExp> =
        log_w.chunks_mut(slice_len).enumerate().map(|(k, s)| fill_slice(&ctx, k, s)).collect();

    let log_z = pairwise_merge(&partials).value();
    Ok(StationaryTable { params: *params, log_w, log_z })
}

fn pairwise_merge(parts: &[LogSumExp]) -> LogSumExp {
    match parts.len() {
        0 => LogSumExp::default(),
        1 => parts[0],
        len => {
            let (a, b) = parts.split_at(len / 2);
            pairwise_merge(a).merge(pairwise_merge(b))
        }
    }
}

/// Exact moments of the idle counts and the `K` marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_i1: f64,
    pub mean_i2: f64,
    pub var_i1: f64,
    pub var_i2: f64,
    pub cov: f64,
    pub p_i1_zero: f64,
    pub k_pmf: Vec<f64>,
    pub i1_pmf: Vec<f64>,
    pub i2_pmf: Vec<f64>,
}

pub fn moments(table: &StationaryTable) -> Moments {
    let (n1, n2) = (table.params.n1, table.params.n2);
    let mut k_pmf = vec![0.0; n2 + 1];
    let mut joint = vec![0.0; (n1 + 1) * (n2 + 1)];
    let slice_len = table.slice_len();
    for (k, slice) in table.log_w.chunks(slice_len).enumerate() {
        let mut mass = 0.0;
        for (cell, &lw) in joint.iter_mut().zip(slice) {
            if lw > f64::NEG_INFINITY {
                let p = (lw - table.log_z).exp();
                *cell += p;
                mass += p;
            }
        }
        k_pmf[k] = mass;
    }
    moments_from_parts(n1, n2, k_pmf, &joint)
}

/// Moments from an arbitrary cell distribution, e.g. one produced by another
/// solver. Off-support cells are ignored.
pub fn moments_from_cells(n1: usize, n2: usize, cells: impl IntoIterator<Item = (CellIndex, f64)>) -> Moments {
    let mut k_pmf = vec![0.0; n2 + 1];
    let mut joint = vec![0.0; (n1 + 1) * (n2 + 1)];
    for (c, p) in cells {
        if region(n1, n2, c).is_some() {
            k_pmf[c.k] += p;
            joint[c.i1 * (n2 + 1) + c.i2] += p;
        }
    }
    moments_from_parts(n1, n2, k_pmf, &joint)
}

fn moments_from_parts(n1: usize, n2: usize, k_pmf: Vec<f64>, joint: &[f64]) -> Moments {
    let mut i1_pmf = vec![0.0; n1 + 1];
    let mut i2_pmf = vec![0.0; n2 + 1];
    for i1 in 0..=n1 {
        for i2 in 0..=n2 {
            let p = joint[i1 * (n2 + 1) + i2];
            i1_pmf[i1] += p;
            i2_pmf[i2] += p;
        }
    }
    let mean = |pmf: &[f64]| pmf.iter().enumerate().map(|(i, p)| i as f64 * p).sum::<f64>();
    let mean_i1 = mean(&i1_pmf);
    let mean_i2 = mean(&i2_pmf);
    let var = |pmf: &[f64], m: f64| pmf.iter().enumerate().map(|(i, p)| (i as f64 - m).powi(2) * p).sum::<f64>();
    let var_i1 = var(&i1_pmf, mean_i1);
    let var_i2 = var(&i2_pmf, mean_i2);
    let mut cov = 0.0;
    for i1 in 0..=n1 {
        let d1 = i1 as f64 - mean_i1;
        for i2 in 0..=n2 {
            cov += d1 * (i2 as f64 - mean_i2) * joint[i1 * (n2 + 1) + i2];
        }
    }
    Moments { mean_i1, mean_i2, var_i1, var_i2, cov, p_i1_zero: i1_pmf[0], k_pmf, i1_pmf, i2_pmf }
}

/// `P(I1 = 0)` pieces relative to the normalizing constant, in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PIdleZeroClosedForm {
    /// `ln(P(I1 = 0, I2 = 0) / B1)`.
    pub log_rel_00: f64,
    /// `ln(P(I1 = 0, I2 > 0) / B1)`.
    pub log_rel_0pos: f64,
}

impl PIdleZeroClosedForm {
    /// `ln(P(I1 = 0) / B1)`.
    pub fn log_rel_total(&self) -> f64 {
        crate::logspace::log_add_exp(self.log_rel_00, self.log_rel_0pos)
    }

    /// Normalized `P(I1 = 0)` given the table's log normalizer.
    pub fn probability(&self, log_z: f64) -> f64 {
        (self.log_rel_total() - log_z).exp()
    }
}

/// Closed forms for the all-busy mass and the `I1 = 0, I2 > 0` mass.
///
/// The second is `(1/(1-delta)) P(X < n2) / P(X = n2)` for `X ~ Poisson(lambda1/mu2)`,
/// summed as `sum_j n2! / (kappa^j n2^j (n2-j)!)` with a log-space recurrence.
pub fn p_i1_zero_closed_form(params: &SystemParams) -> Result<PIdleZeroClosedForm> {
    params.validate()?;
    params.require_stable()?;
    let d = params.derive();
    let ln_inv = -(-d.delta).ln_1p();
    let log_rel_00 = ln_inv + (1.0 - (1.0 - d.alpha) * d.rho).ln() - (-d.rho).ln_1p();
    let n2 = params.n2;
    let kn = d.kappa * n2 as f64;
    let mut acc = LogSumExp::default();
    let mut log_term = 0.0;
    let cutoff = 1e-18f64.ln();
    for j in 1..=n2 {
        let step = ((n2 - j + 1) as f64 / kn).ln();
        log_term += step;
        acc.push(log_term);
        if step < 0.0 && log_term < acc.value() + cutoff {
            break;
        }
    }
    Ok(PIdleZeroClosedForm { log_rel_00, log_rel_0pos: ln_inv + acc.value() })
}

/// `sum over permutations A of a` of `prod_l (A_1 + ... + A_l)^{-1}`, by
/// enumeration. Lengths above 8 are refused.
pub fn perm_sum_bruteforce(a: &[f64]) -> Result<f64> {
    if a.is_empty() || a.len() > 8 {
        return Err(Error::InvalidParams(format!("length {} outside 1..=8", a.len())));
    }
    if a.iter().any(|&x| !x.is_finite() || x <= 0.0) {
        return Err(Error::InvalidParams("entries must be positive and finite".into()));
    }
    let mut perm: Vec<f64> = a.to_vec();
    let m = perm.len();
    let term = |p: &[f64]| {
        let mut prefix = 0.0;
        let mut prod = 1.0;
        for &x in p {
            prefix += x;
            prod /= prefix;
        }
        prod
    };
    // Heap's algorithm
    let mut total = term(&perm);
    let mut c = vec![0usize; m];
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            total += term(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(total)
}

/// A detailed FCFS-ALIS state with server identities collapsed to their pool.
///
/// `perm[..idle_cut]` are busy servers in the arrival order of the customers
/// they serve, `perm[idle_cut..]` idle servers from most recently idle to
/// longest idle. `queues[j]` counts customers waiting behind the customer of
/// `perm[j]` that every later server skipped.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetailedState {
    pub perm: Vec<ServerKind>,
    pub idle_cut: usize,
    pub queues: Vec<u32>,
}

impl DetailedState {
    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn idle_s1(&self) -> usize {
        self.perm[self.idle_cut..].iter().filter(|&&s| s == ServerKind::S1).count()
    }

    pub fn idle_s2(&self) -> usize {
        self.perm.len() - self.idle_cut - self.idle_s1()
    }

    /// Number of `s2` entries after the last `s1` entry.
    pub fn k(&self) -> usize {
        self.perm.iter().rev().take_while(|&&s| s == ServerKind::S2).count()
    }

    pub fn waiting(&self) -> u64 {
        self.queues.iter().map(|&q| q as u64).sum()
    }

    /// Checks pool sizes and the structural properties: a queue may be
    /// non-empty only if every later server is an `s2`, except the queue behind
    /// the last position when all servers are busy.
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        let n = self.perm.len();
        let s1 = self.perm.iter().filter(|&&s| s == ServerKind::S1).count();
        if n != params.n() || s1 != params.n1 {
            return Err(Error::InvalidState(format!("expected {} s1 and {} s2 servers", params.n1, params.n2)));
        }
        if self.idle_cut > n || self.queues.len() != self.idle_cut {
            return Err(Error::InvalidState("one queue per busy position required".into()));
        }
        let tail_s2 = self.k();
        for (j, &q) in self.queues.iter().enumerate() {
            if q > 0 && j + 1 < n && j + 1 < n - tail_s2 {
                return Err(Error::InvalidState(format!("customers wait at position {} ahead of an s1 server", j + 1)));
            }
        }
        Ok(())
    }
}

/// Log of the unnormalized stationary probability of a detailed state.
///
/// Busy position `l` contributes `lambda_C^{q_l} / M_l^{q_l + 1}` with
/// `M_l` the summed service rate of the first `l` servers and `lambda_C`
/// the arrival rate of customers no later server can take; idle position `j`
/// contributes `1 / lambda_U` with `lambda_U` the arrival rate of customers
/// compatible with some server at or after `j`.
pub fn log_pi_state(params: &SystemParams, state: &DetailedState) -> Result<f64> {
    state.validate(params)?;
    let n = state.n();
    let (lambda, lambda1, lambda2) = (params.lambda(), params.lambda1, params.lambda2);
    let mut s1_after = vec![false; n + 1];
    for j in (0..n).rev() {
        s1_after[j] = s1_after[j + 1] || state.perm[j] == ServerKind::S1;
    }
    let mut total = 0.0;
    let mut m = 0.0;
    for l in 0..state.idle_cut {
        m += params.mu(state.perm[l]);
        let q = state.queues[l] as f64;
        let rate = if l + 1 == n {
            lambda
        } else if !s1_after[l + 1] {
            lambda2
        } else {
            0.0
        };
        if q > 0.0 {
            total += q * rate.ln();
        }
        total -= (q + 1.0) * m.ln();
    }
    for &flexible_after in &s1_after[state.idle_cut..n] {
        let rate = if flexible_after { lambda } else { lambda1 };
        total -= rate.ln();
    }
    Ok(total)
}
