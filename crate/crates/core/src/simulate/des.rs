//! Discrete-event simulation of the N-system under FCFS-ALIS.
//!
//! Events are drawn with the total-rate method: the next epoch is exponential
//! with the summed rate, and the category (arrival `c1`, arrival `c2`,
//! completion at some `s1`, completion at some `s2`) is chosen in proportion
//! to its rate. The completing server within a pool is uniform.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CustomerKind, ServerKind, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Simulated time per replication, warmup included.
    pub horizon: f64,
    /// Leading fraction of each replication excluded from statistics.
    pub warmup_fraction: f64,
    pub seed: u64,
    pub replications: usize,
    /// Batches per replication for batch-means standard errors.
    pub batch_count: usize,
    /// Check the waiting/idle consistency properties after every event.
    pub check_invariants: bool,
    /// Permit parameters with `rho >= 1` or `delta >= 1`.
    pub allow_unstable: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 1e4,
            warmup_fraction: 0.2,
            seed: 0,
            replications: 4,
            batch_count: 20,
            check_invariants: false,
            allow_unstable: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(0.0..=0.5).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig("warmup_fraction must lie in [0, 0.5]".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("at least one replication required".into()));
        }
        if self.batch_count < 10 {
            return Err(Error::InvalidConfig("batch_count must be at least 10".into()));
        }
        Ok(())
    }
}

/// Per-estimate standard errors or confidence half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimErrors {
    pub mean_i1: f64,
    pub mean_i2: f64,
    pub var_i1: f64,
    pub var_i2: f64,
    pub k_pmf: Vec<f64>,
    /// Indexed `[customer][server]`.
    pub r: [[f64; 2]; 2],
    pub beta: f64,
    pub throughput: f64,
}

impl SimErrors {
    fn scaled(&self, z: f64) -> Self {
        let mut r = self.r;
        r.iter_mut().flatten().for_each(|x| *x *= z);
        Self {
            mean_i1: self.mean_i1 * z,
            mean_i2: self.mean_i2 * z,
            var_i1: self.var_i1 * z,
            var_i2: self.var_i2 * z,
            k_pmf: self.k_pmf.iter().map(|x| x * z).collect(),
            r,
            beta: self.beta * z,
            throughput: self.throughput * z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub mean_i1: f64,
    pub mean_i2: f64,
    pub var_i1: f64,
    pub var_i2: f64,
    pub k_pmf_hat: Vec<f64>,
    /// Fractions of completed services by `[customer][server]`; `r_hat[1][1]` is 0.
    pub r_hat: [[f64; 2]; 2],
    /// Fraction of services performed by `s1` servers.
    pub beta_hat: f64,
    /// Completions per unit time.
    pub throughput: f64,
    pub std_err: SimErrors,
    /// 95% normal half-widths, `1.96 * std_err`.
    pub ci_halfwidth: SimErrors,
    pub events: u64,
    pub batches: usize,
    /// Set when the parameters are not stable and the run was forced.
    pub unstable: bool,
}

const Z95: f64 = 1.96;

/// What happened at one event epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival(CustomerKind),
    Completion(ServerKind),
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::Arrival(CustomerKind::C1) => "arrival_c1",
            EventKind::Arrival(CustomerKind::C2) => "arrival_c2",
            EventKind::Completion(ServerKind::S1) => "completion_s1",
            EventKind::Completion(ServerKind::S2) => "completion_s2",
        }
    }
}

/// Live state of one replication.
#[derive(Debug, Clone)]
pub struct LiveState {
    /// Waiting customers in arrival order, with their arrival sequence numbers.
    pub waiting: VecDeque<(CustomerKind, u64)>,
    /// Idle servers, longest idle at the front.
    pub idle: VecDeque<ServerKind>,
    busy_s1: Vec<(u64, CustomerKind)>,
    busy_s2: Vec<u64>,
    order_s1: BTreeSet<u64>,
    order_s2: BTreeSet<u64>,
    idle_s1: usize,
    waiting_c1: usize,
    next_seq: u64,
    pub clock: f64,
}

impl LiveState {
    /// Empty system, all servers idle.
    pub fn empty(p: &SystemParams) -> Self {
        let mut idle = VecDeque::with_capacity(p.n());
        idle.extend(std::iter::repeat_n(ServerKind::S1, p.n1));
        idle.extend(std::iter::repeat_n(ServerKind::S2, p.n2));
        Self {
            waiting: VecDeque::new(),
            idle,
            busy_s1: Vec::with_capacity(p.n1),
            busy_s2: Vec::with_capacity(p.n2),
            order_s1: BTreeSet::new(),
            order_s2: BTreeSet::new(),
            idle_s1: p.n1,
            waiting_c1: 0,
            next_seq: 0,
            clock: 0.0,
        }
    }

    pub fn idle_counts(&self) -> (usize, usize) {
        (self.idle_s1, self.idle.len() - self.idle_s1)
    }

    pub fn busy_counts(&self) -> (usize, usize) {
        (self.busy_s1.len(), self.busy_s2.len())
    }

    /// Number of `s2` servers after the last `s1` in the server sequence:
    /// busy servers by arrival of their customer, then idle servers from most
    /// recently idle to longest idle.
    pub fn k(&self) -> usize {
        if self.idle_s1 > 0 {
            return self.idle.iter().take_while(|&&s| s == ServerKind::S2).count();
        }
        let later_busy = match self.order_s1.last() {
            Some(&last) => self.order_s2.range(last + 1..).count(),
            None => self.busy_s2.len(),
        };
        self.idle.len() + later_busy
    }

    fn start(&mut self, server: ServerKind, customer: CustomerKind, seq: u64) {
        match server {
            ServerKind::S1 => {
                self.busy_s1.push((seq, customer));
                self.order_s1.insert(seq);
            }
            ServerKind::S2 => {
                debug_assert_eq!(customer, CustomerKind::C1);
                self.busy_s2.push(seq);
                self.order_s2.insert(seq);
            }
        }
    }

    fn arrive(&mut self, customer: CustomerKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let slot = match customer {
            CustomerKind::C1 => (!self.idle.is_empty()).then_some(0),
            CustomerKind::C2 if self.idle_s1 > 0 => self.idle.iter().position(|&s| s == ServerKind::S1),
            CustomerKind::C2 => None,
        };
        match slot {
            Some(j) => {
                let server = self.idle.remove(j).expect("idle slot");
                if server == ServerKind::S1 {
                    self.idle_s1 -= 1;
                }
                self.start(server, customer, seq);
            }
            None => {
                if customer == CustomerKind::C1 {
                    self.waiting_c1 += 1;
                }
                self.waiting.push_back((customer, seq));
            }
        }
    }

    /// Completes a uniformly chosen busy server of `kind`; returns the type of
    /// the customer whose service ended.
    fn complete<R: Rng>(&mut self, kind: ServerKind, rng: &mut R) -> CustomerKind {
        let done = match kind {
            ServerKind::S1 => {
                let (seq, c) = self.busy_s1.swap_remove(rng.gen_range(0..self.busy_s1.len()));
                self.order_s1.remove(&seq);
                c
            }
            ServerKind::S2 => {
                let seq = self.busy_s2.swap_remove(rng.gen_range(0..self.busy_s2.len()));
                self.order_s2.remove(&seq);
                CustomerKind::C1
            }
        };
        let next = match kind {
            ServerKind::S1 => self.waiting.pop_front(),
            ServerKind::S2 if self.waiting_c1 > 0 => {
                let j = self.waiting.iter().position(|&(c, _)| c == CustomerKind::C1).expect("waiting c1");
                self.waiting.remove(j)
            }
            ServerKind::S2 => None,
        };
        match next {
            Some((c, seq)) => {
                if c == CustomerKind::C1 {
                    self.waiting_c1 -= 1;
                }
                self.start(kind, c, seq);
            }
            None => {
                if kind == ServerKind::S1 {
                    self.idle_s1 += 1;
                }
                self.idle.push_back(kind);
            }
        }
        done
    }

    /// Checks that no customer waits while a compatible server idles.
    pub fn check(&self) -> Result<()> {
        if self.idle_s1 > 0 && !self.waiting.is_empty() {
            return Err(Error::InvalidState(format!("{} waiting while an s1 idles", self.waiting.len())));
        }
        if !self.idle.is_empty() && self.waiting_c1 > 0 {
            return Err(Error::InvalidState("c1 waiting while a server idles".into()));
        }
        let recount = self.waiting.iter().filter(|(c, _)| *c == CustomerKind::C1).count();
        if recount != self.waiting_c1 {
            return Err(Error::InvalidState("waiting c1 count out of sync".into()));
        }
        Ok(())
    }
}

/// One replication's event loop.
struct Engine<'a> {
    p: &'a SystemParams,
    state: LiveState,
    rng: ChaCha8Rng,
}

impl<'a> Engine<'a> {
    fn new(p: &'a SystemParams, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { p, state: LiveState::empty(p), rng }
    }

    /// Time to the next event, or `None` when nothing can happen.
    fn next_delay(&mut self) -> Option<f64> {
        let total = self.total_rate();
        if total <= 0.0 {
            return None;
        }
        let e: f64 = self.rng.sample(Exp1);
        Some(e / total)
    }

    fn total_rate(&self) -> f64 {
        let (b1, b2) = self.state.busy_counts();
        self.p.lambda1 + self.p.lambda2 + b1 as f64 * self.p.mu1 + b2 as f64 * self.p.mu2
    }

    fn fire(&mut self) -> (EventKind, Option<CustomerKind>) {
        let (b1, b2) = self.state.busy_counts();
        let rates = [self.p.lambda1, self.p.lambda2, b1 as f64 * self.p.mu1, b2 as f64 * self.p.mu2];
        let total: f64 = rates.iter().sum();
        let mut u = self.rng.gen::<f64>() * total;
        let mut cat = 3;
        for (i, &r) in rates.iter().enumerate() {
            if u < r {
                cat = i;
                break;
            }
            u -= r;
        }
        while rates[cat] <= 0.0 {
            cat -= 1;
        }
        match cat {
            0 => {
                self.state.arrive(CustomerKind::C1);
                (EventKind::Arrival(CustomerKind::C1), None)
            }
            1 => {
                self.state.arrive(CustomerKind::C2);
                (EventKind::Arrival(CustomerKind::C2), None)
            }
            2 => {
                let c = self.state.complete(ServerKind::S1, &mut self.rng);
                (EventKind::Completion(ServerKind::S1), Some(c))
            }
            _ => {
                let c = self.state.complete(ServerKind::S2, &mut self.rng);
                (EventKind::Completion(ServerKind::S2), Some(c))
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Batch {
    time: f64,
    i1: f64,
    i2: f64,
    i1_sq: f64,
    i2_sq: f64,
    k: Vec<f64>,
    services: [[u64; 2]; 2],
}

impl Batch {
    fn new(n2: usize) -> Self {
        Self { time: 0.0, i1: 0.0, i2: 0.0, i1_sq: 0.0, i2_sq: 0.0, k: vec![0.0; n2 + 1], services: [[0; 2]; 2] }
    }

    fn completions(&self) -> u64 {
        self.services.iter().flatten().sum()
    }
}

struct Replication {
    batches: Vec<Batch>,
    events: u64,
}

fn run_replication(p: &SystemParams, cfg: &SimConfig, rep: usize) -> Result<Replication> {
    let mut eng = Engine::new(p, cfg.seed, rep as u64);
    let warm = cfg.horizon * cfg.warmup_fraction;
    let span = (cfg.horizon - warm) / cfg.batch_count as f64;
    let mut batches = vec![Batch::new(p.n2); cfg.batch_count];
    let batch_of = |t: f64| (((t - warm) / span) as usize).min(cfg.batch_count - 1);
    let mut events = 0u64;
    loop {
        let t = eng.state.clock;
        let delay = eng.next_delay().unwrap_or(f64::INFINITY);
        let until = (t + delay).min(cfg.horizon);
        let mut a = t.max(warm);
        if until > a {
            let (i1, i2) = eng.state.idle_counts();
            let k = eng.state.k();
            let (i1, i2) = (i1 as f64, i2 as f64);
            while a < until {
                let b = batch_of(a);
                let end = if b + 1 == cfg.batch_count { until } else { until.min(warm + (b + 1) as f64 * span) };
                let dt = end - a;
                let acc = &mut batches[b];
                acc.time += dt;
                acc.i1 += i1 * dt;
                acc.i2 += i2 * dt;
                acc.i1_sq += i1 * i1 * dt;
                acc.i2_sq += i2 * i2 * dt;
                acc.k[k] += dt;
                if end <= a {
                    break;
                }
                a = end;
            }
        }
        if t + delay >= cfg.horizon {
            break;
        }
        eng.state.clock = t + delay;
        let (ev, served) = eng.fire();
        events += 1;
        if let (EventKind::Completion(s), Some(c)) = (ev, served) {
            if eng.state.clock >= warm {
                batches[batch_of(eng.state.clock)].services[c.index()][s.index()] += 1;
            }
        }
        if cfg.check_invariants {
            eng.state.check()?;
        }
    }
    Ok(Replication { batches, events })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn se(xs: &[f64]) -> f64 {
    mean_se(xs).1
}

fn summarize(p: &SystemParams, reps: Vec<Replication>, unstable: bool) -> SimStats {
    let events = reps.iter().map(|r| r.events).sum();
    let all: Vec<Batch> = reps.into_iter().flat_map(|r| r.batches).collect();
    let per = |f: &dyn Fn(&Batch) -> f64| -> Vec<f64> { all.iter().map(f).collect() };

    let m1 = per(&|b| b.i1 / b.time);
    let m2 = per(&|b| b.i2 / b.time);
    let v1 = per(&|b| b.i1_sq / b.time - (b.i1 / b.time).powi(2));
    let v2 = per(&|b| b.i2_sq / b.time - (b.i2 / b.time).powi(2));
    let total_time: f64 = all.iter().map(|b| b.time).sum();
    let pooled = |f: &dyn Fn(&Batch) -> f64| all.iter().map(f).sum::<f64>() / total_time;
    let mean_i1 = pooled(&|b| b.i1);
    let mean_i2 = pooled(&|b| b.i2);
    let var_i1 = pooled(&|b| b.i1_sq) - mean_i1 * mean_i1;
    let var_i2 = pooled(&|b| b.i2_sq) - mean_i2 * mean_i2;

    let k_pmf_hat: Vec<f64> = (0..=p.n2).map(|k| pooled(&|b| b.k[k])).collect();
    let k_se: Vec<f64> = (0..=p.n2).map(|k| se(&per(&|b| b.k[k] / b.time))).collect();

    let mut counts = [[0u64; 2]; 2];
    for b in &all {
        for (row, add) in counts.iter_mut().zip(&b.services) {
            for (x, y) in row.iter_mut().zip(add) {
                *x += y;
            }
        }
    }
    let completed: u64 = counts.iter().flatten().sum();
    let frac = |x: u64, tot: u64| if tot == 0 { 0.0 } else { x as f64 / tot as f64 };
    let mut r_hat = [[0.0; 2]; 2];
    let mut r_se = [[0.0; 2]; 2];
    for c in 0..2 {
        for s in 0..2 {
            r_hat[c][s] = frac(counts[c][s], completed);
            r_se[c][s] = se(&per(&|b| frac(b.services[c][s], b.completions())));
        }
    }
    let beta_hat = r_hat[0][0] + r_hat[1][0];
    let beta_se = se(&per(&|b| frac(b.services[0][0] + b.services[1][0], b.completions())));
    let throughput = completed as f64 / total_time;
    let tp_se = se(&per(&|b| b.completions() as f64 / b.time));

    let std_err = SimErrors {
        mean_i1: se(&m1),
        mean_i2: se(&m2),
        var_i1: se(&v1),
        var_i2: se(&v2),
        k_pmf: k_se,
        r: r_se,
        beta: beta_se,
        throughput: tp_se,
    };
    SimStats {
        mean_i1,
        mean_i2,
        var_i1,
        var_i2,
        k_pmf_hat,
        r_hat,
        beta_hat,
        throughput,
        ci_halfwidth: std_err.scaled(Z95),
        std_err,
        events,
        batches: all.len(),
        unstable,
    }
}

/// Runs `config.replications` independent replications and pools their batches.
///
/// Replication `r` uses the ChaCha8 stream `r` of the master seed, so results
/// are bit-identical for a fixed configuration regardless of thread count.
pub fn simulate(params: &SystemParams, config: &SimConfig) -> Result<SimStats> {
    params.validate()?;
    config.validate()?;
    let unstable = !params.stability().stable;
    if unstable && !config.allow_unstable {
        params.require_stable()?;
    }
    #[cfg(feature = "parallel")]
    let reps: Vec<Result<Replication>> = {
        use rayon::prelude::*;
        (0..config.replications).into_par_iter().map(|r| run_replication(params, config, r)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let reps: Vec<Result<Replication>> = (0..config.replications).map(|r| run_replication(params, config, r)).collect();
    let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(params, reps, unstable))
}

/// Writes the first `max_events` events of replication 0 as CSV with columns
/// `clock,event,i1,i2,k` (state after the event).
pub fn write_trace<W: Write>(params: &SystemParams, config: &SimConfig, max_events: usize, mut w: W) -> Result<()> {
    params.validate()?;
    config.validate()?;
    let io = |e: std::io::Error| Error::InvalidConfig(format!("trace output: {e}"));
    writeln!(w, "clock,event,i1,i2,k").map_err(io)?;
    let mut eng = Engine::new(params, config.seed, 0);
    for _ in 0..max_events {
        let Some(delay) = eng.next_delay() else { break };
        if eng.state.clock + delay >= config.horizon {
            break;
        }
        eng.state.clock += delay;
        let (ev, _) = eng.fire();
        let (i1, i2) = eng.state.idle_counts();
        writeln!(w, "{},{},{},{},{}", eng.state.clock, ev.label(), i1, i2, eng.state.k()).map_err(io)?;
    }
    Ok(())
}
