//! FCFS infinite bipartite matching on the N-graph.
//!
//! An i.i.d. customer sequence (`c1` with probability `alpha`) is matched
//! first-come first-served against an i.i.d. server sequence (`s1` with
//! probability `beta`). `K` is the number of unmatched `s2` servers ahead of
//! the first unmatched `s1`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ServerKind;

/// Unmatched prefix of the server sequence, revealed lazily.
#[derive(Debug, Clone)]
pub struct MatchState {
    pub server_window: VecDeque<ServerKind>,
    pub k_current: usize,
}

impl MatchState {
    /// Leading `s2` run of the window, recomputed from scratch.
    pub fn leading_s2(&self) -> usize {
        self.server_window.iter().take_while(|&&s| s == ServerKind::S2).count()
    }
}

#[derive(Debug, Clone)]
pub struct MatchChain {
    alpha: f64,
    beta: f64,
    state: MatchState,
    rng: ChaCha8Rng,
}

fn check_regime(alpha: f64, beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParams(format!("alpha = {alpha}, beta = {beta} must lie in [0, 1]")));
    }
    if alpha + beta <= 1.0 {
        return Err(Error::NotPooled { sum: alpha + beta });
    }
    Ok(())
}

impl MatchChain {
    pub fn new(alpha: f64, beta: f64, seed: u64) -> Result<Self> {
        check_regime(alpha, beta)?;
        let mut chain = Self {
            alpha,
            beta,
            state: MatchState { server_window: VecDeque::new(), k_current: 0 },
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        chain.refill();
        Ok(chain)
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.rng.set_stream(stream);
        self.state.server_window.clear();
        self.refill();
        self
    }

    pub fn state(&self) -> &MatchState {
        &self.state
    }

    /// Extends the window until it holds an `s1`, then updates `k_current`.
    fn refill(&mut self) {
        while !self.state.server_window.contains(&ServerKind::S1) {
            let s = if self.rng.gen::<f64>() < self.beta { ServerKind::S1 } else { ServerKind::S2 };
            self.state.server_window.push_back(s);
        }
        self.state.k_current = self.state.leading_s2();
    }

    /// Matches one customer and returns the new `K`.
    pub fn step(&mut self) -> usize {
        let w = &mut self.state.server_window;
        if self.rng.gen::<f64>() < self.alpha {
            w.pop_front();
        } else {
            let j = self.state.k_current;
            debug_assert_eq!(w[j], ServerKind::S1);
            w.remove(j);
        }
        self.refill();
        self.state.k_current
    }
}

/// Empirical law of `K` over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPmf {
    pub alpha: f64,
    pub beta: f64,
    pub steps: u64,
    pub counts: Vec<u64>,
    pub pmf: Vec<f64>,
}

impl MatchPmf {
    fn from_counts(alpha: f64, beta: f64, counts: Vec<u64>) -> Self {
        let steps: u64 = counts.iter().sum();
        let pmf = counts.iter().map(|&c| c as f64 / steps as f64).collect();
        Self { alpha, beta, steps, counts, pmf }
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }
}

fn run_chain(mut chain: MatchChain, alpha: f64, beta: f64, steps: u64) -> MatchPmf {
    let mut counts: Vec<u64> = Vec::new();
    for _ in 0..steps {
        let k = chain.step();
        if k >= counts.len() {
            counts.resize(k + 1, 0);
        }
        counts[k] += 1;
    }
    MatchPmf::from_counts(alpha, beta, counts)
}

/// Runs the chain for `steps` matches, recording `K` after each.
pub fn match_run(alpha: f64, beta: f64, steps: u64, seed: u64) -> Result<MatchPmf> {
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    Ok(run_chain(MatchChain::new(alpha, beta, seed)?, alpha, beta, steps))
}

/// Runs several `(alpha, beta)` settings, setting `i` on ChaCha8 stream `i`.
pub fn match_runs(settings: &[(f64, f64)], steps: u64, seed: u64) -> Result<Vec<MatchPmf>> {
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    let chains = settings
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| Ok((MatchChain::new(a, b, seed)?.with_stream(i as u64), a, b)))
        .collect::<Result<Vec<_>>>()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok(chains.into_par_iter().map(|(c, a, b)| run_chain(c, a, b, steps)).collect())
    }
    #[cfg(not(feature = "parallel"))]
    Ok(chains.into_iter().map(|(c, a, b)| run_chain(c, a, b, steps)).collect())
}

/// `K` after each of `steps` matches.
pub fn match_trace(alpha: f64, beta: f64, steps: u64, seed: u64) -> Result<Vec<usize>> {
    let mut chain = MatchChain::new(alpha, beta, seed)?;
    Ok((0..steps).map(|_| chain.step()).collect())
}
