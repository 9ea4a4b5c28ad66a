//! Truncated continuous-time Markov chain over detailed FCFS-ALIS states,
//! solved by a direct linear solve for small instances.
//!
//! The chain tracks server order, idle set and per-position queue lengths.
//! Customers queued behind a non-final position are necessarily `c2`.
//! Customers queued behind the final position while every server is busy have
//! never been inspected by any server; their types are kept unresolved and are
//! revealed (i.i.d. `c1` with probability `alpha`) only when an `s2` server
//! scans them. This keeps the state space polynomial in the truncation level.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{moments_from_cells, CellIndex, DetailedState, Moments};
use crate::model::{ServerKind, SystemParams};

/// Largest system the oracle accepts.
pub const MAX_SERVERS: usize = 4;
/// Largest truncation level the oracle accepts.
pub const MAX_QMAX: usize = 50;
const DENSE_LIMIT: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Item {
    Srv(ServerKind),
    C2,
    Unresolved,
}

fn to_timeline(s: &DetailedState) -> (Vec<Item>, Vec<ServerKind>) {
    let n = s.n();
    let all_busy = s.idle_cut == n;
    let mut items = Vec::with_capacity(s.idle_cut + s.waiting() as usize);
    for l in 0..s.idle_cut {
        items.push(Item::Srv(s.perm[l]));
        let fill = if all_busy && l + 1 == n { Item::Unresolved } else { Item::C2 };
        items.extend(std::iter::repeat_n(fill, s.queues[l] as usize));
    }
    (items, s.perm[s.idle_cut..].to_vec())
}

fn from_timeline(items: &[Item], idle: &[ServerKind]) -> DetailedState {
    let mut perm = Vec::with_capacity(items.len() + idle.len());
    let mut queues: Vec<u32> = Vec::new();
    for it in items {
        match it {
            Item::Srv(kind) => {
                perm.push(*kind);
                queues.push(0);
            }
            _ => *queues.last_mut().expect("customer ahead of every server") += 1,
        }
    }
    let idle_cut = perm.len();
    perm.extend_from_slice(idle);
    DetailedState { perm, idle_cut, queues }
}

/// The truncated generator: states plus off-diagonal rates per row.
#[derive(Debug, Clone)]
pub struct Generator {
    pub states: Vec<DetailedState>,
    /// `rows[i]` lists `(j, rate)` for `j != i`, merged per target.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// `diag[i] = -(sum of rows[i] rates)`, accumulated in row order.
    pub diag: Vec<f64>,
}

fn transitions(p: &SystemParams, s: &DetailedState, qmax: u64) -> Vec<(DetailedState, f64)> {
    let n = s.n();
    let alpha = p.lambda1 / p.lambda();
    let waiting = s.waiting();
    let (items, idle) = to_timeline(s);
    let mut out = Vec::new();

    if s.idle_cut < n {
        if p.lambda1 > 0.0 {
            let mut it = items.clone();
            let mut id = idle.clone();
            let kind = id.pop().expect("idle server");
            it.push(Item::Srv(kind));
            out.push((from_timeline(&it, &id), p.lambda1));
        }
        if p.lambda2 > 0.0 {
            let mut it = items.clone();
            let mut id = idle.clone();
            if let Some(j) = id.iter().rposition(|&k| k == ServerKind::S1) {
                id.remove(j);
                it.push(Item::Srv(ServerKind::S1));
                out.push((from_timeline(&it, &id), p.lambda2));
            } else if waiting < qmax {
                it.push(Item::C2);
                out.push((from_timeline(&it, &id), p.lambda2));
            }
        }
    } else if waiting < qmax {
        let mut it = items.clone();
        it.push(Item::Unresolved);
        out.push((from_timeline(&it, &idle), p.lambda()));
    }

    let srv_positions: Vec<usize> =
        items.iter().enumerate().filter(|(_, it)| matches!(it, Item::Srv(_))).map(|(i, _)| i).collect();
    for &pos in &srv_positions {
        let Item::Srv(kind) = items[pos] else { unreachable!() };
        let rate = p.mu(kind);
        let mut base = items.clone();
        base.remove(pos);
        match kind {
            ServerKind::S1 => {
                let mut id = idle.clone();
                match base[pos..].iter().position(|it| !matches!(it, Item::Srv(_))) {
                    Some(off) => base[pos + off] = Item::Srv(ServerKind::S1),
                    None => id.insert(0, ServerKind::S1),
                }
                out.push((from_timeline(&base, &id), rate));
            }
            ServerKind::S2 => {
                let unresolved: Vec<usize> = (pos..base.len()).filter(|&i| base[i] == Item::Unresolved).collect();
                let mut miss = 1.0;
                for (r, &at) in unresolved.iter().enumerate() {
                    let hit = miss * alpha;
                    if hit > 0.0 {
                        let mut it = base.clone();
                        for &before in &unresolved[..r] {
                            it[before] = Item::C2;
                        }
                        it[at] = Item::Srv(ServerKind::S2);
                        out.push((from_timeline(&it, &idle), rate * hit));
                    }
                    miss *= 1.0 - alpha;
                }
                if miss > 0.0 {
                    let mut it = base.clone();
                    for &at in &unresolved {
                        it[at] = Item::C2;
                    }
                    let mut id = idle.clone();
                    id.insert(0, ServerKind::S2);
                    out.push((from_timeline(&it, &id), rate * miss));
                }
            }
        }
    }
    out
}

/// Enumerates every state reachable from the empty system with total waiting
/// at most `qmax` and assembles the generator.
pub fn build_generator(params: &SystemParams, qmax: usize) -> Result<Generator> {
    params.validate()?;
    if params.n() > MAX_SERVERS || qmax > MAX_QMAX {
        return Err(Error::StateSpaceTooLarge(format!(
            "n = {} (max {MAX_SERVERS}), qmax = {qmax} (max {MAX_QMAX})",
            params.n()
        )));
    }
    let mut perm = vec![ServerKind::S1; params.n1];
    perm.extend(std::iter::repeat_n(ServerKind::S2, params.n2));
    let start = DetailedState { perm, idle_cut: 0, queues: Vec::new() };

    let mut index: HashMap<DetailedState, usize> = HashMap::new();
    let mut states = vec![start.clone()];
    index.insert(start, 0);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut frontier = VecDeque::from([0usize]);
    while let Some(i) = frontier.pop_front() {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for (next, rate) in transitions(params, &states[i], qmax as u64) {
            let j = match index.get(&next) {
                Some(&j) => j,
                None => {
                    let j = states.len();
                    index.insert(next.clone(), j);
                    states.push(next);
                    frontier.push_back(j);
                    j
                }
            };
            if j == i {
                continue;
            }
            match row.iter_mut().find(|(t, _)| *t == j) {
                Some(e) => e.1 += rate,
                None => row.push((j, rate)),
            }
        }
        if rows.len() <= i {
            rows.resize(i + 1, Vec::new());
        }
        rows[i] = row;
    }
    rows.resize(states.len(), Vec::new());
    let diag = rows.iter().map(|r| -r.iter().fold(0.0, |acc, &(_, q)| acc + q)).collect();
    Ok(Generator { states, rows, diag })
}

impl Generator {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Solves `pi Q = 0`, `sum pi = 1`.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        if self.len() <= DENSE_LIMIT {
            self.solve_dense()
        } else {
            self.solve_gauss_seidel()
        }
    }

    fn solve_dense(&self) -> Result<Vec<f64>> {
        let m = self.len();
        let mut a = DMatrix::<f64>::zeros(m, m);
        for (i, row) in self.rows.iter().enumerate() {
            a[(i, i)] = self.diag[i];
            for &(j, q) in row {
                a[(j, i)] += q;
            }
        }
        for c in 0..m {
            a[(m - 1, c)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(m);
        b[m - 1] = 1.0;
        let x = a.lu().solve(&b).ok_or_else(|| Error::InvalidState("singular generator".into()))?;
        Ok(x.iter().copied().collect())
    }

    fn solve_gauss_seidel(&self) -> Result<Vec<f64>> {
        let m = self.len();
        let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, q) in row {
                incoming[j].push((i, q));
            }
        }
        let mut pi = vec![1.0 / m as f64; m];
        for _ in 0..200_000 {
            let mut change: f64 = 0.0;
            for j in 0..m {
                let inflow: f64 = incoming[j].iter().map(|&(i, q)| pi[i] * q).sum();
                let new = inflow / -self.diag[j];
                change = change.max((new - pi[j]).abs() / new.max(1e-300));
                pi[j] = new;
            }
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|x| *x /= total);
            if change < 1e-13 {
                return Ok(pi);
            }
        }
        Err(Error::InvalidState("Gauss-Seidel did not converge".into()))
    }
}

/// Marginals of the truncated chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CtmcMarginals {
    pub num_states: usize,
    /// Stationary mass of states whose total waiting equals the truncation level.
    pub truncation_mass: f64,
    pub moments: Moments,
    pub cells: Vec<(CellIndex, f64)>,
}

/// Stationary distribution over the enumerated detailed states.
pub fn ctmc_stationary(params: &SystemParams, qmax: usize) -> Result<(Vec<DetailedState>, Vec<f64>)> {
    let g = build_generator(params, qmax)?;
    let pi = g.stationary()?;
    Ok((g.states, pi))
}

/// Solves the truncated chain and aggregates it to `(K, I1, I2)` cells.
pub fn ctmc_oracle(params: &SystemParams, qmax: usize) -> Result<CtmcMarginals> {
    let (states, pi) = ctmc_stationary(params, qmax)?;
    let (n1, n2) = (params.n1, params.n2);
    let mut cells: HashMap<CellIndex, f64> = HashMap::new();
    let mut truncation_mass = 0.0;
    for (s, &p) in states.iter().zip(&pi) {
        *cells.entry(CellIndex::new(s.k(), s.idle_s1(), s.idle_s2())).or_default() += p;
        if s.waiting() == qmax as u64 {
            truncation_mass += p;
        }
    }
    let mut cells: Vec<(CellIndex, f64)> = cells.into_iter().collect();
    cells.sort_by_key(|(c, _)| (c.k, c.i1, c.i2));
    let moments = moments_from_cells(n1, n2, cells.iter().copied());
    Ok(CtmcMarginals { num_states: states.len(), truncation_mass, moments, cells })
}
