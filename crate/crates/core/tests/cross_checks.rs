use std::collections::HashMap;

use nsystem::exact::{self, CellIndex};
use nsystem::fluid;
use nsystem::matching::{match_runs, match_trace};
use nsystem::reference::benchmark;
use nsystem::simulate::{ctmc_oracle, simulate, SimConfig};
use nsystem::SystemParams;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn matching_tv_for_all_settings() {
    let settings = [(0.8, 0.5), (0.7, 0.6), (0.9, 0.3)];
    for r in match_runs(&settings, 1_000_000, 17).unwrap() {
        let g = fluid::k_geometric(r.alpha, r.beta).unwrap();
        let tv = g.tv_distance(&r.pmf);
        assert!(tv <= 0.01, "alpha {} beta {}: tv {tv}", r.alpha, r.beta);
    }
}

/// Given the current K, the next K should not depend on the previous one.
#[test]
fn matching_chain_is_markov() {
    let trace = match_trace(0.8, 0.5, 600_000, 23).unwrap();
    let bucket = |k: usize| k.min(3);
    // (current, previous bucket, next bucket) -> count
    let mut counts: HashMap<(usize, usize, usize), f64> = HashMap::new();
    for w in trace.windows(3).filter(|w| w[1] <= 2) {
        *counts.entry((w[1], bucket(w[0]), bucket(w[2]))).or_default() += 1.0;
    }
    for cur in 0..=2 {
        let cell = |a: usize, b: usize| counts.get(&(cur, a, b)).copied().unwrap_or(0.0);
        let rows: Vec<usize> = (0..4).filter(|&a| (0..4).map(|b| cell(a, b)).sum::<f64>() > 200.0).collect();
        let cols: Vec<usize> = (0..4).filter(|&b| rows.iter().map(|&a| cell(a, b)).sum::<f64>() > 200.0).collect();
        if rows.len() < 2 || cols.len() < 2 {
            continue;
        }
        let total: f64 = rows.iter().flat_map(|&a| cols.iter().map(move |&b| (a, b))).map(|(a, b)| cell(a, b)).sum();
        let mut stat = 0.0;
        for &a in &rows {
            let ra: f64 = cols.iter().map(|&b| cell(a, b)).sum();
            for &b in &cols {
                let cb: f64 = rows.iter().map(|&x| cell(x, b)).sum();
                let e = ra * cb / total;
                stat += (cell(a, b) - e).powi(2) / e;
            }
        }
        let dof = ((rows.len() - 1) * (cols.len() - 1)) as f64;
        let p_value = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
        assert!(p_value > 1e-4, "k = {cur}: chi2 = {stat}, p = {p_value}");
    }
}

#[test]
fn ctmc_truncation_sweep_converges() {
    let p = SystemParams::new(0.4, 0.2, 1, 1, 1.0, 1.0).unwrap();
    let runs: Vec<_> = [10, 20, 40].iter().map(|&q| ctmc_oracle(&p, q).unwrap()).collect();
    assert!(runs[0].truncation_mass > runs[1].truncation_mass);
    assert!(runs[1].truncation_mass > runs[2].truncation_mass);
    let rel = (runs[2].moments.mean_i1 - runs[1].moments.mean_i1).abs() / runs[2].moments.mean_i1;
    assert!(rel <= 1e-8, "{rel}");
    let first = (runs[1].moments.mean_i1 - runs[0].moments.mean_i1).abs();
    let second = (runs[2].moments.mean_i1 - runs[1].moments.mean_i1).abs();
    assert!(second <= first);
}

#[test]
fn ctmc_matches_table_on_four_servers() {
    let p = SystemParams::new(1.4, 0.6, 2, 2, 1.0, 0.9).unwrap();
    let c = ctmc_oracle(&p, 30).unwrap();
    let t = exact::build_table(&p).unwrap();
    for &(cell, prob) in &c.cells {
        assert!((prob - t.prob(cell)).abs() < 1e-6, "{cell:?}: {prob} vs {}", t.prob(cell));
    }
}

#[test]
fn table_mode_sits_at_fluid_point() {
    let p = benchmark(0.8);
    let t = exact::build_table(&p).unwrap();
    let f = fluid::fluid_solve(&p).unwrap();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for i1 in 0..=p.n1 {
        for i2 in 0..=p.n2 {
            let w = t.log_weight(CellIndex::new(0, i1, i2));
            if w > best.0 {
                best = (w, i1, i2);
            }
        }
    }
    assert!((best.1 as f64 - f.m1).abs() <= 2.0 && (best.2 as f64 - f.m2).abs() <= 2.0, "{best:?}");
}

#[test]
fn simulator_matches_fluid_split_on_benchmark() {
    let p = benchmark(0.8);
    let cfg = SimConfig { horizon: 4000.0, replications: 2, seed: 3, ..Default::default() };
    let s = simulate(&p, &cfg).unwrap();
    let beta = fluid::fluid_solve(&p).unwrap().beta;
    assert!((s.beta_hat - beta).abs() <= 3.0 * s.std_err.beta + 2e-3, "{} vs {beta}", s.beta_hat);
    assert!((s.mean_i1 - 49.8383).abs() <= 3.0 * s.std_err.mean_i1, "{} +- {}", s.mean_i1, s.std_err.mean_i1);
    assert!((s.throughput - p.lambda()).abs() <= 3.0 * s.std_err.throughput);
    assert!((s.r_hat[0][0] + s.r_hat[0][1] - 0.8).abs() <= 3.0 * (s.std_err.r[0][0] + s.std_err.r[0][1]));
    assert_eq!(s.r_hat[1][1], 0.0);
}

#[test]
fn simulator_invariants_over_a_million_events() {
    let p = SystemParams::new(6.0, 3.5, 6, 6, 1.0, 0.8).unwrap();
    let cfg = SimConfig { horizon: 6e4, replications: 1, check_invariants: true, ..Default::default() };
    let s = simulate(&p, &cfg).unwrap();
    assert!(s.events >= 1_000_000, "{}", s.events);
}

#[test]
fn scaled_family_idleness_share_tends_to_fluid() {
    let shape = nsystem::Shape { alpha: 0.6, theta: 0.5, rho: 0.5, mu1: 1.0, mu2: 1.0 };
    let gaps: Vec<f64> = [20usize, 80, 320]
        .iter()
        .map(|&n| {
            let p = shape.scale(n).unwrap();
            let m = exact::moments(&exact::build_table(&p).unwrap());
            let f = fluid::fluid_solve(&p).unwrap();
            (m.mean_i1 - f.m1).abs() / n as f64
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}
