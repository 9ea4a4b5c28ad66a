//! Browser bindings for the N-system toolkit.
//!
//! Each export takes plain numbers and returns a JSON string; the page in
//! `www/` parses it and draws on a canvas.

use nsystem::exact::{self, CellIndex};
use nsystem::fluid;
use nsystem::matching;
use nsystem::SystemParams;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Largest total size the heatmap accepts; keeps a table build well under a second.
pub const HEATMAP_MAX_N: usize = 400;
/// Largest matching run accepted from the page.
pub const MATCHING_MAX_STEPS: u64 = 5_000_000;

fn params(lambda1: f64, lambda2: f64, n1: u32, n2: u32, mu1: f64, mu2: f64) -> Result<SystemParams, String> {
    SystemParams::new(lambda1, lambda2, n1 as usize, n2 as usize, mu1, mu2).map_err(|e| e.to_string())
}

/// Fluid point, CLT parameters, the limiting K law and stability flags.
pub fn fluid_summary_json(lambda1: f64, lambda2: f64, n1: u32, n2: u32, mu1: f64, mu2: f64) -> Result<Value, String> {
    let p = params(lambda1, lambda2, n1, n2, mu1, mu2)?;
    let d = p.derive();
    let f = fluid::fluid_solve(&p).map_err(|e| e.to_string())?;
    let clt = fluid::clt_params(&p).ok();
    let k = fluid::k_geometric(d.alpha, f.beta).ok();
    Ok(json!({
        "derived": d,
        "stable": p.stability().stable,
        "pooled": d.alpha + f.beta > 1.0,
        "fluid": f,
        "clt": clt,
        "k_pmf": k.map(|g| g.pmf_vec(g.support_len(1e-4).min(60))),
    }))
}

/// Exact joint law of `(I1, I2)` (summed over `K`) as a row-major grid with
/// `n1 + 1` rows and `n2 + 1` columns, plus the moments and `K` marginal.
pub fn exact_heatmap_json(lambda1: f64, lambda2: f64, n1: u32, n2: u32, mu1: f64, mu2: f64) -> Result<Value, String> {
    let p = params(lambda1, lambda2, n1, n2, mu1, mu2)?;
    if p.n() > HEATMAP_MAX_N {
        return Err(format!("n = {} exceeds the page limit of {HEATMAP_MAX_N}", p.n()));
    }
    let table = exact::build_table(&p).map_err(|e| e.to_string())?;
    let (n1, n2) = (p.n1, p.n2);
    let mut grid = vec![0.0; (n1 + 1) * (n2 + 1)];
    for (CellIndex { i1, i2, .. }, prob) in table.support() {
        grid[i1 * (n2 + 1) + i2] += prob;
    }
    let m = exact::moments(&table);
    Ok(json!({
        "rows": n1 + 1,
        "cols": n2 + 1,
        "grid": grid,
        "moments": {
            "mean_i1": m.mean_i1,
            "var_i1": m.var_i1,
            "mean_i2": m.mean_i2,
            "var_i2": m.var_i2,
            "cov": m.cov,
            "p_i1_zero": m.p_i1_zero,
        },
        "k_pmf": m.k_pmf,
    }))
}

/// Empirical `K` law of the matching chain next to the geometric limit.
pub fn matching_pmf_json(alpha: f64, beta: f64, steps: u32, seed: u32) -> Result<Value, String> {
    let steps = u64::from(steps).min(MATCHING_MAX_STEPS);
    let r = matching::match_run(alpha, beta, steps, u64::from(seed)).map_err(|e| e.to_string())?;
    let g = fluid::k_geometric(alpha, beta).map_err(|e| e.to_string())?;
    let geometric = g.pmf_vec(r.pmf.len());
    Ok(json!({
        "steps": r.steps,
        "empirical": r.pmf,
        "geometric": geometric,
        "tv": g.tv_distance(&r.pmf),
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsValue> {
    v.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn fluid_summary(lambda1: f64, lambda2: f64, n1: u32, n2: u32, mu1: f64, mu2: f64) -> Result<String, JsValue> {
    to_js(fluid_summary_json(lambda1, lambda2, n1, n2, mu1, mu2))
}

#[wasm_bindgen]
pub fn exact_heatmap(lambda1: f64, lambda2: f64, n1: u32, n2: u32, mu1: f64, mu2: f64) -> Result<String, JsValue> {
    to_js(exact_heatmap_json(lambda1, lambda2, n1, n2, mu1, mu2))
}

#[wasm_bindgen]
pub fn matching_pmf(alpha: f64, beta: f64, steps: u32, seed: u32) -> Result<String, JsValue> {
    to_js(matching_pmf_json(alpha, beta, steps, seed))
}
