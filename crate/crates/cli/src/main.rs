use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nsystem::exact;
use nsystem::fluid;
use nsystem::matching;
use nsystem::reference::{benchmark, APPROX_ROWS, EXACT_ROWS, THETA_STAR_ALPHA_06};
use nsystem::simulate::{self, des::write_trace, SimConfig};
use nsystem::{Shape, SystemParams};
use serde::Serialize;
use serde_json::json;

const TABLE1_TOL: f64 = 5e-3;
const TABLE2_TOL: f64 = 1e-2;
const THETA_TOL: f64 = 5e-4;
const ORACLE_TOL: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "nsystem", version, about = "N-system under FCFS-ALIS: exact, fluid, simulation and matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
struct ParamArgs {
    /// JSON file with lambda1, lambda2, n1, n2, mu1, mu2.
    #[arg(long, conflicts_with_all = ["lambda1", "lambda2", "n1", "n2", "mu1", "mu2"])]
    params: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    mu1: f64,
    #[arg(long, default_value_t = 1.0)]
    mu2: f64,
}

impl ParamArgs {
    fn resolve(&self) -> Result<SystemParams> {
        if let Some(path) = &self.params {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return Ok(SystemParams::from_json(&text)?);
        }
        let (Some(lambda1), Some(lambda2), Some(n1), Some(n2)) = (self.lambda1, self.lambda2, self.n1, self.n2) else {
            bail!("give --params <file.json> or all of --lambda1 --lambda2 --n1 --n2");
        };
        Ok(SystemParams::new(lambda1, lambda2, n1, n2, self.mu1, self.mu2)?)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fluid solution, CLT parameters and the limiting K law.
    Fluid(ParamArgs),
    /// Exact stationary moments; `--format csv` writes the full (k, i1, i2) table.
    Exact {
        #[command(flatten)]
        params: ParamArgs,
        /// Cross-check against the truncated CTMC (tiny systems only).
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 40)]
        qmax: usize,
    },
    /// Discrete-event simulation.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 1e4)]
        horizon: f64,
        #[arg(long, default_value_t = 4)]
        replications: usize,
        #[arg(long, default_value_t = 20)]
        batches: usize,
        #[arg(long, default_value_t = 0.2)]
        warmup: f64,
        #[arg(long)]
        allow_unstable: bool,
        #[arg(long)]
        check_invariants: bool,
        /// Event-trace CSV of the first replication.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        trace_events: usize,
    },
    /// FCFS infinite-matching chain.
    Matching {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1_000_000)]
        steps: u64,
        /// Per-step K trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Recompute a benchmark table; exits non-zero on a tolerance breach.
    Reproduce {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        table: u8,
    },
    /// Exact moments across a scaled family.
    Sweep {
        /// Comma-separated total sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        mu1: f64,
        #[arg(long, default_value_t = 1.0)]
        mu2: f64,
    },
}

struct Output {
    body: String,
    ok: bool,
}

fn csv_table(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn run_fluid(p: &SystemParams, format: Format) -> Result<Output> {
    let f = fluid::fluid_solve(p)?;
    let clt = fluid::clt_params(p).ok();
    let d = p.derive();
    let k = fluid::k_geometric(d.alpha, f.beta).ok();
    let body = match format {
        Format::Json => json(&json!({
            "params": p,
            "derived": d,
            "fluid": f,
            "clt": clt,
            "k_geometric": k.map(|g| json!({ "ratio": g.ratio, "success": g.success(), "mean": g.mean() })),
        }))?,
        Format::Csv => {
            let mut rows = vec![
                format!("T,{}", f.t),
                format!("beta,{}", f.beta),
                format!("m1,{}", f.m1),
                format!("m2,{}", f.m2),
                format!("f1,{}", f.f1),
                format!("f2,{}", f.f2),
            ];
            if let Some(c) = clt {
                rows.extend([
                    format!("sigma1,{}", c.sigma1),
                    format!("sigma2,{}", c.sigma2),
                    format!("corr,{}", c.corr),
                ]);
            }
            if let Some(g) = k {
                rows.push(format!("k_ratio,{}", g.ratio));
            }
            csv_table("quantity,value", rows)
        }
    };
    Ok(Output { body, ok: true })
}

fn run_exact(p: &SystemParams, oracle: bool, qmax: usize, format: Format) -> Result<Output> {
    let table = exact::build_table(p)?;
    let m = exact::moments(&table);
    let mut ok = true;
    let check = if oracle {
        let c = simulate::ctmc_oracle(p, qmax)?;
        let cell_gap = c.cells.iter().map(|&(cell, q)| (q - table.prob(cell)).abs()).fold(0.0, f64::max);
        let deltas = json!({
            "mean_i1": c.moments.mean_i1 - m.mean_i1,
            "var_i1": c.moments.var_i1 - m.var_i1,
            "mean_i2": c.moments.mean_i2 - m.mean_i2,
            "var_i2": c.moments.var_i2 - m.var_i2,
            "p_i1_zero": c.moments.p_i1_zero - m.p_i1_zero,
            "max_cell": cell_gap,
        });
        let worst = deltas.as_object().unwrap().values().filter_map(|v| v.as_f64()).map(f64::abs).fold(0.0, f64::max);
        ok = worst <= ORACLE_TOL;
        eprintln!("oracle: {} states, max |delta| = {worst:.3e} ({})", c.num_states, if ok { "ok" } else { "BREACH" });
        Some(
            json!({ "states": c.num_states, "truncation_mass": c.truncation_mass, "deltas": deltas, "max_abs_delta": worst }),
        )
    } else {
        None
    };
    let body = match format {
        Format::Json => json(&json!({ "params": p, "moments": m, "oracle": check }))?,
        Format::Csv => {
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            String::from_utf8(buf)?
        }
    };
    Ok(Output { body, ok })
}

fn run_reproduce(table: u8, format: Format) -> Result<Output> {
    let mut rows: Vec<(f64, &str, f64, f64, f64)> = Vec::new();
    let tol = if table == 1 { TABLE1_TOL } else { TABLE2_TOL };
    let mut ok = true;
    if table == 1 {
        for r in EXACT_ROWS {
            let m = exact::moments(&exact::build_table(&benchmark(r.alpha))?);
            for (name, got, want) in [
                ("mean_i1", m.mean_i1, r.mean_i1),
                ("var_i1", m.var_i1, r.var_i1),
                ("mean_i2", m.mean_i2, r.mean_i2),
                ("var_i2", m.var_i2, r.var_i2),
            ] {
                rows.push((r.alpha, name, got, want, tol));
            }
        }
    } else {
        for r in APPROX_ROWS {
            let it = fluid::improved_theta(&benchmark(r.alpha))?;
            rows.push((r.alpha, "e_i1_approx", it.e_i1_approx, r.e_i1_approx, tol));
            if r.alpha == 0.6 {
                rows.push((r.alpha, "theta_star", it.theta_star, THETA_STAR_ALPHA_06, THETA_TOL));
            }
        }
    }
    let mut max_delta: f64 = 0.0;
    for &(_, _, got, want, t) in &rows {
        let d = (got - want).abs();
        max_delta = max_delta.max(d);
        ok &= d <= t;
    }
    eprintln!(
        "table {table}: {} cells, max |delta| = {max_delta:.3e} ({})",
        rows.len(),
        if ok { "ok" } else { "BREACH" }
    );
    let body = match format {
        Format::Json => json(&json!({
            "table": table,
            "rows": rows.iter().map(|&(alpha, q, got, want, t)| json!({
                "alpha": alpha, "quantity": q, "computed": got, "reference": want,
                "delta": got - want, "tolerance": t,
            })).collect::<Vec<_>>(),
            "max_abs_delta": max_delta,
            "pass": ok,
        }))?,
        Format::Csv => csv_table(
            "alpha,quantity,computed,reference,delta,tolerance",
            rows.iter().map(|&(a, q, got, want, t)| format!("{a},{q},{got},{want},{},{t}", got - want)),
        ),
    };
    Ok(Output { body, ok })
}

fn run_sweep(shape: Shape, ns: &[usize], format: Format) -> Result<Output> {
    #[derive(Serialize)]
    struct Row {
        n: usize,
        n1: usize,
        n2: usize,
        mean_i1: f64,
        var_i1: f64,
        mean_i2: f64,
        var_i2: f64,
        p_i1_zero: f64,
        k_tv_to_geometric: Option<f64>,
    }
    let mut out = Vec::new();
    for &n in ns {
        let p = shape.scale(n)?;
        let m = exact::moments(&exact::build_table(&p)?);
        let tv = fluid::fluid_solve(&p)
            .ok()
            .and_then(|f| fluid::k_geometric(shape.alpha, f.beta).ok())
            .map(|g| g.tv_distance(&m.k_pmf));
        out.push(Row {
            n,
            n1: p.n1,
            n2: p.n2,
            mean_i1: m.mean_i1,
            var_i1: m.var_i1,
            mean_i2: m.mean_i2,
            var_i2: m.var_i2,
            p_i1_zero: m.p_i1_zero,
            k_tv_to_geometric: tv,
        });
    }
    let body = match format {
        Format::Json => json(&json!({ "shape": shape, "rows": out }))?,
        Format::Csv => csv_table(
            "n,n1,n2,mean_i1,var_i1,mean_i2,var_i2,p_i1_zero,k_tv_to_geometric",
            out.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{:e},{}",
                    r.n,
                    r.n1,
                    r.n2,
                    r.mean_i1,
                    r.var_i1,
                    r.mean_i2,
                    r.var_i2,
                    r.p_i1_zero,
                    r.k_tv_to_geometric.map_or(String::new(), |x| x.to_string())
                )
            }),
        ),
    };
    Ok(Output { body, ok: true })
}

fn run(cli: &Cli) -> Result<Output> {
    let format = cli.format;
    match &cli.command {
        Command::Fluid(params) => run_fluid(&params.resolve()?, format),
        Command::Exact { params, oracle, qmax } => run_exact(&params.resolve()?, *oracle, *qmax, format),
        Command::Simulate {
            params,
            horizon,
            replications,
            batches,
            warmup,
            allow_unstable,
            check_invariants,
            trace,
            trace_events,
        } => {
            let p = params.resolve()?;
            let cfg = SimConfig {
                horizon: *horizon,
                warmup_fraction: *warmup,
                seed: cli.seed,
                replications: *replications,
                batch_count: *batches,
                check_invariants: *check_invariants,
                allow_unstable: *allow_unstable,
            };
            let s = simulate::simulate(&p, &cfg)?;
            if s.unstable {
                eprintln!("warning: parameters are not stable; estimates describe a transient");
            }
            if let Some(path) = trace {
                let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
                write_trace(&p, &cfg, *trace_events, io::BufWriter::new(f))?;
            }
            let body = match format {
                Format::Json => json(&json!({ "params": p, "config": cfg, "stats": s }))?,
                Format::Csv => {
                    let h = &s.ci_halfwidth;
                    let mut rows = vec![
                        format!("mean_i1,{},{}", s.mean_i1, h.mean_i1),
                        format!("var_i1,{},{}", s.var_i1, h.var_i1),
                        format!("mean_i2,{},{}", s.mean_i2, h.mean_i2),
                        format!("var_i2,{},{}", s.var_i2, h.var_i2),
                        format!("beta_hat,{},{}", s.beta_hat, h.beta),
                        format!("throughput,{},{}", s.throughput, h.throughput),
                    ];
                    for (c, cn) in ["c1", "c2"].iter().enumerate() {
                        for (k, sn) in ["s1", "s2"].iter().enumerate() {
                            rows.push(format!("r_{cn}_{sn},{},{}", s.r_hat[c][k], h.r[c][k]));
                        }
                    }
                    for (k, (p, hw)) in s.k_pmf_hat.iter().zip(&h.k_pmf).enumerate() {
                        rows.push(format!("k_{k},{p},{hw}"));
                    }
                    csv_table("quantity,estimate,ci_halfwidth", rows)
                }
            };
            Ok(Output { body, ok: true })
        }
        Command::Matching { alpha, beta, steps, trace } => {
            let r = matching::match_run(*alpha, *beta, *steps, cli.seed)?;
            if let Some(path) = trace {
                let ks = matching::match_trace(*alpha, *beta, *steps, cli.seed)?;
                let mut w = io::BufWriter::new(fs::File::create(path)?);
                writeln!(w, "step,k")?;
                for (i, k) in ks.iter().enumerate() {
                    writeln!(w, "{},{k}", i + 1)?;
                }
            }
            let geo = fluid::k_geometric(*alpha, *beta)?;
            let body = match format {
                Format::Json => json(&json!({
                    "result": r,
                    "geometric_ratio": geo.ratio,
                    "tv_to_geometric": geo.tv_distance(&r.pmf),
                }))?,
                Format::Csv => csv_table(
                    "k,empirical,geometric",
                    r.pmf.iter().enumerate().map(|(k, q)| format!("{k},{q},{}", geo.pmf(k))),
                ),
            };
            Ok(Output { body, ok: true })
        }
        Command::Reproduce { table } => run_reproduce(*table, format),
        Command::Sweep { n, alpha, theta, rho, mu1, mu2 } => {
            let shape = Shape { alpha: *alpha, theta: *theta, rho: *rho, mu1: *mu1, mu2: *mu2 };
            run_sweep(shape, n, format)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            let written = match &cli.out {
                Some(path) => fs::write(path, &out.body).with_context(|| format!("writing {}", path.display())),
                None => io::stdout().write_all(out.body.as_bytes()).map_err(Into::into),
            };
            if let Err(e) = written {
                eprintln!("error: {e:#}");
                return ExitCode::FAILURE;
            }
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
