//! Closed-form many-server asymptotics: mean idle period, service shares,
//! mean idleness per pool, the bivariate normal limit of the idle counts,
//! the geometric law of `K`, and the refined fixed-point approximation of
//! `E[I1]` used when `alpha` is close to `1 - theta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidSolution {
    /// Mean idle period of a server (time).
    #[serde(rename = "T")]
    pub t: f64,
    /// Long-run fraction of services performed by the `s1` pool.
    pub beta: f64,
    /// Mean number of idle `s1` servers.
    pub m1: f64,
    /// Mean number of idle `s2` servers.
    pub m2: f64,
    pub f1: f64,
    pub f2: f64,
}

/// Limiting standard deviations and correlation of
/// `((I1 - m1)/sqrt(n), (I2 - m2)/sqrt(n))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub corr: f64,
}

/// Geometric law on `{0, 1, 2, ...}` with `P(K = k) = (1 - r) r^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricK {
    /// `(1 - beta) / alpha`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImprovedTheta {
    pub theta_star: f64,
    pub e_i1_approx: f64,
}

/// Coefficients `(a, b, c)` of `g(T) = a T^2 + b T + c`, whose positive root
/// is the mean idle period.
pub fn idle_quadratic(p: &SystemParams) -> (f64, f64, f64) {
    let lambda = p.lambda();
    let n = p.n() as f64;
    let a = lambda * p.mu1 * p.mu2;
    let b = lambda * (p.mu1 + p.mu2) - n * p.mu1 * p.mu2;
    let c = lambda - p.capacity();
    (a, b, c)
}

/// The explicit radical form of the positive root. Loses accuracy as
/// `rho -> 1`; [`fluid_solve`] uses a cancellation-free variant.
pub fn idle_time_radical(p: &SystemParams) -> f64 {
    let lambda = p.lambda();
    let n = p.n() as f64;
    let (n1, n2) = (p.n1 as f64, p.n2 as f64);
    let d = 1.0 / p.mu1 - 1.0 / p.mu2;
    let disc = (n / lambda).powi(2) + 2.0 * (n1 - n2) / lambda * d + d * d;
    0.5 * (n / lambda - 1.0 / p.mu1 - 1.0 / p.mu2 + disc.sqrt())
}

fn positive_root(p: &SystemParams) -> f64 {
    let (a, b, c) = idle_quadratic(p);
    let g = |t: f64| (a * t + b) * t + c;
    let sq = (b * b - 4.0 * a * c).sqrt();
    let mut t = if b > 0.0 { -2.0 * c / (b + sq) } else { (-b + sq) / (2.0 * a) };
    for _ in 0..2 {
        let slope = 2.0 * a * t + b;
        if slope <= 0.0 {
            break;
        }
        let next = t - g(t) / slope;
        if next > 0.0 && g(next).abs() < g(t).abs() {
            t = next;
        } else {
            break;
        }
    }
    t
}

/// Solves the fluid balance `lambda beta = n1 / (1/mu1 + T)`,
/// `lambda (1 - beta) = n2 / (1/mu2 + T)`.
pub fn fluid_solve(p: &SystemParams) -> Result<FluidSolution> {
    p.validate()?;
    let d = p.derive();
    if d.rho >= 1.0 {
        return Err(Error::Unstable { rho: d.rho, delta: d.delta });
    }
    let t = positive_root(p);
    let lambda = d.lambda;
    let (n1, n2, n) = (p.n1 as f64, p.n2 as f64, d.n as f64);
    let beta = n1 / (lambda * t + lambda / p.mu1);
    let m1 = t * n1 / (t + 1.0 / p.mu1);
    let m2 = t * n2 / (t + 1.0 / p.mu2);
    Ok(FluidSolution { t, beta, m1, m2, f1: m1 / n, f2: m2 / n })
}

/// Complete resource pooling: `alpha + beta > 1`.
pub fn pooling(p: &SystemParams) -> Result<bool> {
    let fl = fluid_solve(p)?;
    Ok(p.derive().alpha + fl.beta > 1.0)
}

impl CltParams {
    /// Evaluates the limit in the scaled variables `theta = n1/n`,
    /// `f_i = m_i / n`.
    pub fn from_fractions(theta: f64, f1: f64, f2: f64) -> Self {
        let den = theta * f2 * f2 + (1.0 - theta) * f1 * f1;
        let s1 = (theta - f1) * f1 * ((1.0 - theta) * f1 + f2 * f2) / den;
        let s2 = (1.0 - theta - f2) * f2 * (theta * f2 + f1 * f1) / den;
        let c2 =
            (theta - f1) * (1.0 - theta - f2) * f1 * f2 / ((theta * f2 + f1 * f1) * ((1.0 - theta) * f1 + f2 * f2));
        Self { sigma1: s1.sqrt(), sigma2: s2.sqrt(), corr: c2.sqrt() }
    }
}

/// Variances and correlation of the idle counts themselves, written in terms
/// of pool sizes and mean idle counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdleCovariance {
    pub var_i1: f64,
    pub var_i2: f64,
    pub corr: f64,
}

impl IdleCovariance {
    pub fn from_counts(n1: f64, n2: f64, m1: f64, m2: f64) -> Self {
        let den = n1 * m2 * m2 + n2 * m1 * m1;
        let var_i1 = (n1 - m1) * m1 * (n2 * m1 + m2 * m2) / den;
        let var_i2 = (n2 - m2) * m2 * (n1 * m2 + m1 * m1) / den;
        let corr = ((n1 - m1) * (n2 - m2) * m1 * m2 / ((n1 * m2 + m1 * m1) * (n2 * m1 + m2 * m2))).sqrt();
        Self { var_i1, var_i2, corr }
    }
}

/// CLT parameters; only meaningful in the stable, pooled regime.
pub fn clt_params(p: &SystemParams) -> Result<CltParams> {
    p.require_stable()?;
    let fl = fluid_solve(p)?;
    let d = p.derive();
    if d.alpha + fl.beta <= 1.0 {
        return Err(Error::NotPooled { sum: d.alpha + fl.beta });
    }
    Ok(CltParams::from_fractions(d.theta, fl.f1, fl.f2))
}

/// Limiting law of `K`, the number of `s2` servers behind the last `s1`
/// server in the ALIS order.
pub fn k_geometric(alpha: f64, beta: f64) -> Result<GeometricK> {
    if !(alpha > 0.0 && alpha <= 1.0 && beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParams(format!("alpha = {alpha}, beta = {beta} outside (0, 1]")));
    }
    if alpha + beta <= 1.0 {
        return Err(Error::NotPooled { sum: alpha + beta });
    }
    Ok(GeometricK { ratio: (1.0 - beta) / alpha })
}

impl GeometricK {
    pub fn success(&self) -> f64 {
        1.0 - self.ratio
    }

    pub fn pmf(&self, k: usize) -> f64 {
        if self.ratio == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        (1.0 - self.ratio) * (k as f64 * self.ratio.ln()).exp()
    }

    pub fn mean(&self) -> f64 {
        self.ratio / (1.0 - self.ratio)
    }

    /// Smallest `k` whose tail `P(K >= k) = r^k` falls below `tail`.
    pub fn support_len(&self, tail: f64) -> usize {
        if self.ratio == 0.0 {
            return 1;
        }
        (tail.ln() / self.ratio.ln()).ceil().max(1.0) as usize
    }

    /// Probabilities for `k = 0..len`.
    pub fn pmf_vec(&self, len: usize) -> Vec<f64> {
        (0..len).map(|k| self.pmf(k)).collect()
    }

    /// Total-variation distance to an empirical or exact pmf indexed from 0.
    /// Mass of the geometric beyond `other.len()` counts fully.
    pub fn tv_distance(&self, other: &[f64]) -> f64 {
        let head: f64 = other.iter().enumerate().map(|(k, q)| (q - self.pmf(k)).abs()).sum();
        let tail = if self.ratio == 0.0 { 0.0 } else { (other.len() as f64 * self.ratio.ln()).exp() };
        0.5 * (head + tail)
    }
}

/// Residual of the refined share equation at candidate share `theta`:
/// the mixture over `k ~ Geometric` of `(n1 - 1)/(n - 1 - k)`, minus `theta`.
pub fn improved_theta_residual(p: &SystemParams, theta: f64) -> f64 {
    let alpha = p.derive().alpha;
    let n = p.n() as f64;
    let numer = p.n1 as f64 - 1.0;
    let r = (1.0 - theta) / alpha;
    let weight0 = (alpha + theta - 1.0) / alpha;
    let mut sum = 0.0;
    let mut rk = 1.0;
    for k in 0..=p.n2 {
        sum += numer / (n - 1.0 - k as f64) * rk;
        rk *= r;
        if rk == 0.0 {
            break;
        }
    }
    sum * weight0 - theta
}

const SCAN_POINTS: usize = 4000;

/// Solves the refined share equation for `theta*` and returns
/// `E[I1] ~ n1 - theta* rho n`.
///
/// The residual is negative at both ends of `(1 - alpha, 1)`; the relevant
/// root is the largest one, located by scanning down from the top and then
/// bisecting.
pub fn improved_theta(p: &SystemParams) -> Result<ImprovedTheta> {
    p.require_stable()?;
    if p.n1 < 2 {
        return Err(Error::InvalidParams("refined approximation needs n1 >= 2".into()));
    }
    let d = p.derive();
    let lo = 1.0 - d.alpha + 1e-9;
    let hi = 1.0 - 1e-9;
    if lo >= hi {
        return Err(Error::FixedPointNotFound { lo, hi, detail: "empty bracket".into() });
    }
    let h = |t: f64| improved_theta_residual(p, t);
    let mut upper = hi;
    let mut h_upper = h(upper);
    let mut bracket = None;
    let mut best = h_upper;
    for i in 1..=SCAN_POINTS {
        let t = hi - (hi - lo) * i as f64 / SCAN_POINTS as f64;
        let ht = h(t);
        best = best.max(ht);
        if (ht >= 0.0) != (h_upper >= 0.0) {
            bracket = Some((t, upper));
            break;
        }
        upper = t;
        h_upper = ht;
    }
    let (mut a, mut b) = bracket.ok_or_else(|| Error::FixedPointNotFound {
        lo,
        hi,
        detail: format!("no sign change; max residual {best:.3e}"),
    })?;
    let ha = h(a);
    while b - a > 1e-12 {
        let mid = 0.5 * (a + b);
        if (h(mid) >= 0.0) == (ha >= 0.0) {
            a = mid;
        } else {
            b = mid;
        }
    }
    let theta_star = 0.5 * (a + b);
    let e_i1_approx = p.n1 as f64 - theta_star * d.rho * d.n as f64;
    Ok(ImprovedTheta { theta_star, e_i1_approx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Shape;
    use proptest::prelude::*;

    fn sym(alpha: f64) -> SystemParams {
        SystemParams::new(100.0 * alpha, 100.0 * (1.0 - alpha), 100, 100, 1.0, 1.0).unwrap()
    }

    /// Independent root of g by plain bisection.
    fn bisect_root(p: &SystemParams) -> f64 {
        let (a, b, c) = idle_quadratic(p);
        let g = |t: f64| (a * t + b) * t + c;
        let (mut lo, mut hi) = (0.0, 1.0);
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn symmetric_fluid() {
        let fl = fluid_solve(&sym(0.8)).unwrap();
        assert!((fl.t - 1.0).abs() < 1e-14);
        assert!((fl.beta - 0.5).abs() < 1e-14);
        assert!((fl.m1 - 50.0).abs() < 1e-12);
        assert!((fl.m2 - 50.0).abs() < 1e-12);
    }

    #[test]
    fn heterogeneous_root_matches_bisection() {
        let p = SystemParams::new(36.0, 24.0, 50, 50, 2.0, 1.0).unwrap();
        let fl = fluid_solve(&p).unwrap();
        let oracle = bisect_root(&p);
        assert!(rel(fl.t, oracle) < 1e-12, "{} vs {}", fl.t, oracle);
        // 12 T^2 - 2 T - 9 = 0
        assert!((fl.t - (2.0 + 436f64.sqrt()) / 24.0).abs() < 1e-12);
        assert!((fl.t - 0.953356).abs() < 1e-5);
        assert!(rel(fl.t, idle_time_radical(&p)) < 1e-12);
    }

    #[test]
    fn critical_load_rejected() {
        let p = SystemParams::new(100.0, 50.0, 50, 50, 2.0, 1.0).unwrap();
        assert!(matches!(fluid_solve(&p), Err(Error::Unstable { .. })));
        assert!(fluid_solve(&SystemParams::new(100.0, 100.0, 100, 100, 1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn near_critical_is_accurate() {
        let p = SystemParams::new(149.999999, 0.0, 50, 50, 2.0, 1.0).unwrap();
        let fl = fluid_solve(&p).unwrap();
        let (a, b, c) = idle_quadratic(&p);
        let g = (a * fl.t + b) * fl.t + c;
        assert!(fl.t > 0.0);
        assert!(g.abs() <= 1e-12 * c.abs().max(a * fl.t * fl.t).max(b.abs() * fl.t));
        assert!(rel(fl.t, bisect_root(&p)) < 1e-9);
    }

    #[test]
    fn pooling_examples() {
        assert!(pooling(&sym(0.8)).unwrap());
        assert!(!pooling(&sym(0.4)).unwrap());
        let p = SystemParams::new(10.0, 0.0, 20, 5, 1.0, 3.0).unwrap();
        assert!(pooling(&p).unwrap());
    }

    #[test]
    fn clt_symmetric() {
        let c = clt_params(&sym(0.8)).unwrap();
        assert!((c.sigma1 * c.sigma1 - 0.1875).abs() < 1e-14);
        assert!((200.0 * c.sigma1 * c.sigma1 - 37.5).abs() < 1e-11);
        assert!((c.corr - 1.0 / 3.0).abs() < 1e-14);
        // equal-rate closed forms
        let (rho, theta) = (0.5f64, 0.5f64);
        let s1 = rho * theta * (1.0 - rho * (1.0 - theta));
        let s2 = rho * (1.0 - theta) * (1.0 - rho * theta);
        let corr = rho * (theta * (1.0 - theta)).sqrt() / ((1.0 - rho * (1.0 - theta)) * (1.0 - rho * theta)).sqrt();
        assert!((c.sigma1.powi(2) - s1).abs() < 1e-14);
        assert!((c.sigma2.powi(2) - s2).abs() < 1e-14);
        assert!((c.corr - corr).abs() < 1e-14);
    }

    #[test]
    fn clt_rejects_unpooled() {
        assert!(matches!(clt_params(&sym(0.4)), Err(Error::NotPooled { .. })));
    }

    #[test]
    fn clt_light_load_limit() {
        let p = Shape { alpha: 0.8, theta: 0.5, rho: 1e-7, mu1: 1.0, mu2: 1.0 }.scale(200).unwrap();
        let fl = fluid_solve(&p).unwrap();
        let c = clt_params(&p).unwrap();
        assert!((fl.f1 - 0.5).abs() < 1e-6);
        assert!(c.sigma1 < 1e-3);
    }

    /// Covariance of the Gaussian whose log-density is the quadratic form
    /// `(x1+x2)^2/(2(m1+m2)) - x1^2 n1/(2(n1-m1)m1) - x2^2 n2/(2(n2-m2)m2)`.
    fn precision_inverse(n1: f64, n2: f64, m1: f64, m2: f64) -> (f64, f64, f64) {
        let a = n1 / ((n1 - m1) * m1);
        let b = n2 / ((n2 - m2) * m2);
        let c = 1.0 / (m1 + m2);
        let (p11, p22, p12) = (a - c, b - c, -c);
        let det = p11 * p22 - p12 * p12;
        let (v1, v2, cov) = (p22 / det, p11 / det, -p12 / det);
        (v1, v2, cov / (v1 * v2).sqrt())
    }

    #[test]
    fn clt_matches_precision_matrix() {
        let p = SystemParams::new(36.0, 24.0, 50, 50, 2.0, 1.0).unwrap();
        let fl = fluid_solve(&p).unwrap();
        let cov = IdleCovariance::from_counts(50.0, 50.0, fl.m1, fl.m2);
        let (v1, v2, corr) = precision_inverse(50.0, 50.0, fl.m1, fl.m2);
        assert!(rel(cov.var_i1, v1) < 1e-12);
        assert!(rel(cov.var_i2, v2) < 1e-12);
        assert!(rel(cov.corr, corr) < 1e-12);
    }

    #[test]
    fn geometric_examples() {
        let g = k_geometric(0.8, 0.5).unwrap();
        assert!((g.pmf(0) - 0.375).abs() < 1e-15);
        assert!((g.pmf(1) - 0.234375).abs() < 1e-15);
        assert_eq!(k_geometric(0.6, 1.0).unwrap().pmf(0), 1.0);
        let g = k_geometric(1.0, 0.5).unwrap();
        for k in 0..10 {
            assert!((g.pmf(k) - 0.5f64.powi(k as i32 + 1)).abs() < 1e-15);
        }
        assert!(matches!(k_geometric(0.4, 0.5), Err(Error::NotPooled { .. })));
        assert!(k_geometric(0.5, 0.5).is_err());
    }

    #[test]
    fn improved_theta_table() {
        let cases = [(0.8, 49.83), (0.7, 49.62), (0.6, 49.07), (0.55, 48.29), (0.5, 46.46)];
        for (alpha, expected) in cases {
            let it = improved_theta(&sym(alpha)).unwrap();
            assert!((it.e_i1_approx - expected).abs() <= 1e-2, "alpha {alpha}: {}", it.e_i1_approx);
            assert!(improved_theta_residual(&sym(alpha), it.theta_star).abs() < 1e-9);
        }
        let it = improved_theta(&sym(0.6)).unwrap();
        assert!((it.theta_star - 0.5093).abs() <= 5e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn fluid_invariants(
            lambda in 1.0f64..500.0,
            frac in 0.01f64..0.99,
            load in 0.02f64..0.98,
            n1 in 1usize..300,
            n2 in 1usize..300,
            mu1 in 0.1f64..10.0,
            mu2 in 0.1f64..10.0,
        ) {
            let cap = n1 as f64 * mu1 + n2 as f64 * mu2;
            let scale = load * cap / lambda;
            let p = SystemParams::new(frac * lambda * scale, (1.0 - frac) * lambda * scale, n1, n2, mu1, mu2).unwrap();
            let fl = fluid_solve(&p).unwrap();
            let (a, b, c) = idle_quadratic(&p);
            let terms = [a * fl.t * fl.t, b.abs() * fl.t, c.abs()];
            let g = (a * fl.t + b) * fl.t + c;
            prop_assert!(g.abs() <= 1e-12 * terms.iter().cloned().fold(0.0, f64::max));
            prop_assert!(fl.t > 0.0);
            prop_assert!(fl.beta > 0.0 && fl.beta < 1.0);
            let lam = p.lambda();
            prop_assert!(rel(fl.m1 + fl.m2, lam * fl.t) < 1e-12);
            prop_assert!(rel(lam * fl.beta * (1.0 / mu1 + fl.t), n1 as f64) < 1e-12);
            prop_assert!(rel(lam * (1.0 - fl.beta) * (1.0 / mu2 + fl.t), n2 as f64) < 1e-12);
            let theta = p.derive().theta;
            prop_assert!(fl.f1 > 0.0 && fl.f1 < theta);
            prop_assert!(fl.f2 > 0.0 && fl.f2 < 1.0 - theta);

            // both CLT forms agree
            let n = p.n() as f64;
            let scaled = CltParams::from_fractions(theta, fl.f1, fl.f2);
            let counts = IdleCovariance::from_counts(n1 as f64, n2 as f64, fl.m1, fl.m2);
            prop_assert!(rel(n * scaled.sigma1.powi(2), counts.var_i1) < 1e-12);
            prop_assert!(rel(n * scaled.sigma2.powi(2), counts.var_i2) < 1e-12);
            prop_assert!(rel(scaled.corr, counts.corr) < 1e-12);
        }

        #[test]
        fn equal_rates_give_beta_theta(
            n1 in 1usize..400, n2 in 1usize..400, rho in 0.01f64..0.99, mu in 0.1f64..5.0, alpha in 0.0f64..1.0,
        ) {
            let cap = (n1 + n2) as f64 * mu;
            let lam = rho * cap;
            let p = SystemParams::new(alpha * lam, (1.0 - alpha) * lam, n1, n2, mu, mu).unwrap();
            let fl = fluid_solve(&p).unwrap();
            let d = p.derive();
            prop_assert!((fl.beta - d.theta).abs() < 1e-12);
            prop_assert!(rel(fl.t, (1.0 - d.rho) / (d.rho * mu)) < 1e-12);
            prop_assert!(rel(fl.m1, (1.0 - d.rho) * n1 as f64) < 1e-12);
            prop_assert!(rel(fl.m2, (1.0 - d.rho) * n2 as f64) < 1e-12);
        }

        #[test]
        fn geometric_sums_to_one(alpha in 0.05f64..=1.0, beta in 0.05f64..=1.0) {
            prop_assume!(alpha + beta > 1.0 + 1e-6);
            let g = k_geometric(alpha, beta).unwrap();
            let len = g.support_len(1e-15);
            let (mut total, mut comp) = (0.0f64, 0.0f64);
            for q in g.pmf_vec(len) {
                let t = total + q;
                comp += if total.abs() >= q.abs() { (total - t) + q } else { (q - t) + total };
                total = t;
            }
            prop_assert!((total + comp - 1.0).abs() < 1e-12);
        }
    }
}
