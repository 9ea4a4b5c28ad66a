//! Reference values for the symmetric benchmark system
//! `n1 = n2 = 100`, `mu1 = mu2 = 1`, `rho = 0.5`, used as regression targets.

use crate::model::SystemParams;

/// Exact moments of the idle counts at one value of `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactRow {
    pub alpha: f64,
    pub mean_i1: f64,
    pub var_i1: f64,
    pub mean_i2: f64,
    pub var_i2: f64,
}

pub const EXACT_ROWS: [ExactRow; 6] = [
    ExactRow { alpha: 0.8, mean_i1: 49.8383, var_i1: 37.7049, mean_i2: 50.1617, var_i2: 37.3814 },
    ExactRow { alpha: 0.7, mean_i1: 49.6482, var_i1: 38.078, mean_i2: 50.3518, var_i2: 37.3743 },
    ExactRow { alpha: 0.6, mean_i1: 49.1787, var_i1: 39.2148, mean_i2: 50.8213, var_i2: 37.5722 },
    ExactRow { alpha: 0.55, mean_i1: 48.6055, var_i1: 40.8706, mean_i2: 51.3945, var_i2: 38.0816 },
    ExactRow { alpha: 0.5, mean_i1: 47.333, var_i1: 44.883, mean_i2: 52.667, var_i2: 39.549 },
    ExactRow { alpha: 0.4, mean_i1: 39.981, var_i1: 59.821, mean_i2: 60.019, var_i2: 39.7854 },
];

/// Refined approximation of `E[I1]` at one value of `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxRow {
    pub alpha: f64,
    pub e_i1_approx: f64,
}

pub const APPROX_ROWS: [ApproxRow; 5] = [
    ApproxRow { alpha: 0.8, e_i1_approx: 49.83 },
    ApproxRow { alpha: 0.7, e_i1_approx: 49.62 },
    ApproxRow { alpha: 0.6, e_i1_approx: 49.07 },
    ApproxRow { alpha: 0.55, e_i1_approx: 48.29 },
    ApproxRow { alpha: 0.5, e_i1_approx: 46.46 },
];

/// `theta*` at `alpha = 0.6`.
pub const THETA_STAR_ALPHA_06: f64 = 0.5093;

/// The benchmark system at arrival mix `alpha`.
pub fn benchmark(alpha: f64) -> SystemParams {
    SystemParams { lambda1: 100.0 * alpha, lambda2: 100.0 * (1.0 - alpha), n1: 100, n2: 100, mu1: 1.0, mu2: 1.0 }
}
