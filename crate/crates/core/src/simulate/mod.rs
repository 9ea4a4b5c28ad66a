//! Monte Carlo and truncated-chain oracles.

pub mod ctmc;
pub mod des;

pub use ctmc::{ctmc_oracle, CtmcMarginals};
pub use des::{simulate, SimConfig, SimStats};
