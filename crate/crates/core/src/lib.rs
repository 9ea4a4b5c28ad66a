//! Many-server N-system under FCFS-ALIS.

pub mod error;
pub mod exact;
pub mod fluid;
pub mod logspace;
pub mod matching;
pub mod model;
pub mod reference;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{CustomerKind, DerivedRatios, ServerKind, Shape, Stability, SystemParams};
