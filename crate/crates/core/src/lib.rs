//! Meta-learning of families of quantum systems with a noise/update/freeze
//! schedule for per-system context vectors and restarted quasi-Newton
//! adaptation.

pub mod adapt;
pub mod baselines;
pub mod characteristics;
pub mod checks;
pub mod densenet;
pub mod error;
pub mod meta;
pub mod optim;
pub mod par;
pub mod quantum;
pub mod seed;
pub mod stats;
pub mod systems;

pub use error::{Error, Result};
