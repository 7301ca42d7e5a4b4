//! Adam, SGD, L-BFGS with strong-Wolfe line search, and restarts.

mod adam;
mod lbfgs;
mod restart;

pub use adam::{sgd_step, AdamState};
pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsReport, LbfgsState};
pub use restart::{restarted_minimize, RestartReport};
