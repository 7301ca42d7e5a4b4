//! Multi-start wrapper around L-BFGS.

use super::lbfgs::{lbfgs_minimize, LbfgsConfig};
use crate::error::{Error, Result};
use crate::par::*;
use crate::seed::{rng_from, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct RestartReport {
    pub x: Vec<f64>,
    pub f: f64,
    pub best_restart: usize,
    /// Final objective of every restart (`+∞` for failed ones).
    pub finals: Vec<f64>,
    pub fallback_steps: usize,
}

/// Runs L-BFGS from `n_restarts` starting points and keeps the lowest
/// minimum; ties go to the lowest restart index.
///
/// Starting points are drawn sequentially from one generator seeded with
/// `seed` by calling `starts(index, rng)`, so they do not depend on how the
/// restarts are scheduled.
pub fn restarted_minimize<F, S>(
    objective: F,
    mut starts: S,
    n_restarts: usize,
    max_epochs: usize,
    config: &LbfgsConfig,
    seed: u64,
) -> Result<RestartReport>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
    S: FnMut(usize, &mut Rng) -> Vec<f64>,
{
    if n_restarts == 0 {
        return Err(Error::InvalidArgument("need at least one restart".into()));
    }
    let mut rng = rng_from(seed);
    let points: Vec<Vec<f64>> = (0..n_restarts).map(|i| starts(i, &mut rng)).collect();
    let runs: Vec<_> = points
        .par_iter()
        .map(|x0| lbfgs_minimize(&objective, x0, max_epochs, config).ok())
        .collect();

    let finals: Vec<f64> = runs
        .iter()
        .map(|r| r.as_ref().map_or(f64::INFINITY, |r| r.f))
        .collect();
    let fallback_steps = runs.iter().flatten().map(|r| r.fallback_steps).sum();
    let mut best: Option<(usize, &super::lbfgs::LbfgsReport)> = None;
    for (i, run) in runs.iter().enumerate() {
        if let Some(r) = run {
            if r.f.is_finite() && best.is_none_or(|(_, b)| r.f < b.f) {
                best = Some((i, r));
            }
        }
    }
    let (best_restart, report) = best.ok_or(Error::AllRestartsFailed(n_restarts))?;
    Ok(RestartReport {
        x: report.x.clone(),
        f: report.f,
        best_restart,
        finals,
        fallback_steps,
    })
}
