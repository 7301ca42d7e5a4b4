//! Adaptation to unseen systems: fit a fresh context with θ frozen, then
//! score the held-out tuples.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::densenet::{eta_loss_and_grad, predict_tuples, Theta};
use crate::error::{Error, Result};
use crate::meta::MetaModel;
use crate::optim::{restarted_minimize, sgd_step, LbfgsConfig};
use crate::par::*;
use crate::quantum::{infidelity, StateKind};
use crate::seed::{derive_seed, rng_from};
use crate::systems::{DataTuple, DatasetSplit};

#[derive(Debug, Clone, PartialEq)]
pub enum AdaptOptimizer {
    /// Multi-start L-BFGS; `epochs` quasi-Newton iterations per start.
    RestartedLbfgs {
        restarts: usize,
        epochs: usize,
        /// Use the mean training context as the first start.
        start_at_centroid: bool,
        lbfgs: LbfgsConfig,
    },
    /// Full-batch gradient descent from one standard-normal start.
    Sgd { steps: usize, lr: f64 },
}

impl AdaptOptimizer {
    pub fn lbfgs(restarts: usize, epochs: usize) -> Self {
        AdaptOptimizer::RestartedLbfgs {
            restarts,
            epochs,
            start_at_centroid: true,
            lbfgs: LbfgsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub optimizer: AdaptOptimizer,
    /// Explicit starting contexts, used before any sampled ones.
    pub fixed_starts: Vec<Vec<f64>>,
    pub seed: u64,
}

impl AdaptConfig {
    pub fn new(optimizer: AdaptOptimizer, seed: u64) -> Self {
        Self {
            optimizer,
            fixed_starts: Vec::new(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationResult {
    pub system_id: usize,
    pub eta_star: Vec<f64>,
    pub adapt_loss: f64,
    pub test_loss: f64,
    pub test_infidelity: Option<f64>,
    /// Final adaptation loss of each start.
    pub restart_diagnostics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextFit {
    pub eta: Vec<f64>,
    pub loss: f64,
    pub diagnostics: Vec<f64>,
}

fn single_system(tuples: &[DataTuple]) -> Result<usize> {
    let first = tuples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no adaptation tuples".into()))?;
    if tuples.iter().any(|t| t.system_id != first.system_id) {
        return Err(Error::InvalidArgument("adaptation tuples mix systems".into()));
    }
    Ok(first.system_id)
}

/// Minimizes the mean squared error over `adapt_tuples` in the context
/// alone.
pub fn fit_context(model: &MetaModel, adapt_tuples: &[DataTuple], config: &AdaptConfig) -> Result<ContextFit> {
    let system_id = single_system(adapt_tuples)?;
    let refs: Vec<&DataTuple> = adapt_tuples.iter().collect();
    let theta = &model.theta;
    let dim = model.eta_dim;
    let objective = |eta: &[f64]| match eta_loss_and_grad(theta, eta, &refs) {
        Ok((f, g)) => (f, g),
        Err(_) => (f64::NAN, vec![0.0; eta.len()]),
    };

    match &config.optimizer {
        AdaptOptimizer::RestartedLbfgs {
            restarts,
            epochs,
            start_at_centroid,
            lbfgs,
        } => {
            let mut fixed = config.fixed_starts.clone();
            if *start_at_centroid {
                fixed.push(model.centroid());
            }
            let report = restarted_minimize(
                objective,
                |i, rng| match fixed.get(i) {
                    Some(x) => x.clone(),
                    None => (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
                },
                (*restarts).max(1),
                *epochs,
                lbfgs,
                derive_seed(config.seed, "adapt-starts", system_id as u64),
            )?;
            Ok(ContextFit {
                eta: report.x,
                loss: report.f,
                diagnostics: report.finals,
            })
        }
        AdaptOptimizer::Sgd { steps, lr } => {
            let mut eta = match config.fixed_starts.first() {
                Some(x) => x.clone(),
                None => {
                    let mut rng = rng_from(derive_seed(config.seed, "adapt-starts", system_id as u64));
                    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
                }
            };
            for _ in 0..*steps {
                let (f, g) = objective(&eta);
                if !f.is_finite() {
                    return Err(Error::AllRestartsFailed(1));
                }
                sgd_step(&mut eta, &g, *lr)?;
            }
            let (loss, _) = objective(&eta);
            if !loss.is_finite() {
                return Err(Error::AllRestartsFailed(1));
            }
            Ok(ContextFit {
                eta,
                loss,
                diagnostics: vec![loss],
            })
        }
    }
}

/// Mean element-wise squared error and, for quantum states, mean
/// infidelity of `f_θ(x; η)` over `tuples`.
pub fn evaluate(
    theta: &Theta,
    eta: &[f64],
    tuples: &[DataTuple],
    kind: Option<StateKind>,
) -> Result<(f64, Option<f64>)> {
    if tuples.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let refs: Vec<&DataTuple> = tuples.iter().collect();
    let pred = predict_tuples(theta, eta, &refs)?;
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut infid = 0.0;
    for (row, t) in pred.rows().into_iter().zip(tuples) {
        for (p, y) in row.iter().zip(&t.y) {
            sq += (p - y) * (p - y);
            count += 1;
        }
        if let Some(kind) = kind {
            infid += infidelity(&row.to_vec(), &t.y, kind)?;
        }
    }
    Ok((
        sq / count as f64,
        kind.map(|_| infid / tuples.len() as f64),
    ))
}

/// Fits a context on `adapt_tuples` and scores `test_tuples`.
pub fn adapt_system(
    model: &MetaModel,
    adapt_tuples: &[DataTuple],
    test_tuples: &[DataTuple],
    kind: Option<StateKind>,
    config: &AdaptConfig,
) -> Result<AdaptationResult> {
    let system_id = single_system(adapt_tuples)?;
    let fit = fit_context(model, adapt_tuples, config)?;
    let (test_loss, test_infidelity) = evaluate(&model.theta, &fit.eta, test_tuples, kind)?;
    Ok(AdaptationResult {
        system_id,
        eta_star: fit.eta,
        adapt_loss: fit.loss,
        test_loss,
        test_infidelity,
        restart_diagnostics: fit.diagnostics,
    })
}

/// Adapts every held-out system of `split`, in system-id order.
pub fn adapt_split(model: &MetaModel, split: &DatasetSplit, config: &AdaptConfig) -> Result<Vec<AdaptationResult>> {
    let kind = split.family.state_kind();
    let mut results: Vec<AdaptationResult> = split
        .adapt
        .par_iter()
        .zip(split.test.par_iter())
        .map(|(a, t)| adapt_system(model, &a.tuples, &t.tuples, kind, config))
        .collect::<Result<_>>()?;
    results.sort_by_key(|r| r.system_id);
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densenet::NetworkSpec;
    use std::collections::BTreeMap;

    /// Network with no hidden layers: f(x; η) = W [x; η] + b, linear in η.
    fn linear_model() -> MetaModel {
        let spec = NetworkSpec::dense(4, 0, 0, 2);
        let params = vec![
            0.5, -1.0, 2.0, 0.3, //
            1.5, 0.2, -0.7, 1.1, //
            0.1, -0.2,
        ];
        let theta = Theta::from_params(spec, params).unwrap();
        MetaModel::new(theta, 2, BTreeMap::from([(0, vec![0.0, 0.0])])).unwrap()
    }

    #[test]
    fn linear_context_matches_normal_equations() {
        let model = linear_model();
        let tuples = vec![
            DataTuple { system_id: 9, x: vec![0.3, -0.4], y: vec![0.7, 0.2] },
            DataTuple { system_id: 9, x: vec![-1.0, 0.5], y: vec![-0.1, 0.9] },
        ];
        // Residual r = A η − c with A the η-columns, c = y − W_x x − b.
        let a = [[2.0, 0.3], [-0.7, 1.1]];
        let mut ata = [[0.0; 2]; 2];
        let mut atc = [0.0; 2];
        for t in &tuples {
            let wx = [0.5 * t.x[0] - 1.0 * t.x[1] + 0.1, 1.5 * t.x[0] + 0.2 * t.x[1] - 0.2];
            for r in 0..2 {
                let c = t.y[r] - wx[r];
                for i in 0..2 {
                    atc[i] += a[r][i] * c;
                    for j in 0..2 {
                        ata[i][j] += a[r][i] * a[r][j];
                    }
                }
            }
        }
        let det = ata[0][0] * ata[1][1] - ata[0][1] * ata[1][0];
        let expected = [
            (ata[1][1] * atc[0] - ata[0][1] * atc[1]) / det,
            (ata[0][0] * atc[1] - ata[1][0] * atc[0]) / det,
        ];
        let config = AdaptConfig::new(AdaptOptimizer::lbfgs(5, 10), 1);
        let fit = fit_context(&model, &tuples, &config).unwrap();
        for (e, x) in expected.iter().zip(&fit.eta) {
            assert!((e - x).abs() < 1e-6, "{expected:?} vs {:?}", fit.eta);
        }
        assert_eq!(fit.loss, fit.diagnostics.iter().copied().fold(f64::INFINITY, f64::min));

        // gradient descent reaches the same answer on this convex objective
        let sgd = AdaptConfig::new(AdaptOptimizer::Sgd { steps: 1000, lr: 0.1 }, 1);
        let fit_sgd = fit_context(&model, &tuples, &sgd).unwrap();
        for (e, x) in expected.iter().zip(&fit_sgd.eta) {
            assert!((e - x).abs() < 1e-3);
        }
    }

    #[test]
    fn theta_is_untouched() {
        let model = linear_model();
        let before = model.theta.clone();
        let tuples = vec![DataTuple { system_id: 1, x: vec![0.3, -0.4], y: vec![0.7, 0.2] }];
        let config = AdaptConfig::new(AdaptOptimizer::lbfgs(3, 5), 0);
        adapt_system(&model, &tuples, &tuples, None, &config).unwrap();
        assert_eq!(model.theta, before);
    }

    #[test]
    fn evaluate_examples() {
        // Output layer copies x: a perfect predictor of y = x.
        let spec = NetworkSpec::dense(5, 0, 0, 4);
        let mut theta = Theta::zeros(spec).unwrap();
        for i in 0..4 {
            theta.weight_mut(0)[(i, i)] = 1.0;
        }
        let same = vec![DataTuple { system_id: 0, x: vec![1.0, 0.0, 0.0, 0.0], y: vec![1.0, 0.0, 0.0, 0.0] }];
        assert_eq!(evaluate(&theta, &[0.0], &same, Some(StateKind::Ket)).unwrap(), (0.0, Some(0.0)));

        let flipped = vec![DataTuple { system_id: 0, x: vec![0.0, 1.0, 0.0, 0.0], y: vec![1.0, 0.0, 0.0, 0.0] }];
        let (_, inf) = evaluate(&theta, &[0.0], &flipped, Some(StateKind::Ket)).unwrap();
        assert!((inf.unwrap() - 1.0).abs() < 1e-12);

        let mut both = same.clone();
        both.extend(flipped);
        let (mse, inf) = evaluate(&theta, &[0.0], &both, Some(StateKind::Ket)).unwrap();
        assert!((mse - 0.25).abs() < 1e-15);
        assert!((inf.unwrap() - 0.5).abs() < 1e-12);

        assert!(evaluate(&theta, &[0.0], &[], None).is_err());
    }

    #[test]
    fn mixed_or_empty_adaptation_sets_rejected() {
        let model = linear_model();
        let config = AdaptConfig::new(AdaptOptimizer::lbfgs(1, 1), 0);
        assert!(fit_context(&model, &[], &config).is_err());
        let mixed = vec![
            DataTuple { system_id: 0, x: vec![0.0, 0.0], y: vec![0.0, 0.0] },
            DataTuple { system_id: 1, x: vec![0.0, 0.0], y: vec![0.0, 0.0] },
        ];
        assert!(fit_context(&model, &mixed, &config).is_err());
    }
}
