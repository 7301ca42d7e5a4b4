//! Comparison methods and the per-run benchmark driver.
//!
//! The schedule-free variant shares every code path with the scheduled
//! trainer; it differs only in its `TrainSchedule` (no noise, no freeze)
//! and in adapting by plain gradient descent. The scratch MLP ignores the
//! training systems and fits each held-out system from its adaptation
//! tuples alone.

use crate::adapt::{adapt_split, evaluate, AdaptConfig, AdaptOptimizer, AdaptationResult};
use crate::densenet::{GradMode, NetworkSpec, Theta};
use crate::densenet::stack_tuples;
use crate::error::{Error, Result};
use crate::meta::{train, MetaModel, TrainLog, TrainSchedule};
use crate::optim::AdamState;
use crate::par::*;
use crate::seed::derive_seed;
use crate::systems::{DataTuple, DatasetSplit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaselineKind {
    Imode,
    ScratchMlp,
}

/// Every method in a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Malgo,
    Baseline(BaselineKind),
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::Malgo,
        Method::Baseline(BaselineKind::Imode),
        Method::Baseline(BaselineKind::ScratchMlp),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Malgo => "malgo",
            Method::Baseline(BaselineKind::Imode) => "imode",
            Method::Baseline(BaselineKind::ScratchMlp) => "mlp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Schedule-free bilevel training.
pub fn train_imode(
    split: &DatasetSplit,
    spec: NetworkSpec,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(MetaModel, TrainLog)> {
    train(split, spec, &schedule.without_phases(), seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub lr: f64,
    pub steps: usize,
}

impl MlpConfig {
    /// 7 hidden layers of width 50.
    pub fn dynamics() -> Self {
        Self { hidden_layers: 7, hidden_width: 50, lr: 0.01, steps: 2000 }
    }

    /// 6 hidden layers of width 28.
    pub fn characteristics() -> Self {
        Self { hidden_layers: 6, hidden_width: 28, lr: 0.01, steps: 2000 }
    }
}

/// A context-free MLP fitted by full-batch Adam on `tuples` only.
pub fn train_scratch_mlp(tuples: &[DataTuple], config: &MlpConfig, seed: u64) -> Result<Theta> {
    let first = tuples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no tuples to fit".into()))?;
    let spec = NetworkSpec::plain(first.x.len(), config.hidden_layers, config.hidden_width, first.y.len());
    let mut theta = Theta::init(spec, seed)?;
    let refs: Vec<&DataTuple> = tuples.iter().collect();
    let (inputs, targets) = stack_tuples(&refs, &[]);
    let mut adam = AdamState::new(theta.len(), config.lr);
    for _ in 0..config.steps {
        let g = theta.batch_gradient(inputs.view(), targets.view(), GradMode::Full)?;
        if !g.loss.is_finite() {
            return Err(Error::NonFinite("scratch MLP loss".into()));
        }
        adam.step(theta.params_mut(), g.d_theta.as_deref().expect("full mode"))?;
    }
    Ok(theta)
}

/// Everything needed to run one method once.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSetup {
    pub spec: NetworkSpec,
    pub schedule: TrainSchedule,
    pub malgo_adapt: AdaptOptimizer,
    pub imode_adapt: AdaptOptimizer,
    pub mlp: MlpConfig,
}

/// Per-system outcome of one method run.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method: Method,
    pub results: Vec<AdaptationResult>,
    /// Mean test infidelity (quantum families) or mean test loss, over all
    /// test tuples of all held-out systems.
    pub metric: f64,
}

fn summarize(split: &DatasetSplit, results: &[AdaptationResult]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in results {
        let n = split
            .test
            .iter()
            .find(|t| t.system_id == r.system_id)
            .map_or(0, |t| t.tuples.len());
        total += n as f64 * r.test_infidelity.unwrap_or(r.test_loss);
        count += n;
    }
    total / count as f64
}

/// Scratch MLPs for every held-out system, in system-id order.
pub fn scratch_mlp_results(split: &DatasetSplit, config: &MlpConfig, seed: u64) -> Result<Vec<AdaptationResult>> {
    let kind = split.family.state_kind();
    let mut results: Vec<AdaptationResult> = split
        .adapt
        .par_iter()
        .zip(split.test.par_iter())
        .map(|(a, t)| {
            let theta = train_scratch_mlp(&a.tuples, config, derive_seed(seed, "mlp", a.system_id as u64))?;
            let (adapt_loss, _) = evaluate(&theta, &[], &a.tuples, None)?;
            let (test_loss, test_infidelity) = evaluate(&theta, &[], &t.tuples, kind)?;
            Ok(AdaptationResult {
                system_id: a.system_id,
                eta_star: vec![],
                adapt_loss,
                test_loss,
                test_infidelity,
                restart_diagnostics: vec![adapt_loss],
            })
        })
        .collect::<Result<_>>()?;
    results.sort_by_key(|r| r.system_id);
    Ok(results)
}

/// Trains (if needed), adapts and evaluates `method` on `split`.
pub fn run_method(split: &DatasetSplit, setup: &BenchmarkSetup, method: Method, seed: u64) -> Result<MethodRun> {
    let train_seed = derive_seed(seed, "train", 0);
    let adapt_seed = derive_seed(seed, "adapt", 0);
    let results = match method {
        Method::Malgo => {
            let (model, _) = train(split, setup.spec, &setup.schedule, train_seed)?;
            adapt_split(&model, split, &AdaptConfig::new(setup.malgo_adapt.clone(), adapt_seed))?
        }
        Method::Baseline(BaselineKind::Imode) => {
            let (model, _) = train_imode(split, setup.spec, &setup.schedule, train_seed)?;
            adapt_split(&model, split, &AdaptConfig::new(setup.imode_adapt.clone(), adapt_seed))?
        }
        Method::Baseline(BaselineKind::ScratchMlp) => scratch_mlp_results(split, &setup.mlp, adapt_seed)?,
    };
    Ok(MethodRun {
        method,
        metric: summarize(split, &results),
        results,
    })
}

/// One benchmark row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub method: Method,
    pub run: usize,
    pub metric: f64,
}

/// Runs every method in `methods` for `n_runs` runs. Run `r` draws a fresh
/// dataset from its own seed and shares it between the methods.
pub fn run_benchmark<F>(
    make_split: F,
    setup: &BenchmarkSetup,
    methods: &[Method],
    n_runs: usize,
    master_seed: u64,
) -> Result<Vec<BenchmarkRow>>
where
    F: Fn(u64) -> Result<DatasetSplit>,
{
    if n_runs == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one run".into()));
    }
    let mut rows = Vec::with_capacity(n_runs * methods.len());
    for run in 0..n_runs {
        let run_seed = derive_seed(master_seed, "run", run as u64);
        let split = make_split(derive_seed(run_seed, "data", 0))?;
        for &method in methods {
            let out = run_method(&split, setup, method, run_seed)?;
            rows.push(BenchmarkRow { method, run, metric: out.metric });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{build_split, DynamicsSplitConfig, Family};

    #[test]
    fn scratch_mlp_overfits_three_points() {
        let split = build_split(&DynamicsSplitConfig::defaults(Family::ClosedTls), 5).unwrap();
        let adapt = &split.adapt[0].tuples;
        let theta = train_scratch_mlp(adapt, &MlpConfig::dynamics(), 1).unwrap();
        let (loss, _) = evaluate(&theta, &[], adapt, None).unwrap();
        assert!(loss < 1e-4, "loss {loss}");
        assert_eq!(theta, train_scratch_mlp(adapt, &MlpConfig::dynamics(), 1).unwrap());
    }

    #[test]
    fn imode_is_the_unscheduled_trainer() {
        let cfg = DynamicsSplitConfig {
            n_train_systems: 3,
            n_adapt_systems: 1,
            n_trajectories: 1,
            n_steps: 6,
            ..DynamicsSplitConfig::defaults(Family::ClosedTls)
        };
        let split = build_split(&cfg, 2).unwrap();
        let schedule = TrainSchedule {
            total_epochs: 6,
            noise_until: 2,
            freeze_from: 5,
            batch_size: 8,
            ..TrainSchedule::for_family(Family::ClosedTls)
        };
        let spec = NetworkSpec::dense(5, 2, 6, 4);
        let via_baseline = train_imode(&split, spec, &schedule, 9).unwrap();
        let explicit = TrainSchedule { noise_until: 0, freeze_from: 7, ..schedule.clone() };
        assert_eq!(via_baseline, train(&split, spec, &explicit, 9).unwrap());
        assert_eq!(via_baseline, train_imode(&split, spec, &schedule, 9).unwrap());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::from_name(m.name()), Some(m));
        }
    }
}
