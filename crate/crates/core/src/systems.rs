//! System families, trajectory generation and train/adapt/test splits.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::par::*;
use crate::quantum::{
    apply_superoperator, apply_unitary, devectorize_ket, devectorize_rho, expm_hermitian,
    heisenberg_hamiltonian, lindblad_propagator, tls_hamiltonian, vectorize_ket, vectorize_rho,
    ComplexMatrix, DensityMatrix, QuantumState, StateKind,
};
use crate::seed::{derive_seed, rng_from};

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_TRAJECTORIES: usize = 5;
pub const DEFAULT_STEPS: usize = 10;
pub const DEFAULT_ADAPT_POINTS: usize = 3;
pub const OPEN_TLS_MEAN_GAMMA: f64 = 0.2;

/// A family of related systems. `GateConfig` covers the gate-voltage
/// configurations of the characteristics experiments; it carries no
/// Hamiltonian parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    ClosedTls,
    OpenTls,
    Heisenberg2,
    GateConfig,
}

impl Family {
    pub const DYNAMICS: [Family; 3] = [Family::ClosedTls, Family::OpenTls, Family::Heisenberg2];

    pub fn n_params(self) -> usize {
        match self {
            Family::ClosedTls => 1,
            Family::OpenTls => 2,
            Family::Heisenberg2 => 3,
            Family::GateConfig => 0,
        }
    }

    /// Default context width.
    pub fn eta_dim(self) -> usize {
        match self {
            Family::GateConfig => 7,
            f => f.n_params(),
        }
    }

    pub fn state_kind(self) -> Option<StateKind> {
        match self {
            Family::ClosedTls | Family::Heisenberg2 => Some(StateKind::Ket),
            Family::OpenTls => Some(StateKind::Rho),
            Family::GateConfig => None,
        }
    }

    /// Length of the real-vectorized state.
    pub fn state_len(self) -> Option<usize> {
        match self {
            Family::ClosedTls => Some(4),
            Family::OpenTls | Family::Heisenberg2 => Some(8),
            Family::GateConfig => None,
        }
    }

    /// (training systems, adaptation systems) used in the reference experiments.
    pub fn default_system_counts(self) -> (usize, usize) {
        match self {
            Family::ClosedTls => (15, 35),
            Family::OpenTls => (100, 50),
            Family::Heisenberg2 => (300, 50),
            Family::GateConfig => (2, 1),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Family::ClosedTls => 1,
            Family::OpenTls => 2,
            Family::Heisenberg2 => 3,
            Family::GateConfig => 4,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            1 => Family::ClosedTls,
            2 => Family::OpenTls,
            3 => Family::Heisenberg2,
            4 => Family::GateConfig,
            _ => return Err(Error::Format(format!("unknown family code {code}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::ClosedTls => "closed",
            Family::OpenTls => "open",
            Family::Heisenberg2 => "heisenberg",
            Family::GateConfig => "gate-config",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemInstance {
    pub id: usize,
    pub family: Family,
    pub params: Vec<f64>,
}

impl SystemInstance {
    pub fn new(id: usize, family: Family, params: Vec<f64>) -> Result<Self> {
        if params.len() != family.n_params() {
            return Err(Error::Dimension(format!(
                "{} systems take {} parameters, got {}",
                family.name(),
                family.n_params(),
                params.len()
            )));
        }
        let unit = |x: f64| (0.0..1.0).contains(&x);
        let ok = match family {
            Family::ClosedTls => unit(params[0]),
            Family::OpenTls => unit(params[0]) && params[1] >= 0.0 && params[1].is_finite(),
            Family::Heisenberg2 => params.iter().all(|&p| unit(p)),
            Family::GateConfig => true,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "parameters {params:?} out of range for {}",
                family.name()
            )));
        }
        Ok(Self { id, family, params })
    }

    /// The exact one-step map of this system over `dt`.
    pub fn propagator(&self, dt: f64) -> Result<Propagator> {
        Ok(match self.family {
            Family::ClosedTls => Propagator::Unitary(expm_hermitian(&tls_hamiltonian(self.params[0]), dt)?),
            Family::Heisenberg2 => {
                let p = &self.params;
                Propagator::Unitary(expm_hermitian(&heisenberg_hamiltonian(p[0], p[1], p[2]), dt)?)
            }
            Family::OpenTls => {
                Propagator::Superoperator(lindblad_propagator(self.params[0], self.params[1], dt)?)
            }
            Family::GateConfig => {
                return Err(Error::InvalidArgument(
                    "gate configurations have no dynamics".into(),
                ))
            }
        })
    }
}

/// Precomputed one-step evolution.
#[derive(Debug, Clone)]
pub enum Propagator {
    Unitary(ComplexMatrix),
    Superoperator(ComplexMatrix),
}

impl Propagator {
    /// Applies the map to a real-vectorized state and re-vectorizes.
    pub fn step_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Propagator::Unitary(u) => {
                let psi = QuantumState::new(devectorize_ket(x)?)?;
                Ok(vectorize_ket(&apply_unitary(u, &psi)?))
            }
            Propagator::Superoperator(s) => {
                let rho = DensityMatrix::new(devectorize_rho(x)?)?;
                Ok(vectorize_rho(&apply_superoperator(s, &rho)?))
            }
        }
    }
}

/// One input/target pair belonging to one system.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTuple {
    pub system_id: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// All tuples held out for one system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemTuples {
    pub system_id: usize,
    pub tuples: Vec<DataTuple>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub family: Family,
    pub dt: f64,
    pub seed: u64,
    pub instances: Vec<SystemInstance>,
    pub train: Vec<DataTuple>,
    pub adapt: Vec<SystemTuples>,
    pub test: Vec<SystemTuples>,
}

impl DatasetSplit {
    pub fn instance(&self, id: usize) -> Option<&SystemInstance> {
        self.instances.iter().find(|s| s.id == id)
    }

    /// Training system ids in ascending order.
    pub fn train_system_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.train.iter().map(|t| t.system_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn adapt_system_ids(&self) -> Vec<usize> {
        self.adapt.iter().map(|s| s.system_id).collect()
    }

    pub fn x_len(&self) -> usize {
        self.first_tuple().map_or(0, |t| t.x.len())
    }

    pub fn y_len(&self) -> usize {
        self.first_tuple().map_or(0, |t| t.y.len())
    }

    fn first_tuple(&self) -> Option<&DataTuple> {
        self.train
            .first()
            .or_else(|| self.adapt.iter().chain(&self.test).find_map(|s| s.tuples.first()))
    }

    pub fn total_tuples(&self) -> usize {
        self.train.len()
            + self
                .adapt
                .iter()
                .chain(&self.test)
                .map(|s| s.tuples.len())
                .sum::<usize>()
    }
}

fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Draws `n` instances with ids `0..n`.
///
/// Δ, J and c are uniform on [0, 1); γ is exponential with mean 0.2.
pub fn sample_instances(family: Family, n: usize, seed: u64) -> Result<Vec<SystemInstance>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one instance".into()));
    }
    let mut rng = rng_from(derive_seed(seed, "instances", family.code() as u64));
    let gamma = Exp::new(1.0 / OPEN_TLS_MEAN_GAMMA).expect("positive rate");
    (0..n)
        .map(|id| {
            let params = match family {
                Family::ClosedTls => vec![unit_uniform(&mut rng)],
                Family::OpenTls => vec![unit_uniform(&mut rng), gamma.sample(&mut rng)],
                Family::Heisenberg2 => (0..3).map(|_| unit_uniform(&mut rng)).collect(),
                Family::GateConfig => vec![],
            };
            SystemInstance::new(id, family, params)
        })
        .collect()
}

/// Consecutive one-step pairs from `n_traj` Haar-random starts.
pub fn generate_trajectories(
    instance: &SystemInstance,
    n_traj: usize,
    n_steps: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<DataTuple>> {
    if n_traj == 0 || n_steps == 0 {
        return Err(Error::InvalidArgument(
            "trajectory and step counts must be positive".into(),
        ));
    }
    let propagator = instance.propagator(dt)?;
    let mut rng = rng_from(seed);
    let dim = match instance.family {
        Family::Heisenberg2 => 4,
        _ => 2,
    };
    let mut out = Vec::with_capacity(n_traj * n_steps);
    for _ in 0..n_traj {
        let psi = QuantumState::haar_random(dim, &mut rng)?;
        let mut state = match propagator {
            Propagator::Unitary(_) => vectorize_ket(&psi),
            Propagator::Superoperator(_) => vectorize_rho(&DensityMatrix::from_pure(&psi)?),
        };
        for _ in 0..n_steps {
            let next = propagator.step_vector(&state)?;
            out.push(DataTuple {
                system_id: instance.id,
                x: state,
                y: next.clone(),
            });
            state = next;
        }
    }
    Ok(out)
}

/// Sizes for a dynamics split.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSplitConfig {
    pub family: Family,
    pub n_train_systems: usize,
    pub n_adapt_systems: usize,
    pub n_adapt_points: usize,
    pub n_trajectories: usize,
    pub n_steps: usize,
    pub dt: f64,
}

impl DynamicsSplitConfig {
    pub fn defaults(family: Family) -> Self {
        let (n_train_systems, n_adapt_systems) = family.default_system_counts();
        Self {
            family,
            n_train_systems,
            n_adapt_systems,
            n_adapt_points: DEFAULT_ADAPT_POINTS,
            n_trajectories: DEFAULT_TRAJECTORIES,
            n_steps: DEFAULT_STEPS,
            dt: DEFAULT_DT,
        }
    }
}

/// Randomly splits one system's tuples into (adapt, test).
pub fn split_adapt_test<R: Rng + ?Sized>(
    tuples: Vec<DataTuple>,
    n_adapt: usize,
    rng: &mut R,
) -> Result<(Vec<DataTuple>, Vec<DataTuple>)> {
    if n_adapt == 0 || n_adapt >= tuples.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot take {n_adapt} adaptation points out of {} tuples",
            tuples.len()
        )));
    }
    let mut chosen: Vec<usize> = sample(rng, tuples.len(), n_adapt).into_vec();
    chosen.sort_unstable();
    let mut is_adapt = vec![false; tuples.len()];
    chosen.iter().for_each(|&i| is_adapt[i] = true);
    let (adapt, test): (Vec<_>, Vec<_>) = tuples
        .into_iter()
        .zip(is_adapt)
        .partition(|(_, a)| *a);
    Ok((
        adapt.into_iter().map(|(t, _)| t).collect(),
        test.into_iter().map(|(t, _)| t).collect(),
    ))
}

pub fn build_split(config: &DynamicsSplitConfig, seed: u64) -> Result<DatasetSplit> {
    let family = config.family;
    if family == Family::GateConfig {
        return Err(Error::InvalidArgument(
            "gate configurations are split by the characteristics module".into(),
        ));
    }
    if config.n_train_systems == 0 || config.n_adapt_systems == 0 {
        return Err(Error::InvalidArgument("system counts must be positive".into()));
    }
    let per_system = config.n_trajectories * config.n_steps;
    if config.n_adapt_points == 0 || config.n_adapt_points >= per_system {
        return Err(Error::InvalidArgument(format!(
            "adaptation points ({}) must be in 1..{per_system}",
            config.n_adapt_points
        )));
    }
    let instances = sample_instances(
        family,
        config.n_train_systems + config.n_adapt_systems,
        seed,
    )?;

    let tuples: Vec<Vec<DataTuple>> = instances
        .par_iter()
        .map(|inst| {
            generate_trajectories(
                inst,
                config.n_trajectories,
                config.n_steps,
                config.dt,
                derive_seed(seed, "trajectories", inst.id as u64),
            )
        })
        .collect::<Result<_>>()?;

    let mut train = Vec::with_capacity(config.n_train_systems * per_system);
    let mut adapt = Vec::new();
    let mut test = Vec::new();
    for (inst, system_tuples) in instances.iter().zip(tuples) {
        if inst.id < config.n_train_systems {
            train.extend(system_tuples);
        } else {
            let mut rng = rng_from(derive_seed(seed, "adapt-subset", inst.id as u64));
            let (a, t) = split_adapt_test(system_tuples, config.n_adapt_points, &mut rng)?;
            adapt.push(SystemTuples { system_id: inst.id, tuples: a });
            test.push(SystemTuples { system_id: inst.id, tuples: t });
        }
    }
    Ok(DatasetSplit {
        family,
        dt: config.dt,
        seed,
        instances,
        train,
        adapt,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_tls_instances_in_range() {
        let inst = sample_instances(Family::ClosedTls, 15, 1).unwrap();
        assert_eq!(inst.len(), 15);
        assert!(inst.iter().all(|s| (0.0..1.0).contains(&s.params[0])));
    }

    #[test]
    fn heisenberg_single_instance() {
        let inst = sample_instances(Family::Heisenberg2, 1, 9).unwrap();
        assert_eq!(inst[0].params.len(), 3);
        assert!(inst[0].params.iter().all(|p| (0.0..1.0).contains(p)));
    }

    #[test]
    fn open_tls_gamma_mean() {
        let inst = sample_instances(Family::OpenTls, 10_000, 2).unwrap();
        let mean = inst.iter().map(|s| s.params[1]).sum::<f64>() / 10_000.0;
        // std of the mean for Exp(mean 0.2) is 0.2/100 = 0.002; allow 3σ + slack.
        assert!((mean - 0.2).abs() < 0.01, "mean gamma {mean}");
    }

    #[test]
    fn zero_instances_rejected() {
        assert!(sample_instances(Family::ClosedTls, 0, 0).is_err());
    }

    #[test]
    fn instance_validation() {
        assert!(SystemInstance::new(0, Family::ClosedTls, vec![1.0]).is_err());
        assert!(SystemInstance::new(0, Family::OpenTls, vec![0.5]).is_err());
        assert!(SystemInstance::new(0, Family::OpenTls, vec![0.5, -0.1]).is_err());
        assert!(SystemInstance::new(0, Family::Heisenberg2, vec![0.1, 0.2, 0.3]).is_ok());
    }

    #[test]
    fn trajectory_counts_and_norms() {
        let inst = SystemInstance::new(4, Family::ClosedTls, vec![0.3]).unwrap();
        let tuples = generate_trajectories(&inst, 5, 10, 0.1, 42).unwrap();
        assert_eq!(tuples.len(), 50);
        for t in &tuples {
            assert_eq!(t.system_id, 4);
            assert_eq!((t.x.len(), t.y.len()), (4, 4));
            let n: f64 = t.y.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-10);
        }
        // consecutive pairs chain inside a trajectory
        for k in 0..9 {
            assert_eq!(tuples[k].y, tuples[k + 1].x);
        }
    }

    #[test]
    fn heisenberg_single_tuple_dims() {
        let inst = SystemInstance::new(0, Family::Heisenberg2, vec![0.5, 0.1, 0.9]).unwrap();
        let tuples = generate_trajectories(&inst, 1, 1, 0.1, 0).unwrap();
        assert_eq!(tuples.len(), 1);
        assert_eq!((tuples[0].x.len(), tuples[0].y.len()), (8, 8));
    }

    #[test]
    fn closed_defaults_split_sizes() {
        let split = build_split(&DynamicsSplitConfig::defaults(Family::ClosedTls), 7).unwrap();
        assert_eq!(split.train.len(), 750);
        assert_eq!(split.train_system_ids().len(), 15);
        assert_eq!(split.adapt.len(), 35);
        for (a, t) in split.adapt.iter().zip(&split.test) {
            assert_eq!(a.system_id, t.system_id);
            assert_eq!(a.tuples.len(), 3);
            assert_eq!(t.tuples.len(), 47);
            for x in &a.tuples {
                assert!(!t.tuples.contains(x));
            }
        }
        let train_ids = split.train_system_ids();
        assert!(split.adapt_system_ids().iter().all(|id| !train_ids.contains(id)));
    }

    #[test]
    fn split_is_deterministic() {
        let cfg = DynamicsSplitConfig {
            n_train_systems: 3,
            n_adapt_systems: 2,
            ..DynamicsSplitConfig::defaults(Family::OpenTls)
        };
        assert_eq!(build_split(&cfg, 5).unwrap(), build_split(&cfg, 5).unwrap());
        assert_ne!(build_split(&cfg, 5).unwrap(), build_split(&cfg, 6).unwrap());
    }

    #[test]
    fn too_many_adapt_points_rejected() {
        let cfg = DynamicsSplitConfig {
            n_adapt_points: 50,
            ..DynamicsSplitConfig::defaults(Family::ClosedTls)
        };
        assert!(build_split(&cfg, 0).is_err());
    }
}
