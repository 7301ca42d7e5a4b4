//! Bilevel meta-training of shared weights θ and per-system contexts η.
//!
//! Each epoch walks the shuffled training tuples in mini-batches. What
//! happens to the contexts depends on the epoch's phase:
//!
//! * **noise** (`epoch <= noise_until`): every η is redrawn from a standard
//!   normal before each θ step and never optimized, so θ first learns what
//!   the systems have in common;
//! * **update**: per batch, `s_theta` Adam steps on θ with η fixed, then
//!   `s_eta` Adam steps on each η present in the batch with θ fixed;
//! * **freeze** (`epoch >= freeze_from`): η is constant; only θ moves.
//!
//! Disabling noise and freeze (`noise_until = 0`, `freeze_from =
//! total_epochs + 1`) gives the schedule-free trainer used as a baseline.

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::densenet::{eta_loss_and_grad, GradMode, NetworkSpec, Theta};
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::par::*;
use crate::seed::{child_rng, derive_seed};
use crate::stats::spearman;
use crate::systems::{DataTuple, DatasetSplit, Family, SystemInstance};

/// Shared weights plus one context vector per training system.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaModel {
    pub theta: Theta,
    pub eta_dim: usize,
    pub etas: BTreeMap<usize, Vec<f64>>,
}

impl MetaModel {
    pub fn new(theta: Theta, eta_dim: usize, etas: BTreeMap<usize, Vec<f64>>) -> Result<Self> {
        if let Some((id, _)) = etas
            .iter()
            .find(|(_, e)| e.len() != eta_dim || e.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Invariant(format!(
                "context of system {id} is malformed"
            )));
        }
        if eta_dim > theta.spec().input_dim {
            return Err(Error::Dimension("context wider than network input".into()));
        }
        Ok(Self { theta, eta_dim, etas })
    }

    pub fn x_len(&self) -> usize {
        self.theta.spec().input_dim - self.eta_dim
    }

    /// Component-wise mean of the context table.
    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.eta_dim];
        for e in self.etas.values() {
            c.iter_mut().zip(e).for_each(|(a, b)| *a += b);
        }
        let n = self.etas.len().max(1) as f64;
        c.iter_mut().for_each(|a| *a /= n);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Noise,
    Update,
    Freeze,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Noise => "noise",
            Phase::Update => "update",
            Phase::Freeze => "freeze",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "noise" => Some(Phase::Noise),
            "update" => Some(Phase::Update),
            "freeze" => Some(Phase::Freeze),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub total_epochs: usize,
    /// Last epoch (1-based) of the noise phase; 0 disables noising.
    pub noise_until: usize,
    /// First epoch of the freeze phase; `total_epochs + 1` disables freezing.
    pub freeze_from: usize,
    pub s_theta: usize,
    pub s_eta: usize,
    pub lr_theta: f64,
    pub lr_eta: f64,
    /// Adaptation-stage learning rate; only used by gradient-descent
    /// adaptation.
    pub lr_adapt: f64,
    pub batch_size: usize,
}

impl TrainSchedule {
    pub fn for_family(family: Family) -> Self {
        let batch_size = match family {
            Family::ClosedTls => 500,
            Family::OpenTls => 1000,
            Family::Heisenberg2 => 3000,
            Family::GateConfig => 200,
        };
        Self {
            total_epochs: 250,
            noise_until: 20,
            freeze_from: 201,
            s_theta: 1,
            s_eta: 10,
            lr_theta: 0.01,
            lr_eta: 0.003,
            lr_adapt: 0.1,
            batch_size,
        }
    }

    /// Same hyperparameters with noising and freezing switched off.
    pub fn without_phases(&self) -> Self {
        Self {
            noise_until: 0,
            freeze_from: self.total_epochs + 1,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_until < self.freeze_from && self.freeze_from <= self.total_epochs + 1) {
            return Err(Error::InvalidArgument(format!(
                "need noise_until < freeze_from <= total_epochs + 1, got {} / {} / {}",
                self.noise_until, self.freeze_from, self.total_epochs
            )));
        }
        if self.batch_size == 0 || self.s_theta == 0 {
            return Err(Error::InvalidArgument("batch size and s_theta must be positive".into()));
        }
        Ok(())
    }

    pub fn phase(&self, epoch: usize) -> Phase {
        if epoch <= self.noise_until {
            Phase::Noise
        } else if epoch >= self.freeze_from {
            Phase::Freeze
        } else {
            Phase::Update
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Tuple-weighted mean of the batch losses seen by the θ steps.
    pub loss: f64,
    /// Contexts at the end of the epoch, by ascending system id.
    pub etas: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// Trajectory of one system's context over epochs.
    pub fn eta_series(&self, system_id: usize) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .filter_map(|r| r.etas.iter().find(|(id, _)| *id == system_id).map(|(_, e)| e.clone()))
            .collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Inputs `[x | η_system]` and targets for a mixed-system batch.
pub(crate) fn stack_batch(
    tuples: &[DataTuple],
    indices: &[usize],
    etas: &BTreeMap<usize, Vec<f64>>,
    x_len: usize,
    eta_dim: usize,
) -> (Array2<f64>, Array2<f64>) {
    let y_len = tuples[indices[0]].y.len();
    let mut inputs = Array2::<f64>::zeros((indices.len(), x_len + eta_dim));
    let mut targets = Array2::<f64>::zeros((indices.len(), y_len));
    for (r, &i) in indices.iter().enumerate() {
        let t = &tuples[i];
        let mut row = inputs.row_mut(r);
        row.slice_mut(s![..x_len]).assign(&ArrayView1::from(&t.x[..]));
        row.slice_mut(s![x_len..])
            .assign(&ArrayView1::from(&etas[&t.system_id][..]));
        targets.row_mut(r).assign(&ArrayView1::from(&t.y[..]));
    }
    (inputs, targets)
}

/// One Adam step on θ for a batch with the contexts held fixed.
pub(crate) fn theta_step(
    theta: &mut Theta,
    adam: &mut AdamState,
    tuples: &[DataTuple],
    indices: &[usize],
    etas: &BTreeMap<usize, Vec<f64>>,
    eta_dim: usize,
) -> Result<f64> {
    let x_len = theta.spec().input_dim - eta_dim;
    let (inputs, targets) = stack_batch(tuples, indices, etas, x_len, eta_dim);
    let g = theta.batch_gradient(inputs.view(), targets.view(), GradMode::Full)?;
    if !g.loss.is_finite() {
        return Ok(g.loss);
    }
    adam.step(theta.params_mut(), g.d_theta.as_deref().expect("full mode"))?;
    Ok(g.loss)
}

/// `steps` Adam steps on each listed system's context with θ fixed.
pub(crate) fn eta_block(
    theta: &Theta,
    tuples: &[DataTuple],
    by_system: &BTreeMap<usize, Vec<usize>>,
    etas: &mut BTreeMap<usize, Vec<f64>>,
    adams: &mut BTreeMap<usize, AdamState>,
    steps: usize,
) -> Result<()> {
    let work: Vec<(usize, Vec<f64>, AdamState, Vec<&DataTuple>)> = by_system
        .iter()
        .map(|(id, idx)| {
            (
                *id,
                etas[id].clone(),
                adams[id].clone(),
                idx.iter().map(|&i| &tuples[i]).collect(),
            )
        })
        .collect();
    let updated: Vec<Result<(usize, Vec<f64>, AdamState)>> = work
        .into_par_iter()
        .map(|(id, mut eta, mut adam, batch)| {
            for _ in 0..steps {
                let (loss, grad) = eta_loss_and_grad(theta, &eta, &batch)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("context loss of system {id}")));
                }
                adam.step(&mut eta, &grad)?;
            }
            Ok((id, eta, adam))
        })
        .collect();
    for r in updated {
        let (id, eta, adam) = r?;
        etas.insert(id, eta);
        adams.insert(id, adam);
    }
    Ok(())
}

/// Meta-trains on `split.train`. The context width is the network input
/// width minus the state length.
pub fn train(
    split: &DatasetSplit,
    spec: NetworkSpec,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(MetaModel, TrainLog)> {
    schedule.validate()?;
    let tuples = &split.train;
    if tuples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let x_len = split.x_len();
    if spec.input_dim <= x_len {
        return Err(Error::Dimension(format!(
            "network input {} leaves no room for a context after {x_len} state entries",
            spec.input_dim
        )));
    }
    let eta_dim = spec.input_dim - x_len;
    let ids = split.train_system_ids();

    let mut theta = Theta::init(spec, derive_seed(seed, "theta-init", 0))?;
    let mut rng = child_rng(seed, "meta-train", 0);
    let mut etas: BTreeMap<usize, Vec<f64>> = ids
        .iter()
        .map(|&id| (id, standard_normal(&mut rng, eta_dim)))
        .collect();
    let mut adam_theta = AdamState::new(theta.len(), schedule.lr_theta);
    let mut adam_eta: BTreeMap<usize, AdamState> = ids
        .iter()
        .map(|&id| (id, AdamState::new(eta_dim, schedule.lr_eta)))
        .collect();

    let mut order: Vec<usize> = (0..tuples.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 1..=schedule.total_epochs {
        let phase = schedule.phase(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(schedule.batch_size).enumerate() {
            let mut batch_loss = 0.0;
            for step in 0..schedule.s_theta {
                if phase == Phase::Noise {
                    for id in &ids {
                        etas.insert(*id, standard_normal(&mut rng, eta_dim));
                    }
                }
                let loss = theta_step(&mut theta, &mut adam_theta, tuples, batch, &etas, eta_dim)?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch, batch: b });
                }
                if step == 0 {
                    batch_loss = loss;
                }
            }
            loss_sum += batch_loss * batch.len() as f64;

            if phase == Phase::Update && schedule.s_eta > 0 {
                let mut by_system: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                for &i in batch {
                    by_system.entry(tuples[i].system_id).or_default().push(i);
                }
                eta_block(&theta, tuples, &by_system, &mut etas, &mut adam_eta, schedule.s_eta)
                    .map_err(|e| match e {
                        Error::NonFinite(_) => Error::TrainingDiverged { epoch, batch: b },
                        other => other,
                    })?;
            }
        }
        log.records.push(EpochRecord {
            epoch,
            phase,
            loss: loss_sum / tuples.len() as f64,
            etas: etas.iter().map(|(id, e)| (*id, e.clone())).collect(),
        });
    }
    let model = MetaModel::new(theta, eta_dim, etas)?;
    Ok((model, log))
}

/// Mean squared error of the trained model over its own training tuples.
pub fn training_loss(model: &MetaModel, tuples: &[DataTuple]) -> Result<f64> {
    let indices: Vec<usize> = (0..tuples.len()).collect();
    let (inputs, targets) = stack_batch(tuples, &indices, &model.etas, model.x_len(), model.eta_dim);
    let pred = model.theta.predict(inputs.view())?;
    let diff = pred - targets;
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
}

/// Spearman correlation between learned 1-D contexts and the single true
/// parameter of each training system.
pub fn eta_correlation(model: &MetaModel, instances: &[SystemInstance]) -> Result<f64> {
    if model.eta_dim != 1 {
        return Err(Error::InvalidArgument(format!(
            "rank correlation needs 1-D contexts, model has {}",
            model.eta_dim
        )));
    }
    let mut etas = Vec::new();
    let mut truth = Vec::new();
    for inst in instances {
        if inst.params.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "rank correlation needs one true parameter, system {} has {}",
                inst.id,
                inst.params.len()
            )));
        }
        if let Some(e) = model.etas.get(&inst.id) {
            etas.push(e[0]);
            truth.push(inst.params[0]);
        }
    }
    spearman(&etas, &truth)
}

/// Per-row squared-error contributions, averaged within each system.
pub fn per_system_loss(model: &MetaModel, tuples: &[DataTuple]) -> Result<BTreeMap<usize, f64>> {
    let indices: Vec<usize> = (0..tuples.len()).collect();
    let (inputs, targets) = stack_batch(tuples, &indices, &model.etas, model.x_len(), model.eta_dim);
    let pred = model.theta.predict(inputs.view())?;
    let sq = (pred - targets).mapv(|d| d * d).mean_axis(Axis(1)).expect("non-empty");
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (t, v) in tuples.iter().zip(sq.iter()) {
        let e = sums.entry(t.system_id).or_default();
        e.0 += v;
        e.1 += 1;
    }
    Ok(sums.into_iter().map(|(id, (s, n))| (id, s / n as f64)).collect())
}
