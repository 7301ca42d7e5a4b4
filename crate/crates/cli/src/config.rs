//! Run configuration: a TOML file whose every key is optional, merged with
//! command-line overrides and per-family defaults into a fully resolved
//! configuration that is written next to the outputs.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use malgo::adapt::AdaptOptimizer;
use malgo::baselines::{BenchmarkSetup, Method, MlpConfig};
use malgo::characteristics::SurrogateKind;
use malgo::densenet::NetworkSpec;
use malgo::meta::TrainSchedule;
use malgo::systems::{DynamicsSplitConfig, Family};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    Closed,
    Open,
    Heisenberg,
    CharG,
    CharRabi,
}

impl FamilyArg {
    pub fn family(self) -> Family {
        match self {
            FamilyArg::Closed => Family::ClosedTls,
            FamilyArg::Open => Family::OpenTls,
            FamilyArg::Heisenberg => Family::Heisenberg2,
            FamilyArg::CharG | FamilyArg::CharRabi => Family::GateConfig,
        }
    }

    pub fn surrogate(self) -> Option<SurrogateKind> {
        match self {
            FamilyArg::CharG => Some(SurrogateKind::GFactor),
            FamilyArg::CharRabi => Some(SurrogateKind::Rabi),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyArg::Closed => "closed",
            FamilyArg::Open => "open",
            FamilyArg::Heisenberg => "heisenberg",
            FamilyArg::CharG => "char-g",
            FamilyArg::CharRabi => "char-rabi",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub family: Option<FamilyArg>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: DataFile,
    pub network: NetworkFile,
    pub train: TrainFile,
    pub adapt: AdaptFile,
    pub mlp: MlpFile,
    pub benchmark: BenchmarkFile,
    pub ablation: AblationFile,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataFile {
    pub n_train_systems: Option<usize>,
    pub n_adapt_systems: Option<usize>,
    pub n_adapt_points: Option<usize>,
    pub n_trajectories: Option<usize>,
    pub n_steps: Option<usize>,
    pub dt: Option<f64>,
    pub adapt_fraction: Option<f64>,
    pub noise: Option<f64>,
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkFile {
    pub hidden_layers: Option<usize>,
    pub hidden_width: Option<usize>,
    pub eta_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainFile {
    pub epochs: Option<usize>,
    pub noise_until: Option<usize>,
    pub freeze_from: Option<usize>,
    pub s_theta: Option<usize>,
    pub s_eta: Option<usize>,
    pub lr_theta: Option<f64>,
    pub lr_eta: Option<f64>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptFile {
    pub restarts: Option<usize>,
    pub epochs: Option<usize>,
    pub sgd_steps: Option<usize>,
    pub sgd_lr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpFile {
    pub hidden_layers: Option<usize>,
    pub hidden_width: Option<usize>,
    pub lr: Option<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkFile {
    pub runs: Option<usize>,
    pub methods: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFile {
    pub fractions: Option<Vec<f64>>,
    pub seeds: Option<usize>,
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub family: Option<FamilyArg>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub seed: u64,
    pub family: FamilyArg,
    /// 0 uses every available core.
    pub threads: usize,
    pub out: PathBuf,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub adapt: AdaptSettings,
    pub mlp: MlpSettings,
    pub benchmark: BenchmarkConfig,
    pub ablation: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataConfig {
    pub n_train_systems: usize,
    pub n_adapt_systems: usize,
    pub n_adapt_points: usize,
    pub n_trajectories: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub adapt_fraction: f64,
    pub noise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub eta_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub noise_until: usize,
    pub freeze_from: usize,
    pub s_theta: usize,
    pub s_eta: usize,
    pub lr_theta: f64,
    pub lr_eta: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptSettings {
    pub restarts: usize,
    pub epochs: usize,
    pub sgd_steps: usize,
    pub sgd_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlpSettings {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub lr: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkConfig {
    pub runs: usize,
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationConfig {
    pub fractions: Vec<f64>,
    pub seeds: usize,
}

pub fn parse_file(text: &str) -> Result<FileConfig> {
    toml::from_str(text).context("invalid configuration")
}

pub fn load(path: Option<&std::path::Path>, overrides: &Overrides) -> Result<Config> {
    let file = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            parse_file(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => FileConfig::default(),
    };
    resolve(file, overrides)
}

pub fn resolve(file: FileConfig, o: &Overrides) -> Result<Config> {
    let family = o.family.or(file.family).unwrap_or(FamilyArg::Closed);
    let fam = family.family();
    let chars = fam == Family::GateConfig;
    let dyn_defaults = DynamicsSplitConfig::defaults(if chars { Family::ClosedTls } else { fam });
    let (n_train, n_adapt) = fam.default_system_counts();
    let sched = TrainSchedule::for_family(fam);
    let (net_layers, net_width) = if chars { (6, 15) } else { (7, 25) };
    let mlp = if chars { MlpConfig::characteristics() } else { MlpConfig::dynamics() };
    let (restarts, epochs) = if chars { (20, 2) } else { (5, 10) };

    let d = file.data;
    let t = file.train;
    let config = Config {
        seed: o.seed.or(file.seed).unwrap_or(0),
        family,
        threads: o.threads.or(file.threads).unwrap_or(0),
        out: o.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
        data: DataConfig {
            n_train_systems: d.n_train_systems.unwrap_or(n_train),
            n_adapt_systems: d.n_adapt_systems.unwrap_or(n_adapt),
            n_adapt_points: d.n_adapt_points.unwrap_or(dyn_defaults.n_adapt_points),
            n_trajectories: d.n_trajectories.unwrap_or(dyn_defaults.n_trajectories),
            n_steps: d.n_steps.unwrap_or(dyn_defaults.n_steps),
            dt: d.dt.unwrap_or(dyn_defaults.dt),
            adapt_fraction: d.adapt_fraction.unwrap_or(0.07),
            noise: d.noise.unwrap_or(0.05),
            input: d.input,
        },
        network: NetworkConfig {
            hidden_layers: file.network.hidden_layers.unwrap_or(net_layers),
            hidden_width: file.network.hidden_width.unwrap_or(net_width),
            eta_dim: file.network.eta_dim.unwrap_or(fam.eta_dim()),
        },
        train: TrainConfig {
            epochs: t.epochs.unwrap_or(sched.total_epochs),
            noise_until: t.noise_until.unwrap_or(sched.noise_until),
            freeze_from: t.freeze_from.unwrap_or(sched.freeze_from),
            s_theta: t.s_theta.unwrap_or(sched.s_theta),
            s_eta: t.s_eta.unwrap_or(sched.s_eta),
            lr_theta: t.lr_theta.unwrap_or(sched.lr_theta),
            lr_eta: t.lr_eta.unwrap_or(sched.lr_eta),
            batch_size: t.batch_size.unwrap_or(sched.batch_size),
        },
        adapt: AdaptSettings {
            restarts: file.adapt.restarts.unwrap_or(restarts),
            epochs: file.adapt.epochs.unwrap_or(epochs),
            sgd_steps: file.adapt.sgd_steps.unwrap_or(1000),
            sgd_lr: file.adapt.sgd_lr.unwrap_or(sched.lr_adapt),
        },
        mlp: MlpSettings {
            hidden_layers: file.mlp.hidden_layers.unwrap_or(mlp.hidden_layers),
            hidden_width: file.mlp.hidden_width.unwrap_or(mlp.hidden_width),
            lr: file.mlp.lr.unwrap_or(mlp.lr),
            steps: file.mlp.steps.unwrap_or(mlp.steps),
        },
        benchmark: BenchmarkConfig {
            runs: file.benchmark.runs.unwrap_or(10),
            methods: file
                .benchmark
                .methods
                .unwrap_or_else(|| Method::ALL.iter().map(|m| m.name().to_string()).collect()),
        },
        ablation: AblationConfig {
            fractions: file.ablation.fractions.unwrap_or_else(|| vec![0.05, 0.1, 0.2, 0.4]),
            seeds: file.ablation.seeds.unwrap_or(5),
        },
    };
    config.schedule().validate()?;
    config.methods()?;
    if config.benchmark.runs == 0 {
        bail!("benchmark.runs must be at least 1");
    }
    Ok(config)
}

impl Config {
    pub fn schedule(&self) -> TrainSchedule {
        let t = &self.train;
        TrainSchedule {
            total_epochs: t.epochs,
            noise_until: t.noise_until,
            freeze_from: t.freeze_from,
            s_theta: t.s_theta,
            s_eta: t.s_eta,
            lr_theta: t.lr_theta,
            lr_eta: t.lr_eta,
            lr_adapt: self.adapt.sgd_lr,
            batch_size: t.batch_size,
        }
    }

    pub fn split_config(&self) -> DynamicsSplitConfig {
        let d = &self.data;
        DynamicsSplitConfig {
            family: self.family.family(),
            n_train_systems: d.n_train_systems,
            n_adapt_systems: d.n_adapt_systems,
            n_adapt_points: d.n_adapt_points,
            n_trajectories: d.n_trajectories,
            n_steps: d.n_steps,
            dt: d.dt,
        }
    }

    /// Network for inputs of width `x_len` and outputs of width `y_len`.
    pub fn network(&self, x_len: usize, y_len: usize) -> NetworkSpec {
        let n = &self.network;
        NetworkSpec::dense(x_len + n.eta_dim, n.hidden_layers, n.hidden_width, y_len)
    }

    pub fn malgo_optimizer(&self) -> AdaptOptimizer {
        AdaptOptimizer::lbfgs(self.adapt.restarts, self.adapt.epochs)
    }

    pub fn sgd_optimizer(&self) -> AdaptOptimizer {
        AdaptOptimizer::Sgd { steps: self.adapt.sgd_steps, lr: self.adapt.sgd_lr }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        let m = &self.mlp;
        MlpConfig { hidden_layers: m.hidden_layers, hidden_width: m.hidden_width, lr: m.lr, steps: m.steps }
    }

    pub fn setup(&self, x_len: usize, y_len: usize) -> BenchmarkSetup {
        BenchmarkSetup {
            spec: self.network(x_len, y_len),
            schedule: self.schedule(),
            malgo_adapt: self.malgo_optimizer(),
            imode_adapt: self.sgd_optimizer(),
            mlp: self.mlp_config(),
        }
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.benchmark
            .methods
            .iter()
            .map(|name| {
                Method::from_name(name).with_context(|| format!("unknown method `{name}` (expected malgo, imode or mlp)"))
            })
            .collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
