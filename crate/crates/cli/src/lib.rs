//! Experiment driver for the `malgo` library: configuration, file formats,
//! plots and the subcommands of the `malgo` binary.

pub mod config;
pub mod formats;
pub mod plot;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use malgo::adapt::{adapt_split, evaluate, AdaptConfig, AdaptationResult};
use malgo::baselines::{run_benchmark, train_imode};
use malgo::characteristics::{
    build_char_split, generate_surrogate, ingest, normalize, run_ablation, write_records, CharRecord,
    SurrogateConfig,
};
use malgo::meta::{eta_correlation, train};
use malgo::seed::derive_seed;
use malgo::stats::aggregate;
use malgo::systems::{build_split, DatasetSplit, Family};

use config::{Config, FamilyArg, Overrides};
use formats::Checkpoint;

#[derive(Debug, Parser)]
#[command(name = "malgo", version, about = "Meta-learning of quantum dynamics and qubit characteristics")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub family: Option<FamilyArg>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate (or ingest and split) a dataset.
    Generate {
        /// Also write a CSV export of every tuple.
        #[arg(long)]
        csv: bool,
    },
    /// Meta-train on a dataset.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_enum, default_value_t = TrainMethod::Malgo)]
        method: TrainMethod,
    },
    /// Fit contexts of the held-out systems.
    Adapt {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_enum, default_value_t = AdaptMethod::Lbfgs)]
        optimizer: AdaptMethod,
    },
    /// Re-evaluate stored contexts on a dataset.
    Eval {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        model: ModelArg,
        /// Adaptation CSV holding the contexts.
        #[arg(long)]
        adaptation: Option<PathBuf>,
    },
    /// All methods over several runs.
    Benchmark,
    /// Test loss against adaptation set size (characteristics only).
    Ablate,
    /// Write a synthetic characteristics table (characteristics only).
    Surrogate {
        /// Multiplicative noise level.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Render a CSV written by another command as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<PlotKind>,
    },
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Dataset file (default: <out>/dataset.bin).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Checkpoint file (default: <out>/model.ckpt).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMethod {
    Malgo,
    Imode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdaptMethod {
    Lbfgs,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    TrainLog,
    Benchmark,
    Ablation,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Train { .. } => "train",
            Command::Adapt { .. } => "adapt",
            Command::Eval { .. } => "eval",
            Command::Benchmark => "benchmark",
            Command::Ablate => "ablate",
            Command::Surrogate { .. } => "surrogate",
            Command::Plot { .. } => "plot",
        }
    }
}

/// Runs one parsed invocation; progress goes to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides { seed: cli.seed, family: cli.family, threads: cli.threads, out: cli.out.clone() };
    let mut config = config::load(cli.config.as_deref(), &overrides)?;
    if let Command::Surrogate { noise: Some(n) } = &cli.command {
        config.data.noise = *n;
    }
    if config.threads > 0 {
        malgo::par::set_num_threads(config.threads);
    }
    fs::create_dir_all(&config.out).with_context(|| format!("cannot create {}", config.out.display()))?;
    write_text(&config.out.join(format!("{}.config.toml", cli.command.name())), &config.to_toml()?)?;

    match cli.command {
        Command::Generate { csv } => cmd_generate(&config, csv),
        Command::Train { data, method } => cmd_train(&config, &data, method),
        Command::Adapt { data, model, optimizer } => cmd_adapt(&config, &data, &model, optimizer),
        Command::Eval { data, model, adaptation } => cmd_eval(&config, &data, &model, adaptation),
        Command::Benchmark => cmd_benchmark(&config),
        Command::Ablate => cmd_ablate(&config),
        Command::Surrogate { .. } => cmd_surrogate(&config),
        Command::Plot { input, kind } => cmd_plot(&config, &input, kind),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot read {}", path.display()))?))
}

/// Raw characteristics records: the configured input file, or the surrogate.
pub fn char_records(config: &Config, seed: u64) -> Result<Vec<CharRecord>> {
    let Some(kind) = config.family.surrogate() else {
        bail!("family {} has no characteristics data", config.family.name());
    };
    match &config.data.input {
        Some(path) => Ok(ingest(open(path)?).with_context(|| format!("in {}", path.display()))?),
        None => Ok(generate_surrogate(&SurrogateConfig { noise: config.data.noise, ..SurrogateConfig::new(kind) }, seed)?),
    }
}

fn normalized_records(config: &Config) -> Result<Vec<CharRecord>> {
    let records = char_records(config, derive_seed(config.seed, "surrogate", 0))?;
    Ok(normalize(&records)?.0)
}

/// The dataset a command would generate for `seed`.
pub fn make_split(config: &Config, seed: u64) -> Result<DatasetSplit> {
    if config.family.family() == Family::GateConfig {
        let records = normalized_records(config)?;
        Ok(build_char_split(&records, config.data.adapt_fraction, seed)?)
    } else {
        Ok(build_split(&config.split_config(), seed)?)
    }
}

fn load_split(config: &Config, data: &DataArg) -> Result<DatasetSplit> {
    let path = data.data.clone().unwrap_or_else(|| config.out.join("dataset.bin"));
    let (_, split) = formats::read_dataset(open(&path)?).with_context(|| format!("in {}", path.display()))?;
    Ok(split)
}

fn load_model(config: &Config, model: &ModelArg, split: &DatasetSplit) -> Result<Checkpoint> {
    let path = model.model.clone().unwrap_or_else(|| config.out.join("model.ckpt"));
    let ck = formats::read_checkpoint(open(&path)?).with_context(|| format!("in {}", path.display()))?;
    if ck.family != split.family {
        bail!("model was trained on {} but the dataset is {}", ck.family.name(), split.family.name());
    }
    Ok(ck)
}

fn cmd_generate(config: &Config, csv: bool) -> Result<()> {
    let split = make_split(config, config.seed)?;
    let path = config.out.join("dataset.bin");
    formats::write_dataset(create(&path)?, &split)?;
    if csv {
        formats::write_dataset_csv(create(&config.out.join("dataset.csv"))?, &split)?;
    }
    println!(
        "{}: {} training systems, {} adaptation systems, {} tuples -> {}",
        split.family.name(),
        split.train_system_ids().len(),
        split.adapt_system_ids().len(),
        split.total_tuples(),
        path.display()
    );
    Ok(())
}

fn cmd_train(config: &Config, data: &DataArg, method: TrainMethod) -> Result<()> {
    let split = load_split(config, data)?;
    let spec = config.network(split.x_len(), split.y_len());
    let seed = derive_seed(config.seed, "train", 0);
    let (model, log) = match method {
        TrainMethod::Malgo => train(&split, spec, &config.schedule(), seed)?,
        TrainMethod::Imode => train_imode(&split, spec, &config.schedule(), seed)?,
    };
    formats::write_checkpoint(create(&config.out.join("model.ckpt"))?, &Checkpoint { family: split.family, model: model.clone() })?;
    formats::write_train_log(create(&config.out.join("train_log.csv"))?, &log)?;
    println!("trained {} parameters for {} epochs, final loss {}", spec.param_count(), log.records.len(), log.final_loss().unwrap_or(f64::NAN));
    if split.family == Family::ClosedTls && model.eta_dim == 1 {
        if let Ok(rho) = eta_correlation(&model, &split.instances) {
            println!("rank correlation between context and detuning: {rho}");
        }
    }
    Ok(())
}

fn mean_metric(results: &[AdaptationResult]) -> f64 {
    results.iter().map(|r| r.test_infidelity.unwrap_or(r.test_loss)).sum::<f64>() / results.len().max(1) as f64
}

fn cmd_adapt(config: &Config, data: &DataArg, model: &ModelArg, optimizer: AdaptMethod) -> Result<()> {
    let split = load_split(config, data)?;
    let ck = load_model(config, model, &split)?;
    let opt = match optimizer {
        AdaptMethod::Lbfgs => config.malgo_optimizer(),
        AdaptMethod::Sgd => config.sgd_optimizer(),
    };
    let results = adapt_split(&ck.model, &split, &AdaptConfig::new(opt, derive_seed(config.seed, "adapt", 0)))?;
    formats::write_adaptation(create(&config.out.join("adaptation.csv"))?, &results, &split)?;
    println!("adapted {} systems, mean test metric {}", results.len(), mean_metric(&results));
    Ok(())
}

fn cmd_eval(config: &Config, data: &DataArg, model: &ModelArg, adaptation: Option<PathBuf>) -> Result<()> {
    let split = load_split(config, data)?;
    let ck = load_model(config, model, &split)?;
    let path = adaptation.unwrap_or_else(|| config.out.join("adaptation.csv"));
    let stored = formats::read_adaptation(&read_text(&path)?).with_context(|| format!("in {}", path.display()))?;
    let kind = split.family.state_kind();
    let mut results = Vec::with_capacity(stored.len());
    for s in &stored {
        let find = |groups: &[malgo::systems::SystemTuples]| {
            groups
                .iter()
                .find(|g| g.system_id == s.system_id)
                .map(|g| g.tuples.clone())
                .with_context(|| format!("system {} is not held out in the dataset", s.system_id))
        };
        let (adapt_loss, _) = evaluate(&ck.model.theta, &s.eta_star, &find(&split.adapt)?, None)?;
        let (test_loss, test_infidelity) = evaluate(&ck.model.theta, &s.eta_star, &find(&split.test)?, kind)?;
        results.push(AdaptationResult {
            system_id: s.system_id,
            eta_star: s.eta_star.clone(),
            adapt_loss,
            test_loss,
            test_infidelity,
            restart_diagnostics: vec![],
        });
    }
    formats::write_adaptation(create(&config.out.join("eval.csv"))?, &results, &split)?;
    println!("evaluated {} systems, mean test metric {}", results.len(), mean_metric(&results));
    Ok(())
}

fn cmd_benchmark(config: &Config) -> Result<()> {
    let methods = config.methods()?;
    let probe = make_split(config, config.seed)?;
    let setup = config.setup(probe.x_len(), probe.y_len());
    let rows = run_benchmark(|s| make_split(config, s).map_err(to_lib_error), &setup, &methods, config.benchmark.runs, config.seed)?;
    let family = config.family.name();
    formats::write_benchmark(create(&config.out.join("benchmark.csv"))?, family, &rows)?;
    let mut summary = Vec::new();
    for m in &methods {
        let vals: Vec<f64> = rows.iter().filter(|r| r.method == *m).map(|r| r.metric).collect();
        let (mean, std) = aggregate(&vals)?;
        println!("{:>6}: log10 mean {mean:.4}, log10 std {std:.4}", m.name());
        summary.push((m.name().to_string(), mean, std));
    }
    formats::write_summary(create(&config.out.join("benchmark_summary.csv"))?, "method", &summary)?;
    Ok(())
}

fn to_lib_error(e: anyhow::Error) -> malgo::Error {
    match e.downcast::<malgo::Error>() {
        Ok(inner) => inner,
        Err(other) => malgo::Error::InvalidArgument(format!("{other:#}")),
    }
}

fn cmd_ablate(config: &Config) -> Result<()> {
    if config.family.family() != Family::GateConfig {
        bail!("ablation runs on characteristics families (char-g, char-rabi)");
    }
    let records = normalized_records(config)?;
    let probe = build_char_split(&records, config.ablation.fractions[0], 0)?;
    let setup = config.setup(probe.x_len(), probe.y_len());
    let table = run_ablation(&records, &config.ablation.fractions, config.ablation.seeds, &setup, config.seed)?;
    formats::write_ablation(create(&config.out.join("ablation.csv"))?, &table.rows)?;
    let summary: Vec<(String, f64, f64)> = table.summary.iter().map(|(f, m, s)| (f.to_string(), *m, *s)).collect();
    for (f, m, s) in &summary {
        println!("fraction {f}: log10 mean {m:.4}, log10 std {s:.4}");
    }
    formats::write_summary(create(&config.out.join("ablation_summary.csv"))?, "fraction", &summary)?;
    Ok(())
}

fn cmd_surrogate(config: &Config) -> Result<()> {
    let Some(kind) = config.family.surrogate() else {
        bail!("surrogate data exists for char-g and char-rabi only");
    };
    let records = generate_surrogate(&SurrogateConfig { noise: config.data.noise, ..SurrogateConfig::new(kind) }, config.seed)?;
    let path = config.out.join(format!("surrogate_{}.csv", config.family.name()));
    let mut w = create(&path)?;
    write_records(&mut w, &records)?;
    w.flush()?;
    println!("{} records -> {}", records.len(), path.display());
    Ok(())
}

fn detect_kind(text: &str) -> Result<PlotKind> {
    let header = text.lines().next().unwrap_or("");
    Ok(if header.starts_with("epoch,phase,loss") {
        PlotKind::TrainLog
    } else if header.starts_with("method,family,run,metric") {
        PlotKind::Benchmark
    } else if header.starts_with("fraction,seed,test_loss") {
        PlotKind::Ablation
    } else {
        bail!("cannot tell what to plot from header `{header}`")
    })
}

fn cmd_plot(config: &Config, input: &Path, kind: Option<PlotKind>) -> Result<()> {
    let text = read_text(input)?;
    let kind = match kind {
        Some(k) => k,
        None => detect_kind(&text)?,
    };
    let svg = match kind {
        PlotKind::TrainLog => plot::train_log_svg(&formats::read_train_log(&text)?)?,
        PlotKind::Benchmark => {
            let (family, rows) = formats::read_benchmark(&text)?;
            plot::benchmark_svg(&family, &rows)?
        }
        PlotKind::Ablation => plot::ablation_svg(&formats::read_ablation(&text)?)?,
    };
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let path = config.out.join(format!("{stem}.svg"));
    write_text(&path, &svg)?;
    println!("{}", path.display());
    Ok(())
}
