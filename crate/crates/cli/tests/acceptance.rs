//! Acceptance criteria, end to end. Every criterion runs at its stated
//! tolerance and prints one PASS/FAIL line; the test fails if any does.
//!
//! The long benchmark criteria run the release-grade pipeline through the
//! `malgo` binary; expect the whole suite to take on the order of an hour
//! on one core.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use malgo::adapt::{adapt_system, AdaptConfig, AdaptOptimizer};
use malgo::characteristics::{config_counts, ingest};
use malgo::checks::{gradient_suite, physics_suite};
use malgo::densenet::NetworkSpec;
use malgo::meta::{eta_correlation, Phase, TrainSchedule};
use malgo::quantum::{propagate_closed, tls_hamiltonian, vectorize_ket, QuantumState, StateKind};
use malgo::seed::rng_from;
use malgo::stats::{aggregate, non_increasing_within_pooled_std};
use malgo::systems::{DataTuple, Family, DEFAULT_DT};
use malgo_cli::config::{self, FamilyArg, Overrides};
use malgo_cli::formats;

/// Physics and gradient suites: instances per family, configurations per spec.
const PHYSICS_INSTANCES: usize = 100;
const GRADIENT_CONFIGS: usize = 20;
const PARAM_RANGE: (usize, usize) = (14_000, 16_000);
const SPEARMAN_MIN: f64 = 0.9;
/// Distance beyond the training detuning range for the synthetic systems.
const EXTRAPOLATION_MARGIN: f64 = 0.5;
const CLOSED_RUNS: usize = 10;
const OPEN_HEIS_RUNS: usize = 3;
const CHAR_RUNS: usize = 5;
const ABLATION_FRACTIONS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
const ABLATION_SEEDS: usize = 5;
const G_COUNTS: [usize; 3] = [260, 84, 125];
const RABI_COUNTS: [usize; 3] = [215, 33, 97];
/// Largest per-step displacement of bias-corrected Adam, in units of the
/// learning rate, for β₁ = 0.9 and β₂ = 0.999.
const ADAM_STEP_BOUND: f64 = 7.28;

type Outcome = Result<String, String>;

struct Report {
    lines: Vec<(usize, &'static str, bool, String)>,
}

impl Report {
    fn check(&mut self, n: usize, name: &'static str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let line = format!(
            "criterion {n} [{name}]: {} ({:.1}s) {detail}",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        println!("{line}");
        self.lines.push((n, name, ok, detail));
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Runs the binary with `--out dir` and an optional config file.
fn malgo(dir: &Path, config: Option<&Path>, args: &[&str]) -> Result<String, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_malgo"));
    cmd.args(args).arg("--out").arg(dir);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    let out = cmd.output().map_err(|e| format!("cannot run malgo: {e}"))?;
    if !out.status.success() {
        return Err(format!("malgo {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn err(e: impl std::fmt::Display) -> String {
    format!("{e:#}")
}

/// Per-method (log10 mean, log10 std) from a benchmark CSV.
fn benchmark_stats(path: &Path) -> Result<BTreeMap<String, (f64, f64)>, String> {
    let (_, rows) = formats::read_benchmark(&read(path)?).map_err(err)?;
    let mut by_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_method.entry(r.method.name().to_string()).or_default().push(r.metric);
    }
    by_method.into_iter().map(|(m, v)| Ok((m, aggregate(&v).map_err(err)?))).collect()
}

fn describe(stats: &BTreeMap<String, (f64, f64)>) -> String {
    stats.iter().map(|(m, (mean, std))| format!("{m} {mean:.3}±{std:.3}")).collect::<Vec<_>>().join(", ")
}

fn ordering(stats: &BTreeMap<String, (f64, f64)>, rivals: &[&str]) -> Result<bool, String> {
    let get = |m: &str| stats.get(m).map(|s| s.0).ok_or_else(|| format!("no {m} rows"));
    let ours = get("malgo")?;
    for r in rivals {
        if ours >= get(r)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn physics() -> Outcome {
    physics_suite(PHYSICS_INSTANCES, 2024).map_err(err)?;
    Ok(format!("{PHYSICS_INSTANCES} instances per family and per oracle size"))
}

fn gradients() -> Outcome {
    gradient_suite(NetworkSpec::dynamics(4, 1), 4, GRADIENT_CONFIGS, 1).map_err(|e| format!("dynamics: {e}"))?;
    gradient_suite(NetworkSpec::characteristics(3, 7, 1), 3, GRADIENT_CONFIGS, 2)
        .map_err(|e| format!("characteristics: {e}"))?;
    Ok(format!("{GRADIENT_CONFIGS} configurations per spec"))
}

fn param_count() -> Outcome {
    let overrides = Overrides { family: Some(FamilyArg::Closed), ..Default::default() };
    let config = config::load(None, &overrides).map_err(err)?;
    let n = config.network(4, 4).param_count();
    if (PARAM_RANGE.0..=PARAM_RANGE.1).contains(&n) {
        Ok(format!("{n} parameters"))
    } else {
        Err(format!("{n} parameters outside {PARAM_RANGE:?}"))
    }
}

/// Seed-0 ClosedTLS generate + train + adapt, shared by criteria 4 and 5.
struct ClosedRun {
    dir: PathBuf,
}

impl ClosedRun {
    fn new(root: &Path) -> Result<Self, String> {
        let dir = root.join("closed-seed0");
        malgo(&dir, None, &["generate", "--family", "closed", "--seed", "0"])?;
        malgo(&dir, None, &["train", "--family", "closed", "--seed", "0"])?;
        malgo(&dir, None, &["adapt", "--family", "closed", "--seed", "0"])?;
        Ok(Self { dir })
    }

    fn split(&self) -> Result<malgo::systems::DatasetSplit, String> {
        let f = fs::File::open(self.dir.join("dataset.bin")).map_err(err)?;
        Ok(formats::read_dataset(f).map_err(err)?.1)
    }

    fn checkpoint(&self) -> Result<formats::Checkpoint, String> {
        let f = fs::File::open(self.dir.join("model.ckpt")).map_err(err)?;
        formats::read_checkpoint(f).map_err(err)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn schedule_exactness(run: &Result<ClosedRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let log = formats::read_train_log(&read(&run.dir.join("train_log.csv"))?).map_err(err)?;
    let split = run.split()?;
    let sched = TrainSchedule::for_family(Family::ClosedTls);
    if log.records.len() != sched.total_epochs {
        return Err(format!("{} epochs logged, expected {}", log.records.len(), sched.total_epochs));
    }
    for r in &log.records {
        if r.phase != sched.phase(r.epoch) {
            return Err(format!("epoch {} labelled {}", r.epoch, r.phase.name()));
        }
    }
    let batches = split.train.len().div_ceil(sched.batch_size);
    let epoch_bound = (batches * sched.s_eta) as f64 * sched.lr_eta * ADAM_STEP_BOUND;

    let (mut noise_moves, mut noise_count) = (0.0, 0usize);
    let mut update_max = 0.0f64;
    let mut update_total = 0.0f64;
    for id in split.train_system_ids() {
        let series = log.eta_series(id);
        for e in 1..series.len() {
            let (prev, cur) = (&series[e - 1], &series[e]);
            let d = max_abs_diff(prev, cur);
            // series[e] is the context after epoch e + 1
            match log.records[e].phase {
                Phase::Noise => {
                    if d == 0.0 {
                        return Err(format!("system {id}: context not resampled at epoch {}", e + 1));
                    }
                    noise_moves += d;
                    noise_count += 1;
                }
                Phase::Update => {
                    update_max = update_max.max(d);
                    update_total += d;
                }
                Phase::Freeze => {
                    if prev.iter().zip(cur).any(|(a, b)| a.to_bits() != b.to_bits()) {
                        return Err(format!("system {id}: context changed at frozen epoch {}", e + 1));
                    }
                }
            }
        }
    }
    let noise_mean = noise_moves / noise_count.max(1) as f64;
    if update_max > epoch_bound {
        return Err(format!("update step {update_max:.4} exceeds optimizer bound {epoch_bound:.4}"));
    }
    if update_total == 0.0 {
        return Err("contexts constant during the update phase".into());
    }
    if noise_mean <= epoch_bound {
        return Err(format!("noise-phase mean move {noise_mean:.4} within optimizer bound {epoch_bound:.4}"));
    }
    Ok(format!(
        "noise mean move {noise_mean:.3} > bound {epoch_bound:.3} >= update max move {update_max:.4}; frozen from epoch {}",
        sched.freeze_from
    ))
}

/// One system's tuples from Haar-random starts under H(Δ), Δ unrestricted.
fn synthetic_closed(delta: f64, system_id: usize, seed: u64) -> Result<Vec<DataTuple>, String> {
    let h = tls_hamiltonian(delta);
    let mut rng = rng_from(seed);
    let mut out = Vec::new();
    for _ in 0..5 {
        let mut psi = QuantumState::haar_random(2, &mut rng).map_err(err)?;
        for _ in 0..10 {
            let next = propagate_closed(&psi, &h, DEFAULT_DT).map_err(err)?;
            out.push(DataTuple { system_id, x: vectorize_ket(&psi), y: vectorize_ket(&next) });
            psi = next;
        }
    }
    Ok(out)
}

fn interpretability(run: &Result<ClosedRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let split = run.split()?;
    let ck = run.checkpoint()?;
    let rho = eta_correlation(&ck.model, &split.instances).map_err(err)?;

    let train_deltas: Vec<f64> = split
        .instances
        .iter()
        .filter(|i| ck.model.etas.contains_key(&i.id))
        .map(|i| i.params[0])
        .collect();
    let lo = train_deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = train_deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    // held-out dataset systems outside [lo, hi]
    let adapted = formats::read_adaptation(&read(&run.dir.join("adaptation.csv"))?).map_err(err)?;
    let mut outside = 0;
    for r in &adapted {
        let delta = split.instance(r.system_id).ok_or("unknown system")?.params[0];
        if delta < lo || delta > hi {
            outside += 1;
            match r.test_infidelity {
                Some(v) if v.is_finite() => {}
                other => return Err(format!("system {} (Δ={delta:.3}): infidelity {other:?}", r.system_id)),
            }
        }
    }
    // synthetic systems well beyond the range
    let config = AdaptConfig::new(AdaptOptimizer::lbfgs(5, 10), 9);
    let mut synthetic = Vec::new();
    for (k, delta) in [hi + EXTRAPOLATION_MARGIN, lo - EXTRAPOLATION_MARGIN].into_iter().enumerate() {
        let tuples = synthetic_closed(delta, 1000 + k, 77 + k as u64)?;
        let (adapt, test) = tuples.split_at(3);
        let res = adapt_system(&ck.model, adapt, test, Some(StateKind::Ket), &config).map_err(err)?;
        let v = res.test_infidelity.ok_or("no infidelity")?;
        if !v.is_finite() {
            return Err(format!("Δ={delta:.3}: infidelity {v}"));
        }
        synthetic.push(format!("Δ={delta:.2}: {v:.2e}"));
    }
    let detail = format!(
        "Spearman ρ = {rho:.3} over {} systems; {outside} held-out outside [{lo:.3}, {hi:.3}] finite; {}",
        train_deltas.len(),
        synthetic.join(", ")
    );
    if rho.abs() >= SPEARMAN_MIN {
        Ok(detail)
    } else {
        Err(format!("|ρ| < {SPEARMAN_MIN}: {detail}"))
    }
}

fn benchmark(root: &Path, family: &str, runs: usize, methods: &[&str]) -> Result<BTreeMap<String, (f64, f64)>, String> {
    let dir = root.join(format!("bench-{family}"));
    let list = methods.iter().map(|m| format!("\"{m}\"")).collect::<Vec<_>>().join(", ");
    let cfg = write_config(&dir, "bench.toml", &format!("[benchmark]\nruns = {runs}\nmethods = [{list}]\n"));
    malgo(&dir, Some(&cfg), &["benchmark", "--family", family, "--seed", "0"])?;
    benchmark_stats(&dir.join("benchmark.csv"))
}

fn closed_benchmark(root: &Path) -> Outcome {
    let stats = benchmark(root, "closed", CLOSED_RUNS, &["malgo", "imode", "mlp"])?;
    let ordered = ordering(&stats, &["imode", "mlp"])?;
    let steadier = stats["malgo"].1 <= stats["imode"].1;
    let detail = format!("{CLOSED_RUNS} runs, log10 infidelity: {}", describe(&stats));
    match (ordered, steadier) {
        (true, true) => Ok(detail),
        (false, _) => Err(format!("mean ordering violated; {detail}")),
        (true, false) => Err(format!("ordering holds but std(malgo) > std(imode); {detail}")),
    }
}

fn open_heis_benchmark(root: &Path) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for family in ["open", "heisenberg"] {
        let stats = benchmark(root, family, OPEN_HEIS_RUNS, &["malgo", "imode", "mlp"])?;
        ok &= ordering(&stats, &["imode", "mlp"])?;
        parts.push(format!("{family}: {}", describe(&stats)));
    }
    let detail = format!("{OPEN_HEIS_RUNS} runs each; {}", parts.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(format!("mean ordering violated; {detail}"))
    }
}

fn characteristics(root: &Path) -> Outcome {
    for (file, expected) in [("g_factor.csv", G_COUNTS), ("rabi_frequency.csv", RABI_COUNTS)] {
        let records = ingest(fs::File::open(fixture(file)).map_err(err)?).map_err(err)?;
        let counts: Vec<usize> = config_counts(&records).into_values().collect();
        if counts != expected {
            return Err(format!("{file}: per-configuration counts {counts:?}, expected {expected:?}"));
        }
        // and through the binary
        let dir = root.join(format!("ingest-{file}"));
        let cfg = write_config(&dir, "ingest.toml", &format!("[data]\ninput = {:?}\n", fixture(file)));
        let family = if file.starts_with('g') { "char-g" } else { "char-rabi" };
        malgo(&dir, Some(&cfg), &["generate", "--family", family])?;
    }
    let mut parts = Vec::new();
    let mut ok = true;
    for family in ["char-g", "char-rabi"] {
        let stats = benchmark(root, family, CHAR_RUNS, &["malgo", "mlp"])?;
        ok &= ordering(&stats, &["mlp"])?;
        parts.push(format!("{family}: {}", describe(&stats)));
    }
    let detail = format!("fixture counts {G_COUNTS:?} / {RABI_COUNTS:?}; {CHAR_RUNS} runs; {}", parts.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(format!("malgo not below mlp; {detail}"))
    }
}

fn ablation(root: &Path) -> Outcome {
    let dir = root.join("ablation");
    let fractions = ABLATION_FRACTIONS.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ");
    let cfg = write_config(&dir, "ablate.toml", &format!("[ablation]\nfractions = [{fractions}]\nseeds = {ABLATION_SEEDS}\n"));
    malgo(&dir, Some(&cfg), &["ablate", "--family", "char-g", "--seed", "0"])?;
    let rows = formats::read_ablation(&read(&dir.join("ablation.csv"))?).map_err(err)?;
    let mut summary = Vec::new();
    for f in ABLATION_FRACTIONS {
        let vals: Vec<f64> = rows.iter().filter(|r| r.fraction == f).map(|r| r.test_loss).collect();
        if vals.len() != ABLATION_SEEDS {
            return Err(format!("fraction {f}: {} rows", vals.len()));
        }
        summary.push(aggregate(&vals).map_err(err)?);
    }
    let detail = ABLATION_FRACTIONS
        .iter()
        .zip(&summary)
        .map(|(f, (m, s))| format!("{f}: {m:.3}±{s:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    if non_increasing_within_pooled_std(&summary) {
        Ok(detail)
    } else {
        Err(format!("increase beyond pooled std; {detail}"))
    }
}

const SMALL_DYNAMICS: &str = r#"
[data]
n_train_systems = 4
n_adapt_systems = 2
[train]
epochs = 6
noise_until = 2
freeze_from = 5
batch_size = 64
[adapt]
restarts = 2
epochs = 3
sgd_steps = 20
[mlp]
steps = 30
[benchmark]
runs = 2
"#;

const SMALL_CHARACTERISTICS: &str = r#"
[network]
hidden_layers = 2
hidden_width = 8
[train]
epochs = 6
noise_until = 2
freeze_from = 5
[adapt]
restarts = 3
[mlp]
steps = 30
[benchmark]
runs = 2
[ablation]
fractions = [0.1, 0.4]
seeds = 2
"#;

fn snapshot(dir: &Path, into: &mut BTreeMap<String, Vec<u8>>, step: usize) -> Result<(), String> {
    for entry in fs::read_dir(dir).map_err(err)? {
        let entry = entry.map_err(err)?;
        if entry.path().is_file() {
            let name = format!("{step:02} {}", entry.file_name().to_string_lossy());
            into.insert(name, fs::read(entry.path()).map_err(err)?);
        }
    }
    Ok(())
}

/// Runs every command on small configs and returns the bytes of every file
/// present after each step.
fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(err)?;
    }
    let cfg_root = dir.with_extension("configs");
    let dyn_cfg = write_config(&cfg_root, "dynamics.toml", SMALL_DYNAMICS);
    let char_cfg = write_config(&cfg_root, "characteristics.toml", SMALL_CHARACTERISTICS);
    let d = dir.join("closed");
    let c = dir.join("char");
    let steps: Vec<(&Path, &Path, Vec<String>)> = vec![
        (&d, &dyn_cfg, vec!["generate".into(), "--csv".into()]),
        (&d, &dyn_cfg, vec!["train".into()]),
        (&d, &dyn_cfg, vec!["adapt".into()]),
        (&d, &dyn_cfg, vec!["eval".into()]),
        (&d, &dyn_cfg, vec!["adapt".into(), "--optimizer".into(), "sgd".into()]),
        (&d, &dyn_cfg, vec!["train".into(), "--method".into(), "imode".into()]),
        (&d, &dyn_cfg, vec!["benchmark".into()]),
        (&d, &dyn_cfg, vec!["plot".into(), "--input".into(), d.join("train_log.csv").display().to_string()]),
        (&d, &dyn_cfg, vec!["plot".into(), "--input".into(), d.join("benchmark.csv").display().to_string()]),
        (&c, &char_cfg, vec!["surrogate".into(), "--family".into(), "char-g".into()]),
        (&c, &char_cfg, vec!["generate".into(), "--family".into(), "char-g".into(), "--csv".into()]),
        (&c, &char_cfg, vec!["train".into(), "--family".into(), "char-g".into()]),
        (&c, &char_cfg, vec!["adapt".into(), "--family".into(), "char-g".into()]),
        (&c, &char_cfg, vec!["benchmark".into(), "--family".into(), "char-rabi".into()]),
        (&c, &char_cfg, vec!["ablate".into(), "--family".into(), "char-g".into()]),
        (&c, &char_cfg, vec!["plot".into(), "--input".into(), c.join("ablation.csv").display().to_string()]),
    ];
    let mut files = BTreeMap::new();
    for (i, (out, cfg, args)) in steps.iter().enumerate() {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        malgo(out, Some(cfg), &args)?;
        snapshot(out, &mut files, i)?;
    }
    Ok(files)
}

fn determinism(root: &Path) -> Outcome {
    let dir = root.join("determinism");
    let first = pipeline(&dir)?;
    let second = pipeline(&dir)?;
    if first.keys().ne(second.keys()) {
        return Err("reruns produced different file sets".into());
    }
    let differing: Vec<&String> = first.iter().filter(|(k, v)| second[*k] != **v).map(|(k, _)| k).collect();
    if differing.is_empty() {
        Ok(format!("{} file snapshots byte-identical across reruns", first.len()))
    } else {
        Err(format!("differing outputs: {differing:?}"))
    }
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut report = Report { lines: Vec::new() };

    report.check(1, "physics suite", physics);
    report.check(2, "gradient suite", gradients);
    report.check(3, "parameter count", param_count);
    let start = Instant::now();
    let closed = ClosedRun::new(root);
    println!("(seed-0 ClosedTLS pipeline for criteria 4 and 5: {:.1}s)", start.elapsed().as_secs_f64());
    report.check(4, "schedule exactness", || schedule_exactness(&closed));
    report.check(5, "interpretability", || interpretability(&closed));
    report.check(6, "benchmark ordering, ClosedTLS", || closed_benchmark(root));
    report.check(7, "benchmark ordering, OpenTLS and Heisenberg", || open_heis_benchmark(root));
    report.check(8, "characteristics on surrogate", || characteristics(root));
    report.check(9, "ablation trend", || ablation(root));
    report.check(10, "determinism", || determinism(root));

    println!("\nsummary:");
    for (n, name, ok, _) in &report.lines {
        println!("  {n:>2} {:<44} {}", name, if *ok { "PASS" } else { "FAIL" });
    }
    let failed: Vec<usize> = report.lines.iter().filter(|l| !l.2).map(|l| l.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
