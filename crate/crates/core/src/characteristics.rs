//! Voltage-to-characteristic regression across gate-voltage
//! configurations.
//!
//! Input tables are CSV with the header `config_id,v1,v2,v3,target` (any
//! column order). Each configuration is a system; all but the last one are
//! used for meta-training and the last is adapted from a small random subset
//! of its points.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::baselines::{run_method, BenchmarkSetup, Method};
use crate::error::{Error, Result};
use crate::par::*;
use crate::seed::{child_rng, derive_seed};
use crate::stats::aggregate;
use crate::systems::{DataTuple, DatasetSplit, Family, SystemInstance, SystemTuples};

pub const COLUMNS: [&str; 5] = ["config_id", "v1", "v2", "v3", "target"];

#[derive(Debug, Clone, PartialEq)]
pub struct CharRecord {
    pub config_id: usize,
    pub v: [f64; 3],
    pub target: f64,
}

impl CharRecord {
    fn columns(&self) -> [f64; 4] {
        [self.v[0], self.v[1], self.v[2], self.target]
    }

    fn from_columns(config_id: usize, c: [f64; 4]) -> Self {
        Self { config_id, v: [c[0], c[1], c[2]], target: c[3] }
    }
}

/// Parses a characteristics table. An empty input yields no records.
pub fn ingest<R: Read>(reader: R) -> Result<Vec<CharRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    if headers.is_empty() {
        return Ok(vec![]);
    }
    let mut index = [usize::MAX; 5];
    for (i, name) in headers.iter().enumerate() {
        let name = name.trim();
        let col = COLUMNS
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("unknown column `{name}`") })?;
        if index[col] != usize::MAX {
            return Err(Error::Parse { line: 1, msg: format!("duplicate column `{name}`") });
        }
        index[col] = i;
    }
    if let Some(missing) = (0..5).find(|&c| index[c] == usize::MAX) {
        return Err(Error::Parse { line: 1, msg: format!("missing column `{}`", COLUMNS[missing]) });
    }

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| row.get(index[c]).unwrap_or("").trim();
        let config_id = field(0).parse::<usize>().map_err(|e| Error::Parse {
            line,
            msg: format!("config_id `{}`: {e}", field(0)),
        })?;
        let mut vals = [0.0; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            let raw = field(k + 1);
            *v = raw.parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("{} `{raw}`: {e}", COLUMNS[k + 1]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("{} is not finite", COLUMNS[k + 1]) });
            }
        }
        out.push(CharRecord::from_columns(config_id, vals));
    }
    Ok(out)
}

pub fn write_records<W: Write>(writer: W, records: &[CharRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.config_id.to_string(),
            r.v[0].to_string(),
            r.v[1].to_string(),
            r.v[2].to_string(),
            r.target.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Number of records per configuration.
pub fn config_counts(records: &[CharRecord]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.config_id).or_insert(0) += 1;
    }
    counts
}

/// Per-configuration mean and population std of `v1, v2, v3, target`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub per_config: BTreeMap<usize, ([f64; 4], [f64; 4])>,
}

impl NormalizationStats {
    fn get(&self, config_id: usize) -> Result<&([f64; 4], [f64; 4])> {
        self.per_config
            .get(&config_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no statistics for configuration {config_id}")))
    }

    pub fn normalize_record(&self, r: &CharRecord) -> Result<CharRecord> {
        let (mean, std) = self.get(r.config_id)?;
        let c = r.columns();
        Ok(CharRecord::from_columns(r.config_id, std::array::from_fn(|k| (c[k] - mean[k]) / std[k])))
    }

    pub fn denormalize_record(&self, r: &CharRecord) -> Result<CharRecord> {
        let (mean, std) = self.get(r.config_id)?;
        let c = r.columns();
        Ok(CharRecord::from_columns(r.config_id, std::array::from_fn(|k| c[k] * std[k] + mean[k])))
    }

    /// Maps a normalized target back to physical units.
    pub fn denormalize_target(&self, config_id: usize, value: f64) -> Result<f64> {
        let (mean, std) = self.get(config_id)?;
        Ok(value * std[3] + mean[3])
    }
}

/// Z-scores every column within each configuration.
pub fn normalize(records: &[CharRecord]) -> Result<(Vec<CharRecord>, NormalizationStats)> {
    let mut groups: BTreeMap<usize, Vec<[f64; 4]>> = BTreeMap::new();
    for r in records {
        groups.entry(r.config_id).or_default().push(r.columns());
    }
    let mut per_config = BTreeMap::new();
    for (id, rows) in &groups {
        if rows.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "configuration {id} has {} record(s); need at least 2",
                rows.len()
            )));
        }
        let n = rows.len() as f64;
        let mean: [f64; 4] = std::array::from_fn(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n);
        let std: [f64; 4] = std::array::from_fn(|k| {
            (rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt()
        });
        if let Some(k) = (0..4).find(|&k| std[k].is_nan() || std[k] <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "column {} of configuration {id} has zero variance",
                COLUMNS[k + 1]
            )));
        }
        per_config.insert(*id, (mean, std));
    }
    let stats = NormalizationStats { per_config };
    let normalized = records.iter().map(|r| stats.normalize_record(r)).collect::<Result<_>>()?;
    Ok((normalized, stats))
}

fn to_tuple(r: &CharRecord) -> DataTuple {
    DataTuple { system_id: r.config_id, x: r.v.to_vec(), y: vec![r.target] }
}

/// Number of adaptation points for a configuration of `n` records.
pub fn adapt_count(n: usize, adapt_fraction: f64) -> usize {
    // guard against products like 0.05 * 100 = 5.000000000000001
    (adapt_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// All configurations but the largest id train; the last one is split into
/// `ceil(adapt_fraction * n)` adaptation points and a test remainder. For a
/// fixed seed, smaller fractions give subsets of larger ones.
pub fn build_char_split(records: &[CharRecord], adapt_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(adapt_fraction > 0.0 && adapt_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "adaptation fraction {adapt_fraction} must lie strictly between 0 and 1"
        )));
    }
    let counts = config_counts(records);
    if counts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 configurations, found {}",
            counts.len()
        )));
    }
    let last = *counts.keys().next_back().expect("non-empty");
    let held_out: Vec<&CharRecord> = records.iter().filter(|r| r.config_id == last).collect();
    let n_adapt = adapt_count(held_out.len(), adapt_fraction);
    if n_adapt == 0 || n_adapt >= held_out.len() {
        return Err(Error::InvalidArgument(format!(
            "fraction {adapt_fraction} of {} points leaves an empty adaptation or test set",
            held_out.len()
        )));
    }
    let mut order: Vec<usize> = (0..held_out.len()).collect();
    order.shuffle(&mut child_rng(seed, "char-split", 0));
    let mut chosen = order[..n_adapt].to_vec();
    chosen.sort_unstable();
    let mut is_adapt = vec![false; held_out.len()];
    chosen.iter().for_each(|&i| is_adapt[i] = true);

    let instances = counts
        .keys()
        .map(|&id| SystemInstance::new(id, Family::GateConfig, vec![]))
        .collect::<Result<_>>()?;
    let train = records.iter().filter(|r| r.config_id != last).map(to_tuple).collect();
    let pick = |want: bool| SystemTuples {
        system_id: last,
        tuples: held_out
            .iter()
            .zip(&is_adapt)
            .filter(|(_, a)| **a == want)
            .map(|(r, _)| to_tuple(r))
            .collect(),
    };
    Ok(DatasetSplit {
        family: Family::GateConfig,
        dt: 0.0,
        seed,
        instances,
        train,
        adapt: vec![pick(true)],
        test: vec![pick(false)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateKind {
    /// g-factor-like: dimensionless, around 2.
    GFactor,
    /// Rabi-frequency-like: in Hz, around 20 MHz.
    Rabi,
}

impl SurrogateKind {
    pub fn default_counts(self) -> [usize; 3] {
        match self {
            SurrogateKind::GFactor => [260, 84, 125],
            SurrogateKind::Rabi => [215, 33, 97],
        }
    }

    fn offset_and_scale(self) -> (f64, f64) {
        match self {
            SurrogateKind::GFactor => (2.0, 0.5),
            SurrogateKind::Rabi => (20e6, 5e6),
        }
    }
}

/// Synthetic stand-in for measured characteristics.
///
/// Configuration `c` maps barrier voltages to
/// `offset + sum_r a[c][r] * tanh(w[r] . v + b[r])` with directions `w`,
/// `b` shared across configurations and amplitudes `a` drawn around common
/// values, times `(1 + noise * N(0, 1))`. Voltages are uniform in a 1 V
/// box whose position shifts slightly between configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    pub kind: SurrogateKind,
    pub counts: Vec<usize>,
    pub noise: f64,
}

impl SurrogateConfig {
    pub fn new(kind: SurrogateKind) -> Self {
        Self { kind, counts: kind.default_counts().to_vec(), noise: 0.05 }
    }
}

const BASIS: usize = 4;

fn normal(rng: &mut crate::seed::Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate_surrogate(config: &SurrogateConfig, seed: u64) -> Result<Vec<CharRecord>> {
    if !(config.noise >= 0.0 && config.noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level {} must be >= 0", config.noise)));
    }
    let mut rng = child_rng(seed, "surrogate", 0);
    let center = [1.0; 3];
    let w: Vec<[f64; 3]> = (0..BASIS)
        .map(|_| std::array::from_fn(|_| 3.0 * normal(&mut rng)))
        .collect();
    let b: Vec<f64> = w
        .iter()
        .map(|wr| -wr.iter().zip(&center).map(|(a, c)| a * c).sum::<f64>() + 0.5 * normal(&mut rng))
        .collect();
    let (offset, scale) = config.kind.offset_and_scale();
    let base: Vec<f64> = (0..BASIS)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * scale * rng.random_range(0.5..1.0)
        })
        .collect();

    let mut out = Vec::new();
    for (c, &n) in config.counts.iter().enumerate() {
        let mut crng = child_rng(seed, "surrogate-config", c as u64);
        let amp: Vec<f64> = base.iter().map(|a| a * (1.0 + 0.3 * normal(&mut crng))).collect();
        let shift: [f64; 3] = std::array::from_fn(|_| crng.random_range(-0.1..0.1));
        for _ in 0..n {
            let v: [f64; 3] = std::array::from_fn(|k| center[k] + shift[k] + crng.random_range(-0.5..0.5));
            let clean = offset
                + (0..BASIS)
                    .map(|r| amp[r] * (w[r].iter().zip(&v).map(|(a, x)| a * x).sum::<f64>() + b[r]).tanh())
                    .sum::<f64>();
            let target = clean * (1.0 + config.noise * normal(&mut crng));
            out.push(CharRecord { config_id: c, v, target });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub fraction: f64,
    pub seed: usize,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// `(fraction, log_mean, log_std)` in input order.
    pub summary: Vec<(f64, f64, f64)>,
}

/// Full split/train/adapt/evaluate cycle for every `(fraction, seed)` cell
/// on normalized `records`.
pub fn run_ablation(
    records: &[CharRecord],
    fractions: &[f64],
    n_seeds: usize,
    setup: &BenchmarkSetup,
    master_seed: u64,
) -> Result<AblationTable> {
    if fractions.is_empty() || n_seeds == 0 {
        return Err(Error::InvalidArgument("ablation needs fractions and at least one seed".into()));
    }
    let cells: Vec<(f64, usize)> = fractions
        .iter()
        .flat_map(|&f| (0..n_seeds).map(move |s| (f, s)))
        .collect();
    let rows: Vec<AblationRow> = cells
        .into_par_iter()
        .map(|(fraction, seed)| {
            let cell_seed = derive_seed(master_seed, "ablation", seed as u64);
            let split = build_char_split(records, fraction, derive_seed(cell_seed, "data", 0))?;
            let run = run_method(&split, setup, Method::Malgo, cell_seed)?;
            Ok(AblationRow { fraction, seed, test_loss: run.metric })
        })
        .collect::<Result<_>>()?;
    let summary = fractions
        .iter()
        .map(|&f| {
            let losses: Vec<f64> = rows.iter().filter(|r| r.fraction == f).map(|r| r.test_loss).collect();
            let (m, s) = aggregate(&losses)?;
            Ok((f, m, s))
        })
        .collect::<Result<_>>()?;
    Ok(AblationTable { rows, summary })
}
