//! On-disk formats.
//!
//! Binary files start with an 8-byte magic string and a `u32` version; all
//! integers and floats are little-endian. CSV files use `{}` float
//! formatting, which round-trips exactly.
//!
//! Dataset (`MALGODS\0`, version 1):
//!
//! ```text
//! family u32 | dt f64 | seed u64 | n_train_systems u32 | n_adapt_systems u32
//! n_instances u32, then per instance: id u64 | n_params u32 | params f64...
//! x_len u32 | y_len u32
//! train:  n u64, then per tuple: system_id u64 | x f64... | y f64...
//! adapt:  n_groups u32, then per group: system_id u64 | n u64 | tuples (no id)
//! test:   same layout as adapt
//! ```
//!
//! Checkpoint (`MALGOCK\0`, version 1):
//!
//! ```text
//! family u32 | input_dim u32 | hidden_layers u32 | hidden_width u32 | output_dim u32
//! connectivity u8 (0 dense, 1 plain) | activation u8 (0 tanh) | eta_dim u32
//! n_params u64 | params f64...
//! n_systems u32, then per system: id u64 | eta f64...
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use malgo::adapt::AdaptationResult;
use malgo::baselines::{BenchmarkRow, Method};
use malgo::characteristics::AblationRow;
use malgo::densenet::{Activation, Connectivity, NetworkSpec, Theta};
use malgo::meta::{EpochRecord, MetaModel, Phase, TrainLog};
use malgo::systems::{DataTuple, DatasetSplit, Family, SystemInstance, SystemTuples};
use malgo::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"MALGODS\0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MALGOCK\0";
pub const VERSION: u32 = 1;

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        v.iter().try_for_each(|x| self.f64(*x))
    }
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn id(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("id out of range".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got: [u8; 8] = self.bytes()?;
        if &got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32()?;
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(())
    }
    fn end(&mut self) -> Result<()> {
        let mut rest = Vec::new();
        self.0.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(())
    }
}

fn write_tuple<W: Write>(out: &mut Out<W>, t: &DataTuple, x_len: usize, y_len: usize) -> Result<()> {
    if t.x.len() != x_len || t.y.len() != y_len {
        return Err(Error::Format(format!("tuple of system {} has inconsistent length", t.system_id)));
    }
    out.f64s(&t.x)?;
    out.f64s(&t.y)
}

fn write_groups<W: Write>(out: &mut Out<W>, groups: &[SystemTuples], x_len: usize, y_len: usize) -> Result<()> {
    out.u32(groups.len())?;
    for g in groups {
        out.u64(g.system_id as u64)?;
        out.u64(g.tuples.len() as u64)?;
        for t in &g.tuples {
            write_tuple(out, t, x_len, y_len)?;
        }
    }
    Ok(())
}

fn read_groups<R: Read>(inp: &mut In<R>, x_len: usize, y_len: usize) -> Result<Vec<SystemTuples>> {
    let n_groups = inp.u32()?;
    (0..n_groups)
        .map(|_| {
            let system_id = inp.id()?;
            let n = inp.u64()?;
            let tuples = (0..n)
                .map(|_| {
                    Ok(DataTuple { system_id, x: inp.f64s(x_len)?, y: inp.f64s(y_len)? })
                })
                .collect::<Result<_>>()?;
            Ok(SystemTuples { system_id, tuples })
        })
        .collect()
}

pub fn write_dataset<W: Write>(writer: W, split: &DatasetSplit) -> Result<()> {
    let mut out = Out(writer);
    out.0.write_all(DATASET_MAGIC)?;
    out.u32(VERSION as usize)?;
    out.u32(split.family.code() as usize)?;
    out.f64(split.dt)?;
    out.u64(split.seed)?;
    out.u32(split.train_system_ids().len())?;
    out.u32(split.adapt_system_ids().len())?;
    out.u32(split.instances.len())?;
    for inst in &split.instances {
        out.u64(inst.id as u64)?;
        out.u32(inst.params.len())?;
        out.f64s(&inst.params)?;
    }
    let (x_len, y_len) = (split.x_len(), split.y_len());
    out.u32(x_len)?;
    out.u32(y_len)?;
    out.u64(split.train.len() as u64)?;
    for t in &split.train {
        out.u64(t.system_id as u64)?;
        write_tuple(&mut out, t, x_len, y_len)?;
    }
    write_groups(&mut out, &split.adapt, x_len, y_len)?;
    write_groups(&mut out, &split.test, x_len, y_len)?;
    out.0.flush()?;
    Ok(())
}

/// Header fields of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub family: Family,
    pub dt: f64,
    pub seed: u64,
    pub n_train_systems: usize,
    pub n_adapt_systems: usize,
}

pub fn read_dataset<R: Read>(reader: R) -> Result<(DatasetHeader, DatasetSplit)> {
    let mut inp = In(reader);
    inp.header(DATASET_MAGIC)?;
    let family = Family::from_code(inp.u32()? as u32)?;
    let header = DatasetHeader {
        family,
        dt: inp.f64()?,
        seed: inp.u64()?,
        n_train_systems: inp.u32()?,
        n_adapt_systems: inp.u32()?,
    };
    let n_inst = inp.u32()?;
    let instances = (0..n_inst)
        .map(|_| {
            let id = inp.id()?;
            let n = inp.u32()?;
            SystemInstance::new(id, family, inp.f64s(n)?)
        })
        .collect::<Result<_>>()?;
    let x_len = inp.u32()?;
    let y_len = inp.u32()?;
    let n_train = inp.u64()?;
    let train = (0..n_train)
        .map(|_| Ok(DataTuple { system_id: inp.id()?, x: inp.f64s(x_len)?, y: inp.f64s(y_len)? }))
        .collect::<Result<_>>()?;
    let adapt = read_groups(&mut inp, x_len, y_len)?;
    let test = read_groups(&mut inp, x_len, y_len)?;
    inp.end()?;
    let split = DatasetSplit { family, dt: header.dt, seed: header.seed, instances, train, adapt, test };
    if split.train_system_ids().len() != header.n_train_systems
        || split.adapt_system_ids().len() != header.n_adapt_systems
    {
        return Err(Error::Format("header system counts disagree with the tuple tables".into()));
    }
    Ok((header, split))
}

/// One row per tuple: `split,system_id,x0..,y0..`.
pub fn write_dataset_csv<W: Write>(mut w: W, split: &DatasetSplit) -> Result<()> {
    let x_cols: Vec<String> = (0..split.x_len()).map(|i| format!("x{i}")).collect();
    let y_cols: Vec<String> = (0..split.y_len()).map(|i| format!("y{i}")).collect();
    writeln!(w, "split,system_id,{},{}", x_cols.join(","), y_cols.join(","))?;
    let mut row = |name: &str, t: &DataTuple| -> Result<()> {
        let vals: Vec<String> = t.x.iter().chain(&t.y).map(|v| v.to_string()).collect();
        writeln!(w, "{name},{},{}", t.system_id, vals.join(","))?;
        Ok(())
    };
    for t in &split.train {
        row("train", t)?;
    }
    for (name, groups) in [("adapt", &split.adapt), ("test", &split.test)] {
        for t in groups.iter().flat_map(|g| &g.tuples) {
            row(name, t)?;
        }
    }
    Ok(())
}

/// A trained model with the family it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub family: Family,
    pub model: MetaModel,
}

pub fn write_checkpoint<W: Write>(writer: W, ck: &Checkpoint) -> Result<()> {
    let mut out = Out(writer);
    out.0.write_all(CHECKPOINT_MAGIC)?;
    out.u32(VERSION as usize)?;
    out.u32(ck.family.code() as usize)?;
    let spec = ck.model.theta.spec();
    out.u32(spec.input_dim)?;
    out.u32(spec.hidden_layers)?;
    out.u32(spec.hidden_width)?;
    out.u32(spec.output_dim)?;
    out.u8(match spec.connectivity {
        Connectivity::Dense => 0,
        Connectivity::Plain => 1,
    })?;
    out.u8(match spec.activation {
        Activation::Tanh => 0,
    })?;
    out.u32(ck.model.eta_dim)?;
    out.u64(ck.model.theta.len() as u64)?;
    out.f64s(ck.model.theta.params())?;
    out.u32(ck.model.etas.len())?;
    for (id, eta) in &ck.model.etas {
        out.u64(*id as u64)?;
        out.f64s(eta)?;
    }
    out.0.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<Checkpoint> {
    let mut inp = In(reader);
    inp.header(CHECKPOINT_MAGIC)?;
    let family = Family::from_code(inp.u32()? as u32)?;
    let (input_dim, hidden_layers, hidden_width, output_dim) = (inp.u32()?, inp.u32()?, inp.u32()?, inp.u32()?);
    let connectivity = match inp.u8()? {
        0 => Connectivity::Dense,
        1 => Connectivity::Plain,
        c => return Err(Error::Format(format!("unknown connectivity code {c}"))),
    };
    let activation = match inp.u8()? {
        0 => Activation::Tanh,
        a => return Err(Error::Format(format!("unknown activation code {a}"))),
    };
    let spec = NetworkSpec { input_dim, hidden_layers, hidden_width, output_dim, connectivity, activation };
    let eta_dim = inp.u32()?;
    let n_params = inp.u64()? as usize;
    if n_params != spec.param_count() {
        return Err(Error::Format(format!(
            "checkpoint stores {n_params} parameters but its network needs {}",
            spec.param_count()
        )));
    }
    let theta = Theta::from_params(spec, inp.f64s(n_params)?)?;
    let n_sys = inp.u32()?;
    let mut etas = BTreeMap::new();
    for _ in 0..n_sys {
        let id = inp.id()?;
        etas.insert(id, inp.f64s(eta_dim)?);
    }
    inp.end()?;
    Ok(Checkpoint { family, model: MetaModel::new(theta, eta_dim, etas)? })
}

/// Minimal CSV reader for the files written here: header plus rows of
/// comma-separated fields without quoting.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() || header.iter().all(|h| h.is_empty()) {
            return Err(Error::Parse { line: 1, msg: "missing header".into() });
        }
        let rows = rdr
            .records()
            .map(|r| {
                r.map(|r| r.iter().map(str::to_string).collect())
                    .map_err(|e| Error::Parse {
                        line: e.position().map_or(0, |p| p.line() as usize),
                        msg: e.to_string(),
                    })
            })
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column `{name}`") })
    }

    pub fn expect_header(&self, names: &[&str]) -> Result<()> {
        if self.header.len() < names.len() || self.header.iter().zip(names).any(|(h, n)| h != n) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected columns starting with {}", names.join(",")),
            });
        }
        Ok(())
    }
}

pub fn parse_field<T: std::str::FromStr>(row: &[String], col: usize, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = row.get(col).map(String::as_str).unwrap_or("");
    raw.parse::<T>().map_err(|e| Error::Parse { line, msg: format!("`{raw}`: {e}") })
}

pub fn write_train_log<W: Write>(mut w: W, log: &TrainLog) -> Result<()> {
    let first = log.records.first().ok_or_else(|| Error::Format("empty training log".into()))?;
    let mut header = vec!["epoch".to_string(), "phase".into(), "loss".into()];
    for (id, eta) in &first.etas {
        header.extend((0..eta.len()).map(|k| format!("eta_s{id}_{k}")));
    }
    writeln!(w, "{}", header.join(","))?;
    for r in &log.records {
        let mut fields = vec![r.epoch.to_string(), r.phase.name().to_string(), r.loss.to_string()];
        fields.extend(r.etas.iter().flat_map(|(_, e)| e.iter().map(|v| v.to_string())));
        if fields.len() != header.len() {
            return Err(Error::Format(format!("epoch {} has a different context layout", r.epoch)));
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

fn parse_eta_column(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("eta_s")?;
    let (id, k) = rest.split_once('_')?;
    Some((id.parse().ok()?, k.parse().ok()?))
}

pub fn read_train_log(text: &str) -> Result<TrainLog> {
    let t = Table::parse(text)?;
    t.expect_header(&["epoch", "phase", "loss"])?;
    let cols: Vec<(usize, usize)> = t.header[3..]
        .iter()
        .map(|h| parse_eta_column(h).ok_or_else(|| Error::Parse { line: 1, msg: format!("bad column `{h}`") }))
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(t.rows.len());
    for (i, row) in t.rows.iter().enumerate() {
        let line = i + 2;
        if row.len() != t.header.len() {
            return Err(Error::Parse { line, msg: "wrong number of fields".into() });
        }
        let phase = Phase::from_name(&row[1])
            .ok_or_else(|| Error::Parse { line, msg: format!("unknown phase `{}`", row[1]) })?;
        let mut etas: Vec<(usize, Vec<f64>)> = Vec::new();
        for (c, &(id, _)) in cols.iter().enumerate() {
            let v: f64 = parse_field(row, c + 3, line)?;
            match etas.last_mut() {
                Some((last, e)) if *last == id => e.push(v),
                _ => etas.push((id, vec![v])),
            }
        }
        records.push(EpochRecord { epoch: parse_field(row, 0, line)?, phase, loss: parse_field(row, 2, line)?, etas });
    }
    Ok(TrainLog { records })
}

/// `system_id,param_0..,adapt_loss,test_loss,test_infidelity,eta_0..`.
/// The true parameters come from `split` and are absent for families
/// without them; the infidelity field is empty for non-quantum families.
pub fn write_adaptation<W: Write>(mut w: W, results: &[AdaptationResult], split: &DatasetSplit) -> Result<()> {
    let eta_len = results.first().map_or(0, |r| r.eta_star.len());
    let n_params = split.family.n_params();
    let mut header = String::from("system_id");
    for k in 0..n_params {
        header.push_str(&format!(",param_{k}"));
    }
    header.push_str(",adapt_loss,test_loss,test_infidelity");
    for k in 0..eta_len {
        header.push_str(&format!(",eta_{k}"));
    }
    writeln!(w, "{header}")?;
    for r in results {
        if r.eta_star.len() != eta_len {
            return Err(Error::Format(format!("system {} has a different context width", r.system_id)));
        }
        let params = match split.instance(r.system_id) {
            Some(inst) => inst.params.iter().map(|v| format!(",{v}")).collect::<String>(),
            None if n_params == 0 => String::new(),
            None => return Err(Error::Format(format!("system {} is not in the dataset", r.system_id))),
        };
        let infid = r.test_infidelity.map(|v| v.to_string()).unwrap_or_default();
        let etas: String = r.eta_star.iter().map(|v| format!(",{v}")).collect();
        writeln!(w, "{}{params},{},{},{infid}{etas}", r.system_id, r.adapt_loss, r.test_loss)?;
    }
    Ok(())
}

/// Reads rows written by [`write_adaptation`]. Parameter columns are
/// skipped and restart diagnostics come back empty.
pub fn read_adaptation(text: &str) -> Result<Vec<AdaptationResult>> {
    let t = Table::parse(text)?;
    let id = t.column("system_id")?;
    let adapt = t.column("adapt_loss")?;
    let test = t.column("test_loss")?;
    let infid = t.column("test_infidelity")?;
    let etas: Vec<usize> = (0..t.header.len()).filter(|&c| t.header[c].starts_with("eta_")).collect();
    t.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let line = i + 2;
            if row.len() != t.header.len() {
                return Err(Error::Parse { line, msg: "wrong number of fields".into() });
            }
            Ok(AdaptationResult {
                system_id: parse_field(row, id, line)?,
                adapt_loss: parse_field(row, adapt, line)?,
                test_loss: parse_field(row, test, line)?,
                test_infidelity: if row[infid].is_empty() { None } else { Some(parse_field(row, infid, line)?) },
                eta_star: etas.iter().map(|&c| parse_field(row, c, line)).collect::<Result<_>>()?,
                restart_diagnostics: vec![],
            })
        })
        .collect()
}

pub fn write_benchmark<W: Write>(mut w: W, family: &str, rows: &[BenchmarkRow]) -> Result<()> {
    writeln!(w, "method,family,run,metric")?;
    for r in rows {
        writeln!(w, "{},{family},{},{}", r.method.name(), r.run, r.metric)?;
    }
    Ok(())
}

pub fn read_benchmark(text: &str) -> Result<(String, Vec<BenchmarkRow>)> {
    let t = Table::parse(text)?;
    t.expect_header(&["method", "family", "run", "metric"])?;
    let mut family = String::new();
    let rows = t
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let line = i + 2;
            let method = Method::from_name(row.first().map_or("", String::as_str))
                .ok_or_else(|| Error::Parse { line, msg: format!("unknown method `{}`", row[0]) })?;
            family = row.get(1).cloned().unwrap_or_default();
            Ok(BenchmarkRow { method, run: parse_field(row, 2, line)?, metric: parse_field(row, 3, line)? })
        })
        .collect::<Result<_>>()?;
    Ok((family, rows))
}

pub fn write_ablation<W: Write>(mut w: W, rows: &[AblationRow]) -> Result<()> {
    writeln!(w, "fraction,seed,test_loss")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.fraction, r.seed, r.test_loss)?;
    }
    Ok(())
}

pub fn read_ablation(text: &str) -> Result<Vec<AblationRow>> {
    let t = Table::parse(text)?;
    t.expect_header(&["fraction", "seed", "test_loss"])?;
    t.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let line = i + 2;
            Ok(AblationRow {
                fraction: parse_field(row, 0, line)?,
                seed: parse_field(row, 1, line)?,
                test_loss: parse_field(row, 2, line)?,
            })
        })
        .collect()
}

/// `label,log_mean,log_std` rows.
pub fn write_summary<W: Write>(mut w: W, label: &str, rows: &[(String, f64, f64)]) -> Result<()> {
    writeln!(w, "{label},log_mean,log_std")?;
    for (name, m, s) in rows {
        writeln!(w, "{name},{m},{s}")?;
    }
    Ok(())
}
