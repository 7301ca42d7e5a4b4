//! Static SVG charts.

use std::fmt::Write as _;

use anyhow::{bail, Result};

use malgo::baselines::{BenchmarkRow, Method};
use malgo::characteristics::AblationRow;
use malgo::meta::TrainLog;
use malgo::stats::aggregate;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self { x: pad(x), y: pad(y), body: String::new() }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, width: f64) {
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y))).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{}"/>"#,
            coords.join(" ")
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, color: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{color}" fill-opacity="{opacity}"/>"#,
            self.px(x),
            self.py(y)
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-size="12" font-family="sans-serif">{s}</text>"#
        );
    }

    /// Axes with numeric ticks; `log_y` labels ticks as powers of ten.
    fn finish(mut self, title: &str, xlabel: &str, ylabel: &str, xticks: &[(f64, String)], log_y: bool) -> String {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            self.body,
            r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            x1 - x0,
            y1 - y0
        );
        for (v, label) in xticks {
            let px = self.px(*v);
            let _ = writeln!(self.body, r##"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{}" stroke="#333"/>"##, y1 + 5.0);
            self.text(px, y1 + 18.0, "middle", label);
        }
        for v in y_ticks(self.y, log_y) {
            let py = self.py(v);
            let label = if log_y { format!("1e{}", v.round()) } else { format!("{v:.3}") };
            let _ = writeln!(self.body, r##"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="#333"/>"##, x0 - 5.0);
            self.text(x0 - 8.0, py + 4.0, "end", &label);
        }
        self.text(W / 2.0, 18.0, "middle", title);
        self.text(W / 2.0, H - 10.0, "middle", xlabel);
        let _ = writeln!(
            self.body,
            r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle" font-size="12" font-family="sans-serif">{ylabel}</text>"#,
            H / 2.0,
            H / 2.0
        );
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

fn y_ticks((lo, hi): (f64, f64), log_y: bool) -> Vec<f64> {
    if log_y {
        let (a, b) = (lo.ceil() as i64, hi.floor() as i64);
        return (a..=b).map(|k| k as f64).collect();
    }
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// One polyline per context component per system.
pub fn train_log_svg(log: &TrainLog) -> Result<String> {
    if log.records.is_empty() {
        bail!("training log has no rows");
    }
    let ys = range(log.records.iter().flat_map(|r| r.etas.iter().flat_map(|(_, e)| e.iter().copied())));
    let n_epochs = log.records.last().map_or(1, |r| r.epoch) as f64;
    let mut f = Frame::new((1.0, n_epochs), ys);
    let mut series = 0;
    for (i, (_, eta)) in log.records[0].etas.iter().enumerate() {
        for k in 0..eta.len() {
            let pts: Vec<(f64, f64)> = log.records.iter().map(|r| (r.epoch as f64, r.etas[i].1[k])).collect();
            f.polyline(&pts, PALETTE[series % PALETTE.len()], 1.0);
            series += 1;
        }
    }
    let ticks: Vec<(f64, String)> = (0..=5).map(|i| {
        let e = 1.0 + (n_epochs - 1.0) * i as f64 / 5.0;
        (e, format!("{}", e.round()))
    }).collect();
    Ok(f.finish("context trajectories", "epoch", "eta", &ticks, false))
}

/// Faded per-run points with the log-scale mean and one-std bar per method.
pub fn benchmark_svg(family: &str, rows: &[BenchmarkRow]) -> Result<String> {
    if rows.is_empty() {
        bail!("benchmark table has no rows");
    }
    let methods: Vec<Method> = Method::ALL.into_iter().filter(|m| rows.iter().any(|r| r.method == *m)).collect();
    let mut logs = Vec::new();
    for r in rows {
        if r.metric.is_nan() || r.metric <= 0.0 {
            bail!("run {} of {} has non-positive metric {}", r.run, r.method.name(), r.metric);
        }
        logs.push(r.metric.log10());
    }
    let (lo, hi) = range(logs.iter().copied());
    let mut f = Frame::new((-0.5, methods.len() as f64 - 0.5), (lo.floor(), hi.ceil()));
    for (i, m) in methods.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let vals: Vec<f64> = rows.iter().filter(|r| r.method == *m).map(|r| r.metric).collect();
        for v in &vals {
            f.circle(i as f64, v.log10(), 4.0, color, 0.25);
        }
        let (mean, std) = aggregate(&vals)?;
        f.polyline(&[(i as f64, mean - std), (i as f64, mean + std)], color, 2.0);
        f.circle(i as f64, mean, 6.0, color, 1.0);
    }
    let ticks: Vec<(f64, String)> = methods.iter().enumerate().map(|(i, m)| (i as f64, m.name().to_string())).collect();
    Ok(f.finish(&format!("benchmark: {family}"), "method", "metric (log scale)", &ticks, true))
}

/// Test loss against adaptation fraction, log scale.
pub fn ablation_svg(rows: &[AblationRow]) -> Result<String> {
    if rows.is_empty() {
        bail!("ablation table has no rows");
    }
    let mut fractions: Vec<f64> = rows.iter().map(|r| r.fraction).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let losses: Vec<f64> = rows.iter().map(|r| r.test_loss).collect();
    aggregate(&losses)?;
    let (lo, hi) = range(losses.iter().map(|v| v.log10()));
    let (x0, x1) = (fractions[0], fractions[fractions.len() - 1]);
    let mut f = Frame::new((x0 - 0.02, x1 + 0.02), (lo.floor(), hi.ceil()));
    let mut means = Vec::new();
    for &frac in &fractions {
        let vals: Vec<f64> = rows.iter().filter(|r| r.fraction == frac).map(|r| r.test_loss).collect();
        for v in &vals {
            f.circle(frac, v.log10(), 4.0, PALETTE[0], 0.25);
        }
        let (m, s) = aggregate(&vals)?;
        f.polyline(&[(frac, m - s), (frac, m + s)], PALETTE[0], 2.0);
        means.push((frac, m));
    }
    f.polyline(&means, PALETTE[0], 2.0);
    for &(x, y) in &means {
        f.circle(x, y, 5.0, PALETTE[0], 1.0);
    }
    let ticks: Vec<(f64, String)> = fractions.iter().map(|x| (*x, x.to_string())).collect();
    Ok(f.finish("adaptation set size", "adaptation fraction", "test loss (log scale)", &ticks, true))
}
