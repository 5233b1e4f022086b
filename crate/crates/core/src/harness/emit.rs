//! CSV tables, JSON manifests and static SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::campaign::{Campaign, GridResult, Stat, SweepResult, TrialSummary};
use super::simulate::TrialResult;
use super::HarnessError;
use crate::geometry::{fmt_f64, links_in_band, SwarmState};
use crate::metrics::Thresholds;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Writes `bytes` to `dir/name`, creating `dir`.
pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(path)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, HarnessError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    text.push('\n');
    write_file(dir, name, text.as_bytes())
}

/// Per-step series of one trial, one row every `stride` steps plus the last.
pub fn trial_csv(run: &TrialResult, stride: usize) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let s = &run.series;
    let to = |e: std::io::Error| HarnessError::Runtime(e.to_string());
    w.write_record(["t", "e_theta", "e_L", "N", "e", "Gn_mean", "V", "min_dist"]).map_err(|e| to(csv_io(e)))?;
    for k in strided(s.len(), stride) {
        w.write_record([
            fmt_f64(s.times[k]),
            fmt_f64(s.e_theta[k]),
            fmt_f64(s.e_l[k]),
            s.n[k].to_string(),
            opt(s.e[k]),
            opt(s.gn_mean[k]),
            opt(run.lyapunov.get(k).copied()),
            opt(run.min_distance.get(k).copied()),
        ])
        .map_err(|e| to(csv_io(e)))?;
    }
    w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))
}

fn strided(len: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..len).filter(move |&k| k % stride == 0 || k + 1 == len)
}

/// One row per trial.
pub fn summary_csv(rows: &[TrialSummary]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to = |e: csv::Error| HarnessError::Runtime(e.to_string());
    w.write_record([
        "trial", "seed", "t_ss", "e_theta_ss", "e_L_ss", "T", "success", "C", "e_final", "rigid", "rigid_lattice", "recovered",
        "max_recovery", "N_final", "t_end",
    ])
    .map_err(to)?;
    for r in rows {
        let max_rec = if r.recovered() { r.recoveries.iter().flatten().copied().reduce(f64::max) } else { None };
        w.write_record([
            r.index.to_string(),
            r.seed.to_string(),
            opt(r.t_ss),
            fmt_f64(r.e_theta_ss),
            fmt_f64(r.e_l_ss),
            opt(r.convergence),
            r.success.to_string(),
            fmt_f64(r.cost),
            opt(r.e_final),
            r.rigid.map(|b| b.to_string()).unwrap_or_default(),
            r.rigid_lattice.map(|b| b.to_string()).unwrap_or_default(),
            if r.recoveries.is_empty() { String::new() } else { r.recovered().to_string() },
            opt(max_rec),
            r.n_final.to_string(),
            fmt_f64(r.t_end),
        ])
        .map_err(to)?;
    }
    w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))
}

/// Provenance of an output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub name: String,
    pub seed: u64,
    pub trials: usize,
    pub config_sha256: String,
    pub config: String,
}

impl Manifest {
    pub fn new(command: &str, name: &str, seed: u64, trials: usize, config: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            name: name.to_string(),
            seed,
            trials,
            config_sha256: sha256_hex(config.as_bytes()),
            config: config.to_string(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Pointwise mean, min and max of a quantity across trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Band {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Band of `pick` over the trials. Trials that stopped early hold their
/// last value until the longest trial ends.
pub fn band(runs: &[TrialResult], stride: usize, pick: impl Fn(&TrialResult, usize) -> Option<f64>) -> Band {
    let longest = runs.iter().max_by_key(|r| r.series.len()).expect("at least one trial");
    let mut b = Band { times: Vec::new(), mean: Vec::new(), min: Vec::new(), max: Vec::new() };
    for k in strided(longest.series.len(), stride) {
        let vals = runs.iter().filter_map(|r| pick(r, k.min(r.series.len() - 1)));
        if let Some(s) = Stat::of(vals) {
            b.times.push(longest.series.times[k]);
            b.mean.push(s.mean);
            b.min.push(s.min);
            b.max.push(s.max);
        }
    }
    b
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0).max(f64::MIN_POSITIVE) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0).max(f64::MIN_POSITIVE) * (H - 2.0 * PAD)
    }

    fn frame(&self, svg: &mut String, title: &str, xlabel: &str) {
        let _ = writeln!(
            svg,
            r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, esc(title));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, esc(xlabel));
        for (v, anchor_x, anchor_y) in [(self.x0, self.px(self.x0), H - PAD + 16.0), (self.x1, self.px(self.x1), H - PAD + 16.0)] {
            let _ = writeln!(svg, r#"<text x="{anchor_x:.1}" y="{anchor_y:.1}" font-size="10" text-anchor="middle">{}</text>"#, tick(v));
        }
        for v in [self.y0, self.y1] {
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#, PAD - 4.0, self.py(v) + 4.0, tick(v));
        }
    }
}

fn tick(v: f64) -> String {
    format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Line plot with shaded min–max bands and optional horizontal thresholds.
pub fn band_svg(title: &str, xlabel: &str, series: &[(&str, &Band, Option<f64>)]) -> String {
    let xs = series.iter().flat_map(|(_, b, _)| b.times.iter().copied());
    let x0 = xs.clone().fold(f64::INFINITY, f64::min);
    let x1 = xs.fold(f64::NEG_INFINITY, f64::max);
    let ys = series
        .iter()
        .flat_map(|(_, b, th)| b.max.iter().chain(b.min.iter()).copied().chain(th.iter().copied()))
        .filter(|v| v.is_finite());
    let y1 = ys.fold(0.0, f64::max);
    let ax = Axes { x0: if x0.is_finite() { x0 } else { 0.0 }, x1: if x1.is_finite() { x1 } else { 1.0 }, y0: 0.0, y1: if y1 > 0.0 { y1 } else { 1.0 } };
    let mut svg = header();
    ax.frame(&mut svg, title, xlabel);
    for (c, (label, b, th)) in series.iter().enumerate() {
        let colour = COLOURS[c % COLOURS.len()];
        if !b.times.is_empty() {
            let mut poly = String::new();
            for (t, y) in b.times.iter().zip(&b.max) {
                let _ = write!(poly, "{:.2},{:.2} ", ax.px(*t), ax.py(*y));
            }
            for (t, y) in b.times.iter().zip(&b.min).rev() {
                let _ = write!(poly, "{:.2},{:.2} ", ax.px(*t), ax.py(*y));
            }
            let _ = writeln!(svg, r#"<polygon class="band" points="{}" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#, poly.trim_end());
            let line: Vec<String> = b.times.iter().zip(&b.mean).map(|(t, y)| format!("{:.2},{:.2}", ax.px(*t), ax.py(*y))).collect();
            let _ = writeln!(svg, r#"<polyline class="mean" points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, line.join(" "));
        }
        if let Some(th) = th {
            let y = ax.py(*th);
            let _ = writeln!(
                svg,
                r#"<line x1="{PAD}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{colour}" stroke-dasharray="4 3"/>"#,
                W - PAD
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" fill="{colour}">{}</text>"#,
            W - PAD - 90.0,
            PAD + 16.0 + 16.0 * c as f64,
            esc(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Agents as dots and the undirected links of the band `[min_link, max_link]`
/// as segments, projected on the `xy` plane.
pub fn snapshot_svg(state: &SwarmState, min_link: f64, max_link: f64, title: &str) -> String {
    let edges = links_in_band(state, min_link, max_link).undirected();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &state.positions {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    // equal scales on both axes
    let span = (x1 - x0).max(y1 - y0).max(1e-9) / 2.0;
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let scale = (H - 2.0 * PAD) / (2.0 * span);
    let px = |x: f64| W / 2.0 + (x - cx) * scale;
    let py = |y: f64| H / 2.0 - (y - cy) * scale;
    let mut svg = header();
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, esc(title));
    for (i, j) in &edges {
        let (a, b) = (state.positions[*i], state.positions[*j]);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-width="1"/>"##,
            px(a.x),
            py(a.y),
            px(b.x),
            py(b.y)
        );
    }
    for p in &state.positions {
        let _ = writeln!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##, px(p.x), py(p.y));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Files of a campaign: per-trial series, per-trial summary, aggregate
/// JSON, manifest, metric bands and final snapshots.
pub fn emit_campaign(
    dir: &Path,
    campaign: &Campaign,
    stride: usize,
    thresholds: &Thresholds,
    manifest: &Manifest,
) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out = Vec::new();
    for run in &campaign.runs {
        out.push(write_file(dir, &format!("trial_{:03}.csv", run.index), &trial_csv(run, stride)?)?);
    }
    out.push(write_file(dir, "trials.csv", &summary_csv(&campaign.result.trials)?)?);
    out.push(write_json(dir, "summary.json", &campaign.result)?);
    out.push(write_json(dir, "manifest.json", manifest)?);

    let runs = &campaign.runs;
    let e_theta = band(runs, stride, |r, k| Some(r.series.e_theta[k]));
    let e_l = band(runs, stride, |r, k| Some(r.series.e_l[k]));
    if runs.iter().all(|r| r.rigid.is_some()) {
        let e = band(runs, stride, |r, k| r.series.e[k]);
        out.push(write_file(dir, "e.svg", band_svg("link length error", "t (s)", &[("e", &e, None)]).as_bytes())?);
    } else {
        let plot = band_svg(
            "regularity and compactness",
            "t (s)",
            &[("e_theta", &e_theta, Some(thresholds.e_theta)), ("e_L", &e_l, Some(thresholds.e_l))],
        );
        out.push(write_file(dir, "metrics.svg", plot.as_bytes())?);
    }
    for run in runs {
        let p = &run.final_params;
        let title = format!("trial {} at t = {}", run.index, tick(*run.series.times.last().unwrap_or(&0.0)));
        let svg = snapshot_svg(&run.final_state, p.min_link, p.max_link, &title);
        out.push(write_file(dir, &format!("snapshot_{:03}.svg", run.index), svg.as_bytes())?);
    }
    Ok(out)
}

/// Cost map CSV (`G_r,G_n,C,success_rate,feasible`) and its JSON.
pub fn emit_grid(dir: &Path, grid: &GridResult, manifest: &Manifest) -> Result<Vec<PathBuf>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to = |e: csv::Error| HarnessError::Runtime(e.to_string());
    w.write_record(["G_r", "G_n", "C", "success_rate", "feasible"]).map_err(to)?;
    for (i, gr) in grid.radial.iter().enumerate() {
        for (j, gn) in grid.normal.iter().enumerate() {
            w.write_record([
                fmt_f64(*gr),
                fmt_f64(*gn),
                fmt_f64(grid.cost[i][j]),
                fmt_f64(grid.success_rate[i][j]),
                (grid.cost[i][j] <= 1.0).to_string(),
            ])
            .map_err(to)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))?;
    Ok(vec![
        write_file(dir, "cost_map.csv", &bytes)?,
        write_json(dir, "grid.json", grid)?,
        write_json(dir, "manifest.json", manifest)?,
        write_file(dir, "cost_map.svg", heatmap_svg(grid).as_bytes())?,
    ])
}

fn heatmap_svg(grid: &GridResult) -> String {
    let (rows, cols) = (grid.radial.len(), grid.normal.len());
    let cw = (W - 2.0 * PAD) / cols as f64;
    let ch = (H - 2.0 * PAD) / rows as f64;
    let finite = grid.cost.iter().flatten().copied().filter(|c| c.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min).ln_1p();
    let hi = finite.fold(f64::NEG_INFINITY, f64::max).ln_1p();
    let mut svg = header();
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="14" text-anchor="middle">mean cost (rows G_r, columns G_n)</text>"#, W / 2.0);
    for i in 0..rows {
        for j in 0..cols {
            let c = grid.cost[i][j];
            let s = if hi > lo { (c.ln_1p() - lo) / (hi - lo) } else { 0.0 };
            let g = (255.0 * (1.0 - s.clamp(0.0, 1.0))) as u8;
            let stroke = if c <= 1.0 { r#" stroke="black" stroke-width="2""# } else { "" };
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{cw:.2}" height="{ch:.2}" fill="rgb(255,{g},{g})"{stroke}/>"#,
                PAD + j as f64 * cw,
                H - PAD - (i + 1) as f64 * ch
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Sweep table (one row per value) with mean/min/max of the steady-state
/// metrics, `e_final` and `ρ`, plus a band plot over the swept values.
pub fn emit_sweep(dir: &Path, sweep: &SweepResult, manifest: &Manifest) -> Result<Vec<PathBuf>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to = |e: csv::Error| HarnessError::Runtime(e.to_string());
    w.write_record([
        "value", "success_rate", "e_theta_mean", "e_theta_min", "e_theta_max", "e_L_mean", "e_L_min", "e_L_max",
        "T_median", "e_final_mean", "e_final_min", "e_final_max", "rigid_rate", "rho",
    ])
    .map_err(to)?;
    for p in &sweep.points {
        let a = &p.campaign.aggregate;
        let ef = |f: fn(&Stat) -> f64| opt(a.e_final.as_ref().map(f));
        w.write_record([
            p.value.to_string(),
            fmt_f64(a.success_rate),
            fmt_f64(a.e_theta_ss.mean),
            fmt_f64(a.e_theta_ss.min),
            fmt_f64(a.e_theta_ss.max),
            fmt_f64(a.e_l_ss.mean),
            fmt_f64(a.e_l_ss.min),
            fmt_f64(a.e_l_ss.max),
            opt(a.convergence_median),
            ef(|s| s.mean),
            ef(|s| s.min),
            ef(|s| s.max),
            opt(a.rigid_rate),
            opt(a.rho),
        ])
        .map_err(to)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let mut out = vec![
        write_file(dir, "sweep.csv", &bytes)?,
        write_json(dir, "sweep.json", sweep)?,
        write_json(dir, "manifest.json", manifest)?,
    ];
    for (k, p) in sweep.points.iter().enumerate() {
        out.push(write_file(dir, &format!("trials_{k:03}.csv"), &summary_csv(&p.campaign.trials)?)?);
    }
    let xs: Vec<f64> = sweep.points.iter().enumerate().map(|(k, p)| value_as_f64(&p.value).unwrap_or(k as f64)).collect();
    let mk = |pick: &dyn Fn(&super::campaign::Aggregate) -> Option<Stat>| {
        let mut b = Band { times: Vec::new(), mean: Vec::new(), min: Vec::new(), max: Vec::new() };
        for (x, p) in xs.iter().zip(&sweep.points) {
            if let Some(s) = pick(&p.campaign.aggregate) {
                b.times.push(*x);
                b.mean.push(s.mean);
                b.min.push(s.min);
                b.max.push(s.max);
            }
        }
        b
    };
    let rigid = sweep.points.iter().any(|p| p.campaign.aggregate.rho.is_some());
    let svg = if rigid {
        let e = mk(&|a| a.e_final);
        let rho = mk(&|a| a.rho.map(|r| Stat { mean: r, min: r, max: r }));
        band_svg("terminal link error and rho", &sweep.path, &[("e_final", &e, None), ("rho", &rho, None)])
    } else {
        let a = mk(&|a| Some(a.e_theta_ss));
        let b = mk(&|a| Some(a.e_l_ss));
        band_svg("steady-state metrics", &sweep.path, &[("e_theta_ss", &a, Some(0.2)), ("e_L_ss", &b, Some(0.3))])
    };
    out.push(write_file(dir, "sweep.svg", svg.as_bytes())?);
    Ok(out)
}

pub fn value_as_f64(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(x) => Some(*x),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}
