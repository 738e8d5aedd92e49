//! SVG figures built from an experiment directory's CSV files.
//!
//! Every figure is written next to a plot-data CSV holding exactly the
//! numbers drawn, so the CSVs remain the source of truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dualls_core::stats;

use crate::error::CliError;
use crate::experiment::{read_metric_csv, MetricRow};

pub const KINDS: [&str; 4] = ["curves", "matrix", "composition", "loss"];

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Default)]
pub struct PlotReport {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Minimal SVG canvas with a fixed plotting frame.
struct Svg {
    body: String,
    width: f64,
    height: f64,
}

const MARGIN: f64 = 50.0;

impl Svg {
    fn new(width: f64, height: f64, title: &str) -> Self {
        let mut s = Self {
            body: String::new(),
            width,
            height,
        };
        s.text(width / 2.0, 20.0, title, "middle", 14.0);
        s
    }

    fn text(&mut self, x: f64, y: f64, t: &str, anchor: &str, size: f64) {
        let t = t.replace('&', "&amp;").replace('<', "&lt;");
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="{size}" font-family="sans-serif">{t}</text>"#
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}" fill-opacity="{opacity}"/>"#
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            p.join(" ")
        );
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, opacity: f64) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polygon points="{}" fill="{fill}" fill-opacity="{opacity}" stroke="none"/>"#,
            p.join(" ")
        );
    }

    fn frame(&mut self, x_label: &str, y_label: &str, y_range: (f64, f64)) {
        let (w, h) = (self.width, self.height);
        let _ = writeln!(
            self.body,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            w - 2.0 * MARGIN,
            h - 2.0 * MARGIN
        );
        self.text(w / 2.0, h - 12.0, x_label, "middle", 11.0);
        self.text(12.0, h / 2.0, y_label, "start", 11.0);
        self.text(MARGIN - 4.0, h - MARGIN, &format!("{:.3}", y_range.0), "end", 9.0);
        self.text(MARGIN - 4.0, MARGIN + 8.0, &format!("{:.3}", y_range.1), "end", 9.0);
    }

    /// Maps data coordinates into the frame.
    fn map(&self, x: f64, y: f64, xr: (f64, f64), yr: (f64, f64)) -> (f64, f64) {
        let fx = if xr.1 > xr.0 { (x - xr.0) / (xr.1 - xr.0) } else { 0.5 };
        let fy = if yr.1 > yr.0 { (y - yr.0) / (yr.1 - yr.0) } else { 0.5 };
        (
            MARGIN + fx * (self.width - 2.0 * MARGIN),
            self.height - MARGIN - fy * (self.height - 2.0 * MARGIN),
        )
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn list_csv(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(path: &Path, suffix: &str) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    name.strip_suffix(suffix).unwrap_or(name).to_string()
}

/// Writes the requested figures into `<dir>/plots`. Unknown kinds are
/// reported and skipped; an empty record set is a warning, not an error.
pub fn emit_plots(dir: &Path, kinds: &[String]) -> Result<PlotReport, CliError> {
    let mut report = PlotReport::default();
    let metric_files = list_csv(&dir.join("metrics"), ".csv")?;
    if metric_files.is_empty() {
        report.warnings.push(format!("no run records under {}", dir.display()));
        return Ok(report);
    }
    let out = dir.join("plots");
    fs::create_dir_all(&out)?;
    let requested: Vec<String> = if kinds.is_empty() {
        KINDS.iter().map(|s| s.to_string()).collect()
    } else {
        kinds.to_vec()
    };
    for kind in &requested {
        match kind.as_str() {
            "curves" => {
                let mut rows = Vec::new();
                for f in &metric_files {
                    rows.extend(read_metric_csv(f)?);
                }
                for metric in ["fde_ave", "mr_ave", "fde_bwt", "mr_bwt"] {
                    report.written.extend(curves(&out, &rows, metric)?);
                }
            }
            "matrix" => {
                for f in list_csv(&dir.join("matrices"), ".csv")? {
                    report.written.extend(matrix(&out, &f)?);
                }
            }
            "composition" => {
                for f in list_csv(&dir.join("traces"), "_composition.csv")? {
                    report.written.extend(composition(&out, &f)?);
                }
            }
            "loss" => {
                for f in list_csv(&dir.join("traces"), "_steps.csv")? {
                    report.written.extend(loss(&out, &f)?);
                }
            }
            other => report.warnings.push(format!(
                "unknown plot kind '{other}' skipped; known kinds: {}",
                KINDS.join(", ")
            )),
        }
    }
    Ok(report)
}

fn metric_value(r: &MetricRow, metric: &str) -> Option<f64> {
    match metric {
        "fde_ave" => Some(r.fde_ave),
        "mr_ave" => Some(r.mr_ave),
        "fde_bwt" => r.fde_bwt,
        "mr_bwt" => r.mr_bwt,
        _ => None,
    }
}

/// Mean ± std across seeds of a metric after each task, one line per
/// `(trainer, budget)` group.
fn curves(out: &Path, rows: &[MetricRow], metric: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut groups: BTreeMap<(String, usize), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = metric_value(r, metric) {
            groups
                .entry((r.trainer.to_string(), r.budget))
                .or_default()
                .entry(r.task)
                .or_default()
                .push(v);
        }
    }
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    let data_path = out.join(format!("curves_{metric}.csv"));
    let mut w = csv::Writer::from_path(&data_path)?;
    w.write_record(["trainer", "budget", "task", "mean", "std", "runs"])?;
    let mut series = Vec::new();
    for ((trainer, budget), per_task) in &groups {
        let mut pts = Vec::new();
        for (task, vals) in per_task {
            let (m, s) = (stats::mean(vals), stats::std_dev(vals));
            w.write_record([
                trainer.clone(),
                budget.to_string(),
                task.to_string(),
                m.to_string(),
                s.to_string(),
                vals.len().to_string(),
            ])?;
            pts.push((*task as f64, m, s));
        }
        series.push((format!("{trainer} b{budget}"), pts));
    }
    w.flush()?;

    let xr = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let yr = range(series.iter().flat_map(|(_, p)| p.iter().flat_map(|q| [q.1 - q.2, q.1 + q.2])));
    let mut svg = Svg::new(720.0, 440.0, &format!("{metric} after each task"));
    svg.frame("task", metric, yr);
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut band: Vec<(f64, f64)> = pts.iter().map(|q| svg.map(q.0, q.1 + q.2, xr, yr)).collect();
        band.extend(pts.iter().rev().map(|q| svg.map(q.0, q.1 - q.2, xr, yr)));
        svg.polygon(&band, color, 0.15);
        let line: Vec<(f64, f64)> = pts.iter().map(|q| svg.map(q.0, q.1, xr, yr)).collect();
        svg.polyline(&line, color);
        svg.rect(MARGIN + 10.0, MARGIN + 10.0 + 16.0 * i as f64, 10.0, 10.0, color, 1.0);
        svg.text(MARGIN + 26.0, MARGIN + 19.0 + 16.0 * i as f64, label, "start", 10.0);
    }
    let svg_path = out.join(format!("curves_{metric}.svg"));
    fs::write(&svg_path, svg.finish())?;
    Ok(vec![data_path, svg_path])
}

/// Cell annotation text; shared by the SVG and its plot-data CSV.
pub fn matrix_label(v: f64) -> String {
    format!("{v:.3}")
}

fn matrix(out: &Path, src: &Path) -> Result<Vec<PathBuf>, CliError> {
    let name = stem(src, ".csv");
    let mut r = csv::Reader::from_path(src)?;
    let mut cells = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("").to_string();
        let i: usize = get(0).parse().map_err(CliError::runtime)?;
        let j: usize = get(1).parse().map_err(CliError::runtime)?;
        let v: f64 = get(2).parse().map_err(CliError::runtime)?;
        cells.push((i, j, v));
    }
    let n = cells.iter().map(|c| c.0.max(c.1)).max().unwrap_or(0);
    if n == 0 {
        return Ok(Vec::new());
    }
    let data_path = out.join(format!("matrix_{name}.csv"));
    let mut w = csv::Writer::from_path(&data_path)?;
    w.write_record(["trained_through", "evaluated_on", "label"])?;
    let (lo, hi) = range(cells.iter().map(|c| c.2));
    let cell = 56.0;
    let mut svg = Svg::new(2.0 * MARGIN + cell * n as f64, 2.0 * MARGIN + cell * n as f64, &name);
    for &(i, j, v) in &cells {
        let label = matrix_label(v);
        w.write_record([i.to_string(), j.to_string(), label.clone()])?;
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        let shade = (255.0 * (1.0 - 0.8 * t)).round() as u8;
        let x = MARGIN + cell * (j - 1) as f64;
        let y = MARGIN + cell * (i - 1) as f64;
        svg.rect(x, y, cell, cell, &format!("rgb(255,{shade},{shade})"), 1.0);
        svg.text(x + cell / 2.0, y + cell / 2.0 + 4.0, &label, "middle", 10.0);
    }
    w.flush()?;
    svg.text(svg.width / 2.0, svg.height - 12.0, "evaluated on task", "middle", 11.0);
    svg.text(8.0, svg.height / 2.0, "trained through", "start", 9.0);
    let svg_path = out.join(format!("matrix_{name}.svg"));
    fs::write(&svg_path, svg.finish())?;
    Ok(vec![data_path, svg_path])
}

fn composition(out: &Path, src: &Path) -> Result<Vec<PathBuf>, CliError> {
    let name = stem(src, "_composition.csv");
    let mut r = csv::Reader::from_path(src)?;
    // buffer -> step -> task -> count
    let mut data: BTreeMap<String, BTreeMap<usize, BTreeMap<u32, usize>>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let step: usize = rec.get(0).unwrap_or("").parse().map_err(CliError::runtime)?;
        let buffer = rec.get(1).unwrap_or("").to_string();
        let task: u32 = rec.get(2).unwrap_or("").parse().map_err(CliError::runtime)?;
        let count: usize = rec.get(3).unwrap_or("").parse().map_err(CliError::runtime)?;
        data.entry(buffer).or_default().entry(step).or_default().insert(task, count);
    }
    let mut written = Vec::new();
    for (buffer, steps) in data {
        let tasks: Vec<u32> = {
            let mut t: Vec<u32> = steps.values().flat_map(|m| m.keys().copied()).collect();
            t.sort_unstable();
            t.dedup();
            t
        };
        let data_path = out.join(format!("composition_{name}_{buffer}.csv"));
        let mut w = csv::Writer::from_path(&data_path)?;
        let mut header = vec!["step".to_string()];
        header.extend(tasks.iter().map(|t| format!("task_{t}")));
        header.push("total".into());
        w.write_record(&header)?;
        // Cumulative tops per step.
        let mut stacks: Vec<(usize, Vec<f64>)> = Vec::new();
        for (step, counts) in &steps {
            let mut row = vec![step.to_string()];
            let mut acc = 0.0;
            let mut tops = Vec::with_capacity(tasks.len());
            for t in &tasks {
                let c = counts.get(t).copied().unwrap_or(0);
                row.push(c.to_string());
                acc += c as f64;
                tops.push(acc);
            }
            row.push((acc as usize).to_string());
            w.write_record(&row)?;
            stacks.push((*step, tops));
        }
        w.flush()?;
        let xr = range(stacks.iter().map(|s| s.0 as f64));
        let yr = (0.0, stacks.iter().filter_map(|s| s.1.last().copied()).fold(1.0, f64::max));
        let mut svg = Svg::new(720.0, 440.0, &format!("{name} {buffer} buffer composition"));
        svg.frame("step", "entries", yr);
        for (k, t) in tasks.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mut poly: Vec<(f64, f64)> = stacks.iter().map(|s| svg.map(s.0 as f64, s.1[k], xr, yr)).collect();
            poly.extend(stacks.iter().rev().map(|s| {
                let base = if k == 0 { 0.0 } else { s.1[k - 1] };
                svg.map(s.0 as f64, base, xr, yr)
            }));
            svg.polygon(&poly, color, 0.8);
            svg.rect(MARGIN + 10.0, MARGIN + 10.0 + 14.0 * k as f64, 10.0, 10.0, color, 1.0);
            svg.text(MARGIN + 26.0, MARGIN + 19.0 + 14.0 * k as f64, &format!("task {t}"), "start", 10.0);
        }
        let svg_path = out.join(format!("composition_{name}_{buffer}.svg"));
        fs::write(&svg_path, svg.finish())?;
        written.push(data_path);
        written.push(svg_path);
    }
    Ok(written)
}

fn loss(out: &Path, src: &Path) -> Result<Vec<PathBuf>, CliError> {
    let name = stem(src, "_steps.csv");
    let mut r = csv::Reader::from_path(src)?;
    let mut pts: Vec<(f64, usize, f64)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let step: f64 = rec.get(0).unwrap_or("").parse().map_err(CliError::runtime)?;
        let task: usize = rec.get(1).unwrap_or("").parse().map_err(CliError::runtime)?;
        let l: f64 = rec.get(2).unwrap_or("").parse().map_err(CliError::runtime)?;
        pts.push((step, task, l));
    }
    if pts.is_empty() {
        return Ok(Vec::new());
    }
    let data_path = out.join(format!("loss_{name}.csv"));
    let mut w = csv::Writer::from_path(&data_path)?;
    w.write_record(["step", "task", "stream_loss"])?;
    for (s, t, l) in &pts {
        w.write_record([s.to_string(), t.to_string(), l.to_string()])?;
    }
    w.flush()?;
    let xr = range(pts.iter().map(|p| p.0));
    let yr = range(pts.iter().map(|p| p.2));
    let mut svg = Svg::new(720.0, 440.0, &format!("{name} stream loss"));
    svg.frame("step", "stream loss", yr);
    let mut start = 0;
    for i in 1..=pts.len() {
        if i == pts.len() || pts[i].1 != pts[start].1 {
            if pts[start].1.is_multiple_of(2) {
                let (x0, _) = svg.map(pts[start].0, yr.0, xr, yr);
                let (x1, _) = svg.map(pts[i - 1].0, yr.0, xr, yr);
                svg.rect(x0, MARGIN, (x1 - x0).max(1.0), svg.height - 2.0 * MARGIN, "#999999", 0.15);
            }
            start = i;
        }
    }
    let line: Vec<(f64, f64)> = pts.iter().map(|p| svg.map(p.0, p.2, xr, yr)).collect();
    svg.polyline(&line, PALETTE[0]);
    let svg_path = out.join(format!("loss_{name}.svg"));
    fs::write(&svg_path, svg.finish())?;
    Ok(vec![data_path, svg_path])
}
