//! Summary text and plot-data files from a finished run directory.
//!
//! Plot data is long-form CSV with `x`, `y` and `series` columns (plus
//! spread columns where they exist), one file per figure under `plot/`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gtx_core::manifold::convergence::median;
use serde::Serialize;

use crate::artifacts::SUMMARY;
use crate::commands::{ablation, convergence, gradcheck, grid, selftest, terrain};
use crate::error::{artifact, io_at, CliError, Result};
use crate::io::write_csv;
use crate::manifest::MANIFEST;

/// A CSV file read as text, with numeric access by column name.
struct Table {
    path: std::path::PathBuf,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| artifact(path, e))?;
        let headers = r.headers().map_err(|e| artifact(path, e))?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(String::from).collect()).map_err(|e| artifact(path, e)))
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| artifact(&self.path, format!("missing column `{name}`")))
    }

    fn text(&self, row: usize, name: &str) -> Result<&str> {
        Ok(&self.rows[row][self.col(name)?])
    }

    fn num(&self, row: usize, name: &str) -> Result<f64> {
        let s = self.text(row, name)?;
        s.parse()
            .map_err(|_| artifact(&self.path, format!("row {}: `{name}` is not a number: `{s}`", row + 1)))
    }
}

#[derive(Serialize)]
struct Point {
    x: String,
    y: f64,
    series: String,
}

#[derive(Serialize)]
struct SpreadPoint {
    x: String,
    y: f64,
    series: String,
    iqr: f64,
}

#[derive(Serialize)]
struct HeatPoint {
    x: String,
    y: String,
    series: String,
    value: f64,
    seeds: usize,
}

/// Groups values under string keys, keeping first-seen key order.
fn group<K: PartialEq + Clone>(items: impl IntoIterator<Item = (K, f64)>) -> Vec<(K, Vec<f64>)> {
    let mut out: Vec<(K, Vec<f64>)> = Vec::new();
    for (k, v) in items {
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, vs)) => vs.push(v),
            None => out.push((k, vec![v])),
        }
    }
    out
}

fn grid_report(dir: &Path, out: &mut String, plot: &Path) -> Result<bool> {
    let t = Table::read(&dir.join(grid::GRID))?;
    let failures = Table::read(&dir.join(grid::FAILURES)).map(|f| f.rows.len()).unwrap_or(0);
    writeln!(out, "transfer grid: {} rows, {failures} failed cells", t.rows.len()).ok();
    if t.rows.is_empty() {
        return Ok(false);
    }
    let mut cells = Vec::new();
    let mut largest_test = f64::MIN;
    for i in 0..t.rows.len() {
        let key = (t.text(i, "model")?.to_string(), t.text(i, "alpha_train")?.to_string(), t.text(i, "alpha_test")?.to_string());
        largest_test = largest_test.max(t.num(i, "alpha_test")?);
        cells.push((key, t.num(i, "metric")?));
    }
    let groups = group(cells);
    let heat: Vec<HeatPoint> = groups
        .iter()
        .map(|((m, a, b), v)| HeatPoint {
            x: a.clone(),
            y: b.clone(),
            series: m.clone(),
            value: median(v),
            seeds: v.len(),
        })
        .collect();
    let size: Vec<Point> = groups
        .iter()
        .filter(|((_, _, b), _)| b.parse::<f64>().ok() == Some(largest_test))
        .map(|((m, a, _), v)| Point {
            x: a.clone(),
            y: median(v),
            series: m.clone(),
        })
        .collect();
    write_csv(&plot.join("transfer_heatmap.csv"), &["x", "y", "series", "value", "seeds"], &heat)?;
    write_csv(&plot.join("transfer_size.csv"), &["x", "y", "series"], &size)?;
    writeln!(out, "median test accuracy by train fraction (x) and test fraction (y):").ok();
    writeln!(out, "  model       alpha_train  alpha_test  median  seeds").ok();
    for h in &heat {
        writeln!(out, "  {:<11} {:<12} {:<11} {:.4}  {}", h.series, h.x, h.y, h.value, h.seeds).ok();
    }
    Ok(true)
}

/// Markdown table: model, accuracy, change against the baseline.
pub fn ablation_text(t: &[(String, f64, String)]) -> String {
    let w = t.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
    let mut s = format!("| {:<w$} | Accuracy | % vs. GT |\n|{}|----------|----------|\n", "Model", "-".repeat(w + 2));
    for (v, m, p) in t {
        s.push_str(&format!("| {v:<w$} | {m:>8.2} | {p:>8} |\n"));
    }
    s
}

fn ablation_report(dir: &Path, out: &mut String, plot: &Path) -> Result<bool> {
    let t = Table::read(&dir.join(ablation::TABLE))?;
    let mut rows = Vec::new();
    for i in 0..t.rows.len() {
        rows.push((t.text(i, "variant")?.to_string(), t.num(i, "metric")?, t.text(i, "pct_vs_baseline")?.to_string()));
    }
    let pts: Vec<Point> = rows
        .iter()
        .map(|r| Point {
            x: r.0.clone(),
            y: r.1,
            series: "test_accuracy".into(),
        })
        .collect();
    write_csv(&plot.join("ablation.csv"), &["x", "y", "series"], &pts)?;
    writeln!(out, "ablation: median test accuracy (%) per variant").ok();
    out.push_str(&ablation_text(&rows));
    Ok(!rows.is_empty())
}

fn curve_report(dir: &Path, file: &str, plot_name: &str, out: &mut String, plot: &Path) -> Result<bool> {
    let t = Table::read(&dir.join(file))?;
    let mut pts = Vec::new();
    for i in 0..t.rows.len() {
        pts.push(SpreadPoint {
            x: t.text(i, "N")?.to_string(),
            y: t.num(i, "median")?,
            series: t.text(i, "task")?.to_string(),
            iqr: t.num(i, "iqr")?,
        });
    }
    write_csv(&plot.join(plot_name), &["x", "y", "series", "iqr"], &pts)?;
    let mut tasks: Vec<&str> = Vec::new();
    for p in &pts {
        if !tasks.contains(&p.series.as_str()) {
            tasks.push(&p.series);
        }
    }
    for task in tasks {
        let c: Vec<&SpreadPoint> = pts.iter().filter(|p| p.series == task).collect();
        let (first, last) = (c[0], c[c.len() - 1]);
        let slope = t.num(pts.iter().position(|p| p.series == task).expect("present"), "fit_slope")?;
        writeln!(
            out,
            "{task}: median error {:.4} at N = {} -> {:.4} at N = {} (ratio {:.3}, log-log slope {slope:.3})",
            first.y,
            first.x,
            last.y,
            last.x,
            last.y / first.y
        )
        .ok();
    }
    Ok(!pts.is_empty())
}

#[derive(Serialize)]
struct StridePoint {
    x: String,
    y: f64,
    series: String,
    runs: usize,
}

fn terrain_report(dir: &Path, out: &mut String, plot: &Path) -> Result<bool> {
    let t = Table::read(&dir.join(terrain::TABLE))?;
    let mut model = Vec::new();
    let mut base = Vec::new();
    for i in 0..t.rows.len() {
        model.push((t.text(i, "stride")?.to_string(), t.num(i, "mae")?));
        base.push((t.text(i, "stride")?.to_string(), t.num(i, "baseline_mae")?));
    }
    let mut pts = Vec::new();
    for (series, g) in [("model", group(model)), ("euclidean", group(base))] {
        for (x, v) in g {
            pts.push(StridePoint {
                x,
                y: median(&v),
                series: series.into(),
                runs: v.len(),
            });
        }
    }
    write_csv(&plot.join("terrain.csv"), &["x", "y", "series", "runs"], &pts)?;
    writeln!(out, "terrain: median full-resolution MAE by training stride").ok();
    for p in &pts {
        writeln!(out, "  stride {:<3} {:<9} {:.4} ({} runs)", p.x, p.series, p.y, p.runs).ok();
    }
    Ok(!pts.is_empty())
}

fn flag_report(dir: &Path, file: &str, key: &str, title: &str, out: &mut String) -> Result<bool> {
    let t = Table::read(&dir.join(file))?;
    // Gradient errors must be strictly below tolerance, self-test values may equal it.
    let (value, cmp) = if key == "op" { ("max_rel_error", "<") } else { ("value", "<=") };
    writeln!(out, "{title}").ok();
    let mut all = true;
    for i in 0..t.rows.len() {
        let passed = t.text(i, "passed")? == "true";
        all &= passed;
        writeln!(
            out,
            "  {:<34} {:>10.3e}  {cmp:<2} {:.0e}  {}",
            t.text(i, key)?,
            t.num(i, value)?,
            t.num(i, "tolerance")?,
            if passed { "ok" } else { "FAIL" }
        )
        .ok();
    }
    Ok(all && !t.rows.is_empty())
}

/// Writes `plot/*.csv` and `summary.txt` for every result file present in
/// `dir` and returns the summary. An empty result table is an error, after
/// the summary has been written.
pub fn emit_report(dir: &Path) -> Result<String> {
    if !dir.join(MANIFEST).exists() {
        return Err(artifact(dir.join(MANIFEST), "missing; not a finished run directory"));
    }
    let plot = dir.join("plot");
    fs::create_dir_all(&plot).map_err(io_at(&plot))?;
    let mut out = String::new();
    let mut empty = Vec::new();
    let has = |f: &str| dir.join(f).exists();
    if has(convergence::CURVE_SUMMARY) {
        if !curve_report(dir, convergence::CURVE_SUMMARY, "convergence.csv", &mut out, &plot)? {
            empty.push(convergence::CURVE_SUMMARY);
        }
        out.push_str("note: the kernel-graph Laplacian is rescaled by a constant fitted to the first nonzero eigenvalue cluster, not derived analytically\n");
    }
    if has(convergence::SPECTRUM_SUMMARY) && !curve_report(dir, convergence::SPECTRUM_SUMMARY, "spectrum.csv", &mut out, &plot)? {
        empty.push(convergence::SPECTRUM_SUMMARY);
    }
    if has(grid::GRID) && !grid_report(dir, &mut out, &plot)? {
        empty.push(grid::GRID);
    }
    if has(ablation::TABLE) && !ablation_report(dir, &mut out, &plot)? {
        empty.push(ablation::TABLE);
    }
    if has(terrain::TABLE) && !terrain_report(dir, &mut out, &plot)? {
        empty.push(terrain::TABLE);
    }
    if has(gradcheck::TABLE) {
        flag_report(dir, gradcheck::TABLE, "op", "gradient check: max relative error per op", &mut out)?;
    }
    if has(selftest::TABLE) {
        flag_report(dir, selftest::TABLE, "check", "self-test", &mut out)?;
    }
    if out.is_empty() {
        return Err(artifact(dir, "no result files to report on"));
    }
    let p = dir.join(SUMMARY);
    fs::write(&p, &out).map_err(io_at(&p))?;
    if !empty.is_empty() {
        return Err(CliError::Failed(format!("{out}empty result table: {}", empty.join(", "))));
    }
    Ok(out)
}
