use gtx_core::manifold::convergence::{input_coefficients, spectral_error};
use gtx_core::manifold::{
    analytic_spectrum, convergence_cell, nested_cloud, summarize, ConvergenceConfig, ConvergenceRow, FrozenModel,
    ManifoldSpec, Reference,
};

use super::Context;
use crate::config::ConvergenceFile;
use crate::error::{CliError, Result};
use crate::io::write_csv;

pub const CURVES: &str = "convergence.csv";
pub const CURVE_SUMMARY: &str = "convergence_summary.csv";
pub const SPECTRUM: &str = "spectrum.csv";
pub const SPECTRUM_SUMMARY: &str = "spectrum_summary.csv";

const ROW: [&str; 4] = ["task", "N", "seed", "error"];
const SUMMARY: [&str; 5] = ["task", "N", "median", "iqr", "fit_slope"];

fn collect(
    cells: &[(String, usize, usize)],
    results: Vec<std::result::Result<f64, String>>,
) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::new();
    for ((task, seed, n), r) in cells.iter().zip(results) {
        let error = r.map_err(|e| CliError::Failed(format!("{task} at N = {n}, seed {seed}: {e}")))?;
        rows.push(ConvergenceRow {
            task: task.clone(),
            n: *n,
            seed: *seed,
            error,
        });
    }
    Ok(rows)
}

pub fn run(cx: &Context<ConvergenceFile>) -> Result<()> {
    let cfg: &ConvergenceConfig = &cx.cfg.convergence;
    let root = cx.cfg.seed;
    let basis = analytic_spectrum(ManifoldSpec::new(cfg.manifold), 16)?;
    let model = FrozenModel::random(input_coefficients(&basis).rows(), cfg, root);
    let reference = Reference::new(cfg, &model, root)?;

    let mut cells = Vec::new();
    for task in &cfg.tasks {
        for seed in 0..cfg.seeds {
            for &n in &cfg.n_grid {
                cells.push((task.name().to_string(), seed, n));
            }
        }
    }
    let results = cx.dir.run_cells(
        &cx.pool,
        &cells,
        |(t, s, n)| format!("{t}/{s}/{n}"),
        |(t, s, n)| {
            let task = *cfg.tasks.iter().find(|k| k.name() == t).expect("task from config");
            let cloud = nested_cloud(cfg, root, *s, *n).map_err(|e| e.to_string())?;
            convergence_cell(task, cfg, &model, &reference, &cloud).map_err(|e| e.to_string())
        },
    )?;
    let rows = collect(&cells, results)?;
    write_csv(&cx.dir.file(CURVES), &ROW, &rows)?;
    write_csv(&cx.dir.file(CURVE_SUMMARY), &SUMMARY, &summarize(&rows))?;

    let sp = &cx.cfg.spectrum;
    if sp.enabled {
        let scfg = ConvergenceConfig {
            manifold: cfg.manifold,
            n_grid: sp.n_grid.clone(),
            ..ConvergenceConfig::default()
        };
        let mut cells = Vec::new();
        for seed in 0..sp.seeds {
            for &n in &sp.n_grid {
                cells.push(("spectrum".to_string(), seed, n));
            }
        }
        let results = cx.dir.run_cells(
            &cx.pool,
            &cells,
            |(t, s, n)| format!("{t}/{s}/{n}"),
            |(_, s, n)| {
                let cloud = nested_cloud(&scfg, root, *s, *n).map_err(|e| e.to_string())?;
                spectral_error(&cloud, sp.bandwidth_scale, &[1, 2, 3]).map_err(|e| e.to_string())
            },
        )?;
        let rows = collect(&cells, results)?;
        write_csv(&cx.dir.file(SPECTRUM), &ROW, &rows)?;
        write_csv(&cx.dir.file(SPECTRUM_SUMMARY), &SUMMARY, &summarize(&rows))?;
    }
    Ok(())
}
