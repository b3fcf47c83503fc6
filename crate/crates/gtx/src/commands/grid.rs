use gtx_core::train::{generate, grid_cell, CellFailure, GridRow, RunRecord, TrainConfig};

use super::Context;
use crate::config::GridFile;
use crate::error::Result;
use crate::io::{write_csv, write_jsonl};

pub const GRID: &str = "grid.csv";
pub const FAILURES: &str = "failures.csv";
pub const RUNS: &str = "runs.jsonl";

pub const GRID_HEADER: [&str; 6] = ["model", "alpha_train", "alpha_test", "seed", "metric", "wallclock_s"];
pub const FAILURE_HEADER: [&str; 3] = ["alpha_train", "seed", "message"];

pub fn run(cx: &Context<GridFile>) -> Result<()> {
    let cfg = &cx.cfg;
    let ds = generate(&cfg.data)?;
    let cells: Vec<(f64, u64)> = cfg
        .grid
        .train_fractions
        .iter()
        .flat_map(|&a| (0..cfg.grid.seeds as u64).map(move |i| (a, cfg.seed + i)))
        .collect();
    let results = cx.dir.run_cells(
        &cx.pool,
        &cells,
        |(a, s)| format!("{a}/{s}"),
        |&(alpha, seed)| {
            let tcfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            grid_cell(&cfg.model, &ds, alpha, &cfg.grid.test_fractions, &tcfg, &cx.clock).map_err(|e| e.to_string())
        },
    )?;
    let mut rows: Vec<GridRow> = Vec::new();
    let mut records: Vec<RunRecord> = Vec::new();
    let mut failures = Vec::new();
    for (&(alpha_train, seed), r) in cells.iter().zip(results) {
        match r {
            Ok((cell_rows, rec)) => {
                rows.extend(cell_rows);
                records.push(rec);
            }
            Err(message) => failures.push(CellFailure {
                alpha_train,
                seed,
                message,
            }),
        }
    }
    write_csv(&cx.dir.file(GRID), &GRID_HEADER, &rows)?;
    write_csv(&cx.dir.file(FAILURES), &FAILURE_HEADER, &failures)?;
    write_jsonl(&cx.dir.file(RUNS), &records)
}
