use gtx_core::train::{ablation_cell, ablation_table, generate, AblationCell, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use super::Context;
use crate::config::AblationFile;
use crate::error::{CliError, Result};
use crate::io::write_csv;

pub const CELLS: &str = "ablation_cells.csv";
pub const TABLE: &str = "ablation.csv";
pub const FAILURES: &str = "ablation_failures.csv";

#[derive(Serialize, Deserialize)]
struct Failure {
    variant: Variant,
    seed: u64,
    message: String,
}

pub fn run(cx: &Context<AblationFile>) -> Result<()> {
    let cfg = &cx.cfg;
    let ab = &cfg.ablation;
    let ds = generate(&cfg.data)?;
    let cells: Vec<(u64, Variant)> = (0..ab.seeds as u64)
        .flat_map(|i| ab.variants.iter().map(move |&v| (cfg.seed + i, v)))
        .collect();
    let results = cx.dir.run_cells(
        &cx.pool,
        &cells,
        |(s, v)| format!("{}/{s}", v.key()),
        |&(seed, v)| {
            let tcfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            ablation_cell(&cfg.model, v, &ds, ab.alpha, &tcfg, &cx.clock).map_err(|e| e.to_string())
        },
    )?;
    let mut done: Vec<AblationCell> = Vec::new();
    let mut failures = Vec::new();
    for (&(seed, variant), r) in cells.iter().zip(results) {
        match r {
            Ok(c) => done.push(c),
            Err(message) => failures.push(Failure { variant, seed, message }),
        }
    }
    write_csv(&cx.dir.file(CELLS), &["variant", "seed", "metric"], &done)?;
    write_csv(&cx.dir.file(FAILURES), &["variant", "seed", "message"], &failures)?;
    if !done.iter().any(|c| c.variant == ab.baseline) {
        return Err(CliError::Failed(format!("every `{}` baseline run failed", ab.baseline.key())));
    }
    write_csv(&cx.dir.file(TABLE), &["variant", "metric", "pct_vs_baseline"], &ablation_table(&done, ab.baseline))
}
