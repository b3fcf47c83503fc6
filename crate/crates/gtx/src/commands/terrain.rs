use std::path::Path;

use gtx_core::terrain::{evaluate_spd_model, grid_graph_8nn, hill_fixture, terrain_stride_run, test_pairs, Frame, TerrainRow};
use gtx_core::train::{RunRecord, SpdMetrics};

use super::Context;
use crate::config::TerrainFile;
use crate::error::{CliError, Result};
use crate::io::{load_checkpoint, load_dem, load_pairs, save_checkpoint, save_dem, save_pairs, write_csv, write_jsonl};

pub const TABLE: &str = "terrain.csv";
pub const RUNS: &str = "runs.jsonl";
pub const FAILURES: &str = "failures.csv";

pub const HEADER: [&str; 12] = [
    "stride",
    "seed",
    "train_nodes",
    "train_pairs",
    "mae",
    "rmse",
    "relative_error",
    "baseline_mae",
    "spd_scale",
    "epochs",
    "wallclock_s",
    "checkpoint",
];

/// A [`TerrainRow`] plus the checkpoint path, as written to the table.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TableRow {
    pub stride: usize,
    pub seed: u64,
    pub train_nodes: usize,
    pub train_pairs: usize,
    pub mae: f64,
    pub rmse: f64,
    pub relative_error: f64,
    pub baseline_mae: f64,
    pub spd_scale: f64,
    pub epochs: usize,
    pub wallclock_s: f64,
    pub checkpoint: String,
}

impl TableRow {
    fn new(r: TerrainRow, checkpoint: String) -> Self {
        Self {
            stride: r.stride,
            seed: r.seed,
            train_nodes: r.train_nodes,
            train_pairs: r.train_pairs,
            mae: r.mae,
            rmse: r.rmse,
            relative_error: r.relative_error,
            baseline_mae: r.baseline_mae,
            spd_scale: r.spd_scale,
            epochs: r.epochs,
            wallclock_s: r.wallclock_s,
            checkpoint,
        }
    }
}

#[derive(serde::Serialize)]
struct Failure {
    stride: usize,
    seed: u64,
    message: String,
}

pub fn run(cx: &Context<TerrainFile>) -> Result<()> {
    let cfg = &cx.cfg;
    let full = match &cfg.dem {
        Some(p) => load_dem(Path::new(p))?,
        None => hill_fixture(&cfg.terrain.hill)?,
    };
    let dems = cx.dir.subdir("dem")?;
    save_dem(&dems.join("full.dem"), &full)?;
    for &r in &cfg.terrain.strides {
        save_dem(&dems.join(format!("stride{r}.dem")), &full.downsample(r)?)?;
    }
    let ckpt_dir = if cfg.checkpoints { Some(cx.dir.subdir("checkpoints")?) } else { None };
    let mut cells = Vec::new();
    for &r in &cfg.terrain.strides {
        for i in 0..cfg.seeds as u64 {
            let seed = cfg.seed + i;
            cells.push((r, seed));
            save_pairs(&cx.dir.file(&format!("test_pairs_seed{seed}.csv")), &test_pairs(&grid_graph_8nn(&full)?, &cfg.terrain, seed)?)?;
        }
    }
    let results = cx.dir.run_cells(
        &cx.pool,
        &cells,
        |(r, s)| format!("{r}/{s}"),
        |&(stride, seed)| {
            let (row, model, record) = terrain_stride_run(&full, stride, &cfg.terrain, seed, &cx.clock).map_err(|e| e.to_string())?;
            if let Some(d) = &ckpt_dir {
                let extra = serde_json::json!({ "spd_scale": row.spd_scale, "stride": stride, "seed": seed });
                save_checkpoint(&d.join(checkpoint_name(stride, seed)), &model, extra).map_err(|e| e.to_string())?;
            }
            Ok((row, record))
        },
    )?;
    let mut rows: Vec<TableRow> = Vec::new();
    let mut records: Vec<RunRecord> = Vec::new();
    let mut failures = Vec::new();
    for (&(stride, seed), r) in cells.iter().zip(results) {
        match r {
            Ok((row, rec)) => {
                let ck = if cfg.checkpoints { format!("checkpoints/{}", checkpoint_name(stride, seed)) } else { String::new() };
                rows.push(TableRow::new(row, ck));
                records.push(rec);
            }
            Err(message) => failures.push(Failure { stride, seed, message }),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Failed(format!("every terrain run failed; first error: {}", failures[0].message)));
    }
    write_csv(&cx.dir.file(TABLE), &HEADER, &rows)?;
    write_csv(&cx.dir.file(FAILURES), &["stride", "seed", "message"], &failures)?;
    write_jsonl(&cx.dir.file(RUNS), &records)
}

pub fn checkpoint_name(stride: usize, seed: u64) -> String {
    format!("stride{stride}_seed{seed}.gttx")
}

/// Re-scores a saved terrain model on `pairs` over the grid in `dem`,
/// with the node IDs and distance scale recorded at training time.
pub fn evaluate_checkpoint(checkpoint: &Path, dem: &Path, pairs: &Path) -> Result<SpdMetrics> {
    let (model, header) = load_checkpoint(checkpoint)?;
    let field = |k: &str| {
        header.extra[k]
            .as_f64()
            .ok_or_else(|| crate::error::artifact(checkpoint, format!("checkpoint lacks `{k}`")))
    };
    let (scale, seed) = (field("spd_scale")?, field("seed")? as u64);
    let grid = load_dem(dem)?;
    let g = grid_graph_8nn(&grid)?;
    let features = Frame::of(&grid).features(&g)?;
    if model.in_dim != features.rows() {
        return Err(crate::error::artifact(checkpoint, "checkpoint input width does not match terrain features"));
    }
    Ok(evaluate_spd_model(&model, &g, &features, &load_pairs(pairs)?, scale, seed)?)
}
