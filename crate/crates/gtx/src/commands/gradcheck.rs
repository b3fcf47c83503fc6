use gtx_core::gradcheck::{suite, OpCheck};
use serde::{Deserialize, Serialize};

use super::Context;
use crate::config::GradcheckFile;
use crate::error::{CliError, Result};
use crate::io::write_csv;

pub const TABLE: &str = "gradcheck.csv";
pub const POINTS: &str = "gradcheck_points.csv";
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradRow {
    pub op: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Serialize)]
struct PointRow<'a> {
    op: &'a str,
    seed: u64,
    max_rel_error: f64,
}

/// Worst error per op over all points, in suite order.
pub fn worst_per_op(points: &[Vec<OpCheck>]) -> Vec<GradRow> {
    let mut rows: Vec<GradRow> = Vec::new();
    for checks in points {
        for c in checks {
            match rows.iter_mut().find(|r| r.op == c.op) {
                Some(r) => r.max_rel_error = r.max_rel_error.max(c.max_rel_error),
                None => rows.push(GradRow {
                    op: c.op.clone(),
                    max_rel_error: c.max_rel_error,
                    tolerance: TOLERANCE,
                    passed: true,
                }),
            }
        }
    }
    for r in &mut rows {
        r.passed = r.max_rel_error < TOLERANCE;
    }
    rows
}

/// Returns whether every op passed.
pub fn run(cx: &Context<GradcheckFile>) -> Result<bool> {
    let seeds: Vec<u64> = (0..cx.cfg.gradcheck.points as u64).map(|i| cx.cfg.seed + i).collect();
    let results = cx.dir.run_cells(&cx.pool, &seeds, |s| s.to_string(), |&s| suite(s).map_err(|e| e.to_string()))?;
    let mut points = Vec::new();
    let mut per_point = Vec::new();
    for (&seed, r) in seeds.iter().zip(results) {
        let checks = r.map_err(|e| CliError::Failed(format!("gradient check at seed {seed} failed to run: {e}")))?;
        points.push(checks);
    }
    for (&seed, checks) in seeds.iter().zip(&points) {
        for c in checks {
            per_point.push(PointRow {
                op: &c.op,
                seed,
                max_rel_error: c.max_rel_error,
            });
        }
    }
    let rows = worst_per_op(&points);
    write_csv(&cx.dir.file(POINTS), &["op", "seed", "max_rel_error"], &per_point)?;
    write_csv(&cx.dir.file(TABLE), &["op", "max_rel_error", "tolerance", "passed"], &rows)?;
    Ok(rows.iter().all(|r| r.passed))
}
