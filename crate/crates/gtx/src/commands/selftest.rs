//! Fast end-to-end invariant suite for a healthy build.

use std::path::Path;

use gtx_core::checks::{dense_sparse_gap, permutation_gap, random_connected_graph};
use gtx_core::gradcheck::suite;
use gtx_core::model::{Model, ModelConfig};
use gtx_core::terrain::{bellman_ford, dijkstra_spd, hill_fixture, HillConfig};
use gtx_core::train::{adam_step, spd_metric_loss, AdamConfig, AdamState, Pair};
use gtx_core::{ParamStore, Tape, Tensor};
use serde::{Deserialize, Serialize};

use super::Context;
use crate::config::{parse_config, GridFile, SelftestFile};
use crate::error::Result;
use crate::io::{checkpoint_bytes, parse_checkpoint, write_csv};

pub const TABLE: &str = "selftest.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    /// Largest deviation seen.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn row(check: &str, value: f64, tolerance: f64) -> CheckRow {
    CheckRow {
        check: check.into(),
        value,
        tolerance,
        passed: value <= tolerance,
    }
}

fn worst(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, f64::max)
}

/// Runs every check; errors inside a check count as a failure with an
/// infinite deviation.
pub fn checks(seed: u64, trials: usize) -> Vec<CheckRow> {
    let seeds: Vec<u64> = (0..trials as u64).map(|i| seed + i).collect();
    let attempt = |name: &str, tol: f64, f: &dyn Fn() -> gtx_core::Result<f64>| row(name, f().unwrap_or(f64::INFINITY), tol);
    let mut out = vec![
        attempt("gradcheck_suite", 1e-4, &|| Ok(worst(suite(seed)?.into_iter().map(|c| c.max_rel_error)))),
        attempt("dense_equals_sparse_at_diameter", 1e-9, &|| {
            seeds.iter().map(|&s| dense_sparse_gap(s).map(|g| g.1)).collect::<gtx_core::Result<Vec<f64>>>().map(worst)
        }),
        attempt("permutation_equivariance", 1e-10, &|| seeds.iter().map(|&s| permutation_gap(s)).collect::<gtx_core::Result<Vec<f64>>>().map(worst)),
        attempt("dijkstra_equals_bellman_ford", 1e-12, &|| {
            let mut w = 0.0f64;
            for &s in &seeds {
                let g = random_connected_graph(30, 0.1, s)?;
                let (a, b) = (dijkstra_spd(&g, 0)?, bellman_ford(&g, 0)?);
                w = w.max(worst(a.iter().zip(&b).map(|(x, y)| (x - y).abs())));
            }
            Ok(w)
        }),
        attempt("spd_loss_translation_invariance", 1e-12, &|| {
            let emb = Tensor::randn(4, 10, 1.0, &mut gtx_core::rng::from_seed(seed));
            let pairs: Vec<Pair> = (0..9).map(|i| Pair { src: i, dst: i + 1, spd: 0.5 + i as f64 }).collect();
            let loss = |e: Tensor| -> gtx_core::Result<f64> {
                let t = Tape::new();
                let v = t.constant(e);
                let l = spd_metric_loss(&t, v, &pairs)?;
                let value = t.value(l).get(0, 0);
                Ok(value)
            };
            let shifted = Tensor::from_fn(4, 10, |r, c| emb.get(r, c) + [3.0, -1.5, 0.25, 7.0][r]);
            Ok((loss(emb)? - loss(shifted)?).abs())
        }),
        attempt("adam_first_step_equals_lr", 1e-6, &|| {
            let mut s = ParamStore::new();
            let id = s.add("w", Tensor::zeros(1, 1));
            let mut st = AdamState::new(&s);
            adam_step(&mut s, &[Tensor::ones(1, 1)], &mut st, &AdamConfig::default(), 0.01, 0.0)?;
            Ok((s.get(id).get(0, 0).abs() - 0.01).abs() / 0.01)
        }),
    ];
    let ckpt = (|| -> Result<f64> {
        let m = Model::new(&ModelConfig::default(), 3, seed)?;
        let bytes = checkpoint_bytes(&m, serde_json::Value::Null);
        let (back, h) = parse_checkpoint(&bytes, Path::new("selftest"))?;
        Ok(if checkpoint_bytes(&back, h.extra) == bytes { 0.0 } else { 1.0 })
    })();
    out.push(row("checkpoint_round_trip", ckpt.unwrap_or(f64::INFINITY), 0.0));
    let dem = (|| -> gtx_core::Result<f64> {
        let g = hill_fixture(&HillConfig { nrows: 12, ncols: 9, ..HillConfig::default() })?;
        Ok(if gtx_core::terrain::ElevationGrid::parse(&g.to_ascii())? == g { 0.0 } else { 1.0 })
    })();
    out.push(row("dem_round_trip", dem.unwrap_or(f64::INFINITY), 0.0));
    let schema = parse_config::<GridFile>("[model]\nlayres = 2\n", None, Path::new("selftest.toml"));
    let named = matches!(&schema, Err(e) if e.to_string().contains("layres"));
    out.push(row("config_rejects_unknown_key", if named { 0.0 } else { 1.0 }, 0.0));
    out
}

pub fn run(cx: &Context<SelftestFile>) -> Result<bool> {
    let rows = cx.pool.install(|| checks(cx.cfg.seed, cx.cfg.selftest.trials));
    write_csv(&cx.dir.file(TABLE), &["check", "value", "tolerance", "passed"], &rows)?;
    Ok(rows.iter().all(|r| r.passed))
}
