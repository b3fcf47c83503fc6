use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::grid::{grid_graph_8nn, ElevationGrid};
use super::spd::{sample_pairs, SourceStrategy};
use crate::error::{validation, Error, Result};
use crate::graph::Graph;
use crate::math;
use crate::model::{Mode, Model, ModelConfig, TaskHead};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::{l1_distance, RunRecord, spd_metrics, train_model, Clock, Pair, SpdMetrics, Targets, TrainConfig};

/// Procedural multi-Gaussian-hill terrain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HillConfig {
    pub nrows: usize,
    pub ncols: usize,
    pub cell_size: f64,
    pub hills: usize,
    pub max_height: f64,
    /// Hill widths are drawn from `[min_sigma, max_sigma]` cells.
    pub min_sigma: f64,
    pub max_sigma: f64,
    pub seed: u64,
}

impl Default for HillConfig {
    fn default() -> Self {
        Self {
            nrows: 60,
            ncols: 60,
            cell_size: 1.0,
            hills: 5,
            max_height: 12.0,
            min_sigma: 4.0,
            max_sigma: 10.0,
            seed: 0,
        }
    }
}

pub fn hill_fixture(cfg: &HillConfig) -> Result<ElevationGrid> {
    if cfg.hills == 0 || !(cfg.min_sigma > 0.0 && cfg.min_sigma <= cfg.max_sigma) || !(cfg.max_height >= 0.0) {
        return Err(Error::Config("hill fixture needs hills >= 1 and 0 < min_sigma <= max_sigma".into()));
    }
    let mut r = rng::stream(cfg.seed, rng::SAMPLING, 0x4111);
    let hills: Vec<[f64; 4]> = (0..cfg.hills)
        .map(|_| {
            [
                r.gen_range(0.0..cfg.nrows as f64),
                r.gen_range(0.0..cfg.ncols as f64),
                r.gen_range(0.3..1.0) * cfg.max_height,
                r.gen_range(cfg.min_sigma..=cfg.max_sigma),
            ]
        })
        .collect();
    let mut z = Vec::with_capacity(cfg.nrows * cfg.ncols);
    for i in 0..cfg.nrows {
        for j in 0..cfg.ncols {
            let h: f64 = hills
                .iter()
                .map(|&[ci, cj, a, s]| {
                    let d2 = (i as f64 - ci) * (i as f64 - ci) + (j as f64 - cj) * (j as f64 - cj);
                    a * math::exp(-d2 / (2.0 * s * s))
                })
                .sum();
            z.push(h * cfg.cell_size);
        }
    }
    ElevationGrid::new(cfg.nrows, cfg.ncols, cfg.cell_size, z)
}

/// Affine map of a reference grid's bounding box onto `[0, 1]^3`, shared
/// by every downsampled copy so features agree across resolutions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub min: [f64; 3],
    pub span: [f64; 3],
}

impl Frame {
    pub fn of(grid: &ElevationGrid) -> Self {
        let c = grid.coords();
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for n in 0..c.rows() {
            for k in 0..3 {
                min[k] = min[k].min(c.get(n, k));
                max[k] = max[k].max(c.get(n, k));
            }
        }
        let span = core::array::from_fn(|k| if max[k] > min[k] { max[k] - min[k] } else { 1.0 });
        Self { min, span }
    }

    /// `3 x N` features of a graph with 3-D coordinates.
    pub fn features(&self, g: &Graph) -> Result<Tensor> {
        let c = g.coords().filter(|c| c.cols() == 3).ok_or_else(|| validation("terrain graph needs 3-D coordinates"))?;
        Ok(Tensor::from_fn(3, g.n(), |k, n| (c.get(n, k) - self.min[k]) / self.span[k]))
    }
}

/// Embeds every node once and scores `l1` embedding distances, times
/// `scale`, against the pair labels.
pub fn evaluate_spd_model(model: &Model, g: &Graph, features: &Tensor, pairs: &[Pair], scale: f64, seed: u64) -> Result<SpdMetrics> {
    if !matches!(model.cfg.head, TaskHead::Embed { .. }) {
        return Err(Error::Config("SPD evaluation needs an embedding head".into()));
    }
    let prep = model.prepare(g, seed)?;
    let emb = model.predict(&prep, features)?;
    Ok(spd_metrics(pairs, |i, j| scale * l1_distance(&emb, i, j)))
}

/// Straight-line 3-D distance as the predictor.
pub fn euclidean_baseline(g: &Graph, pairs: &[Pair]) -> Result<SpdMetrics> {
    let c = g.coords().ok_or_else(|| validation("baseline needs coordinates"))?;
    Ok(spd_metrics(pairs, |i, j| {
        math::sqrt((0..c.cols()).map(|k| (c.get(i, k) - c.get(j, k)) * (c.get(i, k) - c.get(j, k))).sum())
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainConfig {
    pub hill: HillConfig,
    pub strides: Vec<usize>,
    pub train_sources: usize,
    pub train_targets: usize,
    /// Share of training sources held out for early stopping.
    pub val_fraction: f64,
    pub source_strategy: SourceStrategy,
    pub test_sources: usize,
    pub test_targets: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            hill: HillConfig::default(),
            strides: alloc::vec![1, 2],
            train_sources: 60,
            train_targets: 60,
            val_fraction: 0.2,
            source_strategy: SourceStrategy::Uniform,
            test_sources: 100,
            test_targets: 50,
            model: ModelConfig {
                mode: Mode::SparseGt,
                head: TaskHead::Embed { dim: 16 },
                ..ModelConfig::default()
            },
            train: TrainConfig {
                max_epochs: 400,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainRow {
    pub stride: usize,
    pub seed: u64,
    pub train_nodes: usize,
    pub train_pairs: usize,
    pub mae: f64,
    pub rmse: f64,
    pub relative_error: f64,
    pub baseline_mae: f64,
    /// Mean training distance; model outputs are in these units.
    pub spd_scale: f64,
    pub epochs: usize,
    pub wallclock_s: f64,
}

/// Test pairs on the full-resolution graph, shared by every stride.
pub fn test_pairs(full: &Graph, cfg: &TerrainConfig, seed: u64) -> Result<Vec<Pair>> {
    let n_src = cfg.test_sources.min(full.n());
    Ok(sample_pairs(full, n_src, cfg.test_targets, SourceStrategy::Uniform, rng::derive_seed(seed, rng::PAIRS, u64::MAX))?.pairs)
}

/// Trains on the stride-`stride` copy of `full` and evaluates on the full
/// graph by re-running the model there.
pub fn terrain_stride_run(
    full: &ElevationGrid,
    stride: usize,
    cfg: &TerrainConfig,
    seed: u64,
    clock: &dyn Clock,
) -> Result<(TerrainRow, Model, RunRecord)> {
    if !matches!(cfg.model.head, TaskHead::Embed { .. }) {
        return Err(Error::Config("terrain model needs an embedding head".into()));
    }
    let frame = Frame::of(full);
    let coarse = full.downsample(stride)?;
    let g = grid_graph_8nn(&coarse)?;
    let n_src = cfg.train_sources.min(g.n());
    let ps = sample_pairs(&g, n_src, cfg.train_targets, cfg.source_strategy, rng::derive_seed(seed, rng::PAIRS, stride as u64))?;
    let n_val = math::round((n_src as f64) * cfg.val_fraction).max(1.0) as usize;
    if n_val >= n_src {
        return Err(validation("validation takes every training source"));
    }
    let mut sources: Vec<usize> = Vec::new();
    for p in &ps.pairs {
        if sources.last() != Some(&p.src) {
            sources.push(p.src);
        }
    }
    let val_sources = &sources[sources.len().saturating_sub(n_val)..];
    let scale = ps.pairs.iter().map(|p| p.spd).sum::<f64>() / ps.pairs.len().max(1) as f64;
    if !(scale > 0.0) {
        return Err(validation("training pairs have zero mean distance"));
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for p in &ps.pairs {
        let q = Pair { spd: p.spd / scale, ..*p };
        if val_sources.contains(&p.src) { val.push(q) } else { train.push(q) }
    }
    let features = frame.features(&g)?;
    let tcfg = TrainConfig { seed, ..cfg.train.clone() };
    let (model, record) = train_model(&cfg.model, &g, &features, &Targets::Pairs { train, val }, &tcfg, clock)?;

    let gf = grid_graph_8nn(full)?;
    let tp = test_pairs(&gf, cfg, seed)?;
    let m = evaluate_spd_model(&model, &gf, &frame.features(&gf)?, &tp, scale, seed)?;
    let base = euclidean_baseline(&gf, &tp)?;
    Ok((
        TerrainRow {
            stride,
            seed,
            train_nodes: g.n(),
            train_pairs: ps.pairs.len(),
            mae: m.mae,
            rmse: m.rmse,
            relative_error: m.relative_error,
            baseline_mae: base.mae,
            spd_scale: scale,
            epochs: record.epochs(),
            wallclock_s: record.wallclock_s,
        },
        model,
        record,
    ))
}
