//! Size-transferability grids and component ablations over a node dataset.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::data::NodeDataset;
use super::loss::accuracy;
use super::trainer::{train_model, Clock, RunRecord, Targets, TrainConfig};
use crate::error::{validation, Error, Result};
use crate::graph::subsample_nodes;
use crate::manifold::convergence::median;
use crate::model::{Mode, Model, ModelConfig};
use crate::rng;

/// One long-form heatmap row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub model: String,
    pub alpha_train: f64,
    pub alpha_test: f64,
    pub seed: u64,
    pub metric: f64,
    pub wallclock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub alpha_train: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub failures: Vec<CellFailure>,
    pub records: Vec<RunRecord>,
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::DenseGt => "dense_gt",
        Mode::SparseGt => "sparse_gt",
        Mode::GnnBaseline => "gnn",
        Mode::MlpBaseline => "mlp",
    }
}

/// Nodes of the training graph at `alpha`: a uniform subsample of the
/// train and validation nodes together.
pub fn train_subsample(ds: &NodeDataset, alpha: f64, seed: u64) -> Result<Vec<usize>> {
    let mut pool: Vec<usize> = ds.splits.train.iter().chain(&ds.splits.val).copied().collect();
    pool.sort_unstable();
    let pick = subsample_nodes(pool.len(), alpha, rng::derive_seed(seed, rng::SAMPLING, 0x7a1))?;
    Ok(pick.into_iter().map(|i| pool[i]).collect())
}

/// Nodes of the test graph at `alpha`; the same for every model trained
/// with `seed`.
pub fn test_subsample(ds: &NodeDataset, alpha: f64, seed: u64) -> Result<Vec<usize>> {
    let pick = subsample_nodes(ds.splits.test.len(), alpha, rng::derive_seed(seed, rng::SAMPLING, alpha.to_bits()))?;
    Ok(pick.into_iter().map(|i| ds.splits.test[i]).collect())
}

/// Trains on the induced training graph at `alpha_train`.
pub fn train_on_fraction(
    model_cfg: &ModelConfig,
    ds: &NodeDataset,
    alpha_train: f64,
    train_cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<(Model, RunRecord)> {
    let nodes = train_subsample(ds, alpha_train, train_cfg.seed)?;
    let (g, f, labels) = ds.induced(&nodes)?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (local, &global) in nodes.iter().enumerate() {
        if ds.splits.val.binary_search(&global).is_ok() {
            val.push(local);
        } else {
            train.push(local);
        }
    }
    if train.is_empty() || val.is_empty() {
        return Err(validation(format!(
            "alpha_train = {alpha_train} leaves no training or validation nodes"
        )));
    }
    let targets = Targets::Labels { labels, train, val };
    Ok(train_model(model_cfg, &g, &f, &targets, train_cfg, clock)?)
}

/// Test accuracy on the induced test graph at `alpha_test`, with node IDs
/// drawn fresh for that graph.
pub fn test_accuracy(model: &Model, ds: &NodeDataset, alpha_test: f64, seed: u64) -> Result<f64> {
    let nodes = test_subsample(ds, alpha_test, seed)?;
    let (g, f, labels) = ds.induced(&nodes)?;
    let prep = model.prepare(&g, seed)?;
    let out = model.predict(&prep, &f)?;
    let all: Vec<usize> = (0..nodes.len()).collect();
    Ok(accuracy(&out, &labels, &all))
}

/// One `(alpha_train, seed)` cell: a single training run evaluated at
/// every `alpha_test`.
pub fn grid_cell(
    model_cfg: &ModelConfig,
    ds: &NodeDataset,
    alpha_train: f64,
    test_fractions: &[f64],
    train_cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<(Vec<GridRow>, RunRecord)> {
    let (model, mut record) = train_on_fraction(model_cfg, ds, alpha_train, train_cfg, clock)?;
    let mut rows = Vec::new();
    for &alpha_test in test_fractions {
        let metric = test_accuracy(&model, ds, alpha_test, train_cfg.seed)?;
        if alpha_test == 1.0 || test_fractions.len() == 1 {
            record.test_metric = Some(metric);
        }
        rows.push(GridRow {
            model: mode_name(model_cfg.mode).into(),
            alpha_train,
            alpha_test,
            seed: train_cfg.seed,
            metric,
            wallclock_s: record.wallclock_s,
        });
    }
    Ok((rows, record))
}

fn check_fractions(fr: &[f64]) -> Result<()> {
    if fr.is_empty() || fr.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::Config("fractions must be nonempty and lie in (0, 1]".into()));
    }
    Ok(())
}

/// Sequential grid over every `(alpha_train, seed)`; failed cells are
/// logged and skipped.
pub fn transferability_grid(
    model_cfg: &ModelConfig,
    ds: &NodeDataset,
    train_fractions: &[f64],
    test_fractions: &[f64],
    seeds: &[u64],
    train_cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<GridReport> {
    check_fractions(train_fractions)?;
    check_fractions(test_fractions)?;
    let mut report = GridReport::default();
    for &alpha_train in train_fractions {
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            match grid_cell(model_cfg, ds, alpha_train, test_fractions, &cfg, clock) {
                Ok((rows, rec)) => {
                    report.rows.extend(rows);
                    report.records.push(rec);
                }
                Err(e) => report.failures.push(CellFailure {
                    alpha_train,
                    seed,
                    message: e.to_string(),
                }),
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "no_pe")]
    NoPe,
    #[serde(rename = "rpearl")]
    Rpearl,
    #[serde(rename = "mask")]
    Mask,
    #[serde(rename = "mask+rpearl")]
    MaskRpearl,
    #[serde(rename = "mask+re")]
    MaskRe,
    #[serde(rename = "mask+rpearl+re")]
    MaskRpearlRe,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::NoPe,
        Variant::Rpearl,
        Variant::Mask,
        Variant::MaskRpearl,
        Variant::MaskRe,
        Variant::MaskRpearlRe,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Variant::NoPe => "no_pe",
            Variant::Rpearl => "rpearl",
            Variant::Mask => "mask",
            Variant::MaskRpearl => "mask+rpearl",
            Variant::MaskRe => "mask+re",
            Variant::MaskRpearlRe => "mask+rpearl+re",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.key() == s)
    }

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Variant::NoPe => "GT",
            Variant::Rpearl => "GT + RPEARL",
            Variant::Mask => "GT + Mask",
            Variant::MaskRpearl => "GT + Mask + RPEARL",
            Variant::MaskRe => "GT + Mask + RE",
            Variant::MaskRpearlRe => "GT + Mask + RPEARL + RE",
        }
    }

    fn has(self, part: &str) -> bool {
        self.key().split('+').any(|p| p == part)
    }

    /// `base` with the variant's components switched on or off. Encoder
    /// and expander settings come from `base` when present.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        c.mode = if self.has("mask") { Mode::SparseGt } else { Mode::DenseGt };
        c.pe = if self.has("rpearl") {
            Some(base.pe.clone().unwrap_or_default())
        } else {
            None
        };
        c.expander_degree = if self.has("re") { Some(base.expander_degree.unwrap_or(3)) } else { None };
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub seed: u64,
    /// Test accuracy in percent.
    pub metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
    pub failures: Vec<(Variant, u64, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metric: f64,
    pub pct_vs_baseline: String,
}

/// Relative change against the baseline, e.g. `+58.63%`.
pub fn format_pct(metric: f64, baseline: f64) -> String {
    format!("{:+.2}%", (metric - baseline) / baseline * 100.0)
}

/// Trains one variant at `alpha` and scores it on the full test graph.
pub fn ablation_cell(
    base: &ModelConfig,
    variant: Variant,
    ds: &NodeDataset,
    alpha: f64,
    train_cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<AblationCell> {
    let cfg = variant.apply(base);
    let (model, _) = train_on_fraction(&cfg, ds, alpha, train_cfg, clock)?;
    Ok(AblationCell {
        variant,
        seed: train_cfg.seed,
        metric: 100.0 * test_accuracy(&model, ds, 1.0, train_cfg.seed)?,
    })
}

pub fn ablation_run(
    base: &ModelConfig,
    variants: &[Variant],
    ds: &NodeDataset,
    alpha: f64,
    seeds: &[u64],
    train_cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<AblationReport> {
    if variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant".into()));
    }
    let mut report = AblationReport::default();
    for &seed in seeds {
        for &v in variants {
            let cfg = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            match ablation_cell(base, v, ds, alpha, &cfg, clock) {
                Ok(c) => report.cells.push(c),
                Err(e) => report.failures.push((v, seed, e.to_string())),
            }
        }
    }
    Ok(report)
}

/// Median metric per variant (in first-seen order) with the change
/// against `baseline`, whose own row reads `--`.
pub fn ablation_table(cells: &[AblationCell], baseline: Variant) -> Vec<AblationRow> {
    let mut order: Vec<Variant> = Vec::new();
    for c in cells {
        if !order.contains(&c.variant) {
            order.push(c.variant);
        }
    }
    let med = |v: Variant| {
        let m: Vec<f64> = cells.iter().filter(|c| c.variant == v).map(|c| c.metric).collect();
        median(&m)
    };
    let base = med(baseline);
    order
        .into_iter()
        .map(|v| {
            let metric = med(v);
            AblationRow {
                variant: v.label().into(),
                metric,
                pct_vs_baseline: if v == baseline || !base.is_finite() {
                    "--".into()
                } else {
                    format_pct(metric, base)
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::data::{generate, SyntheticConfig};
    use crate::train::trainer::NoClock;
    use alloc::vec;

    #[test]
    fn pct_formatting_fixture() {
        assert_eq!(format_pct(49.70, 31.33), "+58.63%");
        assert_eq!(format_pct(20.0, 40.0), "-50.00%");
        let cells = vec![
            AblationCell {
                variant: Variant::NoPe,
                seed: 0,
                metric: 31.33,
            },
            AblationCell {
                variant: Variant::MaskRpearl,
                seed: 0,
                metric: 49.70,
            },
        ];
        let t = ablation_table(&cells, Variant::NoPe);
        assert_eq!(t[0].pct_vs_baseline, "--");
        assert_eq!(t[1].variant, "GT + Mask + RPEARL");
        assert_eq!(t[1].pct_vs_baseline, "+58.63%");
    }

    #[test]
    fn variants_switch_components() {
        let base = ModelConfig::default();
        let c = Variant::NoPe.apply(&base);
        assert_eq!((c.mode, c.pe.is_none(), c.expander_degree), (Mode::DenseGt, true, None));
        let c = Variant::MaskRpearlRe.apply(&base);
        assert_eq!((c.mode, c.pe.is_some(), c.expander_degree), (Mode::SparseGt, true, Some(3)));
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.key()), Some(v));
        }
    }

    fn tiny() -> (NodeDataset, ModelConfig, TrainConfig) {
        let ds = generate(&SyntheticConfig {
            nodes: 300,
            radius: 0.45,
            seed: 2,
            ..SyntheticConfig::community()
        })
        .unwrap();
        let m = ModelConfig {
            layers: 1,
            d_model: 8,
            d_ffn: 8,
            heads: 1,
            pe: None,
            ..ModelConfig::default()
        };
        let t = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        (ds, m, t)
    }

    #[test]
    fn grid_has_every_cell() {
        let (ds, m, t) = tiny();
        let r = transferability_grid(&m, &ds, &[0.5, 1.0], &[0.5, 1.0], &[0, 1], &t, &NoClock).unwrap();
        assert_eq!(r.rows.len(), 8);
        assert!(r.failures.is_empty());
    }

    #[test]
    fn tiny_fraction_is_logged_not_fatal() {
        let (ds, m, t) = tiny();
        let r = transferability_grid(&m, &ds, &[0.001, 1.0], &[1.0], &[0], &t, &NoClock).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.failures.len(), 1);
    }

    #[test]
    fn full_fractions_reproduce_plain_training() {
        let (ds, m, t) = tiny();
        let (rows, rec) = grid_cell(&m, &ds, 1.0, &[1.0], &t, &NoClock).unwrap();
        let mut nodes: Vec<usize> = ds.splits.train.iter().chain(&ds.splits.val).copied().collect();
        nodes.sort_unstable();
        let (g, f, labels) = ds.induced(&nodes).unwrap();
        let train = nodes.iter().enumerate().filter(|(_, n)| ds.splits.train.contains(n)).map(|(i, _)| i).collect();
        let val = nodes.iter().enumerate().filter(|(_, n)| ds.splits.val.contains(n)).map(|(i, _)| i).collect();
        let (model, plain) = train_model(&m, &g, &f, &Targets::Labels { labels, train, val }, &t, &NoClock).unwrap();
        assert_eq!(plain.train_loss, rec.train_loss);
        assert_eq!(test_accuracy(&model, &ds, 1.0, t.seed).unwrap(), rows[0].metric);
    }
}
