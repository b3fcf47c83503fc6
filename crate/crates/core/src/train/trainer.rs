use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::loss::{accuracy, cross_entropy, l1_distance, spd_metric_loss, spd_metrics, Pair};
use super::optim::{adam_step, AdamConfig, AdamState};
use crate::attention::Dropout;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{Model, ModelConfig, PreparedGraph};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Adam(AdamConfig),
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam(AdamConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub optimizer: Optimizer,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Spectral-norm clamp for the attention projections after each step.
    pub op_norm_budget: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            max_epochs: 200,
            optimizer: Optimizer::default(),
            weight_decay: 0.0,
            seed: 0,
            patience: 30,
            op_norm_budget: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(alloc::format!("lr must be a finite non-negative number, got {}", self.lr)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if matches!(self.op_norm_budget, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("op_norm_budget must be positive".into()));
        }
        Ok(())
    }
}

/// Supervision for one graph.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Node labels for every node, with disjoint train/validation nodes.
    Labels {
        labels: Vec<usize>,
        train: Vec<usize>,
        val: Vec<usize>,
    },
    /// Distance-labelled node pairs.
    Pairs { train: Vec<Pair>, val: Vec<Pair> },
}

impl Targets {
    /// Whether a larger validation metric is better (accuracy) or worse
    /// (mean absolute error).
    pub fn higher_is_better(&self) -> bool {
        matches!(self, Targets::Labels { .. })
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            Targets::Labels { labels, train, val } => {
                if labels.len() != n {
                    return Err(Error::Contract(alloc::format!("{} labels for {n} nodes", labels.len())));
                }
                if train.is_empty() || val.is_empty() || train.iter().chain(val).any(|&i| i >= n) {
                    return Err(Error::Contract("train/val node sets must be nonempty and in range".into()));
                }
                let mut seen = alloc::vec![false; n];
                for &i in train {
                    seen[i] = true;
                }
                if val.iter().any(|&i| seen[i]) {
                    return Err(Error::Contract("train and validation nodes overlap".into()));
                }
            }
            Targets::Pairs { train, val } => {
                if train.is_empty() || val.is_empty() {
                    return Err(Error::Contract("train/val pair sets must be nonempty".into()));
                }
                if train.iter().chain(val).any(|p| p.src >= n || p.dst >= n) {
                    return Err(Error::Contract("pair index out of range".into()));
                }
            }
        }
        Ok(())
    }
}

/// Source of wall-clock seconds; the core has no clock of its own.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// A clock that never advances.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub train_loss: Vec<f64>,
    pub val_metric: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub test_metric: Option<f64>,
    pub wallclock_s: f64,
    pub max_projection_norm: f64,
    pub diverged: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunRecord {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn seconds_per_epoch(&self) -> f64 {
        self.wallclock_s / self.epochs().max(1) as f64
    }
}

/// A failed run with everything recorded up to the failure.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainFailure {
    pub error: Error,
    pub record: alloc::boxed::Box<RunRecord>,
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        f.error
    }
}

/// Validation or test metric of `model` on `prep`: accuracy over `nodes`
/// for labels, mean absolute error over pairs otherwise.
pub fn evaluate(model: &Model, prep: &PreparedGraph, features: &Tensor, targets: &Targets, val: bool) -> Result<f64> {
    let out = model.predict(prep, features)?;
    Ok(match targets {
        Targets::Labels { labels, train, val: v } => accuracy(&out, labels, if val { v } else { train }),
        Targets::Pairs { train, val: v } => {
            spd_metrics(if val { v } else { train }, |i, j| l1_distance(&out, i, j)).mae
        }
    })
}

/// Full-graph training with early stopping on the validation metric. The
/// returned model carries the best validation parameters.
pub fn train_model(
    model_cfg: &ModelConfig,
    graph: &Graph,
    features: &Tensor,
    targets: &Targets,
    cfg: &TrainConfig,
    clock: &dyn Clock,
) -> core::result::Result<(Model, RunRecord), TrainFailure> {
    let start = clock.seconds();
    let mut record = RunRecord {
        seed: cfg.seed,
        train_loss: Vec::new(),
        val_metric: Vec::new(),
        best_epoch: 0,
        test_metric: None,
        wallclock_s: 0.0,
        max_projection_norm: 0.0,
        diverged: false,
        model: model_cfg.clone(),
        train: cfg.clone(),
    };
    let fail = |error: Error, mut record: RunRecord| {
        record.wallclock_s = clock.seconds() - start;
        TrainFailure { error, record: alloc::boxed::Box::new(record) }
    };
    let setup = (|| {
        cfg.validate()?;
        targets.check(graph.n())?;
        let mut model = Model::new(model_cfg, features.rows(), cfg.seed)?;
        if cfg.op_norm_budget.is_some() {
            model.cfg.op_norm_budget = cfg.op_norm_budget;
        }
        let prep = model.prepare(graph, cfg.seed)?;
        Ok::<_, Error>((model, prep))
    })();
    let (mut model, prep) = match setup {
        Ok(v) => v,
        Err(e) => return Err(fail(e, record)),
    };
    let Optimizer::Adam(adam) = cfg.optimizer;
    let mut state = AdamState::new(&model.store);
    let mut dropout = (model_cfg.dropout > 0.0 || model_cfg.attention_dropout > 0.0).then(|| Dropout {
        rng: rng::stream(cfg.seed, rng::DROPOUT, 0),
        hidden: model_cfg.dropout,
        attention: model_cfg.attention_dropout,
    });
    let better = |a: f64, b: f64| if targets.higher_is_better() { a > b } else { a < b };
    let mut best: Option<(f64, crate::params::ParamStore)> = None;

    for epoch in 0..cfg.max_epochs {
        let step = (|| {
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let out = model.forward(&tape, &bound, &prep, features, dropout.as_mut())?;
            let loss = match targets {
                Targets::Labels { labels, train, .. } => cross_entropy(&tape, out, labels, Some(train))?,
                Targets::Pairs { train, .. } => spd_metric_loss(&tape, out, train)?,
            };
            let lv = tape.value(loss).get(0, 0);
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch, loss: lv });
            }
            let grads = tape.backward(loss)?;
            let g = bound.gradients(&model.store, &grads);
            adam_step(&mut model.store, &g, &mut state, &adam, cfg.lr, cfg.weight_decay)?;
            model.enforce_budget();
            Ok::<_, Error>(lv)
        })();
        let lv = match step {
            Ok(v) => v,
            Err(e) => {
                record.diverged = matches!(e, Error::Diverged { .. });
                return Err(fail(e, record));
            }
        };
        let val = match evaluate(&model, &prep, features, targets, true) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, record)),
        };
        record.train_loss.push(lv);
        record.val_metric.push(val);
        if best.as_ref().is_none_or(|(b, _)| better(val, *b)) {
            best = Some((val, model.store.clone()));
            record.best_epoch = epoch;
        } else if epoch - record.best_epoch >= cfg.patience {
            break;
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    record.max_projection_norm = model.max_projection_norm();
    record.wallclock_s = clock.seconds() - start;
    Ok((model, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::from_undirected_edges;
    use crate::model::{Mode, TaskHead};
    use alloc::vec;
    use rand_distr::{Distribution, StandardNormal};

    fn separable(n: usize) -> (Graph, Tensor, Targets) {
        let mut r = rng::from_seed(9);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let f = Tensor::from_fn(3, n, |k, i| {
            let s = if labels[i] == 1 { 1.0 } else { -1.0 };
            let noise: f64 = StandardNormal.sample(&mut r);
            if k == 0 { 2.0 * s + 0.3 * noise } else { noise }
        });
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        let g = from_undirected_edges(n, &edges).unwrap();
        let train: Vec<usize> = (0..n).filter(|i| i % 5 != 0).collect();
        let val: Vec<usize> = (0..n).filter(|i| i % 5 == 0).collect();
        (g, f, Targets::Labels { labels, train, val })
    }

    fn mlp() -> ModelConfig {
        ModelConfig {
            mode: Mode::MlpBaseline,
            layers: 1,
            d_model: 8,
            d_ffn: 16,
            pe: None,
            head: TaskHead::Classify { num_classes: 2 },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn mlp_separates_separable_data() {
        let (g, f, t) = separable(60);
        let cfg = TrainConfig {
            lr: 0.05,
            max_epochs: 50,
            patience: 50,
            ..TrainConfig::default()
        };
        let (model, rec) = train_model(&mlp(), &g, &f, &t, &cfg, &NoClock).unwrap();
        let prep = model.prepare(&g, 0).unwrap();
        assert_eq!(evaluate(&model, &prep, &f, &t, false).unwrap(), 1.0);
        assert!(rec.epochs() <= 50);
    }

    #[test]
    fn zero_lr_keeps_parameters_and_loss() {
        let (g, f, t) = separable(30);
        let cfg = TrainConfig {
            lr: 0.0,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        let (model, rec) = train_model(&mlp(), &g, &f, &t, &cfg, &NoClock).unwrap();
        let fresh = Model::new(&mlp(), 3, 0).unwrap();
        for ((_, _, a), (_, _, b)) in model.store.iter().zip(fresh.store.iter()) {
            assert_eq!(a, b);
        }
        assert!(rec.train_loss.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn same_seed_same_record() {
        let (g, f, t) = separable(30);
        let cfg = TrainConfig {
            max_epochs: 8,
            ..TrainConfig::default()
        };
        let m = ModelConfig {
            mode: Mode::SparseGt,
            layers: 1,
            d_model: 8,
            d_ffn: 8,
            dropout: 0.1,
            pe: Some(crate::pe::PeConfig {
                layer_dims: vec![4],
                order: 2,
                samples: 4,
                ..Default::default()
            }),
            ..ModelConfig::default()
        };
        let (_, a) = train_model(&m, &g, &f, &t, &cfg, &NoClock).unwrap();
        let (_, b) = train_model(&m, &g, &f, &t, &cfg, &NoClock).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_returns_record_so_far() {
        let (g, f, t) = separable(30);
        let cfg = TrainConfig {
            lr: f64::MAX,
            max_epochs: 10,
            ..TrainConfig::default()
        };
        let err = train_model(&mlp(), &g, &f, &t, &cfg, &NoClock).unwrap_err();
        assert!(err.record.epochs() >= 1);
        assert!(matches!(err.error, Error::Diverged { .. } | Error::NonFinite { .. }));
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let (g, f, _) = separable(10);
        let t = Targets::Labels {
            labels: vec![0; 10],
            train: vec![0, 1],
            val: vec![1, 2],
        };
        assert!(train_model(&mlp(), &g, &f, &t, &TrainConfig::default(), &NoClock).is_err());
    }
}
