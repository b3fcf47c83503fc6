//! Losses, optimizer, training loop and experiment harnesses.

pub mod data;
pub mod experiments;
mod loss;
mod optim;
mod trainer;

pub use data::{generate, split_nodes, DatasetKind, NodeDataset, Splits, SyntheticConfig};
pub use experiments::{
    ablation_cell, ablation_run, ablation_table, format_pct, grid_cell, mode_name, test_accuracy,
    train_on_fraction, transferability_grid, AblationCell, AblationReport, AblationRow, CellFailure, GridReport,
    GridRow, Variant,
};
pub use loss::{accuracy, argmax_col, cross_entropy, l1_distance, spd_metric_loss, spd_metrics, Pair, SpdMetrics};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use trainer::{evaluate, train_model, Clock, NoClock, Optimizer, RunRecord, Targets, TrainConfig, TrainFailure};
