//! Terrain shortest-path metric learning: elevation grids, lattice graphs,
//! exact distance labels and the stride-transfer pipeline.

mod grid;
mod pipeline;
mod spd;

pub use grid::{grid_graph_8nn, lattice_edge_count, ElevationGrid};
pub use pipeline::{
    euclidean_baseline, evaluate_spd_model, hill_fixture, terrain_stride_run, test_pairs, Frame, HillConfig,
    TerrainConfig, TerrainRow,
};
pub use spd::{bellman_ford, dijkstra_spd, sample_pairs, PairSet, SourceStrategy};
