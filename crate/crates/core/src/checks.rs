//! Randomized invariant probes shared by the self-test and the acceptance
//! harness. Each probe returns the largest deviation it saw, so callers
//! pick their own tolerance.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::Activation;
use crate::error::{validation, Result};
use crate::graph::{from_undirected_edges, Graph};
use crate::model::{Mode, Model, ModelConfig, TaskHead};
use crate::pe::{draw_ids, PeConfig};
use crate::rng;
use crate::tensor::Tensor;

/// Connected weighted graph on `n` nodes: a random recursive tree plus
/// independent extra edges with probability `p`.
pub fn random_connected_graph(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(validation("graph needs at least one node"));
    }
    let mut r = rng::stream(seed, rng::SAMPLING, 0xc0);
    let mut e = Vec::new();
    let mut parent = vec![usize::MAX; n];
    for i in 1..n {
        parent[i] = r.gen_range(0..i);
        e.push((parent[i], i, r.gen_range(0.5..1.5)));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if parent[j] != i && r.gen_bool(p) {
                e.push((i, j, r.gen_range(0.5..1.5)));
            }
        }
    }
    from_undirected_edges(n, &e)
}

/// Small GT with a trainable RPEARL encoder, as probed below.
pub fn probe_config(mode: Mode, hops: usize) -> ModelConfig {
    ModelConfig {
        mode,
        layers: 2,
        heads: 2,
        d_model: 8,
        d_ffn: 16,
        hops,
        pe: Some(PeConfig {
            layer_dims: vec![8, 4],
            order: 3,
            activation: Activation::Tanh,
            samples: 4,
            ..PeConfig::default()
        }),
        head: TaskHead::Classify { num_classes: 3 },
        ..ModelConfig::default()
    }
}

fn trial_graph(seed: u64) -> Result<(Graph, Tensor)> {
    let mut r = rng::stream(seed, rng::SAMPLING, 0xc1);
    let n = r.gen_range(8..=64);
    let p = r.gen_range(0.02..0.15);
    let g = random_connected_graph(n, p, seed)?;
    let x = Tensor::randn(3, n, 1.0, &mut rng::stream(seed, rng::INIT, 0xc2));
    Ok((g, x))
}

/// Sparse GT with `hops` equal to the graph diameter against the dense GT
/// with the same weights: largest output difference. Also returns `N`.
pub fn dense_sparse_gap(seed: u64) -> Result<(usize, f64)> {
    let (g, x) = trial_graph(seed)?;
    let k = g.diameter().ok_or_else(|| validation("trial graph is disconnected"))?;
    let sparse = Model::new(&probe_config(Mode::SparseGt, k.max(1)), 3, seed)?;
    let mut dense = sparse.clone();
    dense.cfg.mode = Mode::DenseGt;
    let a = sparse.predict(&sparse.prepare(&g, seed)?, &x)?;
    let b = dense.predict(&dense.prepare(&g, seed)?, &x)?;
    Ok((g.n(), a.max_abs_diff(&b)))
}

/// Relabels the graph, features and node IDs by a random permutation and
/// compares outputs node by node, for the sparse and the dense GT.
pub fn permutation_gap(seed: u64) -> Result<f64> {
    let (g, x) = trial_graph(seed)?;
    let n = g.n();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, rng::SAMPLING, 0xc3));
    let gp = g.permute(&perm)?;
    let moved = |t: &Tensor| {
        let mut out = Tensor::zeros(t.rows(), n);
        for i in 0..n {
            for d in 0..t.rows() {
                out.set(d, perm[i], t.get(d, i));
            }
        }
        out
    };
    let mut worst = 0.0f64;
    for mode in [Mode::SparseGt, Mode::DenseGt] {
        let model = Model::new(&probe_config(mode, 2), 3, seed)?;
        let ids = draw_ids(seed, n, 4);
        let pids: Vec<Tensor> = ids.iter().map(moved).collect();
        let a = model.predict(&model.prepare_with(&g, ids, None)?, &x)?;
        let b = model.predict(&model.prepare_with(&gp, pids, None)?, &moved(&x))?;
        worst = worst.max(moved(&a).max_abs_diff(&b));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_graphs_are_connected() {
        for s in 0..10 {
            let g = random_connected_graph(20, 0.0, s).unwrap();
            assert!(g.diameter().is_some());
        }
    }

    #[test]
    fn probes_are_tight() {
        for s in 0..3 {
            assert!(dense_sparse_gap(s).unwrap().1 < 1e-9);
            assert!(permutation_gap(s).unwrap() < 1e-10);
        }
    }
}
