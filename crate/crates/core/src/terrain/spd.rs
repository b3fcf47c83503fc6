use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{contract, validation, Result};
use crate::graph::Graph;
use crate::rng;
use crate::train::Pair;

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties broken by node index
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_weights(g: &Graph) -> Result<()> {
    if let Some(w) = g.adjacency().values().iter().find(|w| !(**w >= 0.0)) {
        return Err(contract(alloc::format!("shortest paths need nonnegative weights, found {w}")));
    }
    Ok(())
}

/// Single-source shortest-path lengths; unreachable nodes get `+inf`.
pub fn dijkstra_spd(g: &Graph, source: usize) -> Result<Vec<f64>> {
    check_weights(g)?;
    if source >= g.n() {
        return Err(contract(alloc::format!("source {source} out of range")));
    }
    let mut dist = vec![f64::INFINITY; g.n()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for (v, w) in g.neighbors(u) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
    Ok(dist)
}

/// Reference shortest paths by edge relaxation until nothing changes.
pub fn bellman_ford(g: &Graph, source: usize) -> Result<Vec<f64>> {
    check_weights(g)?;
    let mut dist = vec![f64::INFINITY; g.n()];
    dist[source] = 0.0;
    for _ in 0..g.n() {
        let mut changed = false;
        for u in 0..g.n() {
            if dist[u].is_infinite() {
                continue;
            }
            for (v, w) in g.neighbors(u) {
                if dist[u] + w < dist[v] {
                    dist[v] = dist[u] + w;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(dist)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceStrategy {
    #[default]
    Uniform,
    /// Highest nodes first (third coordinate), ties by index.
    MaxHeightSources,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    /// Pairs left out because the target was unreachable.
    pub dropped: usize,
}

/// Node pairs labelled with exact shortest-path lengths, ordered by
/// `(source, target)` draw order. Targets exclude the source; asking for
/// at least `n - 1` targets takes all of them.
pub fn sample_pairs(
    g: &Graph,
    n_sources: usize,
    targets_per_source: usize,
    strategy: SourceStrategy,
    seed: u64,
) -> Result<PairSet> {
    let n = g.n();
    if n_sources == 0 || n_sources > n || targets_per_source == 0 || n < 2 {
        return Err(validation(alloc::format!(
            "cannot draw {n_sources} sources with {targets_per_source} targets from {n} nodes"
        )));
    }
    let mut r = rng::stream(seed, rng::PAIRS, n as u64);
    let sources: Vec<usize> = match strategy {
        SourceStrategy::Uniform => sample(&mut r, n, n_sources).into_vec(),
        SourceStrategy::MaxHeightSources => {
            let x = g
                .coords()
                .filter(|c| c.cols() >= 3)
                .ok_or_else(|| validation("max-height sources need 3-D coordinates"))?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| x.get(b, 2).total_cmp(&x.get(a, 2)).then(a.cmp(&b)));
            order.truncate(n_sources);
            order
        }
    };
    let mut out = PairSet::default();
    for s in sources {
        let dist = dijkstra_spd(g, s)?;
        let targets: Vec<usize> = if targets_per_source >= n - 1 {
            (0..n).filter(|&t| t != s).collect()
        } else {
            sample(&mut r, n - 1, targets_per_source)
                .into_iter()
                .map(|t| if t >= s { t + 1 } else { t })
                .collect()
        };
        for t in targets {
            if dist[t].is_finite() {
                out.pairs.push(Pair {
                    src: s,
                    dst: t,
                    spd: dist[t],
                });
            } else {
                out.dropped += 1;
            }
        }
    }
    Ok(out)
}
