use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use super::expander::EdgeSet;
use super::Graph;
use crate::error::{contract, Result};
use crate::tensor::BoolMatrix;

/// Per-node attention support: node `i` may attend to `row(i)`, which is
/// sorted ascending and always contains `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KHopMask {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl KHopMask {
    /// Every node attends to every node.
    pub fn full(n: usize) -> Self {
        Self::from_rows((0..n).map(|_| (0..n).collect()).collect())
    }

    /// Every node attends only to itself.
    pub fn self_only(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![i]).collect())
    }

    /// Builds from explicit rows; each row is sorted, deduplicated and
    /// given its own node.
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.push(i);
            row.sort_unstable();
            row.dedup();
            indices.extend_from_slice(&row);
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn row_start(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Total number of attended pairs.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&j).is_ok()
    }

    pub fn max_row_len(&self) -> usize {
        (0..self.n()).map(|i| self.row(i).len()).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> BoolMatrix {
        let n = self.n();
        let mut m = BoolMatrix::filled(n, n, false);
        for i in 0..n {
            for &j in self.row(i) {
                m.set(i, j, true);
            }
        }
        m
    }

    /// True when every row covers all nodes.
    pub fn is_full(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| self.row(i).len() == n)
    }
}

/// `{i}` together with every node reachable from `i` in at most `k`
/// unweighted hops.
pub fn k_hop_mask(g: &Graph, k: usize) -> Result<KHopMask> {
    k_hop_mask_with_extra(g, k, None)
}

/// As [`k_hop_mask`], over the union of `g`'s edges and `extra`.
pub fn k_hop_mask_with_extra(g: &Graph, k: usize, extra: Option<&EdgeSet>) -> Result<KHopMask> {
    if k == 0 {
        return Err(contract("k-hop mask needs k >= 1"));
    }
    let n = g.n();
    let mut adj: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i).map(|(j, _)| j).collect()).collect();
    if let Some(extra) = extra {
        for &(i, j) in extra.pairs() {
            if i >= n || j >= n {
                return Err(contract("extra edge out of range"));
            }
            adj[i].push(j);
            adj[j].push(i);
        }
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
        }
    }
    let mut dist = vec![usize::MAX; n];
    let mut touched = Vec::new();
    let mut queue = VecDeque::new();
    let mut rows = Vec::with_capacity(n);
    for s in 0..n {
        dist[s] = 0;
        touched.push(s);
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            if dist[u] == k {
                continue;
            }
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    touched.push(v);
                    queue.push_back(v);
                }
            }
        }
        let mut row = touched.clone();
        row.sort_unstable();
        rows.push(row);
        for &t in &touched {
            dist[t] = usize::MAX;
        }
        touched.clear();
    }
    Ok(KHopMask::from_rows(rows))
}
