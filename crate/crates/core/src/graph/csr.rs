use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{validation, Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Square sparse matrix in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Triplets sharing a position
    /// are summed; each row ends up sorted by column.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; n + 1];
        for &(i, j, _) in triplets {
            if i >= n || j >= n {
                return Err(validation(format!("index ({i}, {j}) out of range for n = {n}")));
            }
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, w) in triplets {
            cols[fill[i]] = j;
            vals[fill[i]] = w;
            fill[i] += 1;
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        let mut order: Vec<usize> = Vec::new();
        for i in 0..n {
            let (lo, hi) = (counts[i], counts[i + 1]);
            order.clear();
            order.extend(lo..hi);
            order.sort_by_key(|&p| cols[p]);
            for &p in &order {
                match col_indices.last() {
                    Some(&last) if col_indices.len() > row_offsets[i] && last == cols[p] => {
                        *values.last_mut().unwrap() += vals[p];
                    }
                    _ => {
                        col_indices.push(cols[p]);
                        values.push(vals[p]);
                    }
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub(crate) fn from_parts(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(row_offsets.len(), n + 1);
        Self {
            n,
            row_offsets,
            col_indices,
            values,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates `(col, value)` pairs of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        self.col_indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        match self.col_indices[lo..hi].binary_search(&j) {
            Ok(p) => self.values[lo + p],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, w)| w).sum()
    }

    pub fn scaled(&self, factor: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                t.set(i, j, w);
            }
        }
        t
    }

    /// `y = S x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.row(i).map(|(j, w)| w * x[j]).sum();
        }
    }

    /// `A S` for a dense `A` with `n` columns.
    pub fn right_multiply(&self, a: &Tensor) -> Result<Tensor> {
        if a.cols() != self.n {
            return Err(Error::Shape {
                op: "spmm_right",
                lhs: a.shape(),
                rhs: (self.n, self.n),
            });
        }
        let mut out = Tensor::zeros(a.rows(), self.n);
        for r in 0..a.rows() {
            let arow = a.row(r);
            let orow = out.row_mut(r);
            for i in 0..self.n {
                let ai = arow[i];
                if ai == 0.0 {
                    continue;
                }
                for (j, w) in self.row(i) {
                    orow[j] += ai * w;
                }
            }
        }
        Ok(out)
    }

    /// `G S^T` for a dense `G` with `n` columns.
    pub fn right_multiply_transpose(&self, g: &Tensor) -> Result<Tensor> {
        if g.cols() != self.n {
            return Err(Error::Shape {
                op: "spmm_right_t",
                lhs: g.shape(),
                rhs: (self.n, self.n),
            });
        }
        let mut out = Tensor::zeros(g.rows(), self.n);
        for r in 0..g.rows() {
            let grow = g.row(r);
            let orow = out.row_mut(r);
            for i in 0..self.n {
                orow[i] = self.row(i).map(|(j, w)| grow[j] * w).sum();
            }
        }
        Ok(out)
    }

    /// First `(i, j)` with `|S_ij - S_ji| > tol`.
    pub fn first_asymmetry(&self, tol: f64) -> Option<(usize, usize)> {
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                if math::abs(w - self.get(j, i)) > tol {
                    return Some((i, j));
                }
            }
        }
        None
    }
}

/// Immutable weighted undirected graph with its cached Laplacian
/// `L = diag(A 1) - A`.
#[derive(Clone, Debug)]
pub struct Graph {
    adjacency: CsrMatrix,
    laplacian: Arc<CsrMatrix>,
    coords: Option<Tensor>,
}

impl Graph {
    pub(crate) fn from_adjacency(adjacency: CsrMatrix, coords: Option<Tensor>) -> Self {
        let n = adjacency.n();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(adjacency.nnz() + n);
        let mut vals = Vec::with_capacity(adjacency.nnz() + n);
        offsets.push(0);
        for i in 0..n {
            let degree = adjacency.row_sum(i);
            let mut diag_done = false;
            for (j, w) in adjacency.row(i) {
                if !diag_done && j > i {
                    cols.push(i);
                    vals.push(degree);
                    diag_done = true;
                }
                cols.push(j);
                vals.push(-w);
            }
            if !diag_done {
                cols.push(i);
                vals.push(degree);
            }
            offsets.push(cols.len());
        }
        let laplacian = Arc::new(CsrMatrix::from_parts(n, offsets, cols, vals));
        Self {
            adjacency,
            laplacian,
            coords,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &Arc<CsrMatrix> {
        &self.laplacian
    }

    pub fn coords(&self) -> Option<&Tensor> {
        self.coords.as_ref()
    }

    pub fn with_coords(mut self, coords: Tensor) -> Result<Self> {
        if coords.rows() != self.n() {
            return Err(Error::Shape {
                op: "Graph::with_coords",
                lhs: coords.shape(),
                rhs: (self.n(), coords.cols()),
            });
        }
        self.coords = Some(coords);
        Ok(self)
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adjacency.row(i)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.row_offsets[i + 1] - self.adjacency.row_offsets[i]
    }

    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.adjacency.row_sum(i)
    }

    pub fn mean_weighted_degree(&self) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        self.adjacency.values.iter().sum::<f64>() / self.n() as f64
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    /// Undirected edges `(i, j, w)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for i in 0..self.n() {
            for (j, w) in self.neighbors(i) {
                if i < j {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// Graph on the same nodes relabelled so that old node `i` becomes
    /// `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.n();
        check_permutation(perm, n)?;
        let mut triplets = Vec::with_capacity(self.adjacency.nnz());
        for i in 0..n {
            for (j, w) in self.neighbors(i) {
                triplets.push((perm[i], perm[j], w));
            }
        }
        let adjacency = CsrMatrix::from_triplets(n, &triplets)?;
        let coords = self.coords.as_ref().map(|c| {
            let mut inv = vec![0; n];
            for (old, &new) in perm.iter().enumerate() {
                inv[new] = old;
            }
            c.select_rows(&inv)
        });
        Ok(Graph::from_adjacency(adjacency, coords))
    }

    /// Subgraph induced on `keep` (listed in the new node order).
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<Graph> {
        let n = self.n();
        let mut position = vec![usize::MAX; n];
        for (new, &old) in keep.iter().enumerate() {
            if old >= n {
                return Err(validation(format!("node {old} out of range for n = {n}")));
            }
            if position[old] != usize::MAX {
                return Err(validation(format!("node {old} listed twice")));
            }
            position[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_i, &old_i) in keep.iter().enumerate() {
            for (old_j, w) in self.neighbors(old_i) {
                let new_j = position[old_j];
                if new_j != usize::MAX {
                    triplets.push((new_i, new_j, w));
                }
            }
        }
        let adjacency = CsrMatrix::from_triplets(keep.len(), &triplets)?;
        let coords = self.coords.as_ref().map(|c| c.select_rows(keep));
        Ok(Graph::from_adjacency(adjacency, coords))
    }

    /// Unweighted hop distances from `source` (`usize::MAX` if unreachable).
    pub fn bfs_hops(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n()];
        let mut queue = alloc::collections::VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for (v, _) in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Hop diameter, or `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for s in 0..self.n() {
            for d in self.bfs_hops(s) {
                if d == usize::MAX {
                    return None;
                }
                best = best.max(d);
            }
        }
        Some(best)
    }

    pub fn is_connected(&self) -> bool {
        self.n() == 0 || self.bfs_hops(0).iter().all(|&d| d != usize::MAX)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(validation(format!(
            "permutation has length {} but graph has {n} nodes",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(validation("not a permutation"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Builds a graph from a symmetric weighted edge list that lists both
/// directions of every edge.
pub fn build_laplacian(edges: &[(usize, usize, f64)], n: usize) -> Result<Graph> {
    for &(i, j, w) in edges {
        if i >= n || j >= n {
            return Err(validation(format!("edge ({i}, {j}) out of range for n = {n}")));
        }
        if i == j {
            return Err(validation(format!("self-loop at node {i}")));
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(validation(format!("edge ({i}, {j}) has invalid weight {w}")));
        }
    }
    let adjacency = CsrMatrix::from_triplets(n, edges)?;
    if adjacency.nnz() != edges.len() {
        return Err(validation("duplicate edge in adjacency list"));
    }
    if let Some((i, j)) = adjacency.first_asymmetry(1e-12) {
        return Err(validation(format!(
            "asymmetric adjacency: ({i}, {j}) has weight {} but ({j}, {i}) has {}",
            adjacency.get(i, j),
            adjacency.get(j, i)
        )));
    }
    Ok(Graph::from_adjacency(adjacency, None))
}

/// Builds a graph from undirected edges listed once each.
pub fn from_undirected_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Graph> {
    let mut both = Vec::with_capacity(2 * edges.len());
    for &(i, j, w) in edges {
        both.push((i, j, w));
        both.push((j, i, w));
    }
    build_laplacian(&both, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        from_undirected_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn path_laplacian() {
        let l = path3().laplacian().to_dense();
        let want = Tensor::from_rows(&[[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]);
        assert_eq!(l, want);
    }

    #[test]
    fn empty_graph_has_zero_laplacian() {
        let g = build_laplacian(&[], 4).unwrap();
        assert_eq!(g.laplacian().to_dense(), Tensor::zeros(4, 4));
    }

    #[test]
    fn rejects_asymmetry_and_negative_weights() {
        let err = build_laplacian(&[(0, 1, 1.0), (1, 0, 2.0)], 2).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("(0, 1)")));
        let err = build_laplacian(&[(0, 1, -1.0), (1, 0, -1.0)], 2).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = build_laplacian(&[(0, 1, 1.0)], 2).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(build_laplacian(&[(1, 1, 1.0)], 2).is_err());
    }

    #[test]
    fn induced_and_permuted() {
        let g = path3();
        let sub = g.induced_subgraph(&[1, 2]).unwrap();
        assert_eq!(sub.edges(), alloc::vec![(0, 1, 1.0)]);
        let p = g.permute(&[2, 0, 1]).unwrap();
        // old 0->2, old 1->0, old 2->1: edges (2,0) and (0,1)
        assert_eq!(p.edges(), alloc::vec![(0, 1, 1.0), (0, 2, 1.0)]);
        assert_eq!(g.diameter(), Some(2));
    }

    #[test]
    fn spmm_matches_dense() {
        let g = from_undirected_edges(4, &[(0, 1, 0.5), (1, 2, 2.0), (0, 3, 1.5)]).unwrap();
        let mut rng = crate::rng::from_seed(5);
        let a = Tensor::randn(3, 4, 1.0, &mut rng);
        let l = g.laplacian();
        let dense = l.to_dense();
        let got = l.right_multiply(&a).unwrap();
        assert!(got.max_abs_diff(&a.matmul(&dense).unwrap()) < 1e-14);
        let got_t = l.right_multiply_transpose(&a).unwrap();
        assert!(got_t.max_abs_diff(&a.matmul(&dense.transpose()).unwrap()) < 1e-14);
    }
}
