use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::csr::{CsrMatrix, Graph};
use crate::error::{validation, Result};
use crate::math;
use crate::tensor::Tensor;

/// Default kernel bandwidth `scale * (ln n / n)^(2 / (d + 6))` for `n`
/// samples of a `d`-dimensional manifold.
pub fn default_bandwidth(n: usize, intrinsic_dim: usize, scale: f64) -> f64 {
    let n = n.max(2) as f64;
    scale * math::pow(math::log(n) / n, 2.0 / (intrinsic_dim as f64 + 6.0))
}

/// Raw Gaussian kernel `exp(-d^2 / (4 eps))`.
#[inline]
pub fn gaussian_kernel(dist_sq: f64, epsilon: f64) -> f64 {
    math::exp(-dist_sq / (4.0 * epsilon))
}

fn squared_distance(points: &Tensor, i: usize, j: usize) -> f64 {
    points
        .row(i)
        .iter()
        .zip(points.row(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Complete weighted graph on the rows of `points` with density-normalized
/// Gaussian weights.
///
/// With `k(x, y) = exp(-|x - y|^2 / (4 eps))` and `d(x) = sum_y k(x, y)`
/// (self excluded), the normalized weight is `k(x, y) / (d(x) d(y))`.
/// Adjacency weights are divided by `eps`, so the cached Laplacian is
/// `(D - W) / eps` with `W` the normalized kernel matrix. Points are
/// attached as node coordinates.
pub fn build_kernel_graph(points: &Tensor, epsilon: f64) -> Result<Graph> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(validation(format!("kernel bandwidth must be positive, got {epsilon}")));
    }
    let n = points.rows();
    if n < 2 {
        return Err(validation("kernel graph needs at least 2 points"));
    }
    let mut raw = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let k = gaussian_kernel(squared_distance(points, i, j), epsilon);
            raw[i * n + j] = k;
            raw[j * n + i] = k;
        }
    }
    let density: Vec<f64> = (0..n).map(|i| raw[i * n..(i + 1) * n].iter().sum()).collect();
    if let Some(i) = density.iter().position(|&d| !(d > 0.0)) {
        return Err(validation(format!(
            "kernel degree of point {i} underflows to zero; increase the bandwidth"
        )));
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(n * (n - 1));
    let mut vals = Vec::with_capacity(n * (n - 1));
    offsets.push(0);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                cols.push(j);
                vals.push(raw[i * n + j] / (density[i] * density[j]) / epsilon);
            }
        }
        offsets.push(cols.len());
    }
    let adjacency = CsrMatrix::from_parts(n, offsets, cols, vals);
    Ok(Graph::from_adjacency(adjacency, Some(points.clone())))
}

/// Unit-weight graph joining points closer than `radius` (Euclidean,
/// strict inequality).
pub fn radius_graph(points: &Tensor, radius: f64) -> Result<Graph> {
    if !(radius > 0.0) {
        return Err(validation(format!("radius must be positive, got {radius}")));
    }
    let n = points.rows();
    let r2 = radius * radius;
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && squared_distance(points, i, j) < r2 {
                triplets.push((i, j, 1.0));
            }
        }
    }
    let adjacency = CsrMatrix::from_triplets(n, &triplets)?;
    Ok(Graph::from_adjacency(adjacency, Some(points.clone())))
}
