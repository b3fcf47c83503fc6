use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::math;
use crate::tensor::Tensor;

/// Index of the nearest row of `cloud` for every row of `queries`
/// (lowest index on ties).
pub fn nearest_neighbors(cloud: &Tensor, queries: &Tensor) -> Vec<usize> {
    (0..queries.rows())
        .map(|q| {
            let p = queries.row(q);
            let mut best = (f64::INFINITY, 0);
            for i in 0..cloud.rows() {
                let d: f64 = cloud.row(i).iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        })
        .collect()
}

/// Distance between two piecewise-constant interpolations.
///
/// Each signal (`d x n`, one column per cloud point) is extended to the
/// manifold by its value on the Voronoi cell of each point. The result is
/// the Monte-Carlo mean over `quadrature` rows of the per-point Euclidean
/// difference.
pub fn induced_signal_distance(
    values_a: &Tensor,
    cloud_a: &Tensor,
    values_b: &Tensor,
    cloud_b: &Tensor,
    quadrature: &Tensor,
) -> Result<f64> {
    if cloud_a.rows() == 0 || cloud_b.rows() == 0 {
        return Err(contract("induced distance needs nonempty clouds"));
    }
    if values_a.cols() != cloud_a.rows() || values_b.cols() != cloud_b.rows() || values_a.rows() != values_b.rows() {
        return Err(contract("signal shapes do not match their clouds"));
    }
    let na = nearest_neighbors(cloud_a, quadrature);
    let nb = nearest_neighbors(cloud_b, quadrature);
    let mut total = 0.0;
    for (&i, &j) in na.iter().zip(&nb) {
        let d: f64 = (0..values_a.rows())
            .map(|r| {
                let x = values_a.get(r, i) - values_b.get(r, j);
                x * x
            })
            .sum();
        total += math::sqrt(d);
    }
    Ok(total / quadrature.rows().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{sample_manifold, ManifoldKind, ManifoldSpec};

    fn circle(n: usize, seed: u64) -> Tensor {
        sample_manifold(ManifoldSpec::new(ManifoldKind::Circle), n, seed).unwrap().points
    }

    #[test]
    fn identical_and_shifted() {
        let c = circle(50, 1);
        let q = circle(2000, 2);
        let v = Tensor::from_fn(2, 50, |r, i| c.get(i, r) * 3.0);
        assert_eq!(induced_signal_distance(&v, &c, &v, &c, &q).unwrap(), 0.0);
        let shifted = Tensor::from_fn(2, 50, |r, i| v.get(r, i) + [3.0, 4.0][r]);
        assert!((induced_signal_distance(&v, &c, &shifted, &c, &q).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_function_bounded_by_lipschitz_times_cell_radius() {
        // f(x, y) = x is 1-Lipschitz in the ambient metric
        let a = circle(80, 3);
        let b = circle(300, 4);
        let q = circle(20_000, 5);
        let fa = Tensor::from_fn(1, 80, |_, i| a.get(i, 0));
        let fb = Tensor::from_fn(1, 300, |_, i| b.get(i, 0));
        let d = induced_signal_distance(&fa, &a, &fb, &b, &q).unwrap();
        let cell_radius = |cloud: &Tensor| -> f64 {
            let nn = nearest_neighbors(cloud, &q);
            nn.iter()
                .enumerate()
                .map(|(k, &i)| {
                    let p = q.row(k);
                    ((p[0] - cloud.get(i, 0)).powi(2) + (p[1] - cloud.get(i, 1)).powi(2)).sqrt()
                })
                .fold(0.0, f64::max)
        };
        let bound = cell_radius(&a) + cell_radius(&b);
        assert!(d > 0.0 && d < bound, "{d} vs {bound}");
    }
}
