use alloc::format;
use alloc::vec::Vec;

use super::Graph;
use crate::error::{validation, Result};
use crate::math;
use crate::rng;

/// Number of nodes kept when subsampling `n` nodes at `fraction`.
pub fn subsample_size(n: usize, fraction: f64) -> usize {
    // guard against 0.3 * 10 = 3.0000000000000004
    let raw = fraction * n as f64;
    (math::ceil(raw - 1e-9) as usize).min(n)
}

/// Uniformly chosen node subset of size `ceil(fraction * n)`, sorted.
pub fn subsample_nodes(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(validation(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let k = subsample_size(n, fraction);
    if k < 2 {
        return Err(validation(format!(
            "fraction {fraction} of {n} nodes keeps fewer than 2 nodes"
        )));
    }
    if k == n {
        return Ok((0..n).collect());
    }
    let mut r = rng::from_seed(seed);
    let mut keep = rand::seq::index::sample(&mut r, n, k).into_vec();
    keep.sort_unstable();
    Ok(keep)
}

/// Induced subgraph on a uniform node sample; returns the subgraph and the
/// parent index of every kept node.
pub fn subsample_graph(g: &Graph, fraction: f64, seed: u64) -> Result<(Graph, Vec<usize>)> {
    let keep = subsample_nodes(g.n(), fraction, seed)?;
    let sub = g.induced_subgraph(&keep)?;
    Ok((sub, keep))
}
