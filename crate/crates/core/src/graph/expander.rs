use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{validation, Error, Result};
use crate::rng;

const MAX_RESTARTS: usize = 100;

/// Undirected node pairs `(i, j)` with `i < j`, no duplicates, no self-pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSet {
    pairs: Vec<(usize, usize)>,
}

impl EdgeSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut norm: Vec<(usize, usize)> = pairs
            .into_iter()
            .map(|(i, j)| if i < j { (i, j) } else { (j, i) })
            .collect();
        if let Some(&(i, _)) = norm.iter().find(|(i, j)| i == j) {
            return Err(validation(format!("self-pair at node {i}")));
        }
        norm.sort_unstable();
        let before = norm.len();
        norm.dedup();
        if norm.len() != before {
            return Err(validation("duplicate pair in edge set"));
        }
        Ok(Self { pairs: norm })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of pairs each node takes part in.
    pub fn degrees(&self, n: usize) -> Vec<usize> {
        let mut d = alloc::vec![0; n];
        for &(i, j) in &self.pairs {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }
}

/// Random `degree`-regular simple graph on `n` nodes (configuration model,
/// restarting whenever a pairing produces a self-loop or a multi-edge).
pub fn random_expander_edges(n: usize, degree: usize, seed: u64) -> Result<EdgeSet> {
    if !(n * degree).is_multiple_of(2) {
        return Err(validation(format!(
            "no {degree}-regular graph on {n} nodes: n * degree is odd"
        )));
    }
    if degree >= n {
        return Err(validation(format!("degree {degree} must be below n = {n}")));
    }
    let mut rng = rng::from_seed(seed);
    let mut stubs: Vec<usize> = (0..n).flat_map(|i| core::iter::repeat_n(i, degree)).collect();
    for _attempt in 0..=MAX_RESTARTS {
        stubs.shuffle(&mut rng);
        let mut pairs: Vec<(usize, usize)> = stubs
            .chunks_exact(2)
            .map(|c| if c[0] < c[1] { (c[0], c[1]) } else { (c[1], c[0]) })
            .collect();
        if pairs.iter().any(|(i, j)| i == j) {
            continue;
        }
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0] == w[1]) {
            continue;
        }
        return Ok(EdgeSet { pairs });
    }
    Err(Error::RetryExhausted(MAX_RESTARTS))
}
