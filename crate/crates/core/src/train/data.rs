//! Synthetic node-classification datasets on the unit sphere.
//!
//! Nodes are uniform points on the sphere. Two nodes within `radius` are
//! joined with a probability that depends on both labels, which is how the
//! two families differ:
//!
//! * `community`: labels are the two hemispheres of a random axis and edges
//!   mostly stay inside a hemisphere (homophilic).
//! * `heterophilic`: labels are i.i.d. fair coins, most edges join opposite
//!   labels and class 1 connects more often, so labels show up both in
//!   neighbor features and in local degree structure.
//!
//! Features are `signal * (2y - 1) * u + N(0, I)` for a random unit
//! direction `u`, so a single node is only weakly informative.

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::graph::{from_undirected_edges, Graph};
use crate::manifold::{sample_manifold, ManifoldKind, ManifoldSpec};
use crate::math;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Community,
    Heterophilic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub kind: DatasetKind,
    pub nodes: usize,
    /// Straight-line connection radius between points on the unit sphere.
    pub radius: f64,
    /// Edge probability for label pairs (0,0), (1,1) and (0,1).
    pub p00: f64,
    pub p11: f64,
    pub p01: f64,
    pub feature_dim: usize,
    /// Class-mean separation along the signal direction, in noise units.
    pub signal: f64,
    /// Train/validation/test fractions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self::community()
    }
}

impl SyntheticConfig {
    pub fn community() -> Self {
        Self {
            kind: DatasetKind::Community,
            nodes: 4000,
            radius: 0.24,
            p00: 1.0,
            p11: 1.0,
            p01: 0.3,
            feature_dim: 8,
            signal: 0.5,
            split: [0.45, 0.10, 0.45],
            seed: 0,
        }
    }

    pub fn heterophilic() -> Self {
        Self {
            kind: DatasetKind::Heterophilic,
            nodes: 4000,
            radius: 0.25,
            p00: 0.05,
            p11: 0.3,
            p01: 0.9,
            feature_dim: 8,
            signal: 0.4,
            split: [0.45, 0.10, 0.45],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p00, self.p11, self.p01];
        if self.nodes < 10 || self.feature_dim == 0 || !(self.radius > 0.0) {
            return Err(Error::Config("dataset needs nodes >= 10, feature_dim >= 1, radius > 0".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("edge probabilities must lie in [0, 1]".into()));
        }
        let s: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(*f > 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must be positive and sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random disjoint split of `0..n`, each part sorted.
pub fn split_nodes(n: usize, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, rng::SAMPLING, 0x5911);
    for i in (1..n).rev() {
        order.swap(i, r.gen_range(0..=i));
    }
    let n_train = math::round(fractions[0] * n as f64) as usize;
    let n_val = math::round(fractions[1] * n as f64) as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(validation("split leaves an empty part"));
    }
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Splits { train, val, test })
}

#[derive(Clone, Debug)]
pub struct NodeDataset {
    pub graph: Graph,
    /// `feature_dim x N`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Splits,
}

impl NodeDataset {
    /// Induced sub-dataset on `nodes` (graph, feature columns, labels).
    pub fn induced(&self, nodes: &[usize]) -> Result<(Graph, Tensor, Vec<usize>)> {
        let g = self.graph.induced_subgraph(nodes)?;
        let f = self.features.select_columns(nodes);
        let l = nodes.iter().map(|&i| self.labels[i]).collect();
        Ok((g, f, l))
    }

    /// Fraction of edges joining equal labels.
    pub fn edge_homophily(&self) -> f64 {
        let e = self.graph.edges();
        if e.is_empty() {
            return f64::NAN;
        }
        e.iter().filter(|(i, j, _)| self.labels[*i] == self.labels[*j]).count() as f64 / e.len() as f64
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<NodeDataset> {
    cfg.validate()?;
    let n = cfg.nodes;
    let cloud = sample_manifold(ManifoldSpec::new(ManifoldKind::Sphere2d), n, rng::derive_seed(cfg.seed, rng::SAMPLING, 1))?;
    let pts = &cloud.points;
    let mut r = rng::stream(cfg.seed, rng::SAMPLING, 2);
    let labels: Vec<usize> = match cfg.kind {
        DatasetKind::Community => {
            let axis = random_unit(3, &mut r);
            (0..n)
                .map(|i| {
                    let d: f64 = (0..3).map(|k| pts.get(i, k) * axis[k]).sum();
                    usize::from(d > 0.0)
                })
                .collect()
        }
        DatasetKind::Heterophilic => (0..n).map(|_| usize::from(r.gen_bool(0.5))).collect(),
    };
    let r2 = cfg.radius * cfg.radius;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = (0..3).map(|k| (pts.get(i, k) - pts.get(j, k)) * (pts.get(i, k) - pts.get(j, k))).sum();
            // the coin is drawn for every pair so the stream never depends on
            // which pairs are close
            let u: f64 = r.gen();
            if d2 < r2 {
                let p = match (labels[i], labels[j]) {
                    (0, 0) => cfg.p00,
                    (1, 1) => cfg.p11,
                    _ => cfg.p01,
                };
                if u < p {
                    edges.push((i, j, 1.0));
                }
            }
        }
    }
    let graph = from_undirected_edges(n, &edges)?.with_coords(pts.clone())?;
    let u = random_unit(cfg.feature_dim, &mut r);
    let mut features = Tensor::zeros(cfg.feature_dim, n);
    for i in 0..n {
        let sign = if labels[i] == 1 { 1.0 } else { -1.0 };
        for k in 0..cfg.feature_dim {
            let noise: f64 = StandardNormal.sample(&mut r);
            features.set(k, i, cfg.signal * sign * u[k] + noise);
        }
    }
    let splits = split_nodes(n, cfg.split, cfg.seed)?;
    Ok(NodeDataset {
        graph,
        features,
        labels,
        num_classes: 2,
        splits,
    })
}

fn random_unit(dim: usize, r: &mut rng::Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(r)).collect();
        let norm = math::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
