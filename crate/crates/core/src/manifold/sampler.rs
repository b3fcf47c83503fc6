use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::math;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    /// Unit circle in the plane.
    Circle,
    /// `[0, 2pi)^2` embedded as the product of two unit circles in R^4.
    FlatTorus2d,
    /// Unit sphere in R^3.
    Sphere2d,
}

/// A manifold with the uniform sampling density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind) -> Self {
        Self { kind }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Circle => 1,
            ManifoldKind::FlatTorus2d | ManifoldKind::Sphere2d => 2,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Circle => 2,
            ManifoldKind::FlatTorus2d => 4,
            ManifoldKind::Sphere2d => 3,
        }
    }

    /// Distance of an ambient point from the manifold's defining
    /// equations.
    pub fn constraint_residual(&self, p: &[f64]) -> f64 {
        match self.kind {
            ManifoldKind::Circle => math::abs(p[0] * p[0] + p[1] * p[1] - 1.0),
            ManifoldKind::FlatTorus2d => {
                math::abs(p[0] * p[0] + p[1] * p[1] - 1.0).max(math::abs(p[2] * p[2] + p[3] * p[3] - 1.0))
            }
            ManifoldKind::Sphere2d => math::abs(p[0] * p[0] + p[1] * p[1] + p[2] * p[2] - 1.0),
        }
    }
}

/// `N` samples, one ambient point per row.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub spec: ManifoldSpec,
    pub points: Tensor,
    pub seed: u64,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    /// The first `n` samples.
    pub fn prefix(&self, n: usize) -> PointCloud {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        PointCloud {
            spec: self.spec,
            points: self.points.select_rows(&rows),
            seed: self.seed,
        }
    }
}

/// I.i.d. uniform samples; deterministic per seed.
pub fn sample_manifold(spec: ManifoldSpec, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 2 {
        return Err(validation("a point cloud needs at least 2 samples"));
    }
    let mut r = rng::from_seed(seed);
    let tau = core::f64::consts::TAU;
    let points = match spec.kind {
        ManifoldKind::Circle => {
            let mut t = Tensor::zeros(n, 2);
            for i in 0..n {
                let a = r.gen_range(0.0..tau);
                t.set(i, 0, math::cos(a));
                t.set(i, 1, math::sin(a));
            }
            t
        }
        ManifoldKind::FlatTorus2d => {
            let mut t = Tensor::zeros(n, 4);
            for i in 0..n {
                let a = r.gen_range(0.0..tau);
                let b = r.gen_range(0.0..tau);
                t.set(i, 0, math::cos(a));
                t.set(i, 1, math::sin(a));
                t.set(i, 2, math::cos(b));
                t.set(i, 3, math::sin(b));
            }
            t
        }
        ManifoldKind::Sphere2d => {
            let mut t = Tensor::zeros(n, 3);
            for i in 0..n {
                loop {
                    let v: [f64; 3] = core::array::from_fn(|_| StandardNormal.sample(&mut r));
                    let norm = math::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
                    if norm > 1e-12 {
                        for (c, x) in v.iter().enumerate() {
                            t.set(i, c, x / norm);
                        }
                        break;
                    }
                }
            }
            t
        }
    };
    Ok(PointCloud { spec, points, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_points_on_circle() {
        let c = sample_manifold(ManifoldSpec::new(ManifoldKind::Circle), 4, 9).unwrap();
        for i in 0..4 {
            assert!(c.spec.constraint_residual(c.points.row(i)) < 1e-12);
        }
    }

    #[test]
    fn sphere_mean_is_small() {
        let c = sample_manifold(ManifoldSpec::new(ManifoldKind::Sphere2d), 1000, 1).unwrap();
        let mut m = [0.0; 3];
        for i in 0..1000 {
            assert!(c.spec.constraint_residual(c.points.row(i)) < 1e-12);
            for d in 0..3 {
                m[d] += c.points.get(i, d) / 1000.0;
            }
        }
        assert!((m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt() < 0.1);
    }

    #[test]
    fn deterministic_per_seed() {
        let s = ManifoldSpec::new(ManifoldKind::FlatTorus2d);
        assert_eq!(sample_manifold(s, 50, 3).unwrap(), sample_manifold(s, 50, 3).unwrap());
        assert_ne!(sample_manifold(s, 50, 3).unwrap(), sample_manifold(s, 50, 4).unwrap());
        assert!(sample_manifold(s, 1, 3).is_err());
    }
}
