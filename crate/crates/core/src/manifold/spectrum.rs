use alloc::vec::Vec;

use super::sampler::{ManifoldKind, ManifoldSpec};
use crate::error::{validation, Result};
use crate::math;
use crate::tensor::Tensor;

/// One real eigenfunction of the Laplace-Beltrami operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisMode {
    Constant,
    /// `sqrt(2) cos(k t)` on the circle.
    CircleCos(u32),
    /// `sqrt(2) sin(k t)` on the circle.
    CircleSin(u32),
    /// `sqrt(2) cos(k1 a + k2 b)` or the matching sine on the torus.
    Torus { k1: i32, k2: i32, sine: bool },
    /// Real spherical harmonic of degree `l`, order `m`.
    Sphere { l: u32, m: i32 },
}

/// Eigenvalues in ascending order with their eigenfunctions, orthonormal
/// under the uniform probability measure.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBasis {
    pub spec: ManifoldSpec,
    pub eigenvalues: Vec<f64>,
    pub modes: Vec<BasisMode>,
}

impl SpectralBasis {
    /// Number of modes kept (the bandlimit).
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Value of eigenfunction `index` at an ambient point on the manifold.
    pub fn eval(&self, index: usize, p: &[f64]) -> f64 {
        match self.modes[index] {
            BasisMode::Constant => 1.0,
            BasisMode::CircleCos(k) => math::SQRT_2 * math::cos(k as f64 * math::atan2(p[1], p[0])),
            BasisMode::CircleSin(k) => math::SQRT_2 * math::sin(k as f64 * math::atan2(p[1], p[0])),
            BasisMode::Torus { k1, k2, sine } => {
                let arg = k1 as f64 * math::atan2(p[1], p[0]) + k2 as f64 * math::atan2(p[3], p[2]);
                math::SQRT_2 * if sine { math::sin(arg) } else { math::cos(arg) }
            }
            BasisMode::Sphere { l, m } => real_harmonic(l, m, p),
        }
    }

    /// Matrix of eigenfunction values, `len x n`, for the rows of
    /// `points`.
    pub fn eval_matrix(&self, points: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(self.len(), points.rows());
        for i in 0..points.rows() {
            let p = points.row(i);
            for m in 0..self.len() {
                out.set(m, i, self.eval(m, p));
            }
        }
        out
    }

    /// Indices of the first nonzero eigenvalue cluster.
    pub fn first_nonzero_cluster(&self) -> Vec<usize> {
        let Some(first) = self.eigenvalues.iter().position(|&l| l > 1e-12) else {
            return Vec::new();
        };
        let v = self.eigenvalues[first];
        (first..self.len())
            .take_while(|&i| math::abs(self.eigenvalues[i] - v) < 1e-12)
            .collect()
    }
}

/// The `count` lowest eigenpairs of the manifold.
pub fn analytic_spectrum(spec: ManifoldSpec, count: usize) -> Result<SpectralBasis> {
    if count == 0 {
        return Err(validation("spectrum needs at least one eigenpair"));
    }
    let mut pairs: Vec<(f64, BasisMode)> = Vec::with_capacity(count);
    match spec.kind {
        ManifoldKind::Circle => {
            pairs.push((0.0, BasisMode::Constant));
            let mut k = 1u32;
            while pairs.len() < count {
                let lam = (k * k) as f64;
                pairs.push((lam, BasisMode::CircleCos(k)));
                pairs.push((lam, BasisMode::CircleSin(k)));
                k += 1;
            }
        }
        ManifoldKind::FlatTorus2d => {
            let mut radius = 2i32;
            loop {
                let mut reps = Vec::new();
                for k1 in -radius..=radius {
                    for k2 in -radius..=radius {
                        let positive = k1 > 0 || (k1 == 0 && k2 > 0);
                        if positive && k1 * k1 + k2 * k2 <= radius * radius {
                            reps.push((k1 * k1 + k2 * k2, k1, k2));
                        }
                    }
                }
                reps.sort();
                if 1 + 2 * reps.len() >= count {
                    pairs.push((0.0, BasisMode::Constant));
                    for (n2, k1, k2) in reps {
                        pairs.push((n2 as f64, BasisMode::Torus { k1, k2, sine: false }));
                        pairs.push((n2 as f64, BasisMode::Torus { k1, k2, sine: true }));
                    }
                    break;
                }
                radius *= 2;
            }
        }
        ManifoldKind::Sphere2d => {
            let mut l = 0u32;
            while pairs.len() < count {
                let lam = (l * (l + 1)) as f64;
                for m in -(l as i32)..=(l as i32) {
                    pairs.push((lam, BasisMode::Sphere { l, m }));
                }
                l += 1;
            }
        }
    }
    pairs.truncate(count);
    Ok(SpectralBasis {
        spec,
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        modes: pairs.into_iter().map(|p| p.1).collect(),
    })
}

/// Associated Legendre function `P_l^m(x)`, `m >= 0`, without the
/// Condon-Shortley phase.
fn assoc_legendre(l: u32, m: u32, x: f64) -> f64 {
    let s = math::sqrt((1.0 - x * x).max(0.0));
    let mut pmm = 1.0;
    for i in 0..m {
        pmm *= (2 * i + 1) as f64 * s;
    }
    if l == m {
        return pmm;
    }
    let mut pm1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pm1;
    }
    let mut pm2 = pmm;
    for ll in (m + 2)..=l {
        let p = ((2 * ll - 1) as f64 * x * pm1 - (ll + m - 1) as f64 * pm2) / (ll - m) as f64;
        pm2 = pm1;
        pm1 = p;
    }
    pm1
}

fn real_harmonic(l: u32, m: i32, p: &[f64]) -> f64 {
    let am = m.unsigned_abs();
    let z = p[2].clamp(-1.0, 1.0);
    let phi = math::atan2(p[1], p[0]);
    // (l - m)! / (l + m)!
    let mut ratio = 1.0;
    for i in (l - am + 1)..=(l + am) {
        ratio /= i as f64;
    }
    let norm = math::sqrt((2 * l + 1) as f64 * ratio);
    let leg = assoc_legendre(l, am, z);
    match m {
        0 => norm * leg,
        m if m > 0 => math::SQRT_2 * norm * leg * math::cos(m as f64 * phi),
        _ => math::SQRT_2 * norm * leg * math::sin(am as f64 * phi),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::sample_manifold;

    #[test]
    fn circle_and_sphere_eigenvalues() {
        let c = analytic_spectrum(ManifoldSpec::new(ManifoldKind::Circle), 5).unwrap();
        assert_eq!(c.eigenvalues, [0.0, 1.0, 1.0, 4.0, 4.0]);
        let s = analytic_spectrum(ManifoldSpec::new(ManifoldKind::Sphere2d), 9).unwrap();
        assert_eq!(s.eigenvalues, [0.0, 2.0, 2.0, 2.0, 6.0, 6.0, 6.0, 6.0, 6.0]);
        let t = analytic_spectrum(ManifoldSpec::new(ManifoldKind::FlatTorus2d), 9).unwrap();
        assert_eq!(t.eigenvalues, [0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        assert_eq!(c.first_nonzero_cluster(), [1, 2]);
        assert_eq!(s.first_nonzero_cluster(), [1, 2, 3]);
    }

    #[test]
    fn low_harmonics_closed_form() {
        let s = analytic_spectrum(ManifoldSpec::new(ManifoldKind::Sphere2d), 4).unwrap();
        let p = [0.48, -0.6, 0.64];
        // sqrt(3) times the coordinate
        assert!((s.eval(2, &p) - 3f64.sqrt() * 0.64).abs() < 1e-12);
        assert!((s.eval(3, &p) - 3f64.sqrt() * 0.48).abs() < 1e-12);
        assert!((s.eval(1, &p) + 3f64.sqrt() * 0.6).abs() < 1e-12);
    }

    fn orthonormal(kind: ManifoldKind) {
        let spec = ManifoldSpec::new(kind);
        let basis = analytic_spectrum(spec, 6).unwrap();
        let n = 200_000;
        let cloud = sample_manifold(spec, n, 17).unwrap();
        let phi = basis.eval_matrix(&cloud.points);
        let gram = phi.matmul_nt(&phi).unwrap().scale(1.0 / n as f64);
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(i, j) - want).abs() < 0.02, "{kind:?} ({i},{j}) {}", gram.get(i, j));
            }
        }
    }

    #[test]
    fn orthonormal_under_uniform_measure() {
        orthonormal(ManifoldKind::Circle);
        orthonormal(ManifoldKind::FlatTorus2d);
        orthonormal(ManifoldKind::Sphere2d);
    }
}
