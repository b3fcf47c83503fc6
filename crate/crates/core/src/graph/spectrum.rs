use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;

use super::CsrMatrix;
use crate::error::{validation, Result};
use crate::math;
use crate::rng::{self, Rng};
use crate::tensor::{dot, Tensor};

/// Below this size the dense symmetric eigensolver is used directly.
const DENSE_CUTOFF: usize = 400;

/// Eigenvalues in ascending order with the matching unit eigenvectors as
/// columns of an `n x k` tensor.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

/// All eigenpairs of a small symmetric matrix, ascending.
pub fn dense_eigenpairs(m: &Tensor) -> Result<EigenPairs> {
    let (r, c) = m.shape();
    if r != c {
        return Err(validation(format!("eigensolver needs a square matrix, got {r}x{c}")));
    }
    let dm = DMatrix::from_row_slice(r, c, m.data());
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Tensor::from_fn(r, r, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(EigenPairs { values, vectors })
}

/// The `k` smallest eigenpairs of a symmetric sparse matrix.
///
/// Small matrices go through a dense solve. Larger ones use Lanczos with
/// full reorthogonalization, grown until the Ritz residuals of the wanted
/// pairs fall below `tol` times the spectral scale.
pub fn smallest_eigenpairs(a: &CsrMatrix, k: usize, tol: f64, seed: u64) -> Result<EigenPairs> {
    let n = a.n();
    if k == 0 || k > n {
        return Err(validation(format!("requested {k} eigenpairs of a {n}x{n} matrix")));
    }
    if n <= DENSE_CUTOFF {
        let all = dense_eigenpairs(&a.to_dense())?;
        let cols: Vec<usize> = (0..k).collect();
        return Ok(EigenPairs {
            values: all.values[..k].to_vec(),
            vectors: all.vectors.select_columns(&cols),
        });
    }
    lanczos(a, k, tol, seed)
}

fn lanczos(a: &CsrMatrix, k: usize, tol: f64, seed: u64) -> Result<EigenPairs> {
    let n = a.n();
    let scale = (0..n)
        .map(|i| a.row(i).map(|(_, v)| math::abs(v)).sum::<f64>())
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut r = rng::from_seed(seed);
    // locked pairs; each restart works in their orthogonal complement so
    // repeated eigenvalues are found one copy at a time
    let mut locked: Vec<(f64, Vec<f64>)> = Vec::new();
    for _restart in 0..(4 * k + 8) {
        let want = k.saturating_sub(locked.len()).max(1);
        let found = lanczos_run(a, want, tol * scale, &locked, &mut r)?;
        let kth = if locked.len() >= k {
            let mut vals: Vec<f64> = locked.iter().map(|p| p.0).collect();
            vals.sort_by(f64::total_cmp);
            vals[k - 1]
        } else {
            f64::INFINITY
        };
        let fresh: Vec<(f64, Vec<f64>)> = found
            .into_iter()
            .filter(|(v, _)| *v < kth - tol * scale)
            .collect();
        if fresh.is_empty() && locked.len() >= k {
            break;
        }
        if fresh.is_empty() {
            return Err(validation("eigensolver made no progress"));
        }
        locked.extend(fresh);
    }
    locked.sort_by(|x, y| x.0.total_cmp(&y.0));
    locked.truncate(k);
    let vectors = Tensor::from_fn(n, locked.len(), |row, col| locked[col].1[row]);
    Ok(EigenPairs {
        values: locked.iter().map(|p| p.0).collect(),
        vectors,
    })
}

/// One Lanczos run in the complement of `locked`; returns the converged
/// Ritz pairs among the `want` smallest.
fn lanczos_run(
    a: &CsrMatrix,
    want: usize,
    abs_tol: f64,
    locked: &[(f64, Vec<f64>)],
    r: &mut Rng,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = a.n();
    let room = n - locked.len().min(n);
    if room == 0 {
        return Ok(Vec::new());
    }
    let max_steps = room.min(want * 8 + 600);
    let deflate = |w: &mut [f64]| {
        for (_, b) in locked {
            let c = dot(b, w);
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= c * bi;
            }
        }
    };
    let mut q: Vec<f64> = (0..n).map(|_| r.gen::<f64>() - 0.5).collect();
    deflate(&mut q);
    normalize(&mut q);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_steps);
    let mut alpha = Vec::with_capacity(max_steps);
    let mut beta: Vec<f64> = Vec::with_capacity(max_steps);
    let mut w = vec![0.0; n];
    let check_every = 20;
    loop {
        a.matvec(&q, &mut w);
        let al = dot(&q, &w);
        alpha.push(al);
        basis.push(q.clone());
        // full reorthogonalization, done twice for stability
        for _ in 0..2 {
            deflate(&mut w);
            for b in &basis {
                let c = dot(b, &w);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
        }
        let be = math::sqrt(dot(&w, &w));
        let m = basis.len();
        let done = m >= max_steps || be < 1e-10 * abs_tol.max(1e-300);
        if done || (m >= want && m.is_multiple_of(check_every)) {
            let (vals, vecs) = tridiagonal_eigen(&alpha, &beta);
            let take = want.min(m);
            let converged: Vec<usize> = (0..take)
                .filter(|&i| math::abs(be * vecs[(m - 1, i)]) <= abs_tol)
                .collect();
            if converged.len() == take || done {
                return Ok(converged
                    .into_iter()
                    .map(|i| {
                        let mut v = vec![0.0; n];
                        for (j, b) in basis.iter().enumerate() {
                            let c = vecs[(j, i)];
                            for (vi, bi) in v.iter_mut().zip(b) {
                                *vi += c * bi;
                            }
                        }
                        normalize(&mut v);
                        (vals[i], v)
                    })
                    .collect());
            }
        }
        beta.push(be);
        q = w.iter().map(|x| x / be).collect();
    }
}

/// Ascending eigen-decomposition of the Lanczos tridiagonal matrix.
fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m, m, |i, j| eig.eigenvectors[(i, order[j])]);
    (vals, vecs)
}

fn normalize(v: &mut [f64]) {
    let n = math::sqrt(dot(v, v));
    for x in v {
        *x /= n;
    }
}
