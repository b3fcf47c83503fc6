use alloc::vec::Vec;

use crate::attention::{score_scale, AttentionParams};
use crate::error::{contract, Error, Result};
use crate::math;
use crate::tensor::{dot, Tensor};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Monte-Carlo manifold attention at `eval_points`.
///
/// `f_quad` (`d x n_q`) holds the signal at the quadrature points and
/// `f_eval` (`d x n_e`) at the evaluation points. Each head computes
/// `sum_y w(x, y) V f(y) / sum_y w(x, y)` over quadrature points `y`,
/// with `w = exp(scale <Q f(x), K f(y)>)`, restricted to the open ball of
/// Euclidean `radius` around `x` when given. Heads are concatenated and
/// output-projected as in the discrete layer.
pub fn mt_reference(
    params: &AttentionParams,
    f_quad: &Tensor,
    f_eval: &Tensor,
    quad_points: &Tensor,
    eval_points: &Tensor,
    radius: Option<f64>,
    unscaled: bool,
) -> Result<Tensor> {
    if f_quad.cols() != quad_points.rows() || f_eval.cols() != eval_points.rows() {
        return Err(contract("signal and point counts differ"));
    }
    if f_quad.rows() != f_eval.rows() {
        return Err(contract("quadrature and evaluation signals differ in width"));
    }
    if let Some(i) = f_quad.first_non_finite() {
        return Err(Error::NonFinite {
            context: "quadrature signal".into(),
            index: i,
        });
    }
    let r2 = radius.map(|r| r * r);
    let scale = score_scale(params.d_head(), unscaled);
    let ne = f_eval.cols();
    let nq = f_quad.cols();
    let mut heads = Vec::with_capacity(params.heads.len());
    let mut w = alloc::vec![0.0; nq];
    for h in &params.heads {
        let qe = h.q.matmul(f_eval)?.transpose();
        let kq = h.k.matmul(f_quad)?.transpose();
        let vq = h.v.matmul(f_quad)?.transpose();
        let mut out = Tensor::zeros(ne, vq.cols());
        for x in 0..ne {
            let qx = qe.row(x);
            let px = eval_points.row(x);
            let mut max = f64::NEG_INFINITY;
            for y in 0..nq {
                let inside = r2.is_none_or(|r2| sq_dist(px, quad_points.row(y)) < r2);
                w[y] = if inside { scale * dot(qx, kq.row(y)) } else { f64::NEG_INFINITY };
                if w[y] > max {
                    max = w[y];
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::EmptyBall {
                    index: x,
                    radius: radius.unwrap_or(f64::INFINITY),
                });
            }
            let mut total = 0.0;
            let orow = out.row_mut(x);
            for y in 0..nq {
                if w[y] == f64::NEG_INFINITY {
                    continue;
                }
                let e = math::exp(w[y] - max);
                total += e;
                for (o, v) in orow.iter_mut().zip(vq.row(y)) {
                    *o += e * v;
                }
            }
            orow.iter_mut().for_each(|o| *o /= total);
        }
        heads.push(out.transpose());
    }
    let refs: Vec<&Tensor> = heads.iter().collect();
    params.w_o.matmul(&Tensor::vstack(&refs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::HeadParams;
    use crate::manifold::{sample_manifold, ManifoldKind, ManifoldSpec};
    use crate::rng;
    use alloc::vec;

    fn params(seed: u64) -> AttentionParams {
        let mut r = rng::from_seed(seed);
        AttentionParams::random(3, 1, 3, 0, &mut r)
    }

    fn signal(points: &Tensor) -> Tensor {
        Tensor::from_fn(3, points.rows(), |c, i| match c {
            0 => 0.5,
            1 => points.get(i, 0),
            _ => points.get(i, 1),
        })
    }

    #[test]
    fn constant_signal_gives_constant_output() {
        let p = params(1);
        let q = sample_manifold(ManifoldSpec::new(ManifoldKind::Circle), 300, 2).unwrap().points;
        let e = sample_manifold(ManifoldSpec::new(ManifoldKind::Circle), 5, 3).unwrap().points;
        let c = Tensor::from_rows(&[[0.3], [-1.0], [2.0]]);
        let fq = Tensor::from_fn(3, 300, |r, _| c.get(r, 0));
        let fe = Tensor::from_fn(3, 5, |r, _| c.get(r, 0));
        let out = mt_reference(&p, &fq, &fe, &q, &e, None, true).unwrap();
        let want = p.w_o.matmul(&p.heads[0].v.matmul(&c).unwrap()).unwrap();
        for x in 0..5 {
            for d in 0..3 {
                assert!((out.get(d, x) - want.get(d, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_query_gives_cloud_mean() {
        let mut p = params(4);
        p.heads[0] = HeadParams {
            q: Tensor::zeros(3, 3),
            ..p.heads[0].clone()
        };
        let q = sample_manifold(ManifoldSpec::new(ManifoldKind::Circle), 200, 5).unwrap().points;
        let e = sample_manifold(ManifoldSpec::new(ManifoldKind::Circle), 4, 6).unwrap().points;
        let (fq, fe) = (signal(&q), signal(&e));
        let out = mt_reference(&p, &fq, &fe, &q, &e, None, false).unwrap();
        let vmean = p.heads[0].v.matmul(&fq).unwrap();
        let mean = Tensor::from_fn(3, 1, |r, _| vmean.row(r).iter().sum::<f64>() / 200.0);
        let want = p.w_o.matmul(&mean).unwrap();
        for x in 0..4 {
            for d in 0..3 {
                assert!((out.get(d, x) - want.get(d, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn infinite_radius_is_unrestricted() {
        let p = params(7);
        let q = sample_manifold(ManifoldSpec::new(ManifoldKind::Circle), 500, 8).unwrap().points;
        let e = sample_manifold(ManifoldSpec::new(ManifoldKind::Circle), 9, 9).unwrap().points;
        let (fq, fe) = (signal(&q), signal(&e));
        let a = mt_reference(&p, &fq, &fe, &q, &e, None, true).unwrap();
        let b = mt_reference(&p, &fq, &fe, &q, &e, Some(f64::INFINITY), true).unwrap();
        assert_eq!(a, b);
        let c = mt_reference(&p, &fq, &fe, &q, &e, Some(0.5), true).unwrap();
        assert!(a.max_abs_diff(&c) > 1e-6);
    }

    #[test]
    fn empty_ball_reports_point() {
        let p = params(1);
        let q = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let e = Tensor::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]);
        let err = mt_reference(&p, &signal(&q), &signal(&e), &q, &e, Some(0.1), true).unwrap_err();
        assert_eq!(err, Error::EmptyBall { index: 1, radius: 0.1 });
        let _ = vec![0];
    }
}
