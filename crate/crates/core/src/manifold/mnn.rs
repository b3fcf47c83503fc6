use alloc::format;

use serde::{Deserialize, Serialize};

use super::spectrum::SpectralBasis;
use crate::autodiff::Activation;
use crate::error::{contract, Result};
use crate::math;
use crate::pe::FilterBank;
use crate::tensor::Tensor;

/// Spectral shape of filter tap `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterResponse {
    /// `e^{-k lambda}`: powers of the heat semigroup.
    #[default]
    Heat,
    /// `lambda^k`: powers of the operator itself.
    Polynomial,
}

impl FilterResponse {
    pub fn tap(self, k: usize, lambda: f64) -> f64 {
        match self {
            FilterResponse::Heat => math::exp(-(k as f64) * lambda),
            FilterResponse::Polynomial => {
                if k == 0 {
                    1.0
                } else {
                    math::pow(lambda, k as f64)
                }
            }
        }
    }
}

/// Monte-Carlo coefficients `<f, phi_i>` of the signal `values`
/// (`d x n_q`) sampled at the quadrature points whose basis values are
/// `phi_q` (`M x n_q`).
pub fn project_onto_basis(values: &Tensor, phi_q: &Tensor) -> Result<Tensor> {
    let n = values.cols().max(1) as f64;
    Ok(values.matmul_nt(phi_q)?.scale(1.0 / n))
}

fn filtered(bank: &FilterBank, response: FilterResponse, basis: &SpectralBasis, coeffs: &Tensor) -> Result<Tensor> {
    // sum_{k>=1} H_k (c * r_k(lambda)) as coefficients
    let mut out = Tensor::zeros(bank.out_dim(), coeffs.cols());
    for (k, h) in bank.taps.iter().enumerate().skip(1) {
        let scaled = Tensor::from_fn(coeffs.rows(), coeffs.cols(), |r, i| {
            coeffs.get(r, i) * response.tap(k, basis.eigenvalues[i])
        });
        out.add_assign(&h.matmul(&scaled)?)?;
    }
    Ok(out)
}

/// Manifold neural network evaluated at `eval_points`.
///
/// The input signal is `sum_i coeffs[:, i] phi_i`. Each layer applies
/// `sum_k H_k h_k(L)` followed by `activation` (linear when `None`).
/// The `k = 0` tap acts pointwise; higher taps act on basis coefficients,
/// which after the first layer are re-estimated by quadrature over
/// `quadrature` (rows are points). The result is `out_dim x n_eval`.
pub fn mnn_reference(
    banks: &[FilterBank],
    response: FilterResponse,
    activation: Option<Activation>,
    basis: &SpectralBasis,
    coeffs: &Tensor,
    quadrature: &Tensor,
    eval_points: &Tensor,
) -> Result<Tensor> {
    if coeffs.cols() > basis.len() {
        return Err(contract(format!(
            "signal has {} coefficients, basis is bandlimited to {}",
            coeffs.cols(),
            basis.len()
        )));
    }
    let m = basis.len();
    let mut c = Tensor::from_fn(coeffs.rows(), m, |r, i| if i < coeffs.cols() { coeffs.get(r, i) } else { 0.0 });
    let phi_e = basis.eval_matrix(eval_points);
    let need_quad = banks.len() > 1;
    let phi_q = if need_quad { basis.eval_matrix(quadrature) } else { Tensor::zeros(m, 0) };
    let mut vals_e = c.matmul(&phi_e)?;
    let mut vals_q = if need_quad { c.matmul(&phi_q)? } else { Tensor::zeros(c.rows(), 0) };
    let act = |t: Tensor| match activation {
        Some(a) => t.map(|v| a.apply(v)),
        None => t,
    };
    for (l, bank) in banks.iter().enumerate() {
        if l > 0 {
            c = project_onto_basis(&vals_q, &phi_q)?;
        }
        if bank.in_dim() != c.rows() {
            return Err(contract(format!(
                "layer {l} expects {} channels, signal has {}",
                bank.in_dim(),
                c.rows()
            )));
        }
        let spectral = filtered(bank, response, basis, &c)?;
        let mut pre_e = bank.taps[0].matmul(&vals_e)?;
        pre_e.add_assign(&spectral.matmul(&phi_e)?)?;
        if need_quad && l + 1 < banks.len() {
            let mut pre_q = bank.taps[0].matmul(&vals_q)?;
            pre_q.add_assign(&spectral.matmul(&phi_q)?)?;
            vals_q = act(pre_q);
        }
        vals_e = act(pre_e);
    }
    Ok(vals_e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use crate::manifold::{analytic_spectrum, sample_manifold, ManifoldKind, ManifoldSpec};
    use crate::rng;
    use alloc::vec;

    fn circle() -> ManifoldSpec {
        ManifoldSpec::new(ManifoldKind::Circle)
    }

    #[test]
    fn unit_tap_is_identity() {
        let basis = analytic_spectrum(circle(), 7).unwrap();
        let pts = sample_manifold(circle(), 20, 1).unwrap().points;
        let coeffs = Tensor::randn(1, 7, 1.0, &mut rng::from_seed(2));
        let bank = FilterBank::new(vec![Tensor::identity(1), Tensor::zeros(1, 1)]).unwrap();
        let out = mnn_reference(&[bank], FilterResponse::Heat, None, &basis, &coeffs, &pts, &pts).unwrap();
        let want = coeffs.matmul(&basis.eval_matrix(&pts)).unwrap();
        assert!(out.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn eigenfunction_is_scaled_by_response() {
        let basis = analytic_spectrum(circle(), 5).unwrap();
        let pts = sample_manifold(circle(), 16, 3).unwrap().points;
        let coeffs = Tensor::from_rows(&[[0.0, 1.0]]);
        let h = [0.5, -0.3, 0.2];
        let bank = FilterBank::new(h.iter().map(|&v| Tensor::scalar(v)).collect()).unwrap();
        for resp in [FilterResponse::Heat, FilterResponse::Polynomial] {
            let out = mnn_reference(core::slice::from_ref(&bank), resp, None, &basis, &coeffs, &pts, &pts).unwrap();
            let hhat: f64 = h.iter().enumerate().map(|(k, v)| v * resp.tap(k, 1.0)).sum();
            for i in 0..16 {
                assert!((out.get(0, i) - hhat * basis.eval(1, pts.row(i))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_signal_beyond_bandlimit() {
        let basis = analytic_spectrum(circle(), 3).unwrap();
        let pts = Tensor::from_rows(&[[1.0, 0.0]]);
        let bank = FilterBank::new(vec![Tensor::scalar(1.0)]).unwrap();
        let coeffs = Tensor::zeros(1, 4);
        assert!(mnn_reference(&[bank], FilterResponse::Heat, None, &basis, &coeffs, &pts, &pts).is_err());
    }

    /// Two heat-filter layers against direct quadrature of the circle heat
    /// kernel `sum_j e^{-k lambda_j} phi_j(x) phi_j(y)` truncated far
    /// beyond the reference bandlimit.
    #[test]
    fn two_layer_matches_heat_kernel_quadrature() {
        let spec = circle();
        let basis = analytic_spectrum(spec, 41).unwrap();
        let mut r = rng::from_seed(4);
        let coeffs = Tensor::randn(2, 5, 1.0, &mut r);
        let banks = vec![
            FilterBank::new((0..3).map(|_| Tensor::randn(3, 2, 0.6, &mut r)).collect()).unwrap(),
            FilterBank::new((0..3).map(|_| Tensor::randn(2, 3, 0.6, &mut r)).collect()).unwrap(),
        ];
        let quad = sample_manifold(spec, 50_000, 5).unwrap().points;
        let eval = sample_manifold(spec, 12, 6).unwrap().points;
        let got = mnn_reference(&banks, FilterResponse::Heat, Some(Activation::Tanh), &basis, &coeffs, &quad, &eval)
            .unwrap();

        // brute force: layer 1 exactly at quadrature and eval points, layer 2
        // through the heat kernel as an integral operator
        let angle = |p: &[f64]| p[1].atan2(p[0]);
        let heat = |k: usize, a: f64, b: f64| -> f64 {
            let mut s = 1.0;
            for j in 1..200 {
                s += 2.0 * (-(k as f64) * (j * j) as f64).exp() * ((j as f64) * (a - b)).cos();
            }
            s
        };
        let layer1 = |p: &[f64]| -> Vec<f64> {
            let mut out = [0.0; 3];
            for (k, h) in banks[0].taps.iter().enumerate() {
                for ch in 0..2 {
                    let mut v = 0.0;
                    for i in 0..5 {
                        v += coeffs.get(ch, i) * (-(k as f64) * basis.eigenvalues[i]).exp() * basis.eval(i, p);
                    }
                    for o in 0..3 {
                        out[o] += h.get(o, ch) * v;
                    }
                }
            }
            out.iter().map(|v| v.tanh()).collect()
        };
        let fq: Vec<Vec<f64>> = (0..quad.rows()).map(|i| layer1(quad.row(i))).collect();
        for e in 0..eval.rows() {
            let p = eval.row(e);
            let te = angle(p);
            let fe = layer1(p);
            let mut pre = [0.0; 2];
            for (k, h) in banks[1].taps.iter().enumerate() {
                let mut smoothed = [0.0; 3];
                if k == 0 {
                    smoothed.copy_from_slice(&fe);
                } else {
                    let w: Vec<f64> = (0..quad.rows()).map(|q| heat(k, te, angle(quad.row(q)))).collect();
                    for ch in 0..3 {
                        smoothed[ch] = (0..quad.rows()).map(|q| w[q] * fq[q][ch]).sum::<f64>() / quad.rows() as f64;
                    }
                }
                for o in 0..2 {
                    for ch in 0..3 {
                        pre[o] += h.get(o, ch) * smoothed[ch];
                    }
                }
            }
            for o in 0..2 {
                let want = pre[o].tanh();
                assert!((got.get(o, e) - want).abs() < 1e-3, "{} vs {want}", got.get(o, e));
            }
        }
    }
}
