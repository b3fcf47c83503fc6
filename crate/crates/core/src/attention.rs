//! Multi-head softmax attention layers, dense and k-hop masked.
//!
//! Signals are `d x N` with one column per node. Attention weights are
//! normalized along the attended-to index, so output column `i` is a
//! convex combination of value columns.

use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng as _;

use crate::autodiff::{Activation, AttentionInputs, Tape, Var};
use crate::error::{contract, Result};
use crate::graph::KHopMask;
use crate::math;
use crate::rng::Rng;
use crate::tensor::{BoolMatrix, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Projections of one attention head, each `d_head x d_model`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

/// Position-wise two-layer feedforward block.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub activation: Activation,
}

/// Weights of one transformer layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    /// `d_model x (heads * d_head)`.
    pub w_o: Tensor,
    pub ffn: Option<FfnParams>,
    /// Spectral-norm bound on every `Q`, `K`, `V`.
    pub budget: Option<f64>,
}

impl AttentionParams {
    /// Random layer with unit-variance-preserving initialization.
    pub fn random(d_model: usize, heads: usize, d_head: usize, d_ffn: usize, rng: &mut Rng) -> Self {
        let s_in = 1.0 / math::sqrt(d_model as f64);
        let heads_v = (0..heads)
            .map(|_| HeadParams {
                q: Tensor::randn(d_head, d_model, s_in, rng),
                k: Tensor::randn(d_head, d_model, s_in, rng),
                v: Tensor::randn(d_head, d_model, s_in, rng),
            })
            .collect();
        let w_o = Tensor::randn(d_model, heads * d_head, 1.0 / math::sqrt((heads * d_head) as f64), rng);
        let ffn = (d_ffn > 0).then(|| FfnParams {
            w1: Tensor::randn(d_ffn, d_model, s_in, rng),
            b1: Tensor::randn(d_ffn, 1, 0.1, rng),
            w2: Tensor::randn(d_model, d_ffn, 1.0 / math::sqrt(d_ffn as f64), rng),
            b2: Tensor::randn(d_model, 1, 0.1, rng),
            activation: Activation::Relu,
        });
        Self {
            heads: heads_v,
            w_o,
            ffn,
            budget: None,
        }
    }

    pub fn d_head(&self) -> usize {
        self.heads.first().map_or(0, |h| h.q.rows())
    }

    fn bind(&self, tape: &Tape) -> LayerVars {
        LayerVars {
            heads: self
                .heads
                .iter()
                .map(|h| AttentionInputs {
                    q: tape.constant(h.q.clone()),
                    k: tape.constant(h.k.clone()),
                    v: tape.constant(h.v.clone()),
                })
                .collect(),
            w_o: tape.constant(self.w_o.clone()),
            ffn: self.ffn.as_ref().map(|f| FfnVars {
                w1: tape.constant(f.w1.clone()),
                b1: tape.constant(f.b1.clone()),
                w2: tape.constant(f.w2.clone()),
                b2: tape.constant(f.b2.clone()),
                activation: f.activation,
            }),
        }
    }
}

/// Tape handles of one head's projection matrices (not yet applied).
pub type HeadVars = AttentionInputs;

#[derive(Clone, Debug)]
pub struct FfnVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub heads: Vec<HeadVars>,
    pub w_o: Var,
    pub ffn: Option<FfnVars>,
}

/// Which node pairs may attend.
#[derive(Clone, Debug)]
pub enum Support {
    /// Materialized score matrix, optionally masked.
    Dense(Option<Arc<BoolMatrix>>),
    /// Per-row neighbor lists; never materializes the score matrix.
    Sparse(Arc<KHopMask>),
}

/// Inverted dropout with its own random stream.
#[derive(Debug)]
pub struct Dropout {
    pub rng: Rng,
    pub hidden: f64,
    pub attention: f64,
}

impl Dropout {
    fn keep_factors(&mut self, len: usize, rate: f64) -> Vec<f64> {
        let scale = 1.0 / (1.0 - rate);
        (0..len)
            .map(|_| if self.rng.gen::<f64>() < rate { 0.0 } else { scale })
            .collect()
    }

    fn hidden_mask(&mut self, rows: usize, cols: usize) -> Option<Arc<Tensor>> {
        if self.hidden <= 0.0 {
            return None;
        }
        let data = self.keep_factors(rows * cols, self.hidden);
        Some(Arc::new(Tensor::new(rows, cols, data).expect("length matches")))
    }
}

/// Applies hidden-unit dropout when a context is present.
pub fn dropout_hidden(tape: &Tape, x: Var, dropout: &mut Option<&mut Dropout>) -> Result<Var> {
    let (r, c) = tape.shape(x);
    match dropout.as_mut().and_then(|d| d.hidden_mask(r, c)) {
        Some(m) => tape.mul_const(x, m),
        None => Ok(x),
    }
}

/// Score scale for a head width: `1/sqrt(d_head)`, or 1 when unscaled.
pub fn score_scale(d_head: usize, unscaled: bool) -> f64 {
    if unscaled {
        1.0
    } else {
        1.0 / math::sqrt(d_head as f64)
    }
}

/// One head of softmax attention on `x`, recorded on the tape.
pub fn attention_head(
    tape: &Tape,
    head: &HeadVars,
    x: Var,
    support: &Support,
    scale: f64,
    dropout: &mut Option<&mut Dropout>,
) -> Result<Var> {
    let q = tape.matmul(head.q, x)?;
    let k = tape.matmul(head.k, x)?;
    let v = tape.matmul(head.v, x)?;
    match support {
        Support::Dense(mask) => {
            let qt = tape.transpose(q)?;
            let scores = tape.matmul(qt, k)?;
            let scores = tape.scale(scores, scale)?;
            let mut a = tape.masked_row_softmax(scores, mask.as_deref())?;
            if let Some(d) = dropout.as_mut() {
                if d.attention > 0.0 {
                    let (r, c) = tape.shape(a);
                    let f = d.keep_factors(r * c, d.attention);
                    a = tape.mul_const(a, Arc::new(Tensor::new(r, c, f)?))?;
                }
            }
            let at = tape.transpose(a)?;
            tape.matmul(v, at)
        }
        Support::Sparse(mask) => {
            let keep = match dropout.as_mut() {
                Some(d) if d.attention > 0.0 => Some(Arc::new(d.keep_factors(mask.nnz(), d.attention))),
                _ => None,
            };
            tape.sparse_attention(&AttentionInputs { q, k, v }, mask.clone(), scale, keep)
        }
    }
}

/// All heads, concatenated and output-projected.
pub fn multi_head(
    tape: &Tape,
    layer: &LayerVars,
    x: Var,
    support: &Support,
    scale: f64,
    dropout: &mut Option<&mut Dropout>,
) -> Result<Var> {
    if layer.heads.is_empty() {
        return Err(contract("attention layer has no heads"));
    }
    let mut outs = Vec::with_capacity(layer.heads.len());
    for h in &layer.heads {
        outs.push(attention_head(tape, h, x, support, scale, dropout)?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat_rows(&outs)? };
    tape.matmul(layer.w_o, cat)
}

pub fn ffn(tape: &Tape, f: &FfnVars, x: Var, dropout: &mut Option<&mut Dropout>) -> Result<Var> {
    let h = tape.matmul(f.w1, x)?;
    let h = tape.add_bias(h, f.b1)?;
    let h = tape.activation(h, f.activation)?;
    let h = dropout_hidden(tape, h, dropout)?;
    let o = tape.matmul(f.w2, h)?;
    tape.add_bias(o, f.b2)
}

/// Pre-norm residual layer: `x + Attn(LN x)`, then `+ FFN(LN .)`.
pub fn gt_layer_var(
    tape: &Tape,
    layer: &LayerVars,
    x: Var,
    support: &Support,
    scale: f64,
    dropout: &mut Option<&mut Dropout>,
) -> Result<Var> {
    let n1 = tape.layer_norm_cols(x, LAYER_NORM_EPS)?;
    let a = multi_head(tape, layer, n1, support, scale, dropout)?;
    let a = dropout_hidden(tape, a, dropout)?;
    let mut x = tape.add(x, a)?;
    if let Some(f) = &layer.ffn {
        let n2 = tape.layer_norm_cols(x, LAYER_NORM_EPS)?;
        let h = ffn(tape, f, n2, dropout)?;
        let h = dropout_hidden(tape, h, dropout)?;
        x = tape.add(x, h)?;
    }
    Ok(x)
}

fn check_input(params: &AttentionParams, x: &Tensor) -> Result<()> {
    let d_model = params.w_o.rows();
    if x.rows() != d_model {
        return Err(contract(alloc::format!(
            "input has {} features, layer expects {d_model}",
            x.rows()
        )));
    }
    Ok(())
}

fn run(params: &AttentionParams, x: &Tensor, support: Support, unscaled: bool, full_layer: bool) -> Result<Tensor> {
    check_input(params, x)?;
    let tape = Tape::new();
    let lv = params.bind(&tape);
    let xv = tape.constant(x.clone());
    let scale = score_scale(params.d_head(), unscaled);
    let out = if full_layer {
        gt_layer_var(&tape, &lv, xv, &support, scale, &mut None)?
    } else {
        multi_head(&tape, &lv, xv, &support, scale, &mut None)?
    };
    let v = tape.value(out).clone();
    Ok(v)
}

/// Multi-head attention over all node pairs.
pub fn dense_attention(params: &AttentionParams, x: &Tensor, unscaled: bool) -> Result<Tensor> {
    run(params, x, Support::Dense(None), unscaled, false)
}

/// Multi-head attention restricted to `mask`.
pub fn sparse_attention(params: &AttentionParams, x: &Tensor, mask: &KHopMask, unscaled: bool) -> Result<Tensor> {
    if mask.n() != x.cols() {
        return Err(contract("mask size differs from node count"));
    }
    run(params, x, Support::Sparse(Arc::new(mask.clone())), unscaled, false)
}

/// Full pre-norm layer; sparse when a mask is given.
pub fn gt_layer(params: &AttentionParams, x: &Tensor, mask: Option<&KHopMask>, unscaled: bool) -> Result<Tensor> {
    let support = match mask {
        Some(m) => Support::Sparse(Arc::new(m.clone())),
        None => Support::Dense(None),
    };
    run(params, x, support, unscaled, true)
}

/// Shrinks singular values above `c` down to `c`.
pub fn clamp_spectral_norm(t: &mut Tensor, c: f64) {
    if t.is_empty() || t.spectral_norm() <= c {
        return;
    }
    let m = DMatrix::from_row_slice(t.rows(), t.cols(), t.data());
    let mut svd = m.svd(true, true);
    for s in svd.singular_values.iter_mut() {
        if *s > c {
            *s = c;
        }
    }
    let r = svd.recompose().expect("both factors requested");
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            t.set(i, j, r[(i, j)]);
        }
    }
}

impl AttentionParams {
    /// Enforces the spectral budget on every head projection.
    pub fn enforce_budget(&mut self) {
        if let Some(c) = self.budget {
            for h in &mut self.heads {
                clamp_spectral_norm(&mut h.q, c);
                clamp_spectral_norm(&mut h.k, c);
                clamp_spectral_norm(&mut h.v, c);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{from_undirected_edges, k_hop_mask};
    use crate::rng;
    use alloc::vec;

    fn naive(params: &AttentionParams, x: &Tensor, mask: Option<&KHopMask>) -> Tensor {
        let n = x.cols();
        let dh = params.d_head();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut cat = Tensor::zeros(dh * params.heads.len(), n);
        for (h, hp) in params.heads.iter().enumerate() {
            let q = hp.q.matmul(x).unwrap();
            let k = hp.k.matmul(x).unwrap();
            let v = hp.v.matmul(x).unwrap();
            for i in 0..n {
                let allowed: Vec<usize> = (0..n).filter(|&j| mask.is_none_or(|m| m.contains(i, j))).collect();
                let s: Vec<f64> = allowed
                    .iter()
                    .map(|&j| (0..dh).map(|d| q.get(d, i) * k.get(d, j)).sum::<f64>() * scale)
                    .collect();
                let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|v| (v - max).exp()).sum();
                for d in 0..dh {
                    let mut acc = 0.0;
                    for (e, &j) in allowed.iter().enumerate() {
                        acc += (s[e] - max).exp() / z * v.get(d, j);
                    }
                    cat.set(h * dh + d, i, acc);
                }
            }
        }
        params.w_o.matmul(&cat).unwrap()
    }

    fn setup(n: usize, heads: usize, seed: u64) -> (AttentionParams, Tensor) {
        let mut r = rng::from_seed(seed);
        let p = AttentionParams::random(4, heads, 3, 8, &mut r);
        let x = Tensor::randn(4, n, 1.0, &mut r);
        (p, x)
    }

    #[test]
    fn dense_matches_scalar_loop() {
        let (p, x) = setup(6, 2, 1);
        let got = dense_attention(&p, &x, false).unwrap();
        assert!(got.max_abs_diff(&naive(&p, &x, None)) < 1e-10);
    }

    #[test]
    fn identical_columns_and_single_node() {
        let (p, _) = setup(1, 2, 2);
        let col = Tensor::randn(4, 1, 1.0, &mut rng::from_seed(3));
        let x = Tensor::from_fn(4, 5, |r, _| col.get(r, 0));
        let out = dense_attention(&p, &x, false).unwrap();
        let single = dense_attention(&p, &col, false).unwrap();
        for j in 0..5 {
            for r in 0..4 {
                assert!((out.get(r, j) - single.get(r, 0)).abs() < 1e-12);
            }
        }
        // one node: softmax is [1], output is W_o [V_h x]
        let mut cat = Vec::new();
        for h in &p.heads {
            cat.push(h.v.matmul(&col).unwrap());
        }
        let refs: Vec<&Tensor> = cat.iter().collect();
        let want = p.w_o.matmul(&Tensor::vstack(&refs).unwrap()).unwrap();
        assert!(single.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn sparse_full_and_self_only() {
        let (p, x) = setup(6, 2, 4);
        let dense = dense_attention(&p, &x, false).unwrap();
        let full = sparse_attention(&p, &x, &KHopMask::full(6), false).unwrap();
        assert!(dense.max_abs_diff(&full) < 1e-10);
        let own = sparse_attention(&p, &x, &KHopMask::self_only(6), false).unwrap();
        assert!(own.max_abs_diff(&naive(&p, &x, Some(&KHopMask::self_only(6)))) < 1e-12);
    }

    #[test]
    fn sparse_path_matches_masked_dense() {
        let (p, x) = setup(5, 2, 5);
        let g = from_undirected_edges(5, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0)]).unwrap();
        let mask = k_hop_mask(&g, 1).unwrap();
        let sparse = sparse_attention(&p, &x, &mask, false).unwrap();
        assert!(sparse.max_abs_diff(&naive(&p, &x, Some(&mask))) < 1e-10);
        // the same through the dense path with a boolean mask
        let t = Tape::new();
        let lv = p.bind(&t);
        let xv = t.constant(x.clone());
        let y = multi_head(&t, &lv, xv, &Support::Dense(Some(Arc::new(mask.to_dense()))), score_scale(3, false), &mut None).unwrap();
        assert!(t.value(y).max_abs_diff(&sparse) < 1e-10);
    }

    #[test]
    fn zero_weights_layer_is_identity() {
        let (mut p, x) = setup(5, 2, 6);
        for h in &mut p.heads {
            h.v = Tensor::zeros(3, 4);
        }
        p.w_o = Tensor::zeros(4, 6);
        let f = p.ffn.as_mut().unwrap();
        f.w2 = Tensor::zeros(4, 8);
        f.b2 = Tensor::zeros(4, 1);
        assert!(gt_layer(&p, &x, None, false).unwrap().max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn layer_dense_equals_sparse_full() {
        let (p, x) = setup(7, 2, 7);
        let d = gt_layer(&p, &x, None, false).unwrap();
        let s = gt_layer(&p, &x, Some(&KHopMask::full(7)), false).unwrap();
        assert!(d.max_abs_diff(&s) < 1e-10);
    }

    #[test]
    fn layer_gradients() {
        let (p, x) = setup(5, 2, 8);
        let mask = Arc::new(KHopMask::from_rows(vec![vec![1], vec![2], vec![0, 3], vec![4], vec![0]]));
        let target = Tensor::randn(4, 5, 1.0, &mut rng::from_seed(9));
        for support in [Support::Dense(None), Support::Sparse(mask)] {
            let wq = p.heads[0].q.clone();
            let (p, x, target, support) = (p.clone(), x.clone(), target.clone(), support.clone());
            let err = crate::gradcheck::finite_diff_check(
                move |t, v| {
                    let mut lv = p.bind(t);
                    lv.heads[0].q = v;
                    let xv = t.constant(x.clone());
                    let y = gt_layer_var(t, &lv, xv, &support, 0.5, &mut None)?;
                    let tv = t.constant(target.clone());
                    t.mse(y, tv)
                },
                &wq,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn spectral_clamp() {
        let mut t = Tensor::randn(4, 6, 2.0, &mut rng::from_seed(10));
        clamp_spectral_norm(&mut t, 0.5);
        assert!(t.spectral_norm_power(50) <= 0.5 + 1e-8);
        let mut small = Tensor::identity(3).scale(0.1);
        let before = small.clone();
        clamp_spectral_norm(&mut small, 0.5);
        assert_eq!(small, before);
    }
}
