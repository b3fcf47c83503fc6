//! Central finite-difference gradient checking.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Activation, AttentionInputs, Tape, Var};
use crate::graph::{from_undirected_edges, k_hop_mask, Graph};
use crate::model::{Mode, Model, ModelConfig, TaskHead};
use crate::pe::PeConfig;
use crate::rng;
use crate::error::{contract, Error, Result};
use crate::math;
use crate::tensor::Tensor;

fn eval(f: &impl Fn(&Tape, Var) -> Result<Var>, x: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&tape, v)?;
    let val = tape.value(out);
    if val.shape() != (1, 1) {
        return Err(contract(format!("checked function must be scalar, got {:?}", val.shape())));
    }
    Ok(val.get(0, 0))
}

/// Analytic gradient of `f` at `x`.
pub fn analytic_gradient(f: &impl Fn(&Tape, Var) -> Result<Var>, x: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&tape, v)?;
    let grads = tape.backward(out)?;
    Ok(grads
        .get(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols())))
}

/// Central difference stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error `O(h^2)`.
    ThreePoint,
    /// `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, error `O(h^4)`.
    /// Tolerates a step large enough that round-off stays far below
    /// gradients of order `1e-8`.
    FivePoint,
}

/// Central-difference gradient of `f` at `x` with the given step.
pub fn numeric_gradient(
    f: &impl Fn(&Tape, Var) -> Result<Var>,
    x: &Tensor,
    step: f64,
) -> Result<Tensor> {
    numeric_gradient_with(f, x, step, Stencil::ThreePoint)
}

pub fn numeric_gradient_with(
    f: &impl Fn(&Tape, Var) -> Result<Var>,
    x: &Tensor,
    step: f64,
    stencil: Stencil,
) -> Result<Tensor> {
    if !(step > 0.0) {
        return Err(contract(format!("finite-difference step must be positive, got {step}")));
    }
    let mut g = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        let mut at = |h: f64| -> Result<f64> {
            probe.data_mut()[i] = orig + h;
            let v = eval(f, &probe)?;
            probe.data_mut()[i] = orig;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "finite-difference evaluation".into(),
                    index: i,
                });
            }
            Ok(v)
        };
        let d1 = (at(step)? - at(-step)?) / (2.0 * step);
        g.data_mut()[i] = match stencil {
            Stencil::ThreePoint => d1,
            Stencil::FivePoint => {
                let d2 = (at(2.0 * step)? - at(-2.0 * step)?) / (4.0 * step);
                (4.0 * d1 - d2) / 3.0
            }
        };
    }
    Ok(g)
}

/// Largest relative error `|a - n| / max(|a|, |n|, 1e-8)` between the
/// analytic and central-difference gradients of a scalar function.
pub fn finite_diff_check(
    f: impl Fn(&Tape, Var) -> Result<Var>,
    x: &Tensor,
    step: f64,
) -> Result<f64> {
    finite_diff_check_with(f, x, step, Stencil::ThreePoint)
}

pub fn finite_diff_check_with(
    f: impl Fn(&Tape, Var) -> Result<Var>,
    x: &Tensor,
    step: f64,
    stencil: Stencil,
) -> Result<f64> {
    let numeric = numeric_gradient_with(&f, x, step, stencil)?;
    let analytic = analytic_gradient(&f, x)?;
    if let Some(i) = analytic.first_non_finite() {
        return Err(Error::NonFinite {
            context: "analytic gradient".into(),
            index: i,
        });
    }
    Ok(max_relative_error(&analytic, &numeric))
}

pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let denom = math::abs(x).max(math::abs(y)).max(1e-8);
            math::abs(x - y) / denom
        })
        .fold(0.0, f64::max)
}

/// Worst relative gradient error of one operation or model.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OpCheck {
    pub op: String,
    pub max_rel_error: f64,
}

/// Step of the single-op checks in [`suite`].
pub const SUITE_STEP: f64 = 1e-6;

/// Five-point step of the whole-model checks in [`suite`]. Models compose
/// enough ops that some gradient entries fall to `1e-8`, where three-point
/// round-off at `1e-6` alone reaches the tolerance.
pub const MODEL_STEP: f64 = 5e-4;

fn probe(t: &Tape, y: Var, seed: u64) -> Result<Var> {
    let (r, c) = t.shape(y);
    let w = t.constant(Tensor::randn(r, c, 1.0, &mut rng::from_seed(seed)));
    let p = t.hadamard(y, w)?;
    t.sum(p)
}

fn suite_graph(n: usize, seed: u64) -> Result<Graph> {
    use rand::Rng as _;
    let mut r = rng::from_seed(seed);
    let mut e: Vec<(usize, usize, f64)> = (1..n).map(|i| (i - 1, i, r.gen_range(0.5..1.5))).collect();
    for i in 0..n {
        for j in (i + 2)..n {
            if r.gen_bool(0.2) {
                e.push((i, j, r.gen_range(0.5..1.5)));
            }
        }
    }
    from_undirected_edges(n, &e)
}

/// Gradient error of every parameter of `model` under `loss`.
fn model_check(
    model: &Model,
    g: &Graph,
    features: &Tensor,
    seed: u64,
    loss: &dyn Fn(&Tape, Var) -> Result<Var>,
) -> Result<f64> {
    let prep = model.prepare(g, seed)?;
    let mut worst = 0.0f64;
    for id in model.store.ids() {
        let x = model.store.get(id).clone();
        let err = finite_diff_check_with(
            |t, v| {
                let b = model.store.bind_frozen(t).with(id, v);
                let out = model.forward(t, &b, &prep, features, None)?;
                loss(t, out)
            },
            &x,
            MODEL_STEP,
            Stencil::FivePoint,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Finite-difference check of every differentiable operation and of whole
/// models, the sparse GT with a trainable RPEARL encoder included.
pub fn suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut r = rng::stream(seed, rng::INIT, 77);
    let mut out = Vec::new();
    let mut push = |op: &str, e: f64| {
        out.push(OpCheck {
            op: op.into(),
            max_rel_error: e,
        })
    };
    let a = Tensor::randn(3, 4, 1.0, &mut r);
    let b = Arc::new(Tensor::randn(3, 4, 1.0, &mut r));
    let m = Arc::new(Tensor::randn(4, 5, 1.0, &mut r));
    let col = Arc::new(Tensor::randn(3, 1, 1.0, &mut r));
    // keep relu inputs away from the kink
    let away = a.map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
    let s = seed;

    let bin = |f: fn(&Tape, Var, Var) -> Result<Var>, other: Arc<Tensor>| {
        move |t: &Tape, v: Var| {
            let o = t.constant((*other).clone());
            let y = f(t, v, o)?;
            probe(t, y, s)
        }
    };
    push("matmul", finite_diff_check(bin(Tape::matmul, m.clone()), &a, SUITE_STEP)?);
    push("add", finite_diff_check(bin(Tape::add, b.clone()), &a, SUITE_STEP)?);
    push("sub", finite_diff_check(bin(Tape::sub, b.clone()), &a, SUITE_STEP)?);
    push("hadamard", finite_diff_check(bin(Tape::hadamard, b.clone()), &a, SUITE_STEP)?);
    push(
        "add_bias",
        finite_diff_check(
            |t, v| {
                let x = t.constant((*b).clone());
                let y = t.add_bias(x, v)?;
                probe(t, y, s)
            },
            &col,
            SUITE_STEP,
        )?,
    );
    type UnaryOp = fn(&Tape, Var) -> Result<Var>;
    let unary: [(&str, UnaryOp); 6] = [
        ("scale", |t, v| t.scale(v, -1.7)),
        ("transpose", Tape::transpose),
        ("relu", Tape::relu),
        ("tanh", Tape::tanh),
        ("sum", Tape::sum),
        ("mean", Tape::mean),
    ];
    for (name, f) in unary {
        push(name, finite_diff_check(|t, v| probe(t, f(t, v)?, s), &away, SUITE_STEP)?);
    }
    push(
        "mul_const",
        finite_diff_check(|t, v| probe(t, t.mul_const(v, b.clone())?, s), &a, SUITE_STEP)?,
    );
    push(
        "mse",
        finite_diff_check(
            |t, v| {
                let o = t.constant((*b).clone());
                t.mse(v, o)
            },
            &a,
            SUITE_STEP,
        )?,
    );
    push(
        "concat_rows",
        finite_diff_check(
            |t, v| {
                let o = t.constant((*b).clone());
                probe(t, t.concat_rows(&[v, o, v])?, s)
            },
            &a,
            SUITE_STEP,
        )?,
    );
    push(
        "layer_norm_cols",
        finite_diff_check(|t, v| probe(t, t.layer_norm_cols(v, 1e-5)?, s), &a, SUITE_STEP)?,
    );

    let g = suite_graph(7, seed)?;
    let mask = Arc::new(k_hop_mask(&g, 1)?);
    let dense_mask = mask.to_dense();
    let scores = Tensor::randn(7, 7, 1.0, &mut r);
    push(
        "masked_row_softmax",
        finite_diff_check(|t, v| probe(t, t.masked_row_softmax(v, Some(&dense_mask))?, s), &scores, SUITE_STEP)?,
    );
    let x7 = Tensor::randn(3, 7, 1.0, &mut r);
    push(
        "spmm",
        finite_diff_check(|t, v| probe(t, t.spmm(v, g.laplacian().clone())?, s), &x7, SUITE_STEP)?,
    );
    let (q0, k0, v0) = (
        Tensor::randn(2, 7, 1.0, &mut r),
        Tensor::randn(2, 7, 1.0, &mut r),
        Tensor::randn(3, 7, 1.0, &mut r),
    );
    for which in 0..3 {
        let x = [&q0, &k0, &v0][which].clone();
        let err = finite_diff_check(
            |t, v| {
                let mut vars = [t.constant(q0.clone()), t.constant(k0.clone()), t.constant(v0.clone())];
                vars[which] = v;
                let inputs = AttentionInputs {
                    q: vars[0],
                    k: vars[1],
                    v: vars[2],
                };
                probe(t, t.sparse_attention(&inputs, mask.clone(), 0.7, None)?, s)
            },
            &x,
            SUITE_STEP,
        )?;
        push(["sparse_attention.q", "sparse_attention.k", "sparse_attention.v"][which], err);
    }
    let labels = Arc::new(vec![0, 2, 1, 1, 0, 2, 2]);
    let nodes = Arc::new(vec![0, 2, 3, 6]);
    let logits = Tensor::randn(3, 7, 1.0, &mut r);
    push(
        "cross_entropy",
        finite_diff_check(|t, v| t.cross_entropy(v, labels.clone(), nodes.clone()), &logits, SUITE_STEP)?,
    );
    let pairs = Arc::new(vec![(0, 1, 2.0), (2, 6, 0.5), (3, 4, 4.0), (5, 0, 1.0)]);
    push("spd_loss", finite_diff_check(|t, v| t.spd_loss(v, pairs.clone()), &x7, SUITE_STEP)?);

    let pe = PeConfig {
        layer_dims: vec![4, 4],
        order: 2,
        activation: Activation::Tanh,
        samples: 4,
        ..PeConfig::default()
    };
    let base = ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 8,
        d_ffn: 8,
        hops: 2,
        pe: Some(pe),
        head: TaskHead::Classify { num_classes: 3 },
        // relu is checked on its own above; a kink inside a model would
        // sit within a few steps of some probe
        hidden_activation: Activation::Tanh,
        ..ModelConfig::default()
    };
    let feats = Tensor::randn(3, 7, 1.0, &mut r);
    let ce = |t: &Tape, o: Var| t.cross_entropy(o, labels.clone(), nodes.clone());
    let variants = [
        ("model.sparse_gt_rpearl", ModelConfig { ..base.clone() }),
        (
            "model.sparse_gt_rpearl_expander",
            ModelConfig {
                expander_degree: Some(2),
                ..base.clone()
            },
        ),
        ("model.dense_gt", ModelConfig { mode: Mode::DenseGt, pe: None, ..base.clone() }),
        ("model.gnn", ModelConfig { mode: Mode::GnnBaseline, pe: None, ..base.clone() }),
    ];
    for (name, cfg) in variants {
        let model = Model::new(&cfg, 3, seed)?;
        push(name, model_check(&model, &g, &feats, seed, &ce)?);
    }
    // translation-invariant losses give exactly-zero bias gradients, whose
    // finite-difference noise no relative tolerance can absorb, so the
    // embedding model is checked under MSE
    let embed = Model::new(
        &ModelConfig {
            head: TaskHead::Embed { dim: 3 },
            final_norm: false,
            ..base
        },
        3,
        seed,
    )?;
    let target = Tensor::randn(3, 7, 1.0, &mut r);
    push(
        "model.sparse_gt_rpearl_mse",
        model_check(&embed, &g, &feats, seed, &|t, o| {
            let y = t.constant(target.clone());
            t.mse(o, y)
        })?,
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic() {
        let x = Tensor::randn(4, 3, 1.0, &mut rng::from_seed(5));
        let err = finite_diff_check(
            |t, v| {
                let y = t.hadamard(v, v)?;
                t.sum(y)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn non_finite_reports_index() {
        let x = Tensor::from_rows(&[[1.0, 800.0]]);
        let err = finite_diff_check(
            |t, v| {
                let c = t.constant(Tensor::from_rows(&[[1.0], [1.0]]));
                let y = t.matmul(v, c)?;
                let y = t.hadamard(y, y)?;
                let y = t.hadamard(y, y)?;
                let y = t.hadamard(y, y)?;
                let y = t.hadamard(y, y)?;
                let y = t.hadamard(y, y)?;
                let y = t.hadamard(y, y)?;
                let y = t.hadamard(y, y)?;
                t.sum(y)
            },
            &x,
            1e-6,
        );
        assert!(matches!(err, Err(Error::NonFinite { index: 0, .. })));
    }

    #[test]
    fn five_point_beats_three_point_on_a_cubic() {
        let x = Tensor::from_rows(&[[0.7, -1.3]]);
        let f = |t: &Tape, v: Var| {
            let y = t.hadamard(v, v)?;
            let y = t.hadamard(y, v)?;
            t.sum(y)
        };
        let three = finite_diff_check_with(f, &x, 1e-2, Stencil::ThreePoint).unwrap();
        let five = finite_diff_check_with(f, &x, 1e-2, Stencil::FivePoint).unwrap();
        assert!(three > 1e-5, "{three}");
        assert!(five < 1e-10, "{five}");
    }

    #[test]
    fn rejects_bad_step() {
        let x = Tensor::ones(1, 1);
        assert!(finite_diff_check(|t, v| t.sum(v), &x, 0.0).is_err());
    }

    #[test]
    fn suite_passes_at_several_points() {
        for seed in 0..3 {
            let rows = suite(seed).unwrap();
            assert!(rows.len() > 20);
            for r in rows {
                assert!(r.max_rel_error < 1e-4, "seed {seed} {}: {}", r.op, r.max_rel_error);
            }
        }
    }
}
