use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Result};
use crate::math;
use crate::tensor::Tensor;

/// A labelled node pair `(source, target, shortest-path distance)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub src: usize,
    pub dst: usize,
    pub spd: f64,
}

/// Mean cross-entropy over `mask` (all nodes when `None`).
pub fn cross_entropy(tape: &Tape, logits: Var, labels: &[usize], mask: Option<&[usize]>) -> Result<Var> {
    let (c, n) = tape.shape(logits);
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(contract(alloc::format!("label {bad} out of range for {c} classes")));
    }
    let nodes: Vec<usize> = match mask {
        Some(m) => m.to_vec(),
        None => (0..n).collect(),
    };
    tape.cross_entropy(logits, Arc::new(labels.to_vec()), Arc::new(nodes))
}

/// Mean of `(|e_i - e_j|_1 - spd)^2` over the pairs.
pub fn spd_metric_loss(tape: &Tape, embeddings: Var, pairs: &[Pair]) -> Result<Var> {
    if let Some(p) = pairs.iter().find(|p| !(p.spd >= 0.0)) {
        return Err(contract(alloc::format!("negative or NaN spd {} for pair ({}, {})", p.spd, p.src, p.dst)));
    }
    let raw = pairs.iter().map(|p| (p.src, p.dst, p.spd)).collect();
    tape.spd_loss(embeddings, Arc::new(raw))
}

/// Fraction of `nodes` whose argmax logit equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return f64::NAN;
    }
    let hits = nodes.iter().filter(|&&i| argmax_col(logits, i) == labels[i]).count();
    hits as f64 / nodes.len() as f64
}

pub fn argmax_col(t: &Tensor, col: usize) -> usize {
    let mut best = 0;
    for r in 1..t.rows() {
        if t.get(r, col) > t.get(best, col) {
            best = r;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Mean of `|pred - spd| / spd` over pairs with positive spd.
    pub relative_error: f64,
}

/// Errors of `predict(i, j)` against the pair labels.
pub fn spd_metrics(pairs: &[Pair], mut predict: impl FnMut(usize, usize) -> f64) -> SpdMetrics {
    let (mut abs, mut sq, mut rel, mut n_rel) = (0.0, 0.0, 0.0, 0usize);
    for p in pairs {
        let e = predict(p.src, p.dst) - p.spd;
        abs += math::abs(e);
        sq += e * e;
        if p.spd > 0.0 {
            rel += math::abs(e) / p.spd;
            n_rel += 1;
        }
    }
    let n = pairs.len().max(1) as f64;
    SpdMetrics {
        mae: abs / n,
        rmse: math::sqrt(sq / n),
        relative_error: if n_rel > 0 { rel / n_rel as f64 } else { 0.0 },
    }
}

/// `l1` distance between embedding columns.
pub fn l1_distance(emb: &Tensor, i: usize, j: usize) -> f64 {
    (0..emb.rows()).map(|r| math::abs(emb.get(r, i) - emb.get(r, j))).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;

    #[test]
    fn uniform_logits_give_log_c() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(5, 3));
        let l = cross_entropy(&tape, z, &[0, 4, 2], None).unwrap();
        assert!((tape.value(l).get(0, 0) - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_margin_gives_zero_loss() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::from_rows(&[[800.0, 0.0], [0.0, 800.0]]));
        let l = cross_entropy(&tape, z, &[0, 1], None).unwrap();
        assert!(tape.value(l).get(0, 0) < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_scalar_loop() {
        let mut r = rng::from_seed(17);
        let z = Tensor::randn(4, 9, 2.0, &mut r);
        let labels = [0, 3, 1, 2, 2, 0, 1, 3, 0];
        let mask = [1, 4, 5, 8];
        let mut want = 0.0;
        for &i in &mask {
            let mx = (0..4).map(|c| z.get(c, i)).fold(f64::MIN, f64::max);
            let lse = mx + (0..4).map(|c| (z.get(c, i) - mx).exp()).sum::<f64>().ln();
            want += lse - z.get(labels[i], i);
        }
        want /= mask.len() as f64;
        let tape = Tape::new();
        let v = tape.leaf(z);
        let l = cross_entropy(&tape, v, &labels, Some(&mask)).unwrap();
        assert!((tape.value(l).get(0, 0) - want).abs() < 1e-12);
        assert!(cross_entropy(&tape, v, &labels, Some(&[])).is_err());
        assert!(cross_entropy(&tape, v, &[9; 9], None).is_err());
    }

    #[test]
    fn spd_loss_examples() {
        let tape = Tape::new();
        let e = tape.leaf(Tensor::from_rows(&[[0.0, 3.0], [0.0, -4.0]]));
        let p = [Pair { src: 0, dst: 1, spd: 7.0 }];
        assert_eq!(tape.value(spd_metric_loss(&tape, e, &p).unwrap()).get(0, 0), 0.0);
        let same = tape.leaf(Tensor::ones(2, 2));
        let p0 = [Pair { src: 0, dst: 1, spd: 0.0 }];
        assert_eq!(tape.value(spd_metric_loss(&tape, same, &p0).unwrap()).get(0, 0), 0.0);
        let bad = [Pair { src: 0, dst: 5, spd: 1.0 }];
        assert!(spd_metric_loss(&tape, e, &bad).is_err());
        let neg = [Pair { src: 0, dst: 1, spd: -1.0 }];
        assert!(spd_metric_loss(&tape, e, &neg).is_err());
    }

    #[test]
    fn spd_loss_matches_scalar_loop_and_ignores_translation() {
        let mut r = rng::from_seed(2);
        let e = Tensor::randn(3, 6, 1.0, &mut r);
        let pairs: Vec<Pair> = vec![(0, 1, 2.0), (2, 5, 0.5), (3, 3, 0.0), (4, 0, 1.2)]
            .into_iter()
            .map(|(src, dst, spd)| Pair { src, dst, spd })
            .collect();
        let want = pairs.iter().map(|p| (l1_distance(&e, p.src, p.dst) - p.spd).powi(2)).sum::<f64>() / 4.0;
        let shifted = Tensor::from_fn(3, 6, |rr, c| e.get(rr, c) + [0.3, -7.0, 2.5][rr]);
        let tape = Tape::new();
        let a = spd_metric_loss(&tape, tape.leaf(e), &pairs).unwrap();
        let b = spd_metric_loss(&tape, tape.leaf(shifted), &pairs).unwrap();
        assert!((tape.value(a).get(0, 0) - want).abs() < 1e-12);
        assert!((tape.value(a).get(0, 0) - tape.value(b).get(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn accuracy_and_metrics() {
        let z = Tensor::from_rows(&[[1.0, 0.0, 0.2], [0.0, 1.0, 0.1]]);
        assert_eq!(accuracy(&z, &[0, 1, 1], &[0, 1, 2]), 2.0 / 3.0);
        let pairs = [Pair { src: 0, dst: 1, spd: 2.0 }, Pair { src: 1, dst: 2, spd: 4.0 }];
        let m = spd_metrics(&pairs, |_, _| 0.0);
        assert_eq!(m.mae, 3.0);
        assert_eq!(m.relative_error, 1.0);
        assert!((m.rmse - 10f64.sqrt()).abs() < 1e-15);
    }
}
