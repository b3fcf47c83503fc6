//! RPEARL positional encodings: random node IDs pushed through a
//! polynomial-filter GNN and averaged over realizations.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Var};
use crate::error::{contract, Error, Result};
use crate::graph::{CsrMatrix, Graph};
use crate::math;
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// How the Laplacian is rescaled before filtering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum LaplacianScaling {
    None,
    /// Divide by the mean weighted degree.
    #[default]
    MeanDegree,
    /// Multiply by a fixed factor.
    Fixed(f64),
}

impl LaplacianScaling {
    pub fn apply(self, g: &Graph) -> Arc<CsrMatrix> {
        match self {
            LaplacianScaling::None => g.laplacian().clone(),
            LaplacianScaling::MeanDegree => {
                let d = g.mean_weighted_degree();
                if d > 0.0 {
                    Arc::new(g.laplacian().scaled(1.0 / d))
                } else {
                    g.laplacian().clone()
                }
            }
            LaplacianScaling::Fixed(f) => Arc::new(g.laplacian().scaled(f)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeConfig {
    /// Output width of each GNN layer; the last entry is the encoding width.
    pub layer_dims: Vec<usize>,
    /// Filter order K (taps `H_0 .. H_{K-1}`).
    pub order: usize,
    pub activation: Activation,
    /// Number of random realizations M.
    pub samples: usize,
    pub scaling: LaplacianScaling,
}

impl Default for PeConfig {
    fn default() -> Self {
        Self {
            layer_dims: alloc::vec![16, 16],
            order: 3,
            activation: Activation::Relu,
            samples: 16,
            scaling: LaplacianScaling::MeanDegree,
        }
    }
}

impl PeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) {
            return Err(Error::Config("pe.layer_dims must be nonempty and positive".into()));
        }
        if self.order == 0 {
            return Err(Error::Config("pe.order must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("pe.samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_dims.last().unwrap_or(&0)
    }
}

/// Filter taps `H_0 .. H_{K-1}` of one layer, all `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub taps: Vec<Tensor>,
}

impl FilterBank {
    pub fn new(taps: Vec<Tensor>) -> Result<Self> {
        let Some(first) = taps.first() else {
            return Err(contract("filter bank needs at least one tap"));
        };
        if let Some(bad) = taps.iter().find(|t| t.shape() != first.shape()) {
            return Err(Error::Shape {
                op: "FilterBank::new",
                lhs: first.shape(),
                rhs: bad.shape(),
            });
        }
        Ok(Self { taps })
    }

    pub fn order(&self) -> usize {
        self.taps.len()
    }

    pub fn in_dim(&self) -> usize {
        self.taps[0].cols()
    }

    pub fn out_dim(&self) -> usize {
        self.taps[0].rows()
    }
}

/// `sum_k H_k z S^k` recorded on the tape, by repeated sparse
/// right-multiplication.
pub fn graph_conv_var(tape: &Tape, taps: &[Var], s: &Arc<CsrMatrix>, z: Var) -> Result<Var> {
    let (_, n) = tape.shape(z);
    if n != s.n() {
        return Err(contract(format!("signal has {n} columns, graph has {} nodes", s.n())));
    }
    let mut out = tape.matmul(taps[0], z)?;
    let mut power = z;
    for &h in &taps[1..] {
        power = tape.spmm(power, s.clone())?;
        let term = tape.matmul(h, power)?;
        out = tape.add(out, term)?;
    }
    Ok(out)
}

/// One polynomial graph convolution `sum_k H_k Z L^k` on the graph
/// Laplacian.
pub fn graph_conv(bank: &FilterBank, g: &Graph, z: &Tensor) -> Result<Tensor> {
    graph_conv_with(bank, g.laplacian(), z)
}

pub fn graph_conv_with(bank: &FilterBank, s: &Arc<CsrMatrix>, z: &Tensor) -> Result<Tensor> {
    if z.rows() != bank.in_dim() {
        return Err(contract(format!(
            "signal has {} rows, filter bank expects {}",
            z.rows(),
            bank.in_dim()
        )));
    }
    let tape = Tape::new();
    let taps: Vec<Var> = bank.taps.iter().map(|t| tape.constant(t.clone())).collect();
    let zv = tape.constant(z.clone());
    let out = graph_conv_var(&tape, &taps, s, zv)?;
    let v = tape.value(out).clone();
    Ok(v)
}

/// Cascade of filter banks, each followed by `activation`.
pub fn gnn_forward(
    banks: &[FilterBank],
    activation: Activation,
    s: &Arc<CsrMatrix>,
    z: &Tensor,
) -> Result<Tensor> {
    let mut x = z.clone();
    for bank in banks {
        x = graph_conv_with(bank, s, &x)?.map(|v| activation.apply(v));
    }
    Ok(x)
}

/// The `m` random node-ID rows used for a graph with `n` nodes, keyed by
/// `(seed, n)`.
pub fn draw_ids(seed: u64, n: usize, m: usize) -> Vec<Tensor> {
    let mut r: Rng = rng::stream(seed, rng::PE, n as u64);
    (0..m).map(|_| Tensor::randn(1, n, 1.0, &mut r)).collect()
}

/// Trainable RPEARL encoder whose taps live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Rpearl {
    pub cfg: PeConfig,
    layers: Vec<Vec<ParamId>>,
}

impl Rpearl {
    /// Registers the filter taps under `prefix`, initialized with variance
    /// `1 / (in_dim * K)`.
    pub fn init(cfg: &PeConfig, store: &mut ParamStore, prefix: &str, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::new();
        let mut in_dim = 1;
        for (l, &out) in cfg.layer_dims.iter().enumerate() {
            let std = 1.0 / math::sqrt((in_dim * cfg.order) as f64);
            let taps = (0..cfg.order)
                .map(|k| {
                    let name: String = format!("{prefix}.layer{l}.h{k}");
                    store.add(name, Tensor::randn(out, in_dim, std, rng))
                })
                .collect();
            layers.push(taps);
            in_dim = out;
        }
        Ok(Self {
            cfg: cfg.clone(),
            layers,
        })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flatten().copied()
    }

    /// Banks with the current weights from `store`.
    pub fn banks(&self, store: &ParamStore) -> Vec<FilterBank> {
        self.layers
            .iter()
            .map(|taps| FilterBank {
                taps: taps.iter().map(|&id| store.get(id).clone()).collect(),
            })
            .collect()
    }

    /// Averaged encoding, `out_dim x N`, recorded on the tape.
    pub fn forward(&self, tape: &Tape, bound: &Bound, s: &Arc<CsrMatrix>, ids: &[Tensor]) -> Result<Var> {
        if ids.is_empty() {
            return Err(contract("rpearl needs at least one random realization"));
        }
        let mut total: Option<Var> = None;
        for z in ids {
            let mut x = tape.constant(z.clone());
            for taps in &self.layers {
                let vars: Vec<Var> = taps.iter().map(|&id| bound.var(id)).collect();
                x = graph_conv_var(tape, &vars, s, x)?;
                x = tape.activation(x, self.cfg.activation)?;
            }
            total = Some(match total {
                None => x,
                Some(t) => tape.add(t, x)?,
            });
        }
        tape.scale(total.expect("nonempty"), 1.0 / ids.len() as f64)
    }
}

/// Node-major RPEARL encoding `N x D` of `g` with fixed banks.
pub fn rpearl(
    banks: &[FilterBank],
    activation: Activation,
    samples: usize,
    seed: u64,
    scaling: LaplacianScaling,
    g: &Graph,
) -> Result<Tensor> {
    let ids = draw_ids(seed, g.n(), samples);
    rpearl_with_ids(banks, activation, &scaling.apply(g), &ids)
}

/// As [`rpearl`] with explicit realizations `z^(m)` (each `1 x N`).
pub fn rpearl_with_ids(
    banks: &[FilterBank],
    activation: Activation,
    s: &Arc<CsrMatrix>,
    ids: &[Tensor],
) -> Result<Tensor> {
    if ids.is_empty() {
        return Err(contract("rpearl needs at least one random realization"));
    }
    let mut acc: Option<Tensor> = None;
    for z in ids {
        let p = gnn_forward(banks, activation, s, z)?;
        match &mut acc {
            None => acc = Some(p),
            Some(a) => a.add_assign(&p)?,
        }
    }
    let mean = acc.expect("nonempty").scale(1.0 / ids.len() as f64);
    Ok(mean.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::from_undirected_edges;
    use alloc::string::ToString;
    use alloc::vec;

    fn path3() -> Graph {
        from_undirected_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    fn random_graph(n: usize, seed: u64) -> Graph {
        use rand::Rng as _;
        let mut r = rng::from_seed(seed);
        let mut e = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if r.gen::<f64>() < 0.35 {
                    e.push((i, j, r.gen_range(0.2..1.5)));
                }
            }
        }
        from_undirected_edges(n, &e).unwrap()
    }

    fn random_bank(out: usize, inp: usize, k: usize, seed: u64) -> FilterBank {
        let mut r = rng::from_seed(seed);
        FilterBank::new((0..k).map(|_| Tensor::randn(out, inp, 0.5, &mut r)).collect()).unwrap()
    }

    #[test]
    fn order_one_ignores_graph() {
        let bank = random_bank(2, 3, 1, 1);
        let z = Tensor::randn(3, 3, 1.0, &mut rng::from_seed(2));
        let out = graph_conv(&bank, &path3(), &z).unwrap();
        assert_eq!(out, bank.taps[0].matmul(&z).unwrap());
    }

    #[test]
    fn shift_tap_gives_laplacian() {
        let bank = FilterBank::new(vec![Tensor::zeros(3, 3), Tensor::identity(3)]).unwrap();
        let g = path3();
        let out = graph_conv(&bank, &g, &Tensor::identity(3)).unwrap();
        assert_eq!(out, g.laplacian().to_dense());
    }

    #[test]
    fn matches_dense_powers() {
        let g = random_graph(8, 3);
        let bank = random_bank(2, 3, 4, 4);
        let z = Tensor::randn(3, 8, 1.0, &mut rng::from_seed(5));
        let l = g.laplacian().to_dense();
        let mut want = Tensor::zeros(2, 8);
        let mut lk = Tensor::identity(8);
        for h in &bank.taps {
            want.add_assign(&h.matmul(&z).unwrap().matmul(&lk).unwrap()).unwrap();
            lk = lk.matmul(&l).unwrap();
        }
        let got = graph_conv(&bank, &g, &z).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-10);
    }

    #[test]
    fn linear_in_signal() {
        let g = random_graph(8, 6);
        let bank = random_bank(2, 3, 3, 7);
        let mut r = rng::from_seed(8);
        let z1 = Tensor::randn(3, 8, 1.0, &mut r);
        let z2 = Tensor::randn(3, 8, 1.0, &mut r);
        let mut mix = z1.scale(1.7);
        mix.axpy(-0.4, &z2).unwrap();
        let mut want = graph_conv(&bank, &g, &z1).unwrap().scale(1.7);
        want.axpy(-0.4, &graph_conv(&bank, &g, &z2).unwrap()).unwrap();
        assert!(graph_conv(&bank, &g, &mix).unwrap().max_abs_diff(&want) < 1e-10);
    }

    #[test]
    fn gnn_relu_cases() {
        let g = path3();
        let s = g.laplacian().clone();
        let bank = FilterBank::new(vec![Tensor::identity(1).scale(-1.0)]).unwrap();
        let z = Tensor::from_rows(&[[1.0, 2.0, 3.0]]);
        assert_eq!(gnn_forward(&[bank], Activation::Relu, &s, &z).unwrap(), Tensor::zeros(1, 3));
        let bank = FilterBank::new(vec![Tensor::identity(1), Tensor::identity(1).scale(0.1)]).unwrap();
        let z = Tensor::from_rows(&[[1.0, 2.0, 2.5]]);
        let conv = graph_conv(&bank, &g, &z).unwrap();
        assert!(conv.data().iter().all(|&v| v >= 0.0));
        assert_eq!(gnn_forward(&[bank], Activation::Relu, &s, &z).unwrap(), conv);
    }

    #[test]
    fn zero_banks_give_zero_encoding() {
        let g = random_graph(6, 9);
        let banks = vec![
            FilterBank::new(vec![Tensor::zeros(4, 1); 2]).unwrap(),
            FilterBank::new(vec![Tensor::zeros(3, 4); 2]).unwrap(),
        ];
        let p = rpearl(&banks, Activation::Relu, 8, 1, LaplacianScaling::None, &g).unwrap();
        assert_eq!(p, Tensor::zeros(6, 3));
    }

    #[test]
    fn single_sample_reproduces_seeded_ids() {
        let g = random_graph(7, 10);
        let h0 = Tensor::randn(5, 1, 1.0, &mut rng::from_seed(11));
        let bank = FilterBank::new(vec![h0.clone()]).unwrap();
        let p = rpearl(&[bank], Activation::Tanh, 1, 42, LaplacianScaling::None, &g).unwrap();
        let z = &draw_ids(42, 7, 1)[0];
        let want = h0.matmul(z).unwrap().map(libm::tanh).transpose();
        assert_eq!(p, want);
    }

    #[test]
    fn conditional_permutation_equivariance() {
        let g = random_graph(9, 12);
        let banks = vec![random_bank(4, 1, 3, 13), random_bank(3, 4, 2, 14)];
        let ids = draw_ids(5, 9, 4);
        let perm = [3, 0, 8, 1, 7, 2, 6, 4, 5];
        let gp = g.permute(&perm).unwrap();
        let pids: Vec<Tensor> = ids
            .iter()
            .map(|z| {
                let mut p = Tensor::zeros(1, 9);
                for i in 0..9 {
                    p.set(0, perm[i], z.get(0, i));
                }
                p
            })
            .collect();
        let a = rpearl_with_ids(&banks, Activation::Relu, g.laplacian(), &ids).unwrap();
        let b = rpearl_with_ids(&banks, Activation::Relu, gp.laplacian(), &pids).unwrap();
        for i in 0..9 {
            for d in 0..3 {
                assert!((a.get(i, d) - b.get(perm[i], d)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn trainable_encoder_gradients() {
        let g = random_graph(6, 15);
        let cfg = PeConfig {
            layer_dims: vec![3, 2],
            order: 3,
            activation: Activation::Tanh,
            samples: 3,
            scaling: LaplacianScaling::MeanDegree,
        };
        let mut store = ParamStore::new();
        let enc = Rpearl::init(&cfg, &mut store, "pe", &mut rng::from_seed(16)).unwrap();
        let s = cfg.scaling.apply(&g);
        let ids = draw_ids(1, 6, 3);
        let target = Tensor::randn(2, 6, 1.0, &mut rng::from_seed(17));
        for id in enc.param_ids().collect::<Vec<_>>() {
            let x = store.get(id).clone();
            let name = store.name(id).to_string();
            let (enc, store, s, ids, target) = (enc.clone(), store.clone(), s.clone(), ids.clone(), target.clone());
            let err = crate::gradcheck::finite_diff_check(
                move |t, v| {
                    let mut b = store.bind_frozen(t);
                    b = b.with(id, v);
                    let p = enc.forward(t, &b, &s, &ids)?;
                    let y = t.constant(target.clone());
                    t.mse(p, y)
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
        // agrees with the fixed-bank path
        let fixed = rpearl_with_ids(&enc.banks(&store), Activation::Tanh, &s, &ids).unwrap();
        let t = Tape::new();
        let b = store.bind_frozen(&t);
        let p = enc.forward(&t, &b, &s, &ids).unwrap();
        assert!(t.value(p).transpose().max_abs_diff(&fixed) < 1e-14);
    }
}
