//! Whole-model assembly: input projection, optional RPEARL encoding, a
//! stack of transformer (or baseline) layers and a task head.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attention::{
    clamp_spectral_norm, dropout_hidden, ffn, gt_layer_var, score_scale, Dropout, FfnVars, LayerVars,
    Support, LAYER_NORM_EPS,
};
use crate::autodiff::{Activation, AttentionInputs, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{k_hop_mask_with_extra, random_expander_edges, CsrMatrix, EdgeSet, Graph};
use crate::math;
use crate::params::{Bound, ParamId, ParamStore};
use crate::pe::{draw_ids, graph_conv_var, LaplacianScaling, PeConfig, Rpearl};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    DenseGt,
    #[default]
    SparseGt,
    GnnBaseline,
    MlpBaseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskHead {
    Classify { num_classes: usize },
    Embed { dim: usize },
}

impl Default for TaskHead {
    fn default() -> Self {
        TaskHead::Classify { num_classes: 2 }
    }
}

impl TaskHead {
    pub fn out_dim(self) -> usize {
        match self {
            TaskHead::Classify { num_classes } => num_classes,
            TaskHead::Embed { dim } => dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub mode: Mode,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Defaults to `d_model / heads`.
    pub d_head: Option<usize>,
    /// Hidden width of the feedforward block; 0 disables it.
    pub d_ffn: usize,
    /// Hop radius of the attention mask in sparse mode.
    pub hops: usize,
    /// RPEARL encoder. Text configs write `pe = false` to drop it, since a
    /// missing table falls back to the default encoder.
    #[serde(with = "pe_toggle")]
    pub pe: Option<PeConfig>,
    /// Degree of random expander edges unioned into the mask.
    pub expander_degree: Option<usize>,
    pub dropout: f64,
    pub attention_dropout: f64,
    pub head: TaskHead,
    pub unscaled_scores: bool,
    /// Spectral-norm budget for `Q`, `K`, `V`, enforced after each step.
    pub op_norm_budget: Option<f64>,
    /// Filter order of the convolutional baseline.
    pub gnn_order: usize,
    /// Laplacian rescaling for the convolutional baseline.
    pub gnn_scaling: LaplacianScaling,
    /// Layer norm in front of the task head. Metric embeddings train
    /// better without it, since it puts every node on the same sphere.
    pub final_norm: bool,
    /// Nonlinearity of the feedforward blocks and the convolution layers.
    pub hidden_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::SparseGt,
            layers: 2,
            heads: 2,
            d_model: 32,
            d_head: None,
            d_ffn: 64,
            hops: 2,
            pe: Some(PeConfig::default()),
            expander_degree: None,
            dropout: 0.0,
            attention_dropout: 0.0,
            head: TaskHead::default(),
            unscaled_scores: false,
            op_norm_budget: None,
            gnn_order: 3,
            gnn_scaling: LaplacianScaling::MeanDegree,
            final_norm: true,
            hidden_activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_head.unwrap_or(self.d_model / self.heads.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 {
            return bad("model.d_model must be positive".into());
        }
        if matches!(self.mode, Mode::DenseGt | Mode::SparseGt) && (self.heads == 0 || self.d_head() == 0) {
            return bad("model.heads and model.d_head must be positive".into());
        }
        if self.mode == Mode::SparseGt && self.hops == 0 {
            return bad("model.hops must be at least 1 in sparse_gt mode".into());
        }
        if self.mode == Mode::GnnBaseline && self.gnn_order == 0 {
            return bad("model.gnn_order must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.attention_dropout) {
            return bad("dropout rates must lie in [0, 1)".into());
        }
        if self.head.out_dim() == 0 {
            return bad("task head width must be positive".into());
        }
        if let Some(c) = self.op_norm_budget {
            if !(c > 0.0) {
                return bad(format!("model.op_norm_budget must be positive, got {c}"));
            }
        }
        if let Some(pe) = &self.pe {
            pe.validate()?;
        }
        Ok(())
    }
}

mod pe_toggle {
    use super::PeConfig;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Flag(bool),
        Table(PeConfig),
    }

    pub fn serialize<S: Serializer>(pe: &Option<PeConfig>, s: S) -> Result<S::Ok, S::Error> {
        match pe {
            Some(p) => p.serialize(s),
            None => s.serialize_bool(false),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<PeConfig>, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Flag(false) => None,
            Repr::Flag(true) => Some(PeConfig::default()),
            Repr::Table(p) => Some(p),
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct FfnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
enum LayerIds {
    Attention {
        heads: Vec<[ParamId; 3]>,
        w_o: ParamId,
        ffn: Option<FfnIds>,
    },
    Conv {
        taps: Vec<ParamId>,
        bias: ParamId,
        ffn: Option<FfnIds>,
    },
    Mlp {
        ffn: FfnIds,
    },
}

/// Graph-dependent inputs of a forward pass, computed once per graph.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub n: usize,
    pub pe_operator: Option<Arc<CsrMatrix>>,
    pub pe_ids: Vec<Tensor>,
    pub conv_operator: Option<Arc<CsrMatrix>>,
    pub support: Option<Support>,
}

/// A model: configuration, weights and the layout of its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub in_dim: usize,
    pub store: ParamStore,
    w_in: ParamId,
    b_in: ParamId,
    pe: Option<Rpearl>,
    pe_proj: Option<ParamId>,
    layers: Vec<LayerIds>,
    w_out: ParamId,
    b_out: ParamId,
}

fn add_ffn(store: &mut ParamStore, prefix: &str, d: usize, h: usize, rng: &mut Rng) -> FfnIds {
    FfnIds {
        w1: store.add(format!("{prefix}.ffn.w1"), Tensor::randn(h, d, 1.0 / math::sqrt(d as f64), rng)),
        b1: store.add(format!("{prefix}.ffn.b1"), Tensor::zeros(h, 1)),
        w2: store.add(format!("{prefix}.ffn.w2"), Tensor::randn(d, h, 1.0 / math::sqrt(h as f64), rng)),
        b2: store.add(format!("{prefix}.ffn.b2"), Tensor::zeros(d, 1)),
    }
}

impl Model {
    /// Fresh model for `in_dim` input features, weights drawn from the
    /// `init` stream of `seed`.
    pub fn new(cfg: &ModelConfig, in_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, rng::INIT, 0);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let w_in = store.add("input.w", Tensor::randn(d, in_dim, 1.0 / math::sqrt(in_dim.max(1) as f64), &mut rng));
        let b_in = store.add("input.b", Tensor::zeros(d, 1));
        let (pe, pe_proj) = match &cfg.pe {
            Some(pc) => {
                let enc = Rpearl::init(pc, &mut store, "pe", &mut rng)?;
                let proj = (pc.out_dim() != d).then(|| {
                    store.add(
                        "pe.proj",
                        Tensor::randn(d, pc.out_dim(), 1.0 / math::sqrt(pc.out_dim() as f64), &mut rng),
                    )
                });
                (Some(enc), proj)
            }
            None => (None, None),
        };
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let prefix = format!("layer{l}");
            let ffn_ids = |store: &mut ParamStore, rng: &mut Rng| {
                (cfg.d_ffn > 0).then(|| add_ffn(store, &prefix, d, cfg.d_ffn, rng))
            };
            let layer = match cfg.mode {
                Mode::DenseGt | Mode::SparseGt => {
                    let dh = cfg.d_head();
                    let s = 1.0 / math::sqrt(d as f64);
                    let heads = (0..cfg.heads)
                        .map(|h| {
                            [
                                store.add(format!("{prefix}.head{h}.q"), Tensor::randn(dh, d, s, &mut rng)),
                                store.add(format!("{prefix}.head{h}.k"), Tensor::randn(dh, d, s, &mut rng)),
                                store.add(format!("{prefix}.head{h}.v"), Tensor::randn(dh, d, s, &mut rng)),
                            ]
                        })
                        .collect();
                    let hw = cfg.heads * dh;
                    let w_o = store.add(
                        format!("{prefix}.attn.out"),
                        Tensor::randn(d, hw, 1.0 / math::sqrt(hw as f64), &mut rng),
                    );
                    let ffn = ffn_ids(&mut store, &mut rng);
                    LayerIds::Attention { heads, w_o, ffn }
                }
                Mode::GnnBaseline => {
                    let s = 1.0 / math::sqrt((d * cfg.gnn_order) as f64);
                    let taps = (0..cfg.gnn_order)
                        .map(|k| store.add(format!("{prefix}.conv.h{k}"), Tensor::randn(d, d, s, &mut rng)))
                        .collect();
                    let bias = store.add(format!("{prefix}.conv.b"), Tensor::zeros(d, 1));
                    let ffn = ffn_ids(&mut store, &mut rng);
                    LayerIds::Conv { taps, bias, ffn }
                }
                Mode::MlpBaseline => LayerIds::Mlp {
                    ffn: add_ffn(&mut store, &prefix, d, cfg.d_ffn.max(d), &mut rng),
                },
            };
            layers.push(layer);
        }
        let out = cfg.head.out_dim();
        // embedding heads start with l1 distances of order one
        let head_std = match cfg.head {
            TaskHead::Classify { .. } => 1.0 / math::sqrt(d as f64),
            TaskHead::Embed { dim } => 1.0 / (math::sqrt(d as f64) * dim as f64),
        };
        let w_out = store.add("head.w", Tensor::randn(out, d, head_std, &mut rng));
        let b_out = store.add("head.b", Tensor::zeros(out, 1));
        Ok(Self {
            cfg: cfg.clone(),
            in_dim,
            store,
            w_in,
            b_in,
            pe,
            pe_proj,
            layers,
            w_out,
            b_out,
        })
    }

    /// Graph-dependent inputs with random node IDs keyed by `(seed, n)`
    /// and expander edges drawn from the `sampling` stream.
    pub fn prepare(&self, g: &Graph, seed: u64) -> Result<PreparedGraph> {
        let extra = match self.cfg.expander_degree {
            Some(deg) if self.cfg.mode == Mode::SparseGt => Some(expander_for(g.n(), deg, seed)?),
            _ => None,
        };
        let ids = self
            .cfg
            .pe
            .as_ref()
            .map(|p| draw_ids(seed, g.n(), p.samples))
            .unwrap_or_default();
        self.prepare_with(g, ids, extra.as_ref())
    }

    /// As [`Model::prepare`] with explicit node IDs and extra edges.
    pub fn prepare_with(&self, g: &Graph, pe_ids: Vec<Tensor>, extra: Option<&EdgeSet>) -> Result<PreparedGraph> {
        let n = g.n();
        let pe_operator = self.cfg.pe.as_ref().map(|p| p.scaling.apply(g));
        if let Some(pc) = &self.cfg.pe {
            if pe_ids.len() != pc.samples || pe_ids.iter().any(|z| z.shape() != (1, n)) {
                return Err(Error::Config(format!(
                    "expected {} node-ID rows of length {n}",
                    pc.samples
                )));
            }
        }
        let conv_operator = (self.cfg.mode == Mode::GnnBaseline).then(|| self.cfg.gnn_scaling.apply(g));
        let support = match self.cfg.mode {
            Mode::DenseGt => Some(Support::Dense(None)),
            Mode::SparseGt => Some(Support::Sparse(Arc::new(k_hop_mask_with_extra(g, self.cfg.hops, extra)?))),
            _ => None,
        };
        Ok(PreparedGraph {
            n,
            pe_operator,
            pe_ids,
            conv_operator,
            support,
        })
    }

    pub fn bind(&self, tape: &Tape) -> Bound {
        self.store.bind(tape)
    }

    /// Output `out_dim x N` (logits or embeddings) for `features`
    /// (`in_dim x N`).
    pub fn forward(
        &self,
        tape: &Tape,
        bound: &Bound,
        prep: &PreparedGraph,
        features: &Tensor,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        if features.rows() != self.in_dim || features.cols() != prep.n {
            return Err(Error::Shape {
                op: "model_forward",
                lhs: features.shape(),
                rhs: (self.in_dim, prep.n),
            });
        }
        let p = |id: ParamId| bound.var(id);
        let xv = tape.constant(features.clone());
        let mut x = tape.matmul(p(self.w_in), xv)?;
        x = tape.add_bias(x, p(self.b_in))?;
        if let Some(enc) = &self.pe {
            let op = prep
                .pe_operator
                .as_ref()
                .ok_or_else(|| Error::Config("prepared graph lacks the PE operator".into()))?;
            let mut pv = enc.forward(tape, bound, op, &prep.pe_ids)?;
            if let Some(proj) = self.pe_proj {
                pv = tape.matmul(p(proj), pv)?;
            }
            x = tape.add(x, pv)?;
        }
        x = dropout_hidden(tape, x, &mut dropout)?;
        let scale = score_scale(self.cfg.d_head(), self.cfg.unscaled_scores);
        let ffn_vars = |f: &FfnIds| FfnVars {
            w1: p(f.w1),
            b1: p(f.b1),
            w2: p(f.w2),
            b2: p(f.b2),
            activation: self.cfg.hidden_activation,
        };
        for layer in &self.layers {
            x = match layer {
                LayerIds::Attention { heads, w_o, ffn } => {
                    let support = prep
                        .support
                        .as_ref()
                        .ok_or_else(|| Error::Config("attention mode needs a mask in the prepared graph".into()))?;
                    let lv = LayerVars {
                        heads: heads
                            .iter()
                            .map(|[q, k, v]| AttentionInputs {
                                q: p(*q),
                                k: p(*k),
                                v: p(*v),
                            })
                            .collect(),
                        w_o: p(*w_o),
                        ffn: ffn.as_ref().map(ffn_vars),
                    };
                    gt_layer_var(tape, &lv, x, support, scale, &mut dropout)?
                }
                LayerIds::Conv { taps, bias, ffn: f } => {
                    let op = prep
                        .conv_operator
                        .as_ref()
                        .ok_or_else(|| Error::Config("prepared graph lacks the convolution operator".into()))?;
                    let h = tape.layer_norm_cols(x, LAYER_NORM_EPS)?;
                    let tv: Vec<Var> = taps.iter().map(|&t| p(t)).collect();
                    let h = graph_conv_var(tape, &tv, op, h)?;
                    let h = tape.add_bias(h, p(*bias))?;
                    let h = tape.activation(h, self.cfg.hidden_activation)?;
                    let h = dropout_hidden(tape, h, &mut dropout)?;
                    let mut y = tape.add(x, h)?;
                    if let Some(f) = f {
                        let n2 = tape.layer_norm_cols(y, LAYER_NORM_EPS)?;
                        let h = ffn(tape, &ffn_vars(f), n2, &mut dropout)?;
                        y = tape.add(y, h)?;
                    }
                    y
                }
                LayerIds::Mlp { ffn: f } => {
                    let n1 = tape.layer_norm_cols(x, LAYER_NORM_EPS)?;
                    let h = ffn(tape, &ffn_vars(f), n1, &mut dropout)?;
                    let h = dropout_hidden(tape, h, &mut dropout)?;
                    tape.add(x, h)?
                }
            };
        }
        let x = if self.cfg.final_norm {
            tape.layer_norm_cols(x, LAYER_NORM_EPS)?
        } else {
            x
        };
        let out = tape.matmul(p(self.w_out), x)?;
        tape.add_bias(out, p(self.b_out))
    }

    /// Inference without dropout or gradients.
    pub fn predict(&self, prep: &PreparedGraph, features: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let b = self.store.bind_frozen(&tape);
        let out = self.forward(&tape, &b, prep, features, None)?;
        let v = tape.value(out).clone();
        Ok(v)
    }

    /// Parameter ids of every `Q`, `K`, `V` projection.
    pub fn attention_projection_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let LayerIds::Attention { heads, .. } = l {
                for h in heads {
                    out.extend_from_slice(h);
                }
            }
        }
        out
    }

    /// Clamps `Q`, `K`, `V` to the configured spectral budget.
    pub fn enforce_budget(&mut self) {
        if let Some(c) = self.cfg.op_norm_budget {
            for id in self.attention_projection_ids() {
                clamp_spectral_norm(self.store.get_mut(id), c);
            }
        }
    }

    /// Largest spectral norm among the attention projections.
    pub fn max_projection_norm(&self) -> f64 {
        self.attention_projection_ids()
            .into_iter()
            .map(|id| self.store.get(id).spectral_norm())
            .fold(0.0, f64::max)
    }
}

/// Random `degree`-regular extra edges for an `n`-node graph. When
/// `n * degree` is odd the last node is left out.
pub fn expander_for(n: usize, degree: usize, seed: u64) -> Result<EdgeSet> {
    let m = if (n * degree) % 2 == 1 { n - 1 } else { n };
    random_expander_edges(m, degree, rng::derive_seed(seed, rng::SAMPLING, n as u64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::from_undirected_edges;
    use alloc::vec;

    fn ring(n: usize) -> Graph {
        let e: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        from_undirected_edges(n, &e).unwrap()
    }

    fn small_cfg(mode: Mode) -> ModelConfig {
        ModelConfig {
            mode,
            layers: 2,
            heads: 2,
            d_model: 6,
            d_ffn: 8,
            hops: 1,
            pe: Some(PeConfig {
                layer_dims: vec![4, 3],
                order: 2,
                samples: 3,
                ..PeConfig::default()
            }),
            head: TaskHead::Classify { num_classes: 3 },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn mlp_ignores_graph() {
        let mut cfg = small_cfg(Mode::MlpBaseline);
        cfg.pe = None;
        let m = Model::new(&cfg, 4, 1).unwrap();
        let x = Tensor::randn(4, 8, 1.0, &mut rng::from_seed(2));
        let g1 = ring(8);
        let g2 = from_undirected_edges(8, &[(0, 5, 1.0)]).unwrap();
        let a = m.predict(&m.prepare(&g1, 3).unwrap(), &x).unwrap();
        let b = m.predict(&m.prepare(&g2, 3).unwrap(), &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_modes_run_and_are_finite() {
        for mode in [Mode::DenseGt, Mode::SparseGt, Mode::GnnBaseline, Mode::MlpBaseline] {
            let m = Model::new(&small_cfg(mode), 4, 5).unwrap();
            let x = Tensor::randn(4, 9, 1.0, &mut rng::from_seed(6));
            let y = m.predict(&m.prepare(&ring(9), 7).unwrap(), &x).unwrap();
            assert_eq!(y.shape(), (3, 9));
            assert!(y.is_finite());
        }
    }

    #[test]
    fn sparse_with_large_hops_equals_dense() {
        let mut cfg = small_cfg(Mode::SparseGt);
        cfg.hops = 4;
        let sparse = Model::new(&cfg, 4, 8).unwrap();
        let mut dense = sparse.clone();
        dense.cfg.mode = Mode::DenseGt;
        let g = ring(8);
        let x = Tensor::randn(4, 8, 1.0, &mut rng::from_seed(9));
        let a = sparse.predict(&sparse.prepare(&g, 1).unwrap(), &x).unwrap();
        let b = dense.predict(&dense.prepare(&g, 1).unwrap(), &x).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn expander_edges_change_the_mask() {
        let mut cfg = small_cfg(Mode::SparseGt);
        cfg.expander_degree = Some(3);
        let m = Model::new(&cfg, 4, 1).unwrap();
        let prep = m.prepare(&ring(11), 2).unwrap();
        let Some(Support::Sparse(mask)) = &prep.support else { panic!() };
        assert!(mask.nnz() > 11 * 3);
    }

    #[test]
    fn budget_clamps_projections() {
        let mut cfg = small_cfg(Mode::SparseGt);
        cfg.op_norm_budget = Some(0.3);
        let mut m = Model::new(&cfg, 4, 1).unwrap();
        assert!(m.max_projection_norm() > 0.3);
        m.enforce_budget();
        for id in m.attention_projection_ids() {
            assert!(m.store.get(id).spectral_norm_power(50) <= 0.3 + 1e-8);
        }
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = small_cfg(Mode::SparseGt);
        cfg.hops = 0;
        assert!(matches!(Model::new(&cfg, 4, 1), Err(Error::Config(_))));
    }
}
