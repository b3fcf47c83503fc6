//! Discrete-versus-continuum convergence measurements on sampled
//! manifolds.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::mnn::{mnn_reference, FilterResponse};
use super::mt::mt_reference;
use super::sampler::{sample_manifold, ManifoldKind, ManifoldSpec, PointCloud};
use super::spectrum::{analytic_spectrum, SpectralBasis};
use crate::attention::{dense_attention, sparse_attention, AttentionParams};
use crate::autodiff::Activation;
use crate::error::{contract, validation, Result};
use crate::graph::{build_kernel_graph, default_bandwidth, k_hop_mask, radius_graph, smallest_eigenpairs, CsrMatrix};
use crate::math;
use crate::pe::{gnn_forward, FilterBank};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    GtVsMt,
    SparseGtVsRestrictedMt,
    GnnVsMnn,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::GtVsMt => "gt_vs_mt",
            Task::SparseGtVsRestrictedMt => "sparse_gt_vs_restricted_mt",
            Task::GnnVsMnn => "gnn_vs_mnn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub manifold: ManifoldKind,
    pub tasks: Vec<Task>,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    /// Size of the reference quadrature cloud.
    pub quadrature: usize,
    /// Multiplier on the default kernel bandwidth.
    pub bandwidth_scale: f64,
    /// Attention radius of the restricted variant.
    pub radius: f64,
    /// Feature width of the frozen model.
    pub width: usize,
    /// Filter order of the frozen encoder.
    pub order: usize,
    pub activation: Activation,
    /// Entrywise standard deviation of the frozen filter taps.
    pub filter_std: f64,
    /// Entrywise standard deviation of the frozen `Q` and `K`.
    pub qk_std: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            manifold: ManifoldKind::Circle,
            tasks: vec![Task::GtVsMt, Task::SparseGtVsRestrictedMt, Task::GnnVsMnn],
            n_grid: vec![128, 256, 512, 1024, 2048],
            seeds: 8,
            quadrature: 16384,
            bandwidth_scale: 1.0,
            radius: 1.0,
            width: 4,
            order: 2,
            activation: Activation::Relu,
            filter_std: 0.5,
            qk_std: 0.5,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] < 4 {
            return Err(crate::Error::Config("n_grid must be ascending with entries >= 4".into()));
        }
        if self.seeds == 0 || self.quadrature < 16 || self.width == 0 || self.order == 0 {
            return Err(crate::Error::Config("seeds, quadrature, width and order must be positive".into()));
        }
        if !(self.bandwidth_scale > 0.0) || !(self.radius > 0.0) {
            return Err(crate::Error::Config("bandwidth_scale and radius must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen single-layer encoder plus a single unscaled attention head, the
/// same weights at every graph size.
#[derive(Clone, Debug)]
pub struct FrozenModel {
    pub bank: FilterBank,
    pub activation: Activation,
    pub attention: AttentionParams,
}

impl FrozenModel {
    pub fn random(in_dim: usize, cfg: &ConvergenceConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, rng::INIT, 0);
        let d = cfg.width;
        let bank = FilterBank {
            taps: (0..cfg.order).map(|_| Tensor::randn(d, in_dim, cfg.filter_std, &mut r)).collect(),
        };
        let mut attention = AttentionParams::random(d, 1, d, 0, &mut r);
        attention.heads[0].q = Tensor::randn(d, d, cfg.qk_std, &mut r);
        attention.heads[0].k = Tensor::randn(d, d, cfg.qk_std, &mut r);
        attention.heads[0].v = Tensor::randn(d, d, 1.0, &mut r);
        attention.w_o = Tensor::identity(d);
        Self {
            bank,
            activation: cfg.activation,
            attention,
        }
    }
}

/// Coefficients of the experiment's input signal: half the constant plus
/// the first nonzero eigenspace scaled by `1/sqrt(2)`, one channel each.
pub fn input_coefficients(basis: &SpectralBasis) -> Tensor {
    let cluster = basis.first_nonzero_cluster();
    let last = cluster.last().copied().unwrap_or(0);
    let mut c = Tensor::zeros(1 + cluster.len(), last + 1);
    c.set(0, 0, 0.5);
    for (ch, &i) in cluster.iter().enumerate() {
        c.set(ch + 1, i, 1.0 / math::SQRT_2);
    }
    c
}

/// Least-squares factor `c` fitting `c * graph[i]` to the analytic
/// eigenvalues over the first nonzero cluster.
pub fn calibrate_spectrum(graph_eigs: &[f64], basis: &SpectralBasis) -> Result<f64> {
    let cluster = basis.first_nonzero_cluster();
    if cluster.is_empty() || graph_eigs.len() <= *cluster.last().unwrap() {
        return Err(validation("not enough eigenvalues to calibrate"));
    }
    let num: f64 = cluster.iter().map(|&i| graph_eigs[i] * basis.eigenvalues[i]).sum();
    let den: f64 = cluster.iter().map(|&i| graph_eigs[i] * graph_eigs[i]).sum();
    if !(den > 0.0) {
        return Err(validation("graph spectrum has no nonzero eigenvalues to calibrate"));
    }
    Ok(num / den)
}

/// Calibrated kernel-graph Laplacian of a cloud, with its calibration
/// factor and the smallest `count` raw eigenvalues.
pub fn calibrated_laplacian(
    cloud: &PointCloud,
    basis: &SpectralBasis,
    bandwidth_scale: f64,
    count: usize,
) -> Result<(CsrMatrix, f64, Vec<f64>)> {
    let n = cloud.len();
    let eps = default_bandwidth(n, cloud.spec.intrinsic_dim(), bandwidth_scale);
    let g = build_kernel_graph(&cloud.points, eps)?;
    let eig = smallest_eigenpairs(g.laplacian(), count.min(n), 1e-10, cloud.seed ^ 0x5eed)?;
    let c = calibrate_spectrum(&eig.values, basis)?;
    Ok((g.laplacian().scaled(c), c, eig.values))
}

/// Shared read-only continuum data for one experiment.
#[derive(Clone, Debug)]
pub struct Reference {
    pub basis: SpectralBasis,
    pub coeffs: Tensor,
    pub quadrature: Tensor,
    /// Encoder output at the quadrature points.
    pub f_quad: Tensor,
}

impl Reference {
    pub fn new(cfg: &ConvergenceConfig, model: &FrozenModel, root_seed: u64) -> Result<Self> {
        let spec = ManifoldSpec::new(cfg.manifold);
        let basis = analytic_spectrum(spec, 16)?;
        let coeffs = input_coefficients(&basis);
        let quadrature = sample_manifold(spec, cfg.quadrature, rng::derive_seed(root_seed, rng::SAMPLING, u64::MAX))?.points;
        let f_quad = mnn_reference(
            core::slice::from_ref(&model.bank),
            FilterResponse::Polynomial,
            Some(model.activation),
            &basis,
            &coeffs,
            &quadrature,
            &quadrature,
        )?;
        Ok(Self {
            basis,
            coeffs,
            quadrature,
            f_quad,
        })
    }

    /// Input signal sampled at the rows of `points`.
    pub fn signal_at(&self, points: &Tensor) -> Result<Tensor> {
        let m = self.coeffs.cols();
        let sub = SpectralBasis {
            spec: self.basis.spec,
            eigenvalues: self.basis.eigenvalues[..m].to_vec(),
            modes: self.basis.modes[..m].to_vec(),
        };
        self.coeffs.matmul(&sub.eval_matrix(points))
    }
}

/// Nested cloud for a seed: the first `n` points of one `n_max` draw.
pub fn nested_cloud(cfg: &ConvergenceConfig, root_seed: u64, seed: usize, n: usize) -> Result<PointCloud> {
    let n_max = *cfg.n_grid.last().unwrap_or(&n);
    let full = sample_manifold(
        ManifoldSpec::new(cfg.manifold),
        n_max.max(n),
        rng::derive_seed(root_seed, rng::SAMPLING, seed as u64),
    )?;
    Ok(full.prefix(n))
}

/// Mean over nodes of the Euclidean distance between discrete and
/// continuum outputs, for one cloud.
pub fn convergence_cell(
    task: Task,
    cfg: &ConvergenceConfig,
    model: &FrozenModel,
    reference: &Reference,
    cloud: &PointCloud,
) -> Result<f64> {
    let count = 1 + reference.basis.first_nonzero_cluster().len();
    let (l, _, _) = calibrated_laplacian(cloud, &reference.basis, cfg.bandwidth_scale, count)?;
    let l = alloc::sync::Arc::new(l);
    let x = reference.signal_at(&cloud.points)?;
    let f = gnn_forward(core::slice::from_ref(&model.bank), model.activation, &l, &x)?;
    let f_ref = mnn_reference(
        core::slice::from_ref(&model.bank),
        FilterResponse::Polynomial,
        Some(model.activation),
        &reference.basis,
        &reference.coeffs,
        &reference.quadrature,
        &cloud.points,
    )?;
    let (out, want) = match task {
        Task::GnnVsMnn => (f, f_ref),
        Task::GtVsMt => {
            let y = dense_attention(&model.attention, &f, true)?;
            let y_ref = mt_reference(&model.attention, &reference.f_quad, &f_ref, &reference.quadrature, &cloud.points, None, true)?;
            (y, y_ref)
        }
        Task::SparseGtVsRestrictedMt => {
            let g = radius_graph(&cloud.points, cfg.radius)?;
            let mask = k_hop_mask(&g, 1)?;
            let y = sparse_attention(&model.attention, &f, &mask, true)?;
            let y_ref = mt_reference(
                &model.attention,
                &reference.f_quad,
                &f_ref,
                &reference.quadrature,
                &cloud.points,
                Some(cfg.radius),
                true,
            )?;
            (y, y_ref)
        }
    };
    mean_column_distance(&out, &want)
}

fn mean_column_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(contract("output shapes differ"));
    }
    let n = a.cols().max(1);
    let mut total = 0.0;
    for c in 0..a.cols() {
        let d: f64 = (0..a.rows()).map(|r| (a.get(r, c) - b.get(r, c)) * (a.get(r, c) - b.get(r, c))).sum();
        total += math::sqrt(d);
    }
    Ok(total / n as f64)
}

/// One measured `(task, N, seed)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub task: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: usize,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub task: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub median: f64,
    pub iqr: f64,
    pub fit_slope: f64,
}

/// Sequential convergence curve for one task.
pub fn convergence_curve(task: Task, cfg: &ConvergenceConfig, root_seed: u64) -> Result<Vec<ConvergenceRow>> {
    cfg.validate()?;
    let basis = analytic_spectrum(ManifoldSpec::new(cfg.manifold), 16)?;
    let model = FrozenModel::random(input_coefficients(&basis).rows(), cfg, root_seed);
    let reference = Reference::new(cfg, &model, root_seed)?;
    let mut rows = Vec::new();
    for seed in 0..cfg.seeds {
        for &n in &cfg.n_grid {
            let cloud = nested_cloud(cfg, root_seed, seed, n)?;
            let error = convergence_cell(task, cfg, &model, &reference, &cloud)?;
            rows.push(ConvergenceRow {
                task: task.name().into(),
                n,
                seed,
                error,
            });
        }
    }
    Ok(rows)
}

/// Linear-interpolated quantile of unsorted data.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = math::floor(pos) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(data: &[f64]) -> f64 {
    quantile(data, 0.5)
}

/// Least-squares slope of `ln(error)` against `ln(N)`. Nonpositive errors
/// are skipped; `None` with fewer than two usable points.
pub fn fit_slope(ns: &[usize], errors: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > 0.0 && e.is_finite())
        .map(|(&n, &e)| (math::log(n as f64), math::log(e)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Median and IQR per `(task, N)`, with the slope fitted to the medians.
pub fn summarize(rows: &[ConvergenceRow]) -> Vec<CurveSummary> {
    let mut tasks: Vec<&str> = Vec::new();
    for r in rows {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
    }
    let mut out = Vec::new();
    for task in tasks {
        let mut ns: Vec<usize> = rows.iter().filter(|r| r.task == task).map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        let stats: Vec<(f64, f64)> = ns
            .iter()
            .map(|&n| {
                let e: Vec<f64> = rows.iter().filter(|r| r.task == task && r.n == n).map(|r| r.error).collect();
                (median(&e), quantile(&e, 0.75) - quantile(&e, 0.25))
            })
            .collect();
        let meds: Vec<f64> = stats.iter().map(|s| s.0).collect();
        let slope = fit_slope(&ns, &meds).unwrap_or(f64::NAN);
        for (&n, &(m, iqr)) in ns.iter().zip(&stats) {
            out.push(CurveSummary {
                task: task.into(),
                n,
                median: m,
                iqr,
                fit_slope: slope,
            });
        }
    }
    out
}

/// Number of seeds whose error sequence never increases along N.
pub fn monotone_seeds(rows: &[ConvergenceRow], task: &str) -> usize {
    let mut seeds: Vec<usize> = rows.iter().filter(|r| r.task == task).map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
        .into_iter()
        .filter(|&s| {
            let mut e: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| r.task == task && r.seed == s)
                .map(|r| (r.n, r.error))
                .collect();
            e.sort_by_key(|p| p.0);
            e.windows(2).all(|w| w[1].1 <= w[0].1)
        })
        .count()
}

/// Calibrated spectral error of one cloud: mean of
/// `|c lambda_N,i - lambda_i| / lambda_i` over the eigenvalue indices
/// `indices` (0-based, all nonzero in the analytic spectrum).
pub fn spectral_error(cloud: &PointCloud, bandwidth_scale: f64, indices: &[usize]) -> Result<f64> {
    let basis = analytic_spectrum(cloud.spec, 16)?;
    let count = indices.iter().copied().max().unwrap_or(0).max(*basis.first_nonzero_cluster().last().unwrap_or(&0)) + 1;
    let (_, c, eigs) = calibrated_laplacian(cloud, &basis, bandwidth_scale, count)?;
    let mut total = 0.0;
    for &i in indices {
        let want = basis.eigenvalues[i];
        if want == 0.0 {
            return Err(contract("relative error needs nonzero analytic eigenvalues"));
        }
        total += math::abs(c * eigs[i] - want) / want;
    }
    Ok(total / indices.len() as f64)
}

/// Calibrated spectral error for every `(N, seed)` on nested clouds.
pub fn spectral_convergence(
    kind: ManifoldKind,
    n_grid: &[usize],
    seeds: usize,
    bandwidth_scale: f64,
    root_seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    let cfg = ConvergenceConfig {
        manifold: kind,
        n_grid: n_grid.to_vec(),
        seeds,
        ..ConvergenceConfig::default()
    };
    let mut rows = Vec::new();
    for seed in 0..seeds {
        for &n in n_grid {
            let cloud = nested_cloud(&cfg, root_seed, seed, n)?;
            rows.push(ConvergenceRow {
                task: "spectrum".into(),
                n,
                seed,
                error: spectral_error(&cloud, bandwidth_scale, &[1, 2, 3])?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let ns = [100, 200, 400, 800];
        let e: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-0.5)).collect();
        assert!((fit_slope(&ns, &e).unwrap() + 0.5).abs() < 1e-12);
        assert!(fit_slope(&[10], &[1.0]).is_none());
    }

    #[test]
    fn quantiles_match_linear_interpolation() {
        let d = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&d), 2.5);
        assert_eq!(quantile(&d, 0.25), 1.75);
    }

    #[test]
    fn zero_values_give_zero_error() {
        let cfg = ConvergenceConfig {
            n_grid: vec![64, 128],
            seeds: 2,
            quadrature: 512,
            ..ConvergenceConfig::default()
        };
        let basis = analytic_spectrum(ManifoldSpec::new(cfg.manifold), 16).unwrap();
        let mut model = FrozenModel::random(input_coefficients(&basis).rows(), &cfg, 3);
        model.attention.heads[0].v = Tensor::zeros(4, 4);
        let reference = Reference::new(&cfg, &model, 3).unwrap();
        for &n in &cfg.n_grid {
            let cloud = nested_cloud(&cfg, 3, 0, n).unwrap();
            for task in [Task::GtVsMt, Task::SparseGtVsRestrictedMt] {
                assert_eq!(convergence_cell(task, &cfg, &model, &reference, &cloud).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn circle_first_eigenvalue_after_calibration() {
        let spec = ManifoldSpec::new(ManifoldKind::Circle);
        let cloud = sample_manifold(spec, 512, 11).unwrap();
        let basis = analytic_spectrum(spec, 16).unwrap();
        let (_, c, eigs) = calibrated_laplacian(&cloud, &basis, 1.0, 3).unwrap();
        assert!(eigs[0].abs() < 1e-8);
        assert!((c * eigs[1] - 1.0).abs() < 0.15);
    }

    #[test]
    fn signal_matches_closed_form_on_circle() {
        let spec = ManifoldSpec::new(ManifoldKind::Circle);
        let basis = analytic_spectrum(spec, 16).unwrap();
        let coeffs = input_coefficients(&basis);
        let reference = Reference {
            basis,
            coeffs,
            quadrature: Tensor::zeros(0, 2),
            f_quad: Tensor::zeros(4, 0),
        };
        let pts = Tensor::from_rows(&[[0.6, 0.8]]);
        let s = reference.signal_at(&pts).unwrap();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.get(1, 0) - 0.6).abs() < 1e-12);
        assert!((s.get(2, 0) - 0.8).abs() < 1e-12);
    }
}
