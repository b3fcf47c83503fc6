//! Sampled manifolds with analytic Laplace spectra, and the continuum
//! reference objects that graph models converge to.

pub mod convergence;
mod induced;
mod mnn;
mod mt;
mod sampler;
mod spectrum;

pub use convergence::{
    calibrate_spectrum, convergence_cell, convergence_curve, fit_slope, monotone_seeds, nested_cloud, spectral_convergence,
    summarize, ConvergenceConfig, ConvergenceRow, Reference,
    CurveSummary, FrozenModel, Task,
};
pub use induced::{induced_signal_distance, nearest_neighbors};
pub use mnn::{mnn_reference, project_onto_basis, FilterResponse};
pub use mt::mt_reference;
pub use sampler::{sample_manifold, ManifoldKind, ManifoldSpec, PointCloud};
pub use spectrum::{analytic_spectrum, BasisMode, SpectralBasis};
