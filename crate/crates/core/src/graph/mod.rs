//! Sparse graphs, Laplacians, hop masks and random expanders.

mod csr;
mod expander;
pub mod kernel;
mod mask;
pub mod spectrum;
pub mod subsample;

pub use csr::{build_laplacian, from_undirected_edges, CsrMatrix, Graph};
pub use expander::{random_expander_edges, EdgeSet};
pub use kernel::{build_kernel_graph, default_bandwidth, radius_graph};
pub use mask::{k_hop_mask, k_hop_mask_with_extra, KHopMask};
pub use spectrum::{smallest_eigenpairs, EigenPairs};
pub use subsample::{subsample_graph, subsample_nodes};
