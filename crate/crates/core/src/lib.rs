//! Graph transformers with RPEARL positional encodings, their sparse
//! k-hop-masked variant, and the manifold-limit reference objects used to
//! measure convergence and size transferability.
//!
//! The crate is `no_std` with `alloc`; everything that touches files,
//! clocks or threads lives in the `gtx` companion crate.

#![no_std]
#![allow(clippy::too_many_arguments)]
#![allow(clippy::needless_range_loop)]
// `!(x > 0.0)` is how validation rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attention;
pub mod autodiff;
pub mod checks;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod manifold;
pub(crate) mod math;
pub mod model;
pub mod params;
pub mod pe;
pub mod rng;
pub mod tensor;
pub mod terrain;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;
