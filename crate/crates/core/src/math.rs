//! Transcendental functions routed through `libm` so results do not depend
//! on whether `std` is linked.

pub(crate) use libm::{atan2, ceil, cos, exp, fabs as abs, floor, log, pow, round, sin, sqrt, tanh};

pub(crate) const SQRT_2: f64 = core::f64::consts::SQRT_2;
