// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod config;
pub mod decay;
pub mod energy;
pub mod geometry;
pub mod history;
pub mod kernels;
pub mod linalg;
pub mod quad;
pub mod scenario;
pub mod stableset;
pub mod stepper;
