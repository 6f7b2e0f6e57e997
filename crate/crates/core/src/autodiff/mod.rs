//! Tape-based reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor).
//!
//! Values are recorded on a [`Tape`] in creation order, which is always a
//! topological order of the computation. [`Tape::backward`] walks that order
//! once in reverse. Blocked attention slots are encoded as `-inf` inputs to
//! [`Tape::softmax`], which maps them to exactly zero probability and zero
//! gradient.

mod conv;
mod gradcheck;
mod params;
mod tape;

pub use conv::Padding;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::{Bound, ParamId, ParamSet};
pub use tape::{BackwardFault, Gradients, Tape, Var};
