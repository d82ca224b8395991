//! Minimal reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.
//!
//! Forward operations are recorded on a [`Tape`]; [`Tape::backward`] sweeps it
//! once in reverse and leaves a gradient on every node that needs one.

pub mod gradcheck;
mod suite;
mod tape;

pub use gradcheck::{
    autodiff_gradient, finite_diff_check, max_relative_error, max_relative_error_floor,
    numeric_gradient, param_finite_diff_check, param_gradients,
};
pub use suite::{check_op, gradient_suite, OpCheck, SUITE_EPS, SUITE_OPS};
pub use tape::{BatchStats, BinaryKind, Mode, NormStats, PoolAxes, PoolKind, Tape, UnaryKind, Var};

#[cfg(test)]
pub(crate) use tape::sigmoid;
