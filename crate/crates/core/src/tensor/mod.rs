//! Dense `f64` tensors with reverse-mode differentiation.

mod check;
mod dense;
mod param;
mod tape;

pub use check::{gradient_check, CheckOptions, GradientCheckReport, ParamCheck};
pub use dense::Tensor;
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{BatchStats, Tape, Var};
