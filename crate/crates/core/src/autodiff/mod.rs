//! Minimal reverse-mode automatic differentiation.

mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_many, grad_check_params, grad_check_params_directional, relative_error,
};
pub use layers::{GruCell, Linear};
pub use params::{BoundParams, ParamId, ParamStore};
pub use tape::{concat, stack, Gradients, Tape, Var};
pub(crate) use tensor::axpy;
pub use tensor::Tensor;
