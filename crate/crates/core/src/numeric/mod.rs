//! Dense arrays, a reverse-mode tape, Adam and finite-difference checking.
//! All arithmetic is f64.

mod array;
mod optim;
mod params;
mod tape;

pub use array::Array;
pub use optim::{adam_step, grad_check, AdamState, Objective};
pub use params::{BoundParams, ParamSet, PARAM_FORMAT, PARAM_VERSION};
pub use tape::{Gradients, Tape, Var, LOG_FLOOR};
