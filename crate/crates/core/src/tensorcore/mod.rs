//! Dense tensors, a reverse-mode tape, fully connected networks and Adam.

mod adam;
mod gradcheck;
mod mlp;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport, ParamLocation};
pub use mlp::{Activation, Layer, LayerVars, MlpForward, MlpParams};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
