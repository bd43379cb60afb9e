//! Reverse-mode differentiation and the parameterized building blocks shared
//! by the parser, the type grammar and the interpreter.

mod blocks;
mod gradcheck;
mod graph;
mod params;

pub use blocks::{Adam, Attention, Mlp, LEAKY_SLOPE};
pub use gradcheck::{gradient_check, GradCheckReport, GRADCHECK_FLOOR};
pub use graph::{Graph, Var};
pub use params::{Checkpoint, Gradients, NamedTensor, ParamId, ParamStore, Parameter, Tensor};

#[allow(unused_imports)]
pub(crate) use graph::{log_softmax, softmax_into};
