//! Minimal differentiable numeric core.
//!
//! Parameters live in a [`ParameterStore`] whose values are kept on the f32
//! grid; all arithmetic on the [`Graph`] tape runs in f64. Every forward op
//! recorded on the tape has a matching backward rule, and [`grad_check`]
//! compares the analytic gradients against central finite differences.

mod gradcheck;
mod graph;
pub mod ops;
mod serialize;
mod store;
mod tensor;

pub use gradcheck::{compare_gradients, grad_check, GradCheckConfig, GradCheckReport, TensorCheck};
pub use graph::{Gradients, Graph, NodeId};
pub use ops::Activation;
pub use serialize::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use store::{clip_grad_norm, sgd_step, Init, Parameter, ParameterStore};
pub use tensor::Tensor;
