//! Minimal differentiable-computation core.

mod checkpoint;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use graph::{Graph, NodeId};
pub use optim::{Adam, AdamConfig};
pub use params::{project_nonnegative, Constraint, Gradients, ParamId, ParamStore, Parameter};
pub use tensor::{sigmoid, softmax_in_place, softplus, Tensor};

pub(crate) use tensor::dot;
