//! Tensors, reverse-mode autodiff, parameters, optimisation and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig, PlateauConfig, PlateauScheduler};
pub use params::{BoundParams, ParamId, ParamStore};
pub use tensor::Tensor;
