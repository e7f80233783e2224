//! Dense `f64` tensors with reverse-mode gradients.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use layers::{glu_fuse, lstm_cell, GluParams, Linear, LstmParams};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;
