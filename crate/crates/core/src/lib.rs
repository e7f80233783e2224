//! Image captioning with a spatial-graph transformer.
//!
//! Regions are related by box containment into parent, neighbor and child
//! pairs ([`spatial_graph`]); the [`encoder`] attends over each relation in
//! a separate masked branch; the [`decoder`] runs an LSTM whose query feeds
//! several attention sub-transformers fused by a gated linear unit.
//! [`training`] covers cross-entropy and self-critical training on top of a
//! small reverse-mode autodiff ([`numerics`]).
//!
//! Most capabilities have a runnable program under `examples/`; the `imtx`
//! binary wraps [`cli`].

pub mod cli;
pub mod data;
pub mod decoder;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod spatial_graph;
pub mod training;

pub use error::{Error, Result};
pub use model::{CaptionModel, ModelConfig};
