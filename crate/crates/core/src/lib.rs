//! Path failure classification on time-evolving graphs.
//!
//! A two-layer gated recurrence whose linear maps are two-hop relational
//! graph convolutions encodes a window of graph snapshots into per-node
//! vectors. Each path gathers its nodes' vectors, runs them through a
//! sequence encoder and pools them with multi-view self-attention into a
//! fixed-size embedding that a linear softmax head classifies.
//!
//! Gradients come from a small reverse-mode tape in [`numerics`]. Work that
//! splits cleanly (windows in a batch, finite-difference coordinates,
//! snapshot normalization) runs through [`Execution`], which is data-parallel
//! with the `parallel` feature and sequential otherwise; both produce
//! identical results.

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod graph;
pub mod lrgcn;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod sape;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
