//! Graph-classification toolkit for daily travel graphs.
//!
//! The pipeline: a fixed universe of stations carries land-use and household
//! node features; each day contributes one undirected weighted graph of trip
//! counts plus three temperature features and a 6-class (weather x weekday)
//! label. Models are GCN stacks with global mean pooling, optional graph
//! feature concatenation, and optional spatial coarsening, where node
//! embeddings are pooled through a hard cluster assignment obtained by
//! spectral clustering of a KNN graph over station coordinates.
//!
//! Module map:
//! - [`graph`]: graph containers, adjacency construction, symmetric normalization
//! - [`spatial`]: KNN graph, spectral clustering, NCut, coarsening operator
//! - [`nn`]: differentiable tensor ops, GCN/GraphConv layers, Adam
//! - [`model`]: the 11-model matrix, batching, training loop, metrics
//! - [`data`]: CSV ingestion, preprocessing, labels, synthetic generator
//! - [`linalg`]: dense symmetric eigensolver and small numeric helpers

pub mod data;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod rng;
pub mod spatial;

pub use error::{Error, Result};
