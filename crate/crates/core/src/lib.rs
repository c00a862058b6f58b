//! Core library: turns unstructured document-element streams into a
//! hierarchical, queryable ontology, retrieves against it, and evaluates
//! answers with claim-based metrics.
//!
//! Numeric kernels (geometry, vector math, community detection quality,
//! ROUGE-L) are generic over the scalar type via `num_traits::Float`;
//! the pipeline itself runs on `f64` through the aliases below.

pub mod chunk;
pub mod community;
pub mod elements;
pub mod error;
pub mod evalkit;
pub mod extract;
pub mod fsutil;
pub mod geometry;
pub mod kgraph;
pub mod ontology;
pub mod pipeline;
pub mod provider;
pub mod retrieve;
pub mod tokenize;
pub mod vecmath;

pub use error::{Error, Result};

/// Scalar type the pipeline runs on.
pub type Scalar = f64;

/// Bounding box over the pipeline scalar.
pub type BBox = geometry::BBox<Scalar>;

/// Embedding over the pipeline scalar.
pub type Embedding = vecmath::Embedding<Scalar>;
