//! Graph convolutional surrogates for the homogenized stress response of
//! microstructures: mesh graphs, invariant filters, a recurrent head,
//! synthetic data generation, training and evaluation.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common concrete types.

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod filters;
pub mod meshgraph;
pub mod metrics;
pub mod microgen;
pub mod model;
pub mod oracle;
pub mod recurrent;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Adjacency64 = meshgraph::SparseAdjacency<f64>;
pub type Adjacency32 = meshgraph::SparseAdjacency<f32>;
pub type Features64 = filters::NodeFeatures<f64>;
pub type Features32 = filters::NodeFeatures<f32>;
pub type Slots64 = filters::AdjacencySlots<f64>;
pub type Slots32 = filters::AdjacencySlots<f32>;
pub type Lstm64 = recurrent::LstmParams<f64>;
pub type Lstm32 = recurrent::LstmParams<f32>;
pub type Model64 = model::ModelParams<f64>;
pub type Model32 = model::ModelParams<f32>;
pub type Prepared64 = training::Prepared<f64>;
