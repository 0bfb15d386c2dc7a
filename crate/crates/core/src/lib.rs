//! Decentralized learning over clustered, non-iid clients.
//!
//! Each simulated client keeps a softmax distribution over its peers, built
//! from one of four model-similarity scores, samples collaborators from it
//! every round, merges their models (by data size or by similarity) and
//! trains locally. The crate covers the whole pipeline: data generators for
//! concept, label, covariate and domain shift, the models, the similarity
//! metrics and their cost accounting, the synchronous round engine, and the
//! CSV artifacts (communication heatmaps, result tables, sweeps).

pub mod aggregation;
pub mod datasets;
pub mod error;
pub mod models;
pub mod params;
pub mod reporting;
pub mod rng;
pub mod selection;
pub mod similarity;
pub mod simulator;

pub use error::{Error, Result};
pub use params::{GradientVector, ParamVector};
