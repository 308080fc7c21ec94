//! Relation classification from noisy distant supervision: a CNN relation
//! classifier and a policy-gradient instance selector that filters noisy
//! sentences bag by bag.

pub mod checkpoint;
pub mod classifier;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod pipeline;
pub mod selector;
pub mod trainer;

pub use error::{Error, Result};
