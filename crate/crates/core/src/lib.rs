//! Recommendation with long, unordered semantic IDs generated in parallel.

pub mod artifact;
pub mod bench;
pub mod cli;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod opq;
pub mod scorer;
pub mod semantic;

pub use error::{Error, Result};
