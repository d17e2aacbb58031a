//! Fixed-size feature selection from expression data by simulated annealing,
//! followed by average-linkage clustering of samples.
//!
//! The pipeline: [`ingest`] reads matrices and sample annotations and turns
//! them into log2 ratios, [`objective`] scores feature subsets,
//! [`annealer`] searches for a high-scoring subset, and [`clustering`]
//! builds a dendrogram over the treated samples restricted to that subset.

pub mod annealer;
pub mod cli;
pub mod clustering;
pub mod error;
pub mod ingest;
pub mod model;
pub mod objective;
pub mod oracle;
pub mod rng;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
