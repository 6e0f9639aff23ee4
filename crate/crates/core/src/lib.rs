//! Subspace face-recognition benchmark toolkit.
//!
//! Trains PCA, LDA, ICA and their kernel variants on column-wise sample
//! matrices, matches probes against class centroids under four metrics,
//! fuses classifiers at the matching-score level and evaluates the results
//! with cumulative match scores and exact McNemar tests.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod ica;
pub mod matcher;
pub mod numerics;
pub mod persist;
pub mod report;
pub mod subspace;

pub use error::{Error, Result};
