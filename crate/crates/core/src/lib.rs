//! Active outlier detection that amplifies the inlier-memorization effect of an
//! importance-weighted variational autoencoder.
//!
//! Training runs in two phases. Warm-up fits the model on plain and then trimmed
//! mini-batch losses so inliers are memorized first. Polarization spends a small
//! labeling budget each round, lowering the loss of labeled inliers and raising
//! the loss of labeled outliers. The per-sample loss of the final model is the
//! outlier score.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod query;
pub mod testing;
pub mod trainer;

pub use error::{Error, Result};
