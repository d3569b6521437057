//! Causally-aware unsupervised feature selection.
//!
//! Features are scored by the row norms of a sparse regression matrix learned
//! jointly with a clustering embedding, global sample weights that balance the
//! confounder distribution of every feature, and similarity graphs built at
//! several feature granularities.

pub mod balance;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod granularity;
pub mod graphs;
pub mod regression;
pub mod solver;

#[cfg(test)]
mod test_util;

pub use error::{Error, Result};
