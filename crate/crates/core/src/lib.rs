//! Block point process models for continuous-time relational event data.
//!
//! Nodes are partitioned into classes, and every ordered pair of classes owns
//! a univariate exponential Hawkes process whose events are attached to
//! uniformly random node pairs inside the block pair. The crate covers
//! ingestion, simulation, likelihood-based and variational fitting, spectral
//! initialization, and the evaluation protocols used to study the model.

pub mod error;
pub mod evaluation;
pub mod events;
pub mod generator;
pub mod hawkes;
pub mod inference;
pub mod spectral;

pub use error::{Error, Result};
