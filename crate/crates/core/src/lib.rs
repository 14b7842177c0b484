//! Online active learning for detection tasks over precomputed feature streams.
//!
//! The crate covers the whole pipeline: organizing timestamped samples into
//! environments and sessions, a small contrastive MLP classifier with exact
//! gradients, detection-cost-aware losses, query strategies, the three
//! training paradigms (supervised, pool-based AL, stream-based OAL) and the
//! evaluation metrics used to compare them.

pub mod config;
pub mod data_model;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod ingest;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod network;
pub mod query;
pub(crate) mod rng;

pub use error::{OalError, Result};
