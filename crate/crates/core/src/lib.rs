//! Desk-scale laboratory for cache side-channel reconnaissance of deep-learning
//! frameworks.
//!
//! The pipeline runs entirely at the level of monitored framework function
//! invocations:
//!
//! * [`catalog`] holds the 13 network templates and expands them into per-query
//!   event sequences.
//! * [`trace`] emits victim traces, applies the Flush+Reload observation channel,
//!   merges decoy processes and rewrites templates for the obfuscation defenses.
//! * [`recon`] splits observations into queries, extracts attribute vectors,
//!   reconstructs block structures and infers training freeze points.
//! * [`fingerprint`] builds attribute datasets and trains the decision-tree
//!   meta-model, with mutual-information ranking and PCA.
//! * [`defense`] evaluates decoy and oblivious-computation defenses.
//! * [`probe`] calibrates hit/miss latency thresholds.

pub mod calibrate;
pub mod catalog;
pub mod config;
pub mod defense;
mod error;
pub mod fingerprint;
pub mod pipeline;
pub mod probe;
pub mod recon;
pub mod report;
pub mod rng;
pub mod trace;
pub mod tracefile;

pub use error::{Error, Result};

/// Version string written into every artifact header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
