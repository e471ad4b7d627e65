//! Deterministic simulator for two-layer collective write aggregation.
//!
//! Processes' offset-length requests are gathered at local aggregators on
//! each node, merged and coalesced, exchanged with global aggregators that
//! own stripe-aligned file domains, and written round by round into a
//! sparse in-memory file. Classic two-phase I/O is the special case where
//! every process is its own local aggregator.

pub mod algebra;
pub mod error;
pub mod io_phase;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod run;
pub mod select;
pub mod simfile;
pub mod verify;
pub mod workloads;

pub use error::Error;
