//! Weakly-supervised audio classification and source enhancement.
//!
//! Audio is decomposed with KL-divergence NMF; the Wiener-filtered components
//! and plain temporal segments are cut into log-mel patches that form a
//! multiple-instance bag. A two-stream (classification x localization) head
//! scores every proposal, and the per-component relevance scores double as
//! soft separation masks.

mod binio;
pub mod data;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod model;
pub mod nmf;
pub mod proposals;
pub mod signal;

pub use error::{Error, Result};
