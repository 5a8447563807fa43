//! Construction and evaluation toolkit for step-level reasoning benchmarks.
//!
//! The pipeline takes question/answer corpora, produces verified reasoning
//! chains, distills them into causal blueprints, plants typed errors at
//! chosen steps, verifies every label against the actual text change, and
//! scores step-level verifiers on the result.

pub mod blueprint;
pub mod config;
pub mod corpus;
pub mod diff;
pub mod ern;
pub mod error;
pub mod eval;
pub mod graph;
pub mod inject;
pub mod io;
pub mod pipeline;
pub mod providers;
pub mod release;
pub mod review;
pub mod taxonomy;
pub mod verify;

pub use error::{ForgeError, Result};
