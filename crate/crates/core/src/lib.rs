//! Mixed N:M sparsity pruning.
//!
//! Layer sensitivity from Fisher-information traces, N:M structured masks under
//! magnitude or weight×activation scores, and an evolutionary search for the
//! per-layer pruning levels that minimize perplexity at a fixed average
//! sparsity. Everything runs on a small byte-level language model with exact
//! gradients.

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evo;
pub mod io;
pub mod masks;
pub mod model;
pub mod rng;
pub mod sensitivity;

pub use error::{Error, Result};
