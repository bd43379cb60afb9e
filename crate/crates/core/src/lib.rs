//! Joint induction of a vector-space chart parser and a combinatory type
//! grammar from graded acceptability judgments.
//!
//! The crate is organized bottom-up:
//!
//! - [`types`]: symbolic Montague types, combinators, raising, enumeration.
//! - [`nn`]: a small tape-based autodiff engine, MLP and attention blocks, Adam.
//! - [`chart`]: the inside-outside vector chart and its symbolic set-valued twin.
//! - [`typegrammar`]: type encoder, per-combinator decoders, combinatory controller.
//! - [`coherence`]: interpretation of spans and the type coherence/constraint losses.
//! - [`training`]: the three training stages and k-fold evaluation.
//! - [`data`]: dataset ingestion, embeddings, synthetic data and reports.

pub mod chart;
pub mod coherence;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod nn;
pub mod training;
pub mod typegrammar;
pub mod types;

pub use error::{Error, Result};
