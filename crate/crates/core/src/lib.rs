//! Domain-shift measurement from the similarity of model activations.
//!
//! Pipeline pieces: activation dumps ([`tensorio`]), synthetic pulse-signal
//! domains and toy models ([`synth`]), linear CKA ([`cka`]), shift metrics
//! ([`metrics`]), heart-rate estimation ([`hr`]), statistics ([`stats`]) and
//! training-domain selection ([`select`]).

pub mod cka;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod hr;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod select;
pub mod stats;
pub mod synth;
pub mod tensorio;

pub use error::{Error, Result};
