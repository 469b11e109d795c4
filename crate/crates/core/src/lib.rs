//! Pure logic for translating author writing sheets into image prompts and
//! for scoring the two-rater evaluation study.
//!
//! Everything here is `no_std` + `alloc`: parsing and cleaning sheets,
//! validating model output, assembling final prompts and seeds, dealing
//! raters to items, checking survey submissions, and computing the study
//! metrics. File, network, and CLI concerns live in the `styleviz` crate.

#![no_std]

extern crate alloc;

pub mod digest;
pub mod generation;
pub mod metrics;
pub mod provider;
pub mod sheet;
pub mod study;
pub mod survey;
pub mod synthesis;

pub use provider::ProviderError;
