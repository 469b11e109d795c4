//! IO, providers, survey service, and pipeline orchestration on top of
//! `styleviz-core`.

pub mod config;
pub mod corpus;
pub mod csv_io;
pub mod images;
pub mod manifest;
pub mod pipeline;
pub mod providers;
pub mod report;
pub mod service;
pub mod store;

pub use styleviz_core as core;
