//! Library surface of the `radnas` binary: configuration, run manifests,
//! and the pipeline stages, reused by the integration tests.

pub mod config;
pub mod manifest;
pub mod stages;
