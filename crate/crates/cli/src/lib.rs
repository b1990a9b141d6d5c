//! Command-line pipeline: configuration, stage runners, run manifests and
//! reports.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod stages;
