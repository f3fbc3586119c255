//! HTTP service and command-line front end for the costmap engine.
//!
//! The service keeps every artifact in a content-addressed store, runs
//! interpretation, segmentation and composition as polled background jobs,
//! and records each operator session in a manifest.

pub mod api;
pub mod config;
pub mod error;
pub mod jobs;
pub mod setup;
