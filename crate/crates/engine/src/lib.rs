//! Prompt interpretation, tiled open-vocabulary segmentation, artifact
//! storage and session orchestration on top of `overseec-core`.

pub mod backends;
pub mod interpret;
pub mod llm;
pub mod segment;
pub mod session;
pub mod store;
pub mod synth;
