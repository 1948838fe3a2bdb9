//! Semantic-guided tree search for long-video question answering.

pub mod anchors;
pub mod backends;
pub mod bench;
pub mod config;
pub mod engine;
pub mod error;
pub mod expansion;
pub mod model;
pub mod registry;
pub mod scoring;
pub mod simenv;
pub mod trace;

pub use error::{BackendError, Error, Result};
