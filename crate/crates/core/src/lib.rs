//! Highlight-sensitive video title generation.

pub mod augmentation;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod highlight;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
