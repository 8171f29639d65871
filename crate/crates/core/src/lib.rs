//! Losses, label correction, metrics and a deterministic trainer for
//! multi-label classification when some positive labels are missing.

pub mod analysis;
pub mod correction;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod method;
pub mod metrics;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
