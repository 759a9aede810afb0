//! Dialogue state tracking with a mentioned slot pool.

pub mod corpus;
pub mod eval;
pub mod encoder;
pub mod msp;
pub mod error;
pub mod heads;
pub mod model;
pub mod nn;
pub mod tracker;
pub mod training;

pub use error::{DstError, Result};
