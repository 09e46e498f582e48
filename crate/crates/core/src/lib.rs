//! Homograph-aware neural machine translation at desk scale.

pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod nmt;
pub mod pipeline;
pub mod pretrain;
pub mod transformer;

pub use error::{Error, Result};
