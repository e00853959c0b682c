//! Two-stage metadata extraction from municipal meeting minutes.
//!
//! Stage 1 finds the opening and closing segments that carry metadata;
//! stage 2 tags entities inside the reduced region.

pub mod boundary;
pub mod corpus;
pub mod deslex;
pub mod error;
pub mod evalx;
pub mod learn;
pub mod llm;
pub mod mer;
pub mod pipeline;
pub mod synth;
pub mod text;

pub use error::{MinerError, Result};
