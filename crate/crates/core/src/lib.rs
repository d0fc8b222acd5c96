//! Training-free segmentation over class-agnostic mask proposals.
//!
//! Proposals are labelled by matching context-aware crops against an expanded
//! class text bank, and referring expressions are resolved by splitting the
//! sentence into class and modifier words, fusing their saliency maps and
//! selecting the best-scoring activated proposal.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod grid;
pub mod ingest;
pub mod local;
pub mod mask;
pub mod pipeline;
pub mod prompt;
pub mod saliency;
pub mod select;
pub mod text;

pub use error::{Error, Result};
pub use grid::Grid;
