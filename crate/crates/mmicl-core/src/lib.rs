//! Unified multimodal in-context learning at desk scale.
//!
//! The pipeline quantizes images, text, bounding boxes and category labels
//! into one discrete vocabulary, assembles interleaved in-context sequences,
//! trains a decoder-only transformer with sparse mixture-of-experts layers by
//! next-token prediction, and evaluates in-context segmentation and
//! captioning on synthetic scenes.

pub mod config;
pub mod error;
pub mod eval;
pub mod image;
pub mod math;
pub mod model;
pub mod prompts;
pub mod quantizers;
pub mod synthdata;
pub mod tasks;
pub mod training;
pub mod rng;
pub mod vocab;

pub use error::{Error, Result};
