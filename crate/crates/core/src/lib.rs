//! Two-stage training pipeline for code-mixed hope speech classification:
//! language-identification corpus filtering, masked-language-model domain
//! adaptation of a small transformer encoder, and supervised fine-tuning with
//! macro-F1 model selection.

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalx;
pub mod langid;
pub mod rng;
pub mod tensor;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};
