//! Sentence embeddings learned by training a tied dual encoder to pick the
//! correct conversational response out of in-batch negatives, optionally
//! multitasked with a natural language inference classifier.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: comment filtering, parent/child pair extraction, dataset loaders
//! - [`text`]: tokenization, vocabulary, featurization
//! - [`compute`]: tensors, parameter store, reverse-mode tape, SGD, gradient checks
//! - [`encoders`]: DAN and Transformer sentence encoders
//! - [`dual_model`]: input-response scoring and the NLI head
//! - [`training`]: batching, schedule, multitask loop, checkpoints, telemetry
//! - [`evaluation`]: P@N, STS scoring and Pearson r, adaptation matrix, CQA MAP
//! - [`synthetic`]: seeded template corpora for smoke tests and demos

pub mod compute;
pub mod corpus;
pub mod dual_model;
pub mod encoders;
mod error;
pub mod evaluation;
pub mod synthetic;
pub mod text;
pub mod training;

pub use error::{Error, Result};
