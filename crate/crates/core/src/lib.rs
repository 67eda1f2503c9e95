//! Memorization-risk audit harness for text-to-image generation backends.
//!
//! The pipeline mines training captions whose baseline generations land
//! close to the training corpus in a joint image/text embedding space, then
//! regenerates them under several prompting strategies and many seeds,
//! recording similarity to the corpus, relevance to the base prompt and
//! aesthetic quality of every output. `report` aggregates the records into
//! per-strategy frequencies, distributions and correlations.

pub mod audit;
pub mod backend;
pub mod cli;
pub mod corpus;
pub mod numfmt;
pub mod prompts;
pub mod report;
pub mod sampling;
pub mod store;
pub mod vector;
