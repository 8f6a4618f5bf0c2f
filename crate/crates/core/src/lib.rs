//! Federated fine-tuning simulator and chip-design evaluation toolkit.
//!
//! The pipeline: build or load a corpus of accelerator designs
//! ([`corpus`]), split it into non-IID manufacturer sub-corpora
//! ([`partition`]), quantify how different they are ([`divergence`]), train
//! low-rank adapters with FedAvg ([`fedsim`]) and score generated designs
//! with the three-sigma rule and Chip@k ([`evaluator`]).

pub mod artifacts;
pub mod cli;
pub mod corpus;
pub mod divergence;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod fedsim;
pub mod partition;
pub mod report;
pub mod seeding;

pub use error::{Error, Result};
