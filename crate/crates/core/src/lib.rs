//! Speaker diarisation toolkit built around attentive combination of
//! heterogeneous speaker embeddings.
//!
//! The crate covers the full experiment loop: synthetic corpus generation,
//! frame-level encoders, self-attentive pooling with a tunable diversity
//! penalty, window embedding extraction, spectral clustering of recordings,
//! and speaker-error-rate scoring of the resulting segmentations.

pub mod attention;
pub mod checkpoint;
pub mod clustering;
pub mod combiner;
pub mod config;
pub mod encoders;
pub mod error;
pub mod layers;
pub mod pipeline;
pub mod scoring;
pub mod synthdata;
pub mod tensor;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
