//! Selective fusion of face-identity embeddings with visual features for
//! deepfake detection, plus a synthetic benchmark for studying when
//! identity cues transfer across manipulation methods.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod experiments;
pub mod grad;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod seeds;
pub mod synthdata;

pub use error::{Error, Result};
