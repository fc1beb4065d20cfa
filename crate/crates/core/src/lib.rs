pub mod autoencoder;
pub mod config;
pub mod detectors;
pub mod error;
pub mod features;
pub mod ingest;
pub mod labelling;
pub mod metrics;
pub mod pipeline;
pub mod resampling;
pub mod synthgen;
pub mod thresholding;
pub mod tuning;

pub use error::{Error, Result, Stage};
