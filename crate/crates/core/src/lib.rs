pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod neuralnet;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
