pub mod analysis;
pub mod autograd;
pub mod checks;
pub mod config;
pub mod error;
pub mod experiment;
pub mod generator;
pub mod image;
pub mod layers;
pub mod metrics;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
