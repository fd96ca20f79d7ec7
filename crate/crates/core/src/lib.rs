pub mod bitstream;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod data;
pub mod dsp;
pub mod entropy;
pub mod error;
pub mod model;
pub mod nn;
pub mod quantizer;
pub mod spectrogram;
pub mod training;
pub mod wav;

pub use error::{Error, Result};
