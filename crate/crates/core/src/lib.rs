//! DSP building blocks for the speech-restoration pipeline: waveforms and
//! STFTs, paired-data degradation, objective metrics, and a synthetic
//! speech/noise generator for desk-scale experiments.

pub mod degradation;
pub mod dsp;
mod error;
pub mod manifest;
pub mod metrics;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub use signal::{power, Waveform, SAMPLE_RATE};
