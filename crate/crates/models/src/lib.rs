//! Neural models of the restoration system: a pretrained conformer
//! encoder with feature-cleaning adapters and an iterative vocoder.

pub mod adapter;
pub mod bestrq;
pub mod conformer;
pub mod data;
pub mod encoder;
mod error;
pub mod mel;
pub mod nn;
pub mod params;
pub mod vocoder;

pub use error::{Error, Result};
