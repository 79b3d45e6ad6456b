//! Waveform and spectrogram primitives shared by every other stage.

mod chunk;
mod stft;
mod wav;

pub use chunk::{chunk, rejoin, ChunkLayout};
pub use stft::{istft, stft, Spectrogram, StftConfig, Window};
pub use wav::{read_wav, write_wav, WavEncoding};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Operating sample rate of the whole system.
pub const SAMPLE_RATE: u32 = 16_000;

/// Segment length used by batched restoration and the benchmark.
pub const SEGMENT_SECONDS: f64 = 30.0;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::SampleRate {
                got: 0,
                expected: SAMPLE_RATE,
            });
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::ShapeMismatch(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Wraps samples at the operating rate. Samples are assumed finite.
    pub fn from_samples(samples: Vec<f32>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self::from_samples(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Copy of `[start, start + len)`, zero-filled past the end.
    pub fn segment(&self, start: usize, len: usize) -> Self {
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let n = len.min(self.samples.len() - start);
            out[..n].copy_from_slice(&self.samples[start..start + n]);
        }
        Self {
            samples: out,
            sample_rate: self.sample_rate,
        }
    }

    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::SampleRate {
                got: self.sample_rate,
                expected: rate,
            });
        }
        Ok(())
    }
}

/// Mean of squared samples.
pub fn power(wave: &Waveform) -> Result<f64> {
    power_of(&wave.samples)
}

pub fn power_of(samples: &[f32]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let sum: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    Ok(sum / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, len: usize) -> Waveform {
        Waveform::from_samples(
            (0..len)
                .map(|n| (amp * (2.0 * std::f64::consts::PI * freq * n as f64 / 16000.0).sin()) as f32)
                .collect(),
        )
    }

    #[test]
    fn power_of_silence_is_zero() {
        assert_eq!(power(&Waveform::zeros(16000)).unwrap(), 0.0);
    }

    #[test]
    fn power_of_unit_sine_is_half() {
        let p = power(&sine(440.0, 1.0, 16000)).unwrap();
        assert!((p - 0.5).abs() < 1e-3, "{p}");
    }

    #[test]
    fn power_of_concatenation_is_mean_of_powers() {
        let a = sine(300.0, 0.3, 8000);
        let b = sine(1100.0, 0.8, 8000);
        let mut joined = a.samples.clone();
        joined.extend_from_slice(&b.samples);
        let pj = power(&Waveform::from_samples(joined)).unwrap();
        let expected = 0.5 * (power(&a).unwrap() + power(&b).unwrap());
        assert!((pj - expected).abs() < 1e-12);
    }

    #[test]
    fn power_of_empty_is_error() {
        assert!(matches!(
            power(&Waveform::zeros(0)),
            Err(Error::EmptyWaveform)
        ));
    }

    #[test]
    fn rejects_non_finite_and_zero_rate() {
        assert!(Waveform::new(vec![0.0, f32::NAN], 16000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
        let w = Waveform::new(vec![0.0; 32000], 16000).unwrap();
        assert_eq!(w.duration_seconds(), 2.0);
    }
}
