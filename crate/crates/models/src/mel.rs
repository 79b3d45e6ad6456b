//! Log-mel frontend (no gradients flow through it).

use resyn_core::signal::{stft, StftConfig, Waveform};

use crate::error::Result;

pub const FFT_SIZE: usize = 640;
pub const HOP: usize = 160;
/// Fixed affine normalisation of natural-log mel power. Constants are global
/// (not per utterance) so level information survives into the features.
const LOG_OFFSET: f64 = 1e-8;
const NORM_MEAN: f64 = -15.0;
const NORM_SCALE: f64 = 3.5;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Debug, Clone)]
pub struct LogMel {
    bins: usize,
    /// `(bins, fft/2+1)` triangular filters, row-major.
    filters: Vec<f64>,
    stft: StftConfig,
}

impl LogMel {
    pub fn new(bins: usize, sample_rate: u32) -> Result<Self> {
        let stft = StftConfig::hann(FFT_SIZE, HOP)?;
        let nfreq = FFT_SIZE / 2 + 1;
        let top = hz_to_mel(sample_rate as f64 / 2.0);
        let edges: Vec<f64> = (0..bins + 2).map(|i| mel_to_hz(top * i as f64 / (bins + 1) as f64)).collect();
        let mut filters = vec![0.0; bins * nfreq];
        for m in 0..bins {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            for k in 0..nfreq {
                let f = k as f64 * sample_rate as f64 / FFT_SIZE as f64;
                let w = if f >= lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f <= hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                filters[m * nfreq + k] = w * norm;
            }
        }
        Ok(Self { bins, filters, stft })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// `frames` normalised log-mel frames (row-major, `frames × bins`) of
    /// `samples`, which must hold exactly `frames * HOP` samples.
    pub fn compute(&self, samples: &[f32], frames: usize) -> Result<Vec<f32>> {
        let wave = Waveform::from_samples(samples.to_vec());
        let spec = stft(&wave, &self.stft)?;
        let nfreq = FFT_SIZE / 2 + 1;
        let mut out = Vec::with_capacity(frames * self.bins);
        for t in 0..frames {
            let frame = spec.frame(t);
            let power: Vec<f64> = frame.iter().map(|c| c.norm_sqr() / FFT_SIZE as f64).collect();
            for m in 0..self.bins {
                let row = &self.filters[m * nfreq..(m + 1) * nfreq];
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                out.push((((e + LOG_OFFSET).ln() - NORM_MEAN) / NORM_SCALE) as f32);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_maps_to_the_floor() {
        let mel = LogMel::new(128, 16000).unwrap();
        let v = mel.compute(&vec![0.0; 1600], 10).unwrap();
        assert_eq!(v.len(), 1280);
        let floor = ((LOG_OFFSET.ln() - NORM_MEAN) / NORM_SCALE) as f32;
        assert!(v.iter().all(|&x| (x - floor).abs() < 1e-6));
    }

    #[test]
    fn tone_lands_in_matching_band() {
        let mel = LogMel::new(64, 16000).unwrap();
        let s: Vec<f32> = (0..3200).map(|i| (2.0 * std::f32::consts::PI * 1000.0 * i as f32 / 16000.0).sin() * 0.5).collect();
        let v = mel.compute(&s, 20).unwrap();
        let frame = &v[10 * 64..11 * 64];
        let argmax = frame.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let centre = |m: usize| mel_to_hz(hz_to_mel(8000.0) * (m + 1) as f64 / 65.0);
        assert!((centre(argmax) - 1000.0).abs() < 150.0, "{}", centre(argmax));
    }
}
