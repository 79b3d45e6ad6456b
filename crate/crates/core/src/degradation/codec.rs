//! Self-contained codec artifacts: 8-bit µ-law and an 8 kHz telephone band.

use serde::{Deserialize, Serialize};

use crate::dsp::{filter_same, lowpass_fir};
use crate::error::{Error, Result};
use crate::signal::Waveform;

pub const MU: f64 = 255.0;
const TELEPHONE_CUTOFF_HZ: f64 = 3400.0;
const FIR_TAPS: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CodecKind {
    Mulaw8,
    ResampleLowpass,
}

impl CodecKind {
    pub const ALL: [CodecKind; 2] = [CodecKind::Mulaw8, CodecKind::ResampleLowpass];
}

impl std::str::FromStr for CodecKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mulaw8" | "mulaw" => Ok(CodecKind::Mulaw8),
            "resample_lowpass" | "lowpass" => Ok(CodecKind::ResampleLowpass),
            other => Err(Error::UnknownCodec(other.to_string())),
        }
    }
}

/// µ-law code for a sample in `[-1, 1]` (clipped). Codes are mid-tread,
/// `1..=255` with 128 for zero, so silence survives exactly.
pub fn mulaw_encode(x: f32) -> u8 {
    let x = (x as f64).clamp(-1.0, 1.0);
    let y = x.signum() * (1.0 + MU * x.abs()).ln() / (1.0 + MU).ln();
    (128.0 + (y * 127.0).round()) as u8
}

pub fn mulaw_decode(code: u8) -> f32 {
    let y = ((code.max(1) as f64) - 128.0) / 127.0;
    (y.signum() * ((1.0 + MU).powf(y.abs()) - 1.0) / MU) as f32
}

/// Applies a codec round trip. Output has the input's length and rate.
///
/// `seed` selects the decimation phase of the band-limiting codec; µ-law is
/// deterministic.
pub fn apply_codec(wave: &Waveform, kind: CodecKind, seed: u64) -> Result<Waveform> {
    let samples = match kind {
        CodecKind::Mulaw8 => wave
            .samples
            .iter()
            .map(|&s| mulaw_decode(mulaw_encode(s)))
            .collect(),
        CodecKind::ResampleLowpass => telephone_band(&wave.samples, wave.sample_rate, (seed & 1) as usize),
    };
    Ok(Waveform {
        samples,
        sample_rate: wave.sample_rate,
    })
}

/// Low-pass at 3.4 kHz, keep every other sample, then zero-stuff and
/// interpolate back to the original rate.
fn telephone_band(x: &[f32], sample_rate: u32, phase: usize) -> Vec<f32> {
    let sr = sample_rate as f64;
    let h = lowpass_fir(TELEPHONE_CUTOFF_HZ, sr, FIR_TAPS);
    let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let band = filter_same(&x, &h);
    let stuffed: Vec<f64> = band
        .iter()
        .enumerate()
        .map(|(i, &v)| if i % 2 == phase { 2.0 * v } else { 0.0 })
        .collect();
    filter_same(&stuffed, &h).into_iter().map(|v| v as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{stft, StftConfig};
    use std::f64::consts::PI;

    #[test]
    fn silence_passes_through_both_codecs() {
        let x = Waveform::zeros(4000);
        for kind in CodecKind::ALL {
            for seed in 0..2 {
                let y = apply_codec(&x, kind, seed).unwrap();
                assert_eq!(y.len(), x.len());
                assert!(y.samples.iter().all(|&s| s.abs() < 1e-7), "{kind:?}");
            }
        }
    }

    #[test]
    fn mulaw_levels_are_monotone_and_symmetric() {
        let levels: Vec<f32> = (1..=255u8).map(mulaw_decode).collect();
        assert!(levels.windows(2).all(|w| w[0] < w[1]));
        assert!((levels[0] + 1.0).abs() < 1e-6 && (levels[254] - 1.0).abs() < 1e-6);
        assert_eq!(mulaw_decode(128), 0.0);
        for k in 1..=127u8 {
            assert_eq!(mulaw_decode(128 + k), -mulaw_decode(128 - k));
        }
        for code in 1..=255u8 {
            assert_eq!(mulaw_encode(mulaw_decode(code)), code);
        }
    }

    #[test]
    fn telephone_band_removes_high_frequencies() {
        let len = 16000;
        let sine = |f: f64| {
            Waveform::from_samples(
                (0..len)
                    .map(|n| (0.5 * (2.0 * PI * f * n as f64 / 16000.0).sin()) as f32)
                    .collect(),
            )
        };
        let cfg = StftConfig::hann(1024, 256).unwrap();
        let band_energy = |w: &Waveform| -> f64 {
            let spec = stft(w, &cfg).unwrap();
            let nb = spec.num_bins();
            let lo = 4000 * 1024 / 16000;
            (2..spec.num_frames - 2)
                .flat_map(|t| (lo..nb).map(move |k| (t, k)))
                .map(|(t, k)| spec.frame(t)[k].norm_sqr())
                .sum()
        };
        let x = sine(6000.0);
        let y = apply_codec(&x, CodecKind::ResampleLowpass, 0).unwrap();
        let atten = 10.0 * (band_energy(&x) / band_energy(&y)).log10();
        assert!(atten >= 40.0, "attenuation {atten} dB");

        // in-band content survives
        let x = sine(1000.0);
        let y = apply_codec(&x, CodecKind::ResampleLowpass, 1).unwrap();
        let err: f32 = x.samples[500..15500]
            .iter()
            .zip(&y.samples[500..15500])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(err < 0.01, "{err}");
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("mulaw8".parse::<CodecKind>().unwrap(), CodecKind::Mulaw8);
        assert!(matches!("mp3".parse::<CodecKind>(), Err(Error::UnknownCodec(_))));
    }
}
