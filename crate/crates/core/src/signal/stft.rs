use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

/// STFT parameters. Construction validates that the squared window
/// overlap-adds to a constant at the given hop, which is what makes
/// [`istft`] an exact inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    fft_size: usize,
    hop: usize,
    window: Window,
    center: bool,
}

impl StftConfig {
    pub fn new(fft_size: usize, hop: usize, window: Window, center: bool) -> Result<Self> {
        if fft_size < 2 || hop == 0 {
            return Err(Error::InvalidStft(format!(
                "fft_size={fft_size}, hop={hop}"
            )));
        }
        if hop > fft_size {
            return Err(Error::InvalidStft(format!(
                "hop {hop} exceeds fft_size {fft_size}"
            )));
        }
        let w = window.coefficients(fft_size);
        let env = steady_state_envelope(&w, hop);
        let max = env.iter().cloned().fold(f64::MIN, f64::max);
        let min = env.iter().cloned().fold(f64::MAX, f64::min);
        if max <= 0.0 || (max - min) / max > 1e-6 {
            return Err(Error::InvalidStft(format!(
                "{window:?} window of {fft_size} with hop {hop} is not constant-overlap-add"
            )));
        }
        Ok(Self {
            fft_size,
            hop,
            window,
            center,
        })
    }

    /// Hann, 75% overlap, center-padded.
    pub fn hann(fft_size: usize, hop: usize) -> Result<Self> {
        Self::new(fft_size, hop, Window::Hann, true)
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }
    pub fn hop(&self) -> usize {
        self.hop
    }
    pub fn window(&self) -> Window {
        self.window
    }
    pub fn center(&self) -> bool {
        self.center
    }
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Length after padding, as framed by [`stft`].
    pub fn padded_len(&self, signal_len: usize) -> usize {
        if self.center {
            signal_len + self.fft_size
        } else {
            signal_len.max(self.fft_size)
        }
    }

    pub fn num_frames(&self, signal_len: usize) -> usize {
        1 + (self.padded_len(signal_len) - self.fft_size) / self.hop
    }
}

/// Sum of `w^2` shifted by multiples of `hop`, over one window period in the
/// fully-overlapped region.
fn steady_state_envelope(w: &[f64], hop: usize) -> Vec<f64> {
    let n = w.len();
    let mut env = vec![0.0; n];
    for (i, e) in env.iter_mut().enumerate() {
        let mut k = i % hop;
        while k < n {
            *e += w[k] * w[k];
            k += hop;
        }
    }
    env
}

/// Complex spectrogram, frames-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Vec<Complex64>,
    pub num_frames: usize,
    pub config: StftConfig,
    /// Length of the analysed signal, needed to undo the padding.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn num_bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let nb = self.num_bins();
        &self.bins[t * nb..(t + 1) * nb]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }
}

pub fn stft(wave: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    if wave.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let n = cfg.fft_size;
    let offset = if cfg.center { n / 2 } else { 0 };
    let padded_len = cfg.padded_len(wave.len());
    let mut padded = vec![0.0f64; padded_len];
    for (i, &s) in wave.samples.iter().enumerate() {
        padded[offset + i] = s as f64;
    }
    let num_frames = cfg.num_frames(wave.len());
    let nb = cfg.num_bins();
    let window = cfg.window.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut bins = Vec::with_capacity(num_frames * nb);
    for t in 0..num_frames {
        let start = t * cfg.hop;
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(padded[start + k] * window[k], 0.0);
        }
        fft.process(&mut buf);
        bins.extend_from_slice(&buf[..nb]);
    }
    Ok(Spectrogram {
        bins,
        num_frames,
        config: *cfg,
        signal_len: wave.len(),
    })
}

/// Weighted overlap-add inverse of [`stft`].
pub fn istft(spec: &Spectrogram) -> Result<Waveform> {
    let cfg = spec.config;
    let n = cfg.fft_size;
    let nb = cfg.num_bins();
    if spec.bins.len() != spec.num_frames * nb {
        return Err(Error::ConfigMismatch(format!(
            "{} bins for {} frames of {} bins",
            spec.bins.len(),
            spec.num_frames,
            nb
        )));
    }
    if spec.num_frames != cfg.num_frames(spec.signal_len) {
        return Err(Error::ConfigMismatch(format!(
            "{} frames, config implies {}",
            spec.num_frames,
            cfg.num_frames(spec.signal_len)
        )));
    }
    let window = cfg.window.coefficients(n);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let padded_len = cfg.padded_len(spec.signal_len);
    let mut acc = vec![0.0f64; padded_len];
    let mut env = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..spec.num_frames {
        let frame = spec.frame(t);
        buf[..nb].copy_from_slice(frame);
        for k in nb..n {
            buf[k] = frame[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for k in 0..n {
            acc[start + k] += buf[k].re / n as f64 * window[k];
            env[start + k] += window[k] * window[k];
        }
    }
    let offset = if cfg.center { n / 2 } else { 0 };
    let samples = (0..spec.signal_len)
        .map(|i| {
            let e = env[offset + i];
            if e > 1e-10 {
                (acc[offset + i] / e) as f32
            } else {
                0.0
            }
        })
        .collect();
    Ok(Waveform::from_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::from_samples((0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect())
    }

    #[test]
    fn rejects_non_cola_configs() {
        assert!(StftConfig::hann(512, 128).is_ok());
        assert!(StftConfig::hann(480, 160).is_ok());
        // Hann squared does not overlap-add to a constant at 50%.
        assert!(StftConfig::hann(512, 256).is_err());
        assert!(StftConfig::hann(512, 100).is_err());
        assert!(StftConfig::hann(512, 1024).is_err());
        assert!(StftConfig::new(512, 512, Window::Rectangular, false).is_ok());
    }

    #[test]
    fn silence_has_zero_magnitude_and_inverts_to_silence() {
        let cfg = StftConfig::hann(512, 128).unwrap();
        let spec = stft(&Waveform::zeros(16000), &cfg).unwrap();
        assert!(spec.magnitudes().iter().all(|&m| m == 0.0));
        let back = istft(&spec).unwrap();
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn empty_input_is_error() {
        let cfg = StftConfig::hann(512, 128).unwrap();
        assert!(matches!(
            stft(&Waveform::zeros(0), &cfg),
            Err(Error::EmptyWaveform)
        ));
    }

    /// Direct O(N^2) DFT of one windowed frame.
    fn dft_magnitudes(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, &x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * j) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let cfg = StftConfig::hann(512, 128).unwrap();
        let wave = Waveform::from_samples(
            (0..16000)
                .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16000.0).sin() as f32)
                .collect(),
        );
        let spec = stft(&wave, &cfg).unwrap();
        // 1000 Hz * 512 / 16000 = bin 32.
        for t in 2..spec.num_frames - 2 {
            let frame = spec.frame(t);
            let argmax = (0..frame.len())
                .max_by(|&a, &b| frame[a].norm().partial_cmp(&frame[b].norm()).unwrap())
                .unwrap();
            assert_eq!(argmax, 32, "frame {t}");
        }
        // cross-check one interior frame against a direct DFT
        let t = 10;
        let w = Window::Hann.coefficients(512);
        let start = t * 128 - 256;
        let frame: Vec<f64> = (0..512)
            .map(|k| wave.samples[start + k] as f64 * w[k])
            .collect();
        let direct = dft_magnitudes(&frame);
        for (a, b) in direct.iter().zip(spec.frame(t)) {
            assert!((a - b.norm()).abs() < 1e-8);
        }
    }

    #[test]
    fn round_trip_white_noise() {
        let cfg = StftConfig::hann(512, 128).unwrap();
        let x = noise(48000, 1);
        let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
        assert_eq!(x.len(), y.len());
        let err = x
            .samples
            .iter()
            .zip(&y.samples)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-6, "max abs err {err}");
    }

    #[test]
    fn round_trip_chirp_preserves_length() {
        for len in [1000usize, 4097, 16001] {
            let x = Waveform::from_samples(
                (0..len)
                    .map(|n| {
                        let t = n as f64 / 16000.0;
                        (2.0 * PI * (100.0 + 2000.0 * t) * t).sin() as f32 * 0.5
                    })
                    .collect(),
            );
            for cfg in [
                StftConfig::hann(512, 128).unwrap(),
                StftConfig::hann(1024, 256).unwrap(),
            ] {
                let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
                assert_eq!(y.len(), len);
                let err = x
                    .samples
                    .iter()
                    .zip(&y.samples)
                    .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
                assert!(err < 1e-6);
            }
        }
    }

    #[test]
    fn frame_count_law() {
        let cfg = StftConfig::new(512, 128, Window::Hann, false).unwrap();
        let spec = stft(&noise(5000, 2), &cfg).unwrap();
        assert_eq!(spec.num_frames, 1 + (5000 - 512) / 128);
        let cfg = StftConfig::hann(512, 128).unwrap();
        let spec = stft(&noise(5000, 2), &cfg).unwrap();
        assert_eq!(spec.num_frames, 1 + (5000 + 512 - 512) / 128);
    }

    #[test]
    fn istft_rejects_mismatched_frames() {
        let cfg = StftConfig::hann(512, 128).unwrap();
        let mut spec = stft(&noise(4000, 3), &cfg).unwrap();
        spec.signal_len = 8000;
        assert!(matches!(istft(&spec), Err(Error::ConfigMismatch(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn stft_is_linear(seed in 0u64..1000, a in -10.0f64..10.0) {
                let cfg = StftConfig::hann(256, 64).unwrap();
                let x = noise(2000, seed);
                let ax = Waveform::from_samples(
                    x.samples.iter().map(|&s| (s as f64 * a) as f32).collect(),
                );
                let sx = stft(&x, &cfg).unwrap();
                let sax = stft(&ax, &cfg).unwrap();
                let scale = sax.bins.iter().fold(1.0f64, |m, v| m.max(v.norm()));
                for (u, v) in sx.bins.iter().zip(&sax.bins) {
                    prop_assert!((u * a - v).norm() < 1e-6 * scale);
                }
            }

            #[test]
            fn round_trip_identity(seed in 0u64..1000, len in 256usize..6000) {
                let cfg = StftConfig::hann(256, 64).unwrap();
                let x = noise(len, seed);
                let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
                prop_assert_eq!(y.len(), len);
                for (a, b) in x.samples.iter().zip(&y.samples) {
                    prop_assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }
}
