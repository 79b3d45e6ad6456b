//! Procedural speech-like audio and environmental noise.
//!
//! Utterances are sequences of syllables: a glottal harmonic source shaped
//! by three formant resonators, optional fricative onsets, and digital
//! silence between words. Nothing here is meant to be intelligible; it gives
//! the desk-scale experiments harmonic, formant-structured, bursty material
//! with exact clean references.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::degradation::NoiseBank;
use crate::error::Result;
use crate::signal::{Waveform, SAMPLE_RATE};

const SR: f64 = SAMPLE_RATE as f64;

/// (F1, F2, F3) in Hz.
const VOWELS: [(f64, f64, f64); 6] = [
    (730.0, 1090.0, 2440.0),
    (530.0, 1840.0, 2480.0),
    (270.0, 2290.0, 3010.0),
    (570.0, 840.0, 2410.0),
    (300.0, 870.0, 2240.0),
    (660.0, 1720.0, 2410.0),
];

/// Two-pole resonator with unity gain at its centre frequency.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64) -> Self {
        let r = (-PI * bandwidth / SR).exp();
        let theta = 2.0 * PI * freq / SR;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn ramp_envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    if i < ramp {
        0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
    } else if i >= len - ramp {
        0.5 - 0.5 * (PI * (len - 1 - i) as f64 / ramp as f64).cos()
    } else {
        1.0
    }
}

fn syllable(rng: &mut ChaCha8Rng, f0: f64, formant_scale: f64, out: &mut Vec<f64>) {
    // fricative onset
    if rng.random_bool(0.4) {
        let len = (rng.random_range(0.03..0.08) * SR) as usize;
        let mut prev = 0.0;
        let amp = rng.random_range(0.05..0.2);
        for i in 0..len {
            let w: f64 = StandardNormal.sample(rng);
            let hp = w - prev;
            prev = w;
            out.push(amp * hp * ramp_envelope(i, len, len / 3));
        }
    }
    let len = (rng.random_range(0.10..0.25) * SR) as usize;
    let (f1, f2, f3) = VOWELS[rng.random_range(0..VOWELS.len())];
    let mut res = [
        Resonator::new(f1 * formant_scale, 90.0),
        Resonator::new(f2 * formant_scale, 110.0),
        Resonator::new(f3 * formant_scale, 150.0),
    ];
    let glide = rng.random_range(0.8..1.2);
    let mut phase = rng.random_range(0.0..2.0 * PI);
    for i in 0..len {
        let frac = i as f64 / len as f64;
        let f = f0 * (1.0 + (glide - 1.0) * frac);
        phase += 2.0 * PI * f / SR;
        let harmonics = ((4000.0 / f) as usize).max(1);
        let src: f64 = (1..=harmonics).map(|k| (k as f64 * phase).sin() / k as f64).sum();
        let y = res[0].process(src) * 1.0 + res[1].process(src) * 0.6 + res[2].process(src) * 0.3;
        out.push(y * ramp_envelope(i, len, (0.02 * SR) as usize));
    }
}

/// Speech-like utterance of exactly `duration` seconds, with digital
/// silence at the edges and between words. RMS over the active part is
/// drawn from -30..-18 dBFS.
pub fn speech_utterance(seed: u64, duration: f64) -> Waveform {
    let total = (duration * SR).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.random_range(90.0..240.0);
    let formant_scale = rng.random_range(0.85..1.15);
    let level_db: f64 = rng.random_range(-30.0..-18.0);

    let mut out: Vec<f64> = vec![0.0; (rng.random_range(0.05..0.3) * SR) as usize];
    while out.len() < total {
        for _ in 0..rng.random_range(1..4) {
            let f = f0 * rng.random_range(0.9..1.1);
            syllable(&mut rng, f, formant_scale, &mut out);
        }
        out.extend(std::iter::repeat_n(0.0, (rng.random_range(0.05..0.3) * SR) as usize));
    }
    out.truncate(total);
    // end on digital silence
    let tail = ((0.05 * SR) as usize).min(total);
    out[total - tail..].iter_mut().for_each(|v| *v = 0.0);

    let active: Vec<f64> = out.iter().copied().filter(|v| *v != 0.0).collect();
    let rms = if active.is_empty() {
        1.0
    } else {
        (active.iter().map(|v| v * v).sum::<f64>() / active.len() as f64).sqrt()
    };
    let gain = 10f64.powf(level_db / 20.0) / rms.max(1e-12);
    Waveform::from_samples(out.into_iter().map(|v| (v * gain) as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    Babble,
    Hum,
    Clatter,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::Brown,
        NoiseKind::Babble,
        NoiseKind::Hum,
        NoiseKind::Clatter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Brown => "brown",
            NoiseKind::Babble => "babble",
            NoiseKind::Hum => "hum",
            NoiseKind::Clatter => "clatter",
        }
    }
}

fn pink(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    // Paul Kellet's economy filter
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    (0..len)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

/// Noise of `duration` seconds normalised to 0.1 RMS.
pub fn noise(kind: NoiseKind, seed: u64, duration: f64) -> Waveform {
    let len = (duration * SR).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let raw: Vec<f64> = match kind {
        NoiseKind::White => (0..len).map(|_| StandardNormal.sample(&mut rng)).collect(),
        NoiseKind::Pink => pink(&mut rng, len),
        NoiseKind::Brown => {
            let mut acc = 0.0;
            (0..len)
                .map(|_| {
                    let w: f64 = StandardNormal.sample(&mut rng);
                    acc = 0.995 * acc + w;
                    acc
                })
                .collect()
        }
        NoiseKind::Babble => {
            let mut sum = vec![0.0; len];
            for k in 0..5 {
                let u = speech_utterance(rng.random::<u64>() ^ k, duration);
                sum.iter_mut().zip(&u.samples).for_each(|(s, &v)| *s += v as f64);
            }
            sum
        }
        NoiseKind::Hum => {
            let base = if rng.random_bool(0.5) { 50.0 } else { 60.0 };
            let floor = pink(&mut rng, len);
            (0..len)
                .map(|i| {
                    let t = i as f64 / SR;
                    (1..=6)
                        .map(|h| (2.0 * PI * base * h as f64 * t).sin() / h as f64)
                        .sum::<f64>()
                        + 0.05 * floor[i]
                })
                .collect()
        }
        NoiseKind::Clatter => {
            let mut out = pink(&mut rng, len);
            out.iter_mut().for_each(|v| *v *= 0.05);
            let clicks = (duration * rng.random_range(2.0..8.0)) as usize;
            for _ in 0..clicks {
                let at = rng.random_range(0..len.max(1));
                let freq = rng.random_range(1500.0..6000.0);
                let decay = rng.random_range(0.005..0.03) * SR;
                let amp = rng.random_range(0.5..2.0);
                for j in 0..(decay * 5.0) as usize {
                    if at + j >= len {
                        break;
                    }
                    out[at + j] += amp * (-(j as f64) / decay).exp() * (2.0 * PI * freq * j as f64 / SR).sin();
                }
            }
            out
        }
    };
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    let gain = 0.1 / rms.max(1e-12);
    Waveform::from_samples(raw.into_iter().map(|v| (v * gain) as f32).collect())
}

/// One clip of each noise kind, `per_kind` times, as an in-memory bank.
/// Ids are `<kind>_<k>`.
pub fn noise_clips(seed: u64, per_kind: usize, duration: f64) -> Vec<(String, Waveform)> {
    let mut out = Vec::new();
    for k in 0..per_kind {
        for (j, kind) in NoiseKind::ALL.iter().enumerate() {
            let s = seed.wrapping_mul(1_000_003).wrapping_add((k * 16 + j) as u64);
            out.push((format!("{}_{k}", kind.name()), noise(*kind, s, duration)));
        }
    }
    out
}

pub fn noise_bank(seed: u64, per_kind: usize, duration: f64) -> Result<NoiseBank> {
    NoiseBank::in_memory(noise_clips(seed, per_kind, duration))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::power;

    #[test]
    fn utterance_is_deterministic_and_bounded() {
        let a = speech_utterance(3, 2.0);
        let b = speech_utterance(3, 2.0);
        assert_eq!(a, b);
        assert_eq!(a.len(), 32000);
        assert!(a.peak() < 1.0);
        assert!(power(&a).unwrap() > 0.0);
        assert_eq!(a.samples[0], 0.0);
        assert_eq!(*a.samples.last().unwrap(), 0.0);
        assert_ne!(speech_utterance(4, 2.0), a);
    }

    #[test]
    fn noises_have_unit_level() {
        for kind in NoiseKind::ALL {
            let n = noise(kind, 1, 1.0);
            assert_eq!(n.len(), 16000);
            let p = power(&n).unwrap();
            assert!((p - 0.01).abs() < 1e-4, "{kind:?} {p}");
        }
    }

    #[test]
    fn bank_ids_are_unique() {
        let bank = noise_bank(0, 2, 0.5).unwrap();
        assert_eq!(bank.len(), 12);
        let mut ids: Vec<_> = bank.entries().iter().map(|e| e.id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 12);
    }
}
