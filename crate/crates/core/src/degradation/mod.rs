//! Paired (noisy, clean) data simulation: reverberation, additive noise at a
//! controlled SNR, and codec artifacts, combined in four patterns.

mod codec;
mod mix;
mod rir;

pub use codec::{apply_codec, mulaw_decode, mulaw_encode, CodecKind, MU};
pub use mix::{fit_noise, measured_snr_db, mix_at_snr, Mixture, MAX_SNR_DB, MIN_SNR_DB};
pub use rir::{
    decay_time, energy_decay_curve, generate_rir, image_sources, Arrival, RoomSpec, MAX_ORDER_LIMIT,
    SINC_TAPS,
};

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::fft_convolve;
use crate::error::{Error, Result};
use crate::signal::{read_wav, Waveform};

/// The four augmentation patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pattern {
    NoiseOnly,
    Reverb,
    Codec,
    ReverbCodec,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::NoiseOnly,
        Pattern::Reverb,
        Pattern::Codec,
        Pattern::ReverbCodec,
    ];

    pub fn reverb(self) -> bool {
        matches!(self, Pattern::Reverb | Pattern::ReverbCodec)
    }

    pub fn codec(self) -> bool {
        matches!(self, Pattern::Codec | Pattern::ReverbCodec)
    }
}

/// Full description of one synthetic corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    pub snr_db: f64,
    pub apply_reverb: bool,
    pub apply_codec: bool,
    pub codec_kind: Option<CodecKind>,
    pub room: Option<RoomSpec>,
    pub noise_id: String,
    pub seed: u64,
}

impl DegradationRecipe {
    pub fn pattern(&self) -> Pattern {
        match (self.apply_reverb, self.apply_codec) {
            (false, false) => Pattern::NoiseOnly,
            (true, false) => Pattern::Reverb,
            (false, true) => Pattern::Codec,
            (true, true) => Pattern::ReverbCodec,
        }
    }

    pub fn validate(&self, strict: bool) -> Result<()> {
        if self.apply_reverb != self.room.is_some() {
            return Err(Error::InvalidRecipe("room must be present iff reverb is applied".into()));
        }
        if self.apply_codec != self.codec_kind.is_some() {
            return Err(Error::InvalidRecipe("codec kind must be present iff codec is applied".into()));
        }
        if let Some(room) = &self.room {
            room.validate()?;
        }
        if strict && !(MIN_SNR_DB..=MAX_SNR_DB).contains(&self.snr_db) {
            return Err(Error::SnrOutOfRange(self.snr_db));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone)]
pub struct NoiseEntry {
    pub id: String,
    pub duration_seconds: f64,
    source: NoiseSource,
}

#[derive(Debug, Clone)]
enum NoiseSource {
    File(PathBuf),
    Memory(Arc<Waveform>),
}

/// Indexed collection of noise recordings.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    entries: Vec<NoiseEntry>,
}

impl NoiseBank {
    /// Reads a `path<TAB>duration_seconds` manifest. Relative paths resolve
    /// against the manifest's directory; every file must open as a WAV.
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (file, dur) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected `path<TAB>duration`".into()))?;
            let duration: f64 = dur.trim().parse().map_err(|_| bad(format!("bad duration `{dur}`")))?;
            if !(duration > 0.0) {
                return Err(bad(format!("non-positive duration {duration}")));
            }
            let resolved = base.join(file);
            hound::WavReader::open(&resolved).map_err(|source| Error::Wav {
                path: resolved.clone(),
                source,
            })?;
            entries.push(NoiseEntry {
                id: file.to_string(),
                duration_seconds: duration,
                source: NoiseSource::File(resolved),
            });
        }
        Ok(Self { entries })
    }

    pub fn in_memory(items: Vec<(String, Waveform)>) -> Result<Self> {
        let entries = items
            .into_iter()
            .map(|(id, w)| {
                if w.is_empty() {
                    return Err(Error::Silent("noise"));
                }
                Ok(NoiseEntry {
                    id,
                    duration_seconds: w.duration_seconds(),
                    source: NoiseSource::Memory(Arc::new(w)),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[NoiseEntry] {
        &self.entries
    }

    pub fn load(&self, id: &str) -> Result<Arc<Waveform>> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownNoise(id.to_string()))?;
        match &entry.source {
            NoiseSource::File(p) => Ok(Arc::new(read_wav(p)?)),
            NoiseSource::Memory(w) => Ok(Arc::clone(w)),
        }
    }
}

/// Uniform ranges for stochastic rooms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSampler {
    pub dim_range: (f64, f64),
    pub absorption_range: (f64, f64),
    /// Minimum distance of source and mic from every wall.
    pub wall_margin: f64,
    pub max_order: u32,
    pub speed_of_sound: f64,
}

impl Default for RoomSampler {
    fn default() -> Self {
        Self {
            dim_range: (3.0, 10.0),
            absorption_range: (0.1, 0.6),
            wall_margin: 0.5,
            max_order: 8,
            speed_of_sound: 343.0,
        }
    }
}

impl RoomSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RoomSpec {
        let dims: [f64; 3] = std::array::from_fn(|_| rng.random_range(self.dim_range.0..=self.dim_range.1));
        let alpha = rng.random_range(self.absorption_range.0..=self.absorption_range.1);
        let source_pos = self.position(rng, &dims);
        let mut mic_pos = self.position(rng, &dims);
        while mic_pos == source_pos {
            mic_pos = self.position(rng, &dims);
        }
        RoomSpec {
            dimensions: dims,
            absorption: [alpha; 6],
            source_pos,
            mic_pos,
            max_order: self.max_order,
            speed_of_sound: self.speed_of_sound,
        }
    }

    fn position<R: Rng + ?Sized>(&self, rng: &mut R, dims: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| rng.random_range(self.wall_margin..=dims[a] - self.wall_margin))
    }
}

/// Draws a recipe; a pure function of `seed` and the bank's id order.
pub fn sample_recipe(seed: u64, bank: &NoiseBank, rooms: &RoomSampler) -> Result<DegradationRecipe> {
    if bank.is_empty() {
        return Err(Error::EmptyNoiseBank);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern = Pattern::ALL[rng.random_range(0..4)];
    let snr_db = rng.random_range(MIN_SNR_DB..=MAX_SNR_DB);
    let noise_id = bank.entries[rng.random_range(0..bank.len())].id.clone();
    let room = pattern.reverb().then(|| rooms.sample(&mut rng));
    let codec_kind = pattern
        .codec()
        .then(|| CodecKind::ALL[rng.random_range(0..CodecKind::ALL.len())]);
    let item_seed = rng.random();
    Ok(DegradationRecipe {
        snr_db,
        apply_reverb: pattern.reverb(),
        apply_codec: pattern.codec(),
        codec_kind,
        room,
        noise_id,
        seed: item_seed,
    })
}

/// A simulated training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradedPair {
    pub noisy: Waveform,
    /// Dry clean speech, time-aligned with `noisy`.
    pub clean: Waveform,
}

/// Peak level the mixture is normalised to when it would clip.
pub const PEAK_LIMIT: f32 = 0.99;

/// Reverb (if any), then noise, then codec (if any). The reverberant signal
/// is advanced by the rounded direct-path delay so it stays aligned with the
/// dry target.
pub fn degrade(clean: &Waveform, recipe: &DegradationRecipe, bank: &NoiseBank) -> Result<DegradedPair> {
    recipe.validate(false)?;
    if clean.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let speech = match &recipe.room {
        Some(room) => {
            let rir = generate_rir(room, clean.sample_rate)?;
            let wet = fft_convolve(&clean.samples, &rir.samples);
            let delay = room.direct_delay(clean.sample_rate).round() as usize;
            Waveform {
                samples: (0..clean.len()).map(|i| wet.get(i + delay).copied().unwrap_or(0.0)).collect(),
                sample_rate: clean.sample_rate,
            }
        }
        None => clean.clone(),
    };

    let noise = bank.load(&recipe.noise_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let offset = rng.random_range(0..noise.len().max(1));
    let rotated: Vec<f32> = (0..noise.len()).map(|i| noise.samples[(offset + i) % noise.len()]).collect();
    let noise = Waveform {
        samples: rotated,
        sample_rate: noise.sample_rate,
    };
    let mut noisy = mix_at_snr(&speech, &noise, recipe.snr_db, false)?.mixture;
    let mut target = clean.clone();

    let peak = noisy.peak();
    if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        noisy = noisy.scaled(g);
        target = target.scaled(g);
    }
    if let Some(kind) = recipe.codec_kind {
        noisy = apply_codec(&noisy, kind, recipe.seed)?;
    }
    Ok(DegradedPair { noisy, clean: target })
}

/// Writes a noise manifest for `(relative path, duration)` entries.
pub fn write_noise_manifest(path: impl AsRef<Path>, entries: &[(String, f64)]) -> Result<()> {
    let path = path.as_ref();
    let text: String = entries.iter().map(|(p, d)| format!("{p}\t{d}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::power;

    fn tone(len: usize, period: f32, amp: f32) -> Waveform {
        Waveform::from_samples(
            (0..len)
                .map(|i| amp * (2.0 * std::f32::consts::PI * i as f32 / period).sin())
                .collect(),
        )
    }

    fn bank() -> NoiseBank {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let white = Waveform::from_samples((0..16000).map(|_| rng.random_range(-0.5f32..0.5)).collect());
        NoiseBank::in_memory(vec![("white".into(), white), ("hum".into(), tone(8000, 320.0, 0.2))]).unwrap()
    }

    fn speechish(len: usize) -> Waveform {
        Waveform::from_samples(
            (0..len)
                .map(|i| {
                    let t = i as f32 / 16000.0;
                    let env = (std::f32::consts::PI * t * 3.0).sin().abs();
                    env * 0.3 * ((2.0 * std::f32::consts::PI * 180.0 * t).sin() + 0.5 * (2.0 * std::f32::consts::PI * 540.0 * t).sin())
                })
                .collect(),
        )
    }

    #[test]
    fn recipes_are_deterministic() {
        let b = bank();
        let r = RoomSampler::default();
        assert_eq!(sample_recipe(42, &b, &r).unwrap(), sample_recipe(42, &b, &r).unwrap());
        assert_ne!(sample_recipe(42, &b, &r).unwrap(), sample_recipe(43, &b, &r).unwrap());
    }

    #[test]
    fn empty_bank_is_error() {
        assert!(matches!(
            sample_recipe(1, &NoiseBank::default(), &RoomSampler::default()),
            Err(Error::EmptyNoiseBank)
        ));
    }

    #[test]
    fn pattern_frequencies_and_snr_moments() {
        let b = bank();
        let r = RoomSampler::default();
        let mut counts = [0usize; 4];
        let mut snr_sum = 0.0;
        let n = 10_000;
        for seed in 0..n {
            let rec = sample_recipe(seed, &b, &r).unwrap();
            rec.validate(true).unwrap();
            counts[Pattern::ALL.iter().position(|&p| p == rec.pattern()).unwrap()] += 1;
            snr_sum += rec.snr_db;
            if let Some(room) = &rec.room {
                for a in 0..3 {
                    assert!((3.0..=10.0).contains(&room.dimensions[a]));
                    assert!(room.mic_pos[a] >= 0.5 && room.mic_pos[a] <= room.dimensions[a] - 0.5);
                }
                assert!((0.1..=0.6).contains(&room.absorption[0]));
            }
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.25).abs() <= 0.02, "{counts:?}");
        }
        let mean = snr_sum / n as f64;
        assert!((17.0..=18.0).contains(&mean), "{mean}");
    }

    #[test]
    fn recipe_json_round_trip() {
        let b = bank();
        let rec = (0..20)
            .map(|s| sample_recipe(s, &b, &RoomSampler::default()).unwrap())
            .find(|r| r.apply_reverb && r.apply_codec)
            .unwrap();
        let json = rec.to_json().unwrap();
        assert!(json.contains("snr_db") && json.contains("noise_id"));
        assert_eq!(DegradationRecipe::from_json(&json).unwrap(), rec);
    }

    #[test]
    fn invalid_recipes_rejected() {
        let b = bank();
        let mut rec = sample_recipe(3, &b, &RoomSampler::default()).unwrap();
        rec.apply_reverb = !rec.apply_reverb;
        assert!(matches!(rec.validate(false), Err(Error::InvalidRecipe(_))));
        let mut rec = sample_recipe(3, &b, &RoomSampler::default()).unwrap();
        rec.snr_db = 40.0;
        assert!(rec.validate(false).is_ok());
        assert!(rec.validate(true).is_err());
        rec.noise_id = "nope".into();
        assert!(matches!(degrade(&speechish(1600), &rec, &b), Err(Error::UnknownNoise(_))));
    }

    #[test]
    fn noise_only_pattern_equals_plain_mix() {
        let b = bank();
        let clean = speechish(8000);
        let rec = DegradationRecipe {
            snr_db: 12.0,
            apply_reverb: false,
            apply_codec: false,
            codec_kind: None,
            room: None,
            noise_id: "white".into(),
            seed: 7,
        };
        let pair = degrade(&clean, &rec, &b).unwrap();
        let noise = b.load("white").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let offset = rng.random_range(0..noise.len());
        let rotated = Waveform::from_samples((0..noise.len()).map(|i| noise.samples[(offset + i) % noise.len()]).collect());
        let expected = mix_at_snr(&clean, &rotated, 12.0, true).unwrap().mixture;
        assert!(expected.peak() <= PEAK_LIMIT);
        assert_eq!(pair.noisy, expected);
        assert_eq!(pair.clean, clean);
    }

    #[test]
    fn peak_normalisation_scales_both() {
        let b = bank();
        let clean = tone(4000, 40.0, 0.98);
        let rec = DegradationRecipe {
            snr_db: 5.0,
            apply_reverb: false,
            apply_codec: false,
            codec_kind: None,
            room: None,
            noise_id: "white".into(),
            seed: 1,
        };
        let pair = degrade(&clean, &rec, &b).unwrap();
        assert!((pair.noisy.peak() - PEAK_LIMIT).abs() < 1e-6);
        let g = pair.clean.samples[10] / clean.samples[10];
        assert!(g < 1.0);
        assert!((power(&pair.clean).unwrap() - power(&clean).unwrap() * (g as f64).powi(2)).abs() < 1e-6);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        crate::signal::write_wav(dir.path().join("n0.wav"), &tone(1600, 20.0, 0.1), Default::default()).unwrap();
        write_noise_manifest(dir.path().join("noise.tsv"), &[("n0.wav".into(), 0.1)]).unwrap();
        let bank = NoiseBank::from_manifest(dir.path().join("noise.tsv")).unwrap();
        assert_eq!(bank.len(), 1);
        assert_eq!(bank.load("n0.wav").unwrap().len(), 1600);

        std::fs::write(dir.path().join("bad.tsv"), "n0.wav\t-1\n").unwrap();
        assert!(matches!(NoiseBank::from_manifest(dir.path().join("bad.tsv")), Err(Error::Manifest { .. })));
        std::fs::write(dir.path().join("missing.tsv"), "gone.wav\t1.0\n").unwrap();
        assert!(NoiseBank::from_manifest(dir.path().join("missing.tsv")).is_err());
    }
}
