//! Training data sources and seeded crop sampling.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resyn_core::degradation::{degrade, sample_recipe, NoiseBank, RoomSampler};
use resyn_core::manifest::PairItem;
use resyn_core::signal::read_wav;
use resyn_core::synth::speech_utterance;
use resyn_core::Waveform;

use crate::encoder::SAMPLES_PER_FRAME;
use crate::error::{Error, Result};

/// Clean clips addressed by index.
pub trait ClipSource: Sync {
    fn len(&self) -> usize;
    fn clip(&self, index: usize) -> Result<Waveform>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(noisy, clean)` pairs addressed by index.
pub trait PairSource: Sync {
    fn len(&self) -> usize;
    fn pair(&self, index: usize) -> Result<(Waveform, Waveform)>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Procedural utterances, generated on demand.
#[derive(Debug, Clone)]
pub struct SyntheticClips {
    pub seed: u64,
    pub count: usize,
    pub seconds: f64,
}

impl SyntheticClips {
    /// Enough clips of `seconds` each to total `hours`.
    pub fn hours(seed: u64, hours: f64, seconds: f64) -> Self {
        Self {
            seed,
            count: (hours * 3600.0 / seconds).round() as usize,
            seconds,
        }
    }
}

impl ClipSource for SyntheticClips {
    fn len(&self) -> usize {
        self.count
    }

    fn clip(&self, index: usize) -> Result<Waveform> {
        Ok(speech_utterance(self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64), self.seconds))
    }
}

/// Procedural utterances degraded with recipes sampled from their index.
#[derive(Debug, Clone)]
pub struct SyntheticPairs {
    pub clips: SyntheticClips,
    pub bank: NoiseBank,
    pub rooms: RoomSampler,
}

impl PairSource for SyntheticPairs {
    fn len(&self) -> usize {
        self.clips.len()
    }

    fn pair(&self, index: usize) -> Result<(Waveform, Waveform)> {
        let clean = self.clips.clip(index)?;
        let recipe = sample_recipe(self.clips.seed ^ (index as u64).wrapping_mul(0x9e37_79b9), &self.bank, &self.rooms)?;
        let pair = degrade(&clean, &recipe, &self.bank)?;
        Ok((pair.noisy, pair.clean))
    }
}

impl ClipSource for SyntheticPairs {
    fn len(&self) -> usize {
        self.clips.len()
    }

    /// The dry target of pair `index`.
    fn clip(&self, index: usize) -> Result<Waveform> {
        Ok(self.pair(index)?.1)
    }
}

#[derive(Debug, Clone)]
pub struct FileClips(pub Vec<PathBuf>);

impl ClipSource for FileClips {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn clip(&self, index: usize) -> Result<Waveform> {
        Ok(read_wav(&self.0[index])?)
    }
}

#[derive(Debug, Clone)]
pub struct FilePairs(pub Vec<PairItem>);

impl PairSource for FilePairs {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn pair(&self, index: usize) -> Result<(Waveform, Waveform)> {
        let item = &self.0[index];
        Ok((read_wav(&item.noisy)?, read_wav(&item.clean)?))
    }
}

impl ClipSource for FilePairs {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn clip(&self, index: usize) -> Result<Waveform> {
        Ok(read_wav(&self.0[index].clean)?)
    }
}

/// Crop length in samples for `seconds`, rounded to whole encoder frames.
pub fn crop_samples(seconds: f64) -> usize {
    ((seconds * 16000.0 / SAMPLES_PER_FRAME as f64).round().max(1.0) as usize) * SAMPLES_PER_FRAME
}

fn crop(w: &[f32], offset: usize, len: usize) -> Vec<f32> {
    let mut out: Vec<f32> = w.iter().skip(offset).take(len).copied().collect();
    out.resize(len, 0.0);
    out
}

/// Deterministic minibatch sampler: step `s` always draws the same items
/// and crop offsets for a given seed.
#[derive(Debug, Clone, Copy)]
pub struct Sampler {
    pub seed: u64,
    pub batch: usize,
    pub crop: usize,
}

impl Sampler {
    fn rng(&self, step: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ (step as u64).wrapping_mul(0xa076_1d64_78bd_642f))
    }

    pub fn clips(&self, source: &dyn ClipSource, step: usize) -> Result<Vec<Vec<f32>>> {
        if source.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = self.rng(step);
        (0..self.batch)
            .map(|_| {
                let w = source.clip(rng.random_range(0..source.len()))?;
                let off = rng.random_range(0..=w.len().saturating_sub(self.crop));
                Ok(crop(&w.samples, off, self.crop))
            })
            .collect()
    }

    /// `(noisy crops, clean crops)` with shared offsets.
    pub fn pairs(&self, source: &dyn PairSource, step: usize) -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)> {
        if source.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = self.rng(step);
        let mut noisy = Vec::with_capacity(self.batch);
        let mut clean = Vec::with_capacity(self.batch);
        for _ in 0..self.batch {
            let (n, c) = source.pair(rng.random_range(0..source.len()))?;
            let off = rng.random_range(0..=c.len().saturating_sub(self.crop));
            noisy.push(crop(&n.samples, off, self.crop));
            clean.push(crop(&c.samples, off, self.crop));
        }
        Ok((noisy, clean))
    }
}

pub fn as_slices(v: &[Vec<f32>]) -> Vec<&[f32]> {
    v.iter().map(Vec::as_slice).collect()
}
