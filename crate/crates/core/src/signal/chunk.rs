use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

/// Bookkeeping needed to stitch processed chunks back together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkLayout {
    pub input_len: usize,
    pub chunk_len: usize,
    pub overlap_len: usize,
    pub num_chunks: usize,
    /// Zero samples appended to the last chunk.
    pub padding: usize,
    pub sample_rate: u32,
}

impl ChunkLayout {
    pub fn new(input_len: usize, chunk_len: usize, overlap_len: usize, sample_rate: u32) -> Result<Self> {
        if chunk_len == 0 {
            return Err(Error::InvalidChunk("chunk length must be positive".into()));
        }
        if overlap_len >= chunk_len {
            return Err(Error::InvalidChunk(format!(
                "overlap {overlap_len} must be shorter than chunk {chunk_len}"
            )));
        }
        let hop = chunk_len - overlap_len;
        let num_chunks = if input_len <= chunk_len {
            1
        } else {
            1 + (input_len - chunk_len).div_ceil(hop)
        };
        let covered = (num_chunks - 1) * hop + chunk_len;
        Ok(Self {
            input_len,
            chunk_len,
            overlap_len,
            num_chunks,
            padding: covered - input_len,
            sample_rate,
        })
    }

    pub fn from_seconds(input_len: usize, chunk_seconds: f64, overlap_seconds: f64, sample_rate: u32) -> Result<Self> {
        if !(chunk_seconds > 0.0) {
            return Err(Error::InvalidChunk(format!(
                "chunk length {chunk_seconds} s must be positive"
            )));
        }
        if !(overlap_seconds >= 0.0) || overlap_seconds >= chunk_seconds {
            return Err(Error::InvalidChunk(format!(
                "overlap {overlap_seconds} s must lie in [0, {chunk_seconds})"
            )));
        }
        let sr = sample_rate as f64;
        Self::new(
            input_len,
            (chunk_seconds * sr).round() as usize,
            (overlap_seconds * sr).round() as usize,
            sample_rate,
        )
    }

    pub fn hop(&self) -> usize {
        self.chunk_len - self.overlap_len
    }

    pub fn start(&self, k: usize) -> usize {
        k * self.hop()
    }
}

/// Splits `wave` into fixed-length chunks; the last one is zero-padded.
pub fn chunk(wave: &Waveform, chunk_seconds: f64, overlap_seconds: f64) -> Result<(Vec<Waveform>, ChunkLayout)> {
    let layout = ChunkLayout::from_seconds(wave.len(), chunk_seconds, overlap_seconds, wave.sample_rate)?;
    let chunks = (0..layout.num_chunks)
        .map(|k| wave.segment(layout.start(k), layout.chunk_len))
        .collect();
    Ok((chunks, layout))
}

/// Inverse of [`chunk`]: overlapping regions are linearly crossfaded and
/// normalised by the summed weights.
pub fn rejoin(chunks: &[Waveform], layout: &ChunkLayout) -> Result<Waveform> {
    if chunks.len() != layout.num_chunks {
        return Err(Error::InvalidChunk(format!(
            "expected {} chunks, got {}",
            layout.num_chunks,
            chunks.len()
        )));
    }
    if let Some(c) = chunks.iter().find(|c| c.len() != layout.chunk_len) {
        return Err(Error::LengthMismatch(c.len(), layout.chunk_len));
    }
    let ov = layout.overlap_len;
    let total = layout.input_len + layout.padding;
    let mut acc = vec![0.0f64; total];
    let mut norm = vec![0.0f64; total];
    for (k, c) in chunks.iter().enumerate() {
        let start = layout.start(k);
        for (j, &s) in c.samples.iter().enumerate() {
            let mut w = 1.0f64;
            if k > 0 && j < ov {
                w *= (j as f64 + 0.5) / ov as f64;
            }
            if k + 1 < layout.num_chunks && j >= layout.chunk_len - ov {
                w *= 1.0 - ((j - (layout.chunk_len - ov)) as f64 + 0.5) / ov as f64;
            }
            acc[start + j] += w * s as f64;
            norm[start + j] += w;
        }
    }
    let mut out: Vec<f32> = acc.iter().zip(&norm).map(|(a, n)| (a / n) as f32).collect();
    out.truncate(layout.input_len);
    Ok(Waveform {
        samples: out,
        sample_rate: layout.sample_rate,
    })
}
