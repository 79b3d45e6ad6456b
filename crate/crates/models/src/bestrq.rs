//! Masked prediction of frozen random-projection tokens.

use std::time::Instant;

use candle_core::{DType, Device, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use candle_nn::Optimizer;

use crate::data::{as_slices, crop_samples, ClipSource, Sampler};
use crate::encoder::{ConformerConfig, Encoder, EncoderState, FeatureSequence, MEL_FRAMES_PER_FRAME};
use crate::error::{Error, Result};
use crate::nn::{self, Linear};
use crate::params::{Init, ParamStore};

/// Frozen projection + codebook. Never trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomQuantizer {
    pub seed: u64,
    pub input_dim: usize,
    pub code_dim: usize,
    pub vocab: usize,
    /// `input_dim × code_dim`, row-major.
    pub projection: Vec<f32>,
    /// `vocab × code_dim`, unit-norm rows.
    pub codebook: Vec<f32>,
}

impl RandomQuantizer {
    pub fn new(seed: u64, input_dim: usize, code_dim: usize, vocab: usize) -> Result<Self> {
        if input_dim == 0 || code_dim == 0 || vocab == 0 {
            return Err(Error::Config("quantizer dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xavier = Normal::new(0.0, (2.0 / (input_dim + code_dim) as f64).sqrt()).expect("positive std");
        let projection = (0..input_dim * code_dim).map(|_| xavier.sample(&mut rng) as f32).collect();
        let unit = Normal::new(0.0f64, 1.0).expect("unit normal");
        let mut codebook = Vec::with_capacity(vocab * code_dim);
        for _ in 0..vocab {
            let row: Vec<f64> = (0..code_dim).map(|_| unit.sample(&mut rng)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            codebook.extend(row.iter().map(|v| (v / norm) as f32));
        }
        Ok(Self {
            seed,
            input_dim,
            code_dim,
            vocab,
            projection,
            codebook,
        })
    }

    /// For `stack` mel frames of `mel_bins` each.
    pub fn for_mel(seed: u64, mel_bins: usize, stack: usize, vocab: usize) -> Result<Self> {
        Self::new(seed, mel_bins * stack, 16, vocab)
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.seed, self.input_dim as u64, self.code_dim as u64, self.vocab as u64] {
            h.update(v.to_le_bytes());
        }
        for v in self.projection.iter().chain(&self.codebook) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Token for one frame: nearest codebook row to the unit-normalised
    /// projection, lowest index on ties.
    pub fn token(&self, frame: &[f32]) -> usize {
        let mut p = vec![0f64; self.code_dim];
        for (i, &x) in frame.iter().enumerate() {
            let row = &self.projection[i * self.code_dim..(i + 1) * self.code_dim];
            for (acc, &w) in p.iter_mut().zip(row) {
                *acc += x as f64 * w as f64;
            }
        }
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        p.iter_mut().for_each(|v| *v /= norm);
        let mut best = (f64::INFINITY, 0);
        for c in 0..self.vocab {
            let row = &self.codebook[c * self.code_dim..(c + 1) * self.code_dim];
            let d: f64 = row.iter().zip(&p).map(|(&r, q)| (r as f64 - q).powi(2)).sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        best.1
    }
}

/// Per-frame token ids.
pub fn bestrq_targets(mel_stack: &FeatureSequence, q: &RandomQuantizer) -> Result<Vec<usize>> {
    if mel_stack.dim != q.input_dim {
        return Err(Error::Shape(format!(
            "features have dim {}, quantizer expects {}",
            mel_stack.dim, q.input_dim
        )));
    }
    Ok((0..mel_stack.frames).map(|t| q.token(mel_stack.row(t))).collect())
}

/// Normalises `mel` (`frames × bins`) per utterance and dimension, then
/// stacks groups of `stack` consecutive frames.
pub fn stack_mel(mel: &[f32], bins: usize, stack: usize, frame_rate: f64) -> FeatureSequence {
    let frames = mel.len() / bins;
    let mut norm = mel.to_vec();
    for b in 0..bins {
        let col: Vec<f64> = (0..frames).map(|t| mel[t * bins + b] as f64).collect();
        let mean = col.iter().sum::<f64>() / frames as f64;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / frames as f64).sqrt();
        for t in 0..frames {
            norm[t * bins + b] = ((col[t] - mean) / std.max(1e-5)) as f32;
        }
    }
    FeatureSequence {
        frames: frames / stack,
        dim: bins * stack,
        frame_rate,
        values: norm[..(frames / stack) * stack * bins].to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub crop_seconds: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub mask_prob: f64,
    /// In encoder frames.
    pub mask_span: usize,
    pub vocab: usize,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 4,
            crop_seconds: 2.0,
            learning_rate: 1e-3,
            seed: 0,
            mask_prob: 0.065,
            mask_span: 10,
            vocab: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainPoint {
    pub step: usize,
    pub seconds: f64,
    pub loss: f64,
    pub accuracy: f64,
}

/// Span mask over `frames`: each frame starts a span with `prob`; at least
/// one span is always present.
pub fn span_mask(rng: &mut ChaCha8Rng, frames: usize, prob: f64, span: usize) -> Vec<bool> {
    let mut mask = vec![false; frames];
    for t in 0..frames {
        if rng.random_bool(prob) {
            mask[t..(t + span).min(frames)].iter_mut().for_each(|m| *m = true);
        }
    }
    if !mask.iter().any(|&m| m) {
        let t = rng.random_range(0..frames);
        mask[t..(t + span).min(frames)].iter_mut().for_each(|m| *m = true);
    }
    mask
}

pub struct Pretrained {
    pub encoder: EncoderState,
    pub curve: Vec<PretrainPoint>,
    pub quantizer_hash_before: String,
    pub quantizer_hash_after: String,
}

pub fn pretrain_bestrq(
    data: &dyn ClipSource,
    config: &ConformerConfig,
    q: &RandomQuantizer,
    opts: &PretrainOptions,
) -> Result<Pretrained> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let q_before = q.content_hash();
    let mut params = ParamStore::new(opts.seed);
    let net = Encoder::new(&mut params.root(), config)?;
    // shares storage with `params`; used only for mel extraction
    let shell = EncoderState::from_params(config.clone(), params.clone(), false)?;
    let mut head_store = ParamStore::new(opts.seed ^ 0x5eed);
    let head = Linear::no_bias(&mut head_store.root(), config.model_dim, q.vocab, Init::Zeros)?;
    let mut vars = params.all_vars();
    vars.extend(head_store.all_vars());
    let mut opt = candle_nn::AdamW::new(
        vars,
        candle_nn::ParamsAdamW {
            lr: opts.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let sampler = Sampler {
        seed: opts.seed,
        batch: opts.batch,
        crop: crop_samples(opts.crop_seconds),
    };
    let bins = config.mel_bins;
    let start = Instant::now();
    let mut curve = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let clips = sampler.clips(data, step)?;
        let mel = shell.mel_batch(&as_slices(&clips))?;
        let (b, mel_frames, _) = mel.dims3()?;
        let t = mel_frames / MEL_FRAMES_PER_FRAME;
        let mel_rows: Vec<f32> = mel.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;

        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6d61_736b ^ step as u64);
        let noise = Normal::new(0.0f32, 0.1).expect("positive std");
        let mut masked_input = mel_rows.clone();
        let mut onehot = vec![0f32; b * t * q.vocab];
        let mut weight = vec![0f32; b * t];
        let mut targets = Vec::with_capacity(b * t);
        for i in 0..b {
            let utt = &mel_rows[i * mel_frames * bins..(i + 1) * mel_frames * bins];
            let ids = bestrq_targets(&stack_mel(utt, bins, MEL_FRAMES_PER_FRAME, config.frame_rate), q)?;
            let mask = span_mask(&mut rng, t, opts.mask_prob, opts.mask_span);
            for f in 0..t {
                if mask[f] {
                    weight[i * t + f] = 1.0;
                    onehot[(i * t + f) * q.vocab + ids[f]] = 1.0;
                    let rows = (i * mel_frames + f * MEL_FRAMES_PER_FRAME) * bins;
                    for v in &mut masked_input[rows..rows + MEL_FRAMES_PER_FRAME * bins] {
                        *v = noise.sample(&mut rng);
                    }
                }
            }
            targets.extend(ids);
        }
        let dev = Device::Cpu;
        let dtype = params.dtype();
        let input = Tensor::from_vec(masked_input, (b, mel_frames, bins), &dev)?.to_dtype(dtype)?;
        let onehot = Tensor::from_vec(onehot, (b, t, q.vocab), &dev)?.to_dtype(dtype)?;
        let n_masked: f32 = weight.iter().sum();

        let hidden = net.forward_all(&input)?.pop().expect("at least one layer");
        let logits = head.forward(&hidden)?;
        let logp = nn::log_softmax_last(&logits)?;
        let loss = ((logp * &onehot)?.sum_all()?.neg()? / n_masked as f64)?;
        opt.backward_step(&loss)?;

        let pred: Vec<u32> = logits.argmax(D::Minus1)?.flatten_all()?.to_vec1()?;
        let correct = pred
            .iter()
            .zip(&targets)
            .zip(&weight)
            .filter(|((p, t), w)| **w > 0.0 && **p as usize == **t)
            .count();
        curve.push(PretrainPoint {
            step,
            seconds: start.elapsed().as_secs_f64(),
            loss: loss.to_dtype(DType::F64)?.to_scalar()?,
            accuracy: correct as f64 / n_masked as f64,
        });
    }
    Ok(Pretrained {
        encoder: EncoderState::from_params(config.clone(), params, true)?,
        curve,
        quantizer_hash_before: q_before,
        quantizer_hash_after: q.content_hash(),
    })
}
