use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use candle_nn::Optimizer;
use serde::{Deserialize, Serialize};

use super::loss::{disc_loss, vocoder_loss, Discriminators, MultiResStft, VocoderLossWeights};
use super::net::{Vocoder, GAIN_FLOOR};
use super::VocoderConfig;
use crate::adapter::Cleaner;
use crate::data::{as_slices, crop_samples, ClipSource, PairSource, Sampler};
use crate::encoder::EncoderState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderTrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub crop_seconds: f64,
    pub learning_rate: f64,
    pub disc_learning_rate: f64,
    pub seed: u64,
    /// Adversarial terms and discriminator updates begin at this step.
    pub gan_start_step: usize,
    pub weights: VocoderLossWeights,
    pub gain_weight: f64,
    pub disc_width: usize,
    pub reference_steps: usize,
    pub reference_batch: usize,
}

impl Default for VocoderTrainOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 16,
            crop_seconds: 0.64,
            learning_rate: 2e-4,
            disc_learning_rate: 2e-4,
            seed: 0,
            gan_start_step: 0,
            weights: VocoderLossWeights::default(),
            gain_weight: 1.0,
            disc_width: 8,
            reference_steps: 200_000,
            reference_batch: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocoderPoint {
    pub step: usize,
    pub seconds: f64,
    pub stft: f64,
    pub gain: f64,
    pub adversarial: f64,
    pub feature_matching: f64,
    pub disc: f64,
    pub total: f64,
}

pub const VOCODER_CURVE_HEADER: &str = "step,seconds,stft,gain,adversarial,feature_matching,disc,total";

impl VocoderPoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8}",
            self.step, self.seconds, self.stft, self.gain, self.adversarial, self.feature_matching, self.disc, self.total
        )
    }
}

pub struct TrainedVocoder {
    pub vocoder: Vocoder,
    pub discriminators: Discriminators,
    pub curve: Vec<VocoderPoint>,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar()?)
}

fn step_seeds(seed: u64, step: usize, batch: usize) -> Vec<u64> {
    (0..batch)
        .map(|i| seed ^ ((step as u64) << 20 | i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .collect()
}

/// Log power of each `hop`-sample frame of `wave`, floored.
fn frame_log_power(wave: &Tensor, hop: usize) -> Result<Tensor> {
    let (b, len) = wave.dims2()?;
    Ok((wave.reshape((b, len / hop, hop))?.sqr()?.mean(2)? + GAIN_FLOOR)?.log()?)
}

/// Generic loop: `batch(step)` yields `(features, clean waveforms)`.
pub fn train_vocoder(
    vocoder: Vocoder,
    discriminators: Discriminators,
    opts: &VocoderTrainOptions,
    mut batch: impl FnMut(usize) -> Result<(Tensor, Tensor)>,
    mut on_step: impl FnMut(&VocoderPoint),
) -> Result<TrainedVocoder> {
    let dtype = vocoder.params.dtype();
    let stft = MultiResStft::standard(dtype)?;
    let adamw = |vars, lr| {
        candle_nn::AdamW::new(
            vars,
            candle_nn::ParamsAdamW {
                lr,
                beta1: 0.8,
                beta2: 0.99,
                weight_decay: 0.0,
                ..Default::default()
            },
        )
    };
    let mut opt_g = adamw(vocoder.params.all_vars(), opts.learning_rate)?;
    let mut opt_d = adamw(discriminators.params.all_vars(), opts.disc_learning_rate)?;
    let hop = vocoder.config.hop();
    let start = Instant::now();
    let mut curve = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let (feats, target) = batch(step)?;
        let (b, len) = target.dims2()?;
        let noise = vocoder.noise(&step_seeds(opts.seed, step, b), len)?;
        let iterates = vocoder.iterate(&noise, &feats, vocoder.config.iterations)?;
        let gan = step >= opts.gan_start_step;
        let loss = vocoder_loss(&iterates, &target, &stft, gan.then_some(&discriminators), &opts.weights)?;
        let gain = (vocoder.gain.log_power(&feats)? - frame_log_power(&target, hop)?)?
            .sqr()?
            .mean_all()?;
        let g_total = (&loss.total + (&gain * opts.gain_weight)?)?;
        opt_g.backward_step(&g_total)?;
        let disc = if gan {
            let y0 = iterates.last().expect("at least one iterate").detach();
            let d = disc_loss(&discriminators, &target, &y0)?;
            opt_d.backward_step(&d)?;
            scalar(&d)?
        } else {
            0.0
        };
        let total = scalar(&g_total)?;
        if !total.is_finite() {
            return Err(Error::NonFinite { iteration: step });
        }
        let point = VocoderPoint {
            step,
            seconds: start.elapsed().as_secs_f64(),
            stft: scalar(&loss.stft)?,
            gain: scalar(&gain)?,
            adversarial: loss.adversarial.as_ref().map(scalar).transpose()?.unwrap_or(0.0),
            feature_matching: loss.feature_matching.as_ref().map(scalar).transpose()?.unwrap_or(0.0),
            disc,
            total,
        };
        on_step(&point);
        curve.push(point);
    }
    Ok(TrainedVocoder {
        vocoder,
        discriminators,
        curve,
    })
}

fn to_tensor(rows: &[Vec<f32>], dtype: DType) -> Result<Tensor> {
    let len = rows.first().map(Vec::len).unwrap_or(0);
    let flat: Vec<f32> = rows.concat();
    Ok(Tensor::from_vec(flat, (rows.len(), len), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Trains from scratch on frozen features of clean audio.
pub fn pretrain_vocoder(
    data: &dyn ClipSource,
    enc: &EncoderState,
    cfg: &VocoderConfig,
    opts: &VocoderTrainOptions,
    on_step: impl FnMut(&VocoderPoint),
) -> Result<TrainedVocoder> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.cond_dim != enc.config.model_dim {
        return Err(Error::Shape(format!(
            "vocoder expects {}-dim features, encoder gives {}",
            cfg.cond_dim, enc.config.model_dim
        )));
    }
    let vocoder = Vocoder::init(cfg, opts.seed)?;
    let discs = Discriminators::new(opts.seed ^ 0xd15c, opts.disc_width)?;
    let sampler = Sampler {
        seed: opts.seed,
        batch: opts.batch,
        crop: crop_samples(opts.crop_seconds),
    };
    let dtype = enc.dtype();
    let before = enc.content_hash()?;
    let out = train_vocoder(
        vocoder,
        discs,
        opts,
        |step| {
            let clips = sampler.clips(data, step)?;
            let feats = enc.tap_batch(&as_slices(&clips))?;
            Ok((feats, to_tensor(&clips, dtype)?))
        },
        on_step,
    )?;
    check_unchanged("encoder", before, enc.content_hash()?)?;
    Ok(out)
}

fn check_unchanged(what: &'static str, before: String, after: String) -> Result<()> {
    if before != after {
        return Err(Error::FrozenViolation { what, before, after });
    }
    Ok(())
}

/// Continues training on cleaned features of noisy audio with clean
/// targets. The encoder and cleaner are hash-checked.
pub fn finetune_vocoder(
    data: &dyn PairSource,
    enc: &EncoderState,
    cleaner: Option<&Cleaner>,
    start: &TrainedVocoder,
    opts: &VocoderTrainOptions,
    on_step: impl FnMut(&VocoderPoint),
) -> Result<TrainedVocoder> {
    let cleaner = cleaner.ok_or(Error::MissingCheckpoint("cleaner"))?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocoder = Vocoder::trainable(&start.vocoder.config, start.vocoder.params.deep_clone()?)?;
    let discs = Discriminators::with_params(start.discriminators.params.deep_clone()?, opts.disc_width)?;
    let sampler = Sampler {
        seed: opts.seed,
        batch: opts.batch,
        crop: crop_samples(opts.crop_seconds),
    };
    let dtype = enc.dtype();
    let enc_before = enc.content_hash()?;
    let cleaner_before = cleaner.content_hash()?;
    let out = train_vocoder(
        vocoder,
        discs,
        opts,
        |step| {
            let (noisy, clean) = sampler.pairs(data, step)?;
            let feats = cleaner.features(enc, &as_slices(&noisy))?.detach();
            Ok((feats, to_tensor(&clean, dtype)?))
        },
        on_step,
    )?;
    check_unchanged("encoder", enc_before, enc.content_hash()?)?;
    check_unchanged("cleaner", cleaner_before, cleaner.content_hash()?)?;
    Ok(out)
}

/// Mean multi-resolution STFT loss of the final iterate over fixed items.
pub fn heldout_stft_loss(vocoder: &Vocoder, items: &[(Tensor, Tensor)], seed: u64) -> Result<f64> {
    let stft = MultiResStft::standard(vocoder.params.dtype())?;
    let mut sum = 0.0;
    for (i, (feats, target)) in items.iter().enumerate() {
        let (b, _) = target.dims2()?;
        let seeds: Vec<u64> = (0..b as u64).map(|k| seed ^ ((i as u64) << 16 | k)).collect();
        let y = vocoder.synthesize(feats, &seeds)?;
        sum += scalar(&stft.loss(&y, target)?.total)?;
    }
    Ok(sum / items.len().max(1) as f64)
}
