//! Conformer feature extractor: log-mel → 4× conv subsampling → conformer
//! stack, with every layer output available.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use resyn_core::signal::{Waveform, SAMPLE_RATE};

use crate::conformer::{BlockDims, ConformerBlock};
use crate::error::{Error, Result};
use crate::mel::{LogMel, HOP};
use crate::nn::{self, Conv1d};
use crate::params::{Builder, ParamStore};

/// Waveform samples per encoder frame (25 Hz at 16 kHz).
pub const SAMPLES_PER_FRAME: usize = 640;
pub const MEL_FRAMES_PER_FRAME: usize = SAMPLES_PER_FRAME / HOP;
pub const MIN_SECONDS: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformerConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub conv_kernel: usize,
    pub ff_mult: usize,
    pub frame_rate: f64,
    /// 1-based index of the layer whose output feeds the cleaner.
    pub tap_layer: usize,
    pub mel_bins: usize,
}

/// Dimensions of the full-scale system this stand-in mirrors; recorded in
/// checkpoint metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderReference {
    pub tap_layer: usize,
    pub feature_dim: usize,
    pub parameters: u64,
}

impl EncoderReference {
    pub fn paper() -> Self {
        Self {
            tap_layer: 13,
            feature_dim: 1532,
            parameters: 2_000_000_000,
        }
    }
}

impl ConformerConfig {
    pub fn desk() -> Self {
        Self {
            num_layers: 6,
            model_dim: 256,
            num_heads: 4,
            conv_kernel: 15,
            ff_mult: 4,
            frame_rate: 25.0,
            tap_layer: Self::default_tap(6),
            mel_bins: 128,
        }
    }

    /// Small enough for unit tests on one CPU core.
    pub fn tiny() -> Self {
        Self {
            num_layers: 3,
            model_dim: 64,
            num_heads: 2,
            conv_kernel: 7,
            ff_mult: 2,
            frame_rate: 25.0,
            tap_layer: Self::default_tap(3),
            mel_bins: 128,
        }
    }

    /// `ceil(2/3 · layers)`: a mid-to-deep tap.
    pub fn default_tap(num_layers: usize) -> usize {
        (2 * num_layers).div_ceil(3).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.model_dim == 0 || self.num_heads == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(1..=self.num_layers).contains(&self.tap_layer) {
            return Err(Error::Config(format!(
                "tap_layer {} outside 1..={}",
                self.tap_layer, self.num_layers
            )));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.num_heads
            )));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config("conv_kernel must be odd".into()));
        }
        let rate = SAMPLE_RATE as f64 / SAMPLES_PER_FRAME as f64;
        if (self.frame_rate - rate).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "frontend yields {rate} Hz frames, config says {}",
                self.frame_rate
            )));
        }
        Ok(())
    }

    pub fn block_dims(&self) -> BlockDims {
        BlockDims {
            dim: self.model_dim,
            heads: self.num_heads,
            ff_mult: self.ff_mult,
            conv_kernel: self.conv_kernel,
        }
    }

    pub fn param_count(&self) -> usize {
        let d = self.model_dim;
        let frontend = (self.mel_bins * 3 * d + d) + (d * 3 * d + d);
        frontend + self.num_layers * ConformerBlock::param_count(self.block_dims())
    }
}

/// Encoder frames for a waveform of `len` samples.
pub fn frames_for(len: usize) -> usize {
    (len as f64 / SAMPLES_PER_FRAME as f64).round() as usize
}

/// Time-major features, `frames × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub frames: usize,
    pub dim: usize,
    pub frame_rate: f64,
    pub values: Vec<f32>,
}

impl FeatureSequence {
    /// From a `(frames, dim)` tensor.
    pub fn from_tensor(t: &Tensor, frame_rate: f64) -> Result<Self> {
        let (frames, dim) = t.dims2()?;
        Ok(Self {
            frames,
            dim,
            frame_rate,
            values: t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?,
        })
    }

    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.values.clone(), (self.frames, self.dim), &Device::Cpu)?.to_dtype(dtype)?)
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: ConformerConfig,
    sub1: Conv1d,
    sub2: Conv1d,
    layers: Vec<ConformerBlock>,
    dtype: DType,
}

impl Encoder {
    pub fn new(b: &mut Builder, config: &ConformerConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let layers = (0..config.num_layers)
            .map(|i| ConformerBlock::new(&mut b.pp(format!("layer{i}")), config.block_dims()))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            sub1: Conv1d::new(&mut b.pp("sub1"), config.mel_bins, d, 3, 2, 1, 1, 1)?,
            sub2: Conv1d::new(&mut b.pp("sub2"), d, d, 3, 2, 1, 1, 1)?,
            layers,
            dtype: b.dtype(),
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `mel`: `(batch, 4T, bins)` → `(batch, T, dim)` input of layer 1.
    pub fn embed(&self, mel: &Tensor) -> Result<Tensor> {
        let x = mel.transpose(1, 2)?;
        let x = nn::gelu(&self.sub1.forward(&x)?)?;
        let x = nn::gelu(&self.sub2.forward(&x)?)?;
        let x = x.transpose(1, 2)?;
        let (_, t, d) = x.dims3()?;
        let pos = nn::sinusoidal_positions(t, d, self.dtype, mel.device())?;
        Ok(x.broadcast_add(&pos)?)
    }

    pub fn layer(&self, i: usize) -> &ConformerBlock {
        &self.layers[i]
    }

    /// Outputs of every layer, each `(batch, T, dim)`.
    pub fn forward_all(&self, mel: &Tensor) -> Result<Vec<Tensor>> {
        let mut x = self.embed(mel)?;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = layer.forward(&x)?;
            outs.push(x.clone());
        }
        Ok(outs)
    }

    /// Output of the tap layer only; later layers are not evaluated.
    pub fn forward_tap(&self, mel: &Tensor) -> Result<Tensor> {
        let mut x = self.embed(mel)?;
        for layer in &self.layers[..self.config.tap_layer] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }
}

/// Parameters plus a ready-to-run network with detached weights.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub config: ConformerConfig,
    pub params: ParamStore,
    pub frozen: bool,
    net: Encoder,
    mel: LogMel,
}

impl EncoderState {
    pub fn init(config: ConformerConfig, seed: u64) -> Result<Self> {
        Self::from_params(config, ParamStore::new(seed), true)
    }

    pub fn from_params(config: ConformerConfig, mut params: ParamStore, frozen: bool) -> Result<Self> {
        let net = Encoder::new(&mut params.frozen(), &config)?;
        let mel = LogMel::new(config.mel_bins, SAMPLE_RATE)?;
        Ok(Self {
            config,
            params,
            frozen,
            net,
            mel,
        })
    }

    pub fn net(&self) -> &Encoder {
        &self.net
    }

    pub fn content_hash(&self) -> Result<String> {
        self.params.content_hash()
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// Normalised log-mel for equal-length waveforms, `(batch, 4T, bins)`.
    /// Each waveform is zero-padded or cut to `640 · T` samples.
    pub fn mel_batch(&self, waves: &[&[f32]]) -> Result<Tensor> {
        let len = waves.first().map(|w| w.len()).ok_or(Error::EmptyDataset)?;
        if let Some(w) = waves.iter().find(|w| w.len() != len) {
            return Err(Error::Shape(format!("batch lengths differ: {} vs {len}", w.len())));
        }
        let seconds = len as f64 / SAMPLE_RATE as f64;
        if seconds < MIN_SECONDS {
            return Err(Error::TooShort {
                got: seconds,
                min: MIN_SECONDS,
            });
        }
        let t = frames_for(len);
        let mel_frames = t * MEL_FRAMES_PER_FRAME;
        let mut data = Vec::with_capacity(waves.len() * mel_frames * self.mel.bins());
        for w in waves {
            let mut padded = w.to_vec();
            padded.resize(t * SAMPLES_PER_FRAME, 0.0);
            data.extend(self.mel.compute(&padded, mel_frames)?);
        }
        Ok(Tensor::from_vec(data, (waves.len(), mel_frames, self.mel.bins()), &Device::Cpu)?.to_dtype(self.dtype())?)
    }

    /// Tap-layer features for a batch, `(batch, T, dim)`.
    pub fn tap_batch(&self, waves: &[&[f32]]) -> Result<Tensor> {
        self.net.forward_tap(&self.mel_batch(waves)?)
    }
}

/// Every layer's output for one waveform.
pub fn extract_features(wave: &Waveform, enc: &EncoderState) -> Result<Vec<FeatureSequence>> {
    wave.require_rate(SAMPLE_RATE)?;
    let mel = enc.mel_batch(&[&wave.samples])?;
    enc.net
        .forward_all(&mel)?
        .iter()
        .map(|t| FeatureSequence::from_tensor(&t.squeeze(0)?, enc.config.frame_rate))
        .collect()
}

/// Implements the metrics-side trait with tap-layer features.
pub struct TapFeatures<'a>(pub &'a EncoderState);

impl resyn_core::metrics::FeatureExtractor for TapFeatures<'_> {
    fn features(&self, wave: &Waveform) -> resyn_core::Result<resyn_core::metrics::FeatureMatrix> {
        let t = self
            .0
            .tap_batch(&[&wave.samples])
            .and_then(|t| Ok(t.squeeze(0)?))
            .map_err(|e| resyn_core::Error::External(e.to_string()))?;
        let f = FeatureSequence::from_tensor(&t, self.0.config.frame_rate)
            .map_err(|e| resyn_core::Error::External(e.to_string()))?;
        Ok(resyn_core::metrics::FeatureMatrix {
            frames: f.frames,
            dim: f.dim,
            data: f.values,
        })
    }
}
