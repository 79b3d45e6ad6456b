//! Iterative fixed-point vocoder: a conformer pre-network at feature rate,
//! frame repetition (or a learned upsampler), and a U-Net denoiser whose
//! output is gain-normalised after every iteration.

mod loss;
mod memory;
mod net;
mod train;

pub use loss::{
    disc_loss, generator_adversarial, stft_magnitude, vocoder_loss, Discriminators, MultiResStft, StftLoss,
    VocoderLoss, VocoderLossWeights,
};
pub use memory::{activation_schedule, peak_activation, MemEvent, MemoryReport, Recorder};
pub use net::{wavefit_iterate, Denoiser, GainEstimator, Vocoder, GAIN_FLOOR};
pub use train::{
    finetune_vocoder, heldout_stft_loss, pretrain_vocoder, train_vocoder, TrainedVocoder, VocoderPoint,
    VocoderTrainOptions, VOCODER_CURVE_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::encoder::FeatureSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Frame repetition, one additive conditioning signal per resolution
    /// and none at full resolution.
    MemoryEfficient,
    /// Learned upsampler and three scale/shift pairs at every resolution.
    Vanilla,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::MemoryEfficient => "mem",
            Variant::Vanilla => "vanilla",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mem" | "memory_efficient" => Ok(Variant::MemoryEfficient),
            "vanilla" => Ok(Variant::Vanilla),
            other => Err(Error::Config(format!("unknown vocoder variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderConfig {
    /// Dimension of the incoming feature frames.
    pub cond_dim: usize,
    pub feature_rate: f64,
    pub sample_rate: u32,
    pub prenet_layers: usize,
    pub prenet_dim: usize,
    pub prenet_heads: usize,
    pub prenet_kernel: usize,
    pub repeat_factor: usize,
    pub stem_dim: usize,
    pub down_factors: Vec<usize>,
    pub down_dims: Vec<usize>,
    pub up_factors: Vec<usize>,
    pub up_dims: Vec<usize>,
    pub iterations: usize,
    pub variant: Variant,
    pub gain_normalization: bool,
}

impl VocoderConfig {
    pub fn desk(cond_dim: usize) -> Self {
        Self {
            cond_dim,
            feature_rate: 25.0,
            sample_rate: 16_000,
            prenet_layers: 2,
            prenet_dim: 256,
            prenet_heads: 4,
            prenet_kernel: 15,
            repeat_factor: 4,
            stem_dim: 16,
            down_factors: vec![2, 2, 2, 4],
            down_dims: vec![32, 64, 128, 256],
            up_factors: vec![5, 4, 2, 2, 2],
            up_dims: vec![256, 128, 64, 32, 32],
            iterations: 5,
            variant: Variant::MemoryEfficient,
            gain_normalization: true,
        }
    }

    pub fn tiny(cond_dim: usize) -> Self {
        Self {
            prenet_layers: 1,
            prenet_dim: 64,
            prenet_heads: 2,
            prenet_kernel: 7,
            stem_dim: 8,
            down_dims: vec![16, 16, 32, 64],
            up_dims: vec![64, 32, 16, 16, 16],
            ..Self::desk(cond_dim)
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Output samples per feature frame.
    pub fn hop(&self) -> usize {
        self.repeat_factor * self.up_factors.iter().product::<usize>()
    }

    /// Number of conditioning modules in the U-Net.
    pub fn film_count(&self) -> usize {
        match self.variant {
            Variant::MemoryEfficient => self.up_factors.len() - 1,
            Variant::Vanilla => self.up_factors.len(),
        }
    }

    pub fn film_multiplier(&self) -> usize {
        match self.variant {
            Variant::MemoryEfficient => 1,
            Variant::Vanilla => 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.up_factors.is_empty() || self.up_factors.len() != self.up_dims.len() {
            return bad(format!(
                "{} up factors vs {} up dims",
                self.up_factors.len(),
                self.up_dims.len()
            ));
        }
        if self.down_factors.len() != self.down_dims.len() {
            return bad(format!(
                "{} down factors vs {} down dims",
                self.down_factors.len(),
                self.down_dims.len()
            ));
        }
        let cond_rate = self.feature_rate * self.repeat_factor as f64;
        let up: usize = self.up_factors.iter().product();
        if (up as f64 * cond_rate - self.sample_rate as f64).abs() > 1e-6 {
            return bad(format!(
                "upsampling product {up} x conditioning rate {cond_rate} Hz != {} Hz",
                self.sample_rate
            ));
        }
        let mirrored: Vec<usize> = self.up_factors[1..].iter().rev().copied().collect();
        if self.down_factors != mirrored {
            return bad(format!(
                "down factors {:?} must mirror up factors {:?} without the first",
                self.down_factors, self.up_factors
            ));
        }
        if self.repeat_factor == 0 || self.iterations == 0 {
            return bad("repeat factor and iterations must be positive".into());
        }
        let dims = [self.cond_dim, self.prenet_dim, self.stem_dim, self.prenet_kernel]
            .into_iter()
            .chain(self.up_dims.iter().copied())
            .chain(self.down_dims.iter().copied())
            .chain(self.up_factors.iter().copied());
        if dims.into_iter().any(|d| d == 0) {
            return bad("dimensions and factors must be positive".into());
        }
        if self.prenet_heads == 0 || self.prenet_dim % self.prenet_heads != 0 {
            return bad(format!(
                "prenet dim {} not divisible by {} heads",
                self.prenet_dim, self.prenet_heads
            ));
        }
        if self.prenet_kernel % 2 == 0 {
            return bad("prenet kernel must be odd".into());
        }
        Ok(())
    }
}

/// Full-scale vocoder dimensions and schedule, kept verbatim; they do not
/// satisfy the factor-product law and are never built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderReference {
    pub prenet_layers: usize,
    pub prenet_dim: usize,
    pub repeat_factor: usize,
    pub down_factors: Vec<usize>,
    pub down_dims: Vec<usize>,
    pub up_factors: Vec<usize>,
    pub up_dims: Vec<usize>,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub batch: usize,
}

impl VocoderReference {
    pub fn paper() -> Self {
        Self {
            prenet_layers: 4,
            prenet_dim: 1532,
            repeat_factor: 4,
            down_factors: vec![2, 2, 3, 4],
            down_dims: vec![128, 128, 256, 512],
            up_factors: vec![5, 4, 3, 2, 2],
            up_dims: vec![512, 512, 256, 128, 128],
            pretrain_steps: 200_000,
            finetune_steps: 675_000,
            batch: 512,
        }
    }

    pub fn config(&self) -> VocoderConfig {
        VocoderConfig {
            cond_dim: self.prenet_dim,
            prenet_layers: self.prenet_layers,
            prenet_dim: self.prenet_dim,
            prenet_heads: 4,
            repeat_factor: self.repeat_factor,
            down_factors: self.down_factors.clone(),
            down_dims: self.down_dims.clone(),
            up_factors: self.up_factors.clone(),
            up_dims: self.up_dims.clone(),
            stem_dim: 32,
            ..VocoderConfig::desk(self.prenet_dim)
        }
    }
}

/// Repeats every frame `factor` times.
pub fn repeat_upsample(feat: &FeatureSequence, factor: usize) -> Result<FeatureSequence> {
    if factor < 1 {
        return Err(Error::Config("repeat factor must be at least 1".into()));
    }
    let mut values = Vec::with_capacity(feat.values.len() * factor);
    for t in 0..feat.frames {
        for _ in 0..factor {
            values.extend_from_slice(feat.row(t));
        }
    }
    Ok(FeatureSequence {
        frames: feat.frames * factor,
        dim: feat.dim,
        frame_rate: feat.frame_rate * factor as f64,
        values,
    })
}
