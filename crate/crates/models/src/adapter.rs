//! Parallel adapters on a frozen encoder, the three-term feature loss, and
//! the three cleaner training strategies.

use std::time::Instant;

use candle_core::{DType, Tensor};
use candle_nn::Optimizer;
use serde::{Deserialize, Serialize};

use resyn_core::signal::{Waveform, SAMPLE_RATE};

use crate::conformer::ConformerBlock;
use crate::data::{as_slices, crop_samples, PairSource, Sampler};
use crate::encoder::{ConformerConfig, Encoder, EncoderState, FeatureSequence};
use crate::error::{Error, Result};
use crate::nn::{self, Linear};
use crate::params::{Builder, ParamStore};

/// Guard for the spectral-convergence denominator.
pub const SC_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
    Silu,
}

impl Activation {
    fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Gelu => nn::gelu(x),
            Activation::Relu => Ok(x.relu()?),
            Activation::Silu => nn::silu(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wiring {
    /// Adapter reads the layer input.
    Parallel,
    /// Adapter reads the layer output.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Zero disables the adapters entirely.
    pub hidden_dim: usize,
    pub io_dim: usize,
    pub activation: Activation,
    pub wiring: Wiring,
}

impl AdapterConfig {
    pub fn desk() -> Self {
        Self {
            hidden_dim: 64,
            io_dim: 256,
            activation: Activation::Gelu,
            wiring: Wiring::Parallel,
        }
    }

    pub fn for_encoder(enc: &ConformerConfig, hidden_dim: usize) -> Self {
        Self {
            hidden_dim,
            io_dim: enc.model_dim,
            activation: Activation::Gelu,
            wiring: Wiring::Parallel,
        }
    }

    /// Parameters of one layer's adapter.
    pub fn per_layer_params(&self) -> usize {
        if self.hidden_dim == 0 {
            return 0;
        }
        2 * self.io_dim * self.hidden_dim + self.hidden_dim + self.io_dim
    }

    pub fn param_count(&self, num_layers: usize) -> usize {
        num_layers * self.per_layer_params()
    }
}

/// Full-scale adapter dimensions and the counts quoted for them; recorded
/// in reports, never instantiated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterReference {
    pub hidden_dim: usize,
    pub io_dim: usize,
    pub tap_layer: usize,
    pub encoder_params: u64,
    pub quoted_adapter_params: u64,
    pub quoted_cleaner_params: u64,
    pub quoted_trainable_percent: f64,
    pub reference_steps: usize,
    pub reference_batch: usize,
}

impl AdapterReference {
    pub fn paper() -> Self {
        Self {
            hidden_dim: 1024,
            io_dim: 1532,
            tap_layer: 13,
            encoder_params: 2_000_000_000,
            quoted_adapter_params: 20_000_000,
            quoted_cleaner_params: 100_000_000,
            quoted_trainable_percent: 3.0,
            reference_steps: 800_000,
            reference_batch: 512,
        }
    }

    pub fn config(&self) -> AdapterConfig {
        AdapterConfig {
            hidden_dim: self.hidden_dim,
            io_dim: self.io_dim,
            activation: Activation::Gelu,
            wiring: Wiring::Parallel,
        }
    }

    /// Enumerated count for one adapter at these dimensions.
    pub fn per_layer_params(&self) -> usize {
        let mut store = ParamStore::new(0);
        Adapter::new(&mut store.frozen(), &self.config()).expect("reference dims are valid");
        store.num_params()
    }
}

#[derive(Debug, Clone)]
pub struct Adapter {
    up: Linear,
    down: Linear,
    activation: Activation,
}

impl Adapter {
    pub fn new(b: &mut Builder, cfg: &AdapterConfig) -> Result<Self> {
        Ok(Self {
            up: Linear::new(&mut b.pp("up"), cfg.io_dim, cfg.hidden_dim)?,
            down: Linear::zeros(&mut b.pp("down"), cfg.hidden_dim, cfg.io_dim)?,
            activation: cfg.activation,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.activation.apply(&self.up.forward(x)?)?)
    }
}

/// One adapter per encoder layer.
#[derive(Debug, Clone)]
pub struct AdapterStack {
    pub config: AdapterConfig,
    adapters: Vec<Adapter>,
}

impl AdapterStack {
    pub fn new(b: &mut Builder, cfg: &AdapterConfig, num_layers: usize) -> Result<Self> {
        let adapters = if cfg.hidden_dim == 0 {
            Vec::new()
        } else {
            (0..num_layers)
                .map(|i| Adapter::new(&mut b.pp(format!("adapter{i}")), cfg))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            config: cfg.clone(),
            adapters,
        })
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    fn check(&self, model_dim: usize, num_layers: usize) -> Result<()> {
        if self.config.io_dim != model_dim {
            return Err(Error::Shape(format!(
                "adapter io_dim {} vs encoder dim {model_dim}",
                self.config.io_dim
            )));
        }
        if !self.is_empty() && self.len() < num_layers {
            return Err(Error::Shape(format!(
                "{} adapters for {num_layers} layers",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Anything with indexable layers and a tap point.
pub trait LayeredEncoder {
    fn model_dim(&self) -> usize;
    fn num_layers(&self) -> usize;
    fn tap_layer(&self) -> usize;
    fn layer_forward(&self, index: usize, x: &Tensor) -> Result<Tensor>;
}

impl LayeredEncoder for Encoder {
    fn model_dim(&self) -> usize {
        self.config.model_dim
    }

    fn num_layers(&self) -> usize {
        Encoder::num_layers(self)
    }

    fn tap_layer(&self) -> usize {
        self.config.tap_layer
    }

    fn layer_forward(&self, index: usize, x: &Tensor) -> Result<Tensor> {
        self.layer(index).forward(x)
    }
}

/// Runs layers `1..=tap` from the embedded input `x`, adding each adapter's
/// output to its layer's output.
pub fn adapted_layers<E: LayeredEncoder + ?Sized>(enc: &E, adapters: &AdapterStack, x: &Tensor) -> Result<Tensor> {
    adapters.check(enc.model_dim(), enc.num_layers())?;
    let mut x = x.clone();
    for i in 0..enc.tap_layer() {
        let h = enc.layer_forward(i, &x)?;
        x = match adapters.adapters.get(i) {
            Some(a) => {
                let input = match adapters.config.wiring {
                    Wiring::Parallel => &x,
                    Wiring::Sequential => &h,
                };
                (&h + a.forward(input)?)?
            }
            None => h,
        };
    }
    Ok(x)
}

/// Cleaned tap features for one waveform.
pub fn forward_with_adapters(wave: &Waveform, enc: &EncoderState, adapters: &AdapterStack) -> Result<FeatureSequence> {
    wave.require_rate(SAMPLE_RATE)?;
    let x = enc.net().embed(&enc.mel_batch(&[&wave.samples])?)?;
    let y = adapted_layers(enc.net(), adapters, &x)?;
    FeatureSequence::from_tensor(&y.squeeze(0)?, enc.config.frame_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanerLoss {
    pub l1: f64,
    pub l2: f64,
    pub sc: f64,
    pub total: f64,
    /// Set when the target norm fell below the guard.
    pub sc_guarded: bool,
}

pub fn feature_loss(pred: &FeatureSequence, target: &FeatureSequence) -> Result<CleanerLoss> {
    if pred.frames != target.frames || pred.dim != target.dim {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.frames, pred.dim, target.frames, target.dim
        )));
    }
    let n = pred.values.len().max(1) as f64;
    let (mut l1, mut l2, mut tn) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.values.iter().zip(&target.values) {
        let d = t as f64 - p as f64;
        l1 += d.abs();
        l2 += d * d;
        tn += (t as f64) * (t as f64);
    }
    let tn = tn.sqrt();
    let sc = l2.sqrt() / tn.max(SC_EPS);
    let (l1, l2) = (l1 / n, l2 / n);
    Ok(CleanerLoss {
        l1,
        l2,
        sc,
        total: l1 + l2 + sc,
        sc_guarded: tn < SC_EPS,
    })
}

/// Differentiable loss terms over `(batch, frames, dim)`; spectral
/// convergence is taken per item and averaged.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub l1: Tensor,
    pub l2: Tensor,
    pub sc: Tensor,
    pub total: Tensor,
}

impl LossTerms {
    pub fn values(&self) -> Result<[f64; 4]> {
        let f = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok([f(&self.l1)?, f(&self.l2)?, f(&self.sc)?, f(&self.total)?])
    }
}

pub fn feature_loss_tensor(pred: &Tensor, target: &Tensor) -> Result<LossTerms> {
    if pred.dims() != target.dims() || pred.rank() != 3 {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    let diff = (target - pred)?;
    let l1 = diff.abs()?.mean_all()?;
    let l2 = diff.sqr()?.mean_all()?;
    let num = diff.sqr()?.sum((1, 2))?.sqrt()?;
    let den = target.sqr()?.sum((1, 2))?.sqrt()?.clamp(SC_EPS, f64::INFINITY)?;
    let sc = (num / den)?.mean_all()?;
    let total = ((&l1 + &l2)? + &sc)?;
    Ok(LossTerms { l1, l2, sc, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanerMode {
    Adapter,
    FullFinetune,
    ConformerCleaner,
}

impl CleanerMode {
    pub const ALL: [CleanerMode; 3] = [CleanerMode::Adapter, CleanerMode::FullFinetune, CleanerMode::ConformerCleaner];

    pub fn name(self) -> &'static str {
        match self {
            CleanerMode::Adapter => "adapter",
            CleanerMode::FullFinetune => "full",
            CleanerMode::ConformerCleaner => "conformer",
        }
    }
}

impl std::str::FromStr for CleanerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adapter" => Ok(CleanerMode::Adapter),
            "full" | "full_finetune" => Ok(CleanerMode::FullFinetune),
            "conformer" | "conformer_cleaner" => Ok(CleanerMode::ConformerCleaner),
            other => Err(Error::Config(format!("unknown cleaner mode `{other}`"))),
        }
    }
}

/// Layers in the post-hoc conformer cleaner.
pub const CONFORMER_CLEANER_LAYERS: usize = 4;

#[derive(Debug, Clone)]
enum Net {
    Adapter(AdapterStack),
    Full(Encoder),
    Conformer { blocks: Vec<ConformerBlock>, out: Linear },
}

/// A trained or freshly initialised feature cleaner. `params` holds only
/// the cleaner's own weights (the whole encoder copy in full fine-tuning).
#[derive(Debug, Clone)]
pub struct Cleaner {
    pub mode: CleanerMode,
    pub adapter: AdapterConfig,
    pub params: ParamStore,
    net: Net,
}

impl Cleaner {
    /// Trainable instance. Full fine-tuning starts from a copy of `enc`.
    pub fn init(mode: CleanerMode, enc: &EncoderState, adapter: &AdapterConfig, seed: u64) -> Result<Self> {
        let params = match mode {
            CleanerMode::FullFinetune => enc.params.deep_clone()?,
            _ => ParamStore::with_dtype(seed, enc.dtype()),
        };
        Self::build(mode, enc, adapter, params, true)
    }

    /// Inference instance from stored weights; no gradients are tracked.
    pub fn from_params(mode: CleanerMode, enc: &EncoderState, adapter: &AdapterConfig, params: ParamStore) -> Result<Self> {
        Self::build(mode, enc, adapter, params, false)
    }

    fn build(
        mode: CleanerMode,
        enc: &EncoderState,
        adapter: &AdapterConfig,
        mut params: ParamStore,
        trainable: bool,
    ) -> Result<Self> {
        let cfg = &enc.config;
        let before = params.num_params();
        let net = {
            let mut b = if trainable { params.root() } else { params.frozen() };
            match mode {
                CleanerMode::Adapter => Net::Adapter(AdapterStack::new(&mut b, adapter, cfg.num_layers)?),
                CleanerMode::FullFinetune => Net::Full(Encoder::new(&mut b, cfg)?),
                CleanerMode::ConformerCleaner => {
                    let mut c = b.pp("cleaner");
                    let blocks = (0..CONFORMER_CLEANER_LAYERS)
                        .map(|i| ConformerBlock::new(&mut c.pp(format!("block{i}")), cfg.block_dims()))
                        .collect::<Result<_>>()?;
                    let out = Linear::zeros(&mut c.pp("out"), cfg.model_dim, cfg.model_dim)?;
                    Net::Conformer { blocks, out }
                }
            }
        };
        if !trainable && before != params.num_params() {
            return Err(Error::MissingParam(format!("{} cleaner weights", mode.name())));
        }
        if let Net::Adapter(a) = &net {
            a.check(cfg.model_dim, cfg.num_layers)?;
        }
        Ok(Self {
            mode,
            adapter: adapter.clone(),
            params,
            net,
        })
    }

    /// Predicted clean tap features from a normalised log-mel batch.
    pub fn forward_mel(&self, enc: &EncoderState, mel: &Tensor) -> Result<Tensor> {
        match &self.net {
            Net::Adapter(stack) => adapted_layers(enc.net(), stack, &enc.net().embed(mel)?),
            Net::Full(net) => net.forward_tap(mel),
            Net::Conformer { blocks, out } => {
                let tap = enc.net().forward_tap(mel)?;
                let mut h = tap.clone();
                for b in blocks {
                    h = b.forward(&h)?;
                }
                Ok((tap + out.forward(&h)?)?)
            }
        }
    }

    /// Cleaned tap features for equal-length waveforms.
    pub fn features(&self, enc: &EncoderState, waves: &[&[f32]]) -> Result<Tensor> {
        self.forward_mel(enc, &enc.mel_batch(waves)?)
    }

    pub fn adapters(&self) -> Option<&AdapterStack> {
        match &self.net {
            Net::Adapter(a) => Some(a),
            _ => None,
        }
    }

    pub fn content_hash(&self) -> Result<String> {
        self.params.content_hash()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanerTrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub crop_seconds: f64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fail if the encoder's weights change.
    pub verify_frozen: bool,
    pub reference_steps: usize,
    pub reference_batch: usize,
}

impl Default for CleanerTrainOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 16,
            crop_seconds: 2.0,
            learning_rate: 1e-3,
            seed: 0,
            verify_frozen: true,
            reference_steps: 800_000,
            reference_batch: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanerPoint {
    pub step: usize,
    pub seconds: f64,
    pub l1: f64,
    pub l2: f64,
    pub sc: f64,
    pub total: f64,
}

pub const CLEANER_CURVE_HEADER: &str = "step,seconds,l1,l2,sc,total";

impl CleanerPoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.8},{:.8},{:.8},{:.8}",
            self.step, self.seconds, self.l1, self.l2, self.sc, self.total
        )
    }
}

pub struct TrainedCleaner {
    pub cleaner: Cleaner,
    pub curve: Vec<CleanerPoint>,
    pub encoder_hash_before: String,
    pub encoder_hash_after: String,
}

/// Fits `mode` so features of noisy audio match frozen features of the
/// paired clean audio.
pub fn train_cleaner(
    data: &dyn PairSource,
    enc: &EncoderState,
    mode: CleanerMode,
    adapter: &AdapterConfig,
    opts: &CleanerTrainOptions,
) -> Result<TrainedCleaner> {
    train_cleaner_with(data, enc, Cleaner::init(mode, enc, adapter, opts.seed)?, opts, |_| {})
}

/// As [`train_cleaner`], resuming from `cleaner` and reporting each point.
pub fn train_cleaner_with(
    data: &dyn PairSource,
    enc: &EncoderState,
    cleaner: Cleaner,
    opts: &CleanerTrainOptions,
    mut on_step: impl FnMut(&CleanerPoint),
) -> Result<TrainedCleaner> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let before = enc.content_hash()?;
    let mut opt = candle_nn::AdamW::new(
        cleaner.params.all_vars(),
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
    let start = Instant::now();
    let mut curve = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let (noisy, clean) = sampler.pairs(data, step)?;
        let target = enc.tap_batch(&as_slices(&clean))?;
        let pred = cleaner.features(enc, &as_slices(&noisy))?;
        let loss = feature_loss_tensor(&pred, &target)?;
        opt.backward_step(&loss.total)?;
        let [l1, l2, sc, total] = loss.values()?;
        if !total.is_finite() {
            return Err(Error::NonFinite { iteration: step });
        }
        let point = CleanerPoint {
            step,
            seconds: start.elapsed().as_secs_f64(),
            l1,
            l2,
            sc,
            total,
        };
        on_step(&point);
        curve.push(point);
    }
    let after = enc.content_hash()?;
    if opts.verify_frozen && before != after {
        return Err(Error::FrozenViolation {
            what: "encoder",
            before,
            after,
        });
    }
    Ok(TrainedCleaner {
        cleaner,
        curve,
        encoder_hash_before: before,
        encoder_hash_after: after,
    })
}

/// Parameter counts by enumeration of freshly built networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub encoder: usize,
    pub trainable: usize,
    /// `trainable / (encoder + trainable)`.
    pub fraction: f64,
    /// `trainable / encoder`.
    pub relative_to_encoder: f64,
}

pub fn param_breakdown(enc: &ConformerConfig, mode: CleanerMode, adapter: &AdapterConfig) -> Result<ParamBreakdown> {
    let mut enc_store = ParamStore::new(0);
    Encoder::new(&mut enc_store.frozen(), enc)?;
    let encoder = enc_store.num_params();
    let trainable = match mode {
        CleanerMode::FullFinetune => encoder,
        CleanerMode::Adapter => {
            let mut s = ParamStore::new(0);
            AdapterStack::new(&mut s.frozen(), adapter, enc.num_layers)?.check(enc.model_dim, enc.num_layers)?;
            s.num_params()
        }
        CleanerMode::ConformerCleaner => {
            let mut s = ParamStore::new(0);
            let mut b = s.frozen();
            for i in 0..CONFORMER_CLEANER_LAYERS {
                ConformerBlock::new(&mut b.pp(format!("block{i}")), enc.block_dims())?;
            }
            Linear::zeros(&mut b.pp("out"), enc.model_dim, enc.model_dim)?;
            s.num_params()
        }
    };
    let fraction = match mode {
        CleanerMode::FullFinetune => 1.0,
        _ => trainable as f64 / (encoder + trainable) as f64,
    };
    Ok(ParamBreakdown {
        encoder,
        trainable,
        fraction,
        relative_to_encoder: trainable as f64 / encoder as f64,
    })
}

pub fn trainable_param_fraction(enc: &ConformerConfig, mode: CleanerMode, adapter: &AdapterConfig) -> Result<f64> {
    Ok(param_breakdown(enc, mode, adapter)?.fraction)
}
