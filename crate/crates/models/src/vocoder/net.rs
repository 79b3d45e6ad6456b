use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use resyn_core::Waveform;

use super::memory::Recorder;
use super::{Variant, VocoderConfig};
use crate::conformer::{BlockDims, ConformerBlock};
use crate::encoder::FeatureSequence;
use crate::error::{Error, Result};
use crate::nn::{self, Conv1d, Linear};
use crate::params::{Builder, ParamStore};

const SLOPE: f64 = 0.2;
/// Added to measured power before normalising.
const POWER_EPS: f64 = 1e-12;
/// Floor inside the log of frame power targets.
pub const GAIN_FLOOR: f64 = 1e-8;

fn lrelu(x: &Tensor) -> Result<Tensor> {
    nn::leaky_relu(x, SLOPE)
}

#[derive(Debug, Clone)]
struct Film {
    hidden: Conv1d,
    out: Conv1d,
}

impl Film {
    fn new(b: &mut Builder, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            hidden: Conv1d::same(&mut b.pp("hidden"), input, input, 3, 1)?,
            out: Conv1d::same(&mut b.pp("out"), input, output, 3, 1)?,
        })
    }

    fn forward(&self, x: &Tensor, j: usize, rec: &mut Recorder) -> Result<Tensor> {
        let h = lrelu(&self.hidden.forward(x)?)?;
        rec.alloc(&format!("film{j}.hidden"), h.dims());
        let y = self.out.forward(&h)?;
        rec.alloc(&format!("film{j}"), y.dims());
        rec.free(&format!("film{j}.hidden"));
        Ok(y)
    }
}

#[derive(Debug, Clone)]
struct DBlock {
    factor: usize,
    skip: Conv1d,
    convs: [Conv1d; 3],
}

impl DBlock {
    fn new(b: &mut Builder, input: usize, output: usize, factor: usize) -> Result<Self> {
        Ok(Self {
            factor,
            skip: Conv1d::same(&mut b.pp("skip"), input, output, 1, 1)?,
            convs: [
                Conv1d::same(&mut b.pp("conv0"), input, output, 3, 1)?,
                Conv1d::same(&mut b.pp("conv1"), output, output, 3, 2)?,
                Conv1d::same(&mut b.pp("conv2"), output, output, 3, 4)?,
            ],
        })
    }

    fn forward(&self, x: &Tensor, k: usize, rec: &mut Recorder) -> Result<Tensor> {
        let pooled = nn::avg_pool(x, self.factor)?;
        rec.alloc(&format!("down{k}.pooled"), pooled.dims());
        let skip = self.skip.forward(&pooled)?;
        rec.alloc(&format!("down{k}.skip"), skip.dims());
        let mut h = pooled;
        for c in &self.convs {
            h = c.forward(&lrelu(&h)?)?;
        }
        let out = (h + skip)?;
        rec.alloc(&format!("down{k}"), out.dims());
        rec.free(&format!("down{k}.pooled"));
        rec.free(&format!("down{k}.skip"));
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct UBlock {
    factor: usize,
    channels: usize,
    skip: Conv1d,
    convs: [Conv1d; 4],
}

/// Applies the `k`-th of three modulations.
fn modulate(h: &Tensor, film: Option<&Tensor>, variant: Variant, channels: usize, k: usize) -> Result<Tensor> {
    Ok(match (film, variant) {
        (None, _) => h.clone(),
        (Some(f), Variant::MemoryEfficient) => (h + f)?,
        (Some(f), Variant::Vanilla) => {
            let scale = f.narrow(1, 2 * k * channels, channels)?;
            let shift = f.narrow(1, (2 * k + 1) * channels, channels)?;
            ((h * scale)? + shift)?
        }
    })
}

impl UBlock {
    fn new(b: &mut Builder, input: usize, output: usize, factor: usize) -> Result<Self> {
        Ok(Self {
            factor,
            channels: output,
            skip: Conv1d::same(&mut b.pp("skip"), input, output, 1, 1)?,
            convs: [
                Conv1d::same(&mut b.pp("conv0"), input, output, 3, 1)?,
                Conv1d::same(&mut b.pp("conv1"), output, output, 3, 2)?,
                Conv1d::same(&mut b.pp("conv2"), output, output, 3, 4)?,
                Conv1d::same(&mut b.pp("conv3"), output, output, 3, 8)?,
            ],
        })
    }

    fn forward(&self, x: &Tensor, film: Option<&Tensor>, variant: Variant, j: usize, rec: &mut Recorder) -> Result<Tensor> {
        let c = self.channels;
        let up = nn::upsample_nearest(x, self.factor)?;
        rec.alloc(&format!("up{j}.upsampled"), up.dims());
        let skip = self.skip.forward(&up)?;
        rec.alloc(&format!("up{j}.skip"), skip.dims());
        let a = self.convs[0].forward(&lrelu(&up)?)?;
        let a = modulate(&a, film, variant, c, 0)?;
        let a = self.convs[1].forward(&lrelu(&a)?)?;
        rec.alloc(&format!("up{j}.a"), a.dims());
        drop(up);
        rec.free(&format!("up{j}.upsampled"));
        let b = (a + skip)?;
        rec.alloc(&format!("up{j}.b"), b.dims());
        rec.free(&format!("up{j}.a"));
        rec.free(&format!("up{j}.skip"));
        let g = modulate(&b, film, variant, c, 1)?;
        let g = self.convs[2].forward(&lrelu(&g)?)?;
        let g = modulate(&g, film, variant, c, 2)?;
        let g = self.convs[3].forward(&lrelu(&g)?)?;
        let out = (b + g)?;
        rec.alloc(&format!("up{j}"), out.dims());
        rec.free(&format!("up{j}.b"));
        Ok(out)
    }
}

/// Pre-network plus U-Net; predicts the component to subtract from the
/// current iterate.
#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: VocoderConfig,
    prenet_in: Linear,
    prenet: Vec<ConformerBlock>,
    upsampler: Option<Linear>,
    stem: Conv1d,
    down: Vec<DBlock>,
    /// Indexed by up block; `None` where the variant has no conditioning.
    films: Vec<Option<Film>>,
    up: Vec<UBlock>,
    out: Conv1d,
    dtype: DType,
}

impl Denoiser {
    pub fn new(b: &mut Builder, cfg: &VocoderConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.up_factors.len();
        let dims = BlockDims {
            dim: cfg.prenet_dim,
            heads: cfg.prenet_heads,
            ff_mult: 4,
            conv_kernel: cfg.prenet_kernel,
        };
        let prenet = (0..cfg.prenet_layers)
            .map(|i| ConformerBlock::new(&mut b.pp(format!("prenet{i}")), dims))
            .collect::<Result<_>>()?;
        let upsampler = match cfg.variant {
            Variant::MemoryEfficient => None,
            Variant::Vanilla => Some(Linear::new(
                &mut b.pp("upsampler"),
                cfg.prenet_dim,
                cfg.repeat_factor * cfg.prenet_dim,
            )?),
        };
        let mut src_ch = vec![cfg.stem_dim];
        src_ch.extend(&cfg.down_dims);
        let down = (0..n - 1)
            .map(|k| DBlock::new(&mut b.pp(format!("down{k}")), src_ch[k], cfg.down_dims[k], cfg.down_factors[k]))
            .collect::<Result<_>>()?;
        let films = (0..n)
            .map(|j| {
                if cfg.variant == Variant::MemoryEfficient && j == n - 1 {
                    return Ok(None);
                }
                let s = n - 1 - j;
                Film::new(&mut b.pp(format!("film{j}")), src_ch[s], cfg.film_multiplier() * cfg.up_dims[j]).map(Some)
            })
            .collect::<Result<_>>()?;
        let up = (0..n)
            .map(|j| {
                let input = if j == 0 { cfg.prenet_dim } else { cfg.up_dims[j - 1] };
                UBlock::new(&mut b.pp(format!("up{j}")), input, cfg.up_dims[j], cfg.up_factors[j])
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            prenet_in: Linear::new(&mut b.pp("prenet_in"), cfg.cond_dim, cfg.prenet_dim)?,
            prenet,
            upsampler,
            stem: Conv1d::same(&mut b.pp("stem"), 1, cfg.stem_dim, 5, 1)?,
            down,
            films,
            up,
            out: Conv1d::same(&mut b.pp("out"), cfg.up_dims[n - 1], 1, 3, 1)?,
            dtype: b.dtype(),
        })
    }

    pub fn film_count(&self) -> usize {
        self.films.iter().filter(|f| f.is_some()).count()
    }

    /// `(batch, frames, cond_dim)` → `(batch, prenet_dim, frames · repeat)`.
    pub fn condition(&self, feats: &Tensor, rec: &mut Recorder) -> Result<Tensor> {
        let (b, t, d) = feats.dims3()?;
        if d != self.cfg.cond_dim {
            return Err(Error::Shape(format!("conditioning dim {d}, expected {}", self.cfg.cond_dim)));
        }
        let p = self.cfg.prenet_dim;
        let pos = nn::sinusoidal_positions(t, p, self.dtype, feats.device())?;
        let mut x = self.prenet_in.forward(feats)?.broadcast_add(&pos)?;
        for block in &self.prenet {
            x = block.forward(&x)?;
        }
        rec.alloc("prenet", x.dims());
        let r = self.cfg.repeat_factor;
        let up = match &self.upsampler {
            None => nn::repeat_frames(&x, r)?,
            Some(lin) => lin.forward(&x)?.reshape((b, t * r, p))?,
        };
        let cond = up.transpose(1, 2)?.contiguous()?;
        rec.alloc("cond", cond.dims());
        rec.free("prenet");
        Ok(cond)
    }

    /// `y`: `(batch, samples)`; `cond` from [`condition`](Self::condition).
    pub fn forward(&self, y: &Tensor, cond: &Tensor, rec: &mut Recorder) -> Result<Tensor> {
        let (_, len) = y.dims2()?;
        let n = self.up.len();
        let expect = cond.dim(2)? * self.cfg.up_factors.iter().product::<usize>();
        if len != expect {
            return Err(Error::Shape(format!("waveform of {len} samples for {expect}-sample conditioning")));
        }
        rec.alloc("y", &[y.dim(0)?, len]);
        let stem = self.stem.forward(&y.unsqueeze(1)?)?;
        rec.alloc("stem", stem.dims());
        let mut films: Vec<Option<Tensor>> = vec![None; n];
        let mut src = stem;
        for s in 0..n {
            let j = n - 1 - s;
            if let Some(f) = &self.films[j] {
                films[j] = Some(f.forward(&src, j, rec)?);
            }
            let name = if s == 0 { "stem".to_string() } else { format!("down{}", s - 1) };
            if s + 1 < n {
                src = self.down[s].forward(&src, s, rec)?;
            }
            rec.free(&name);
        }
        drop(src);
        let mut h = cond.clone();
        for j in 0..n {
            let film = films[j].take();
            h = self.up[j].forward(&h, film.as_ref(), self.cfg.variant, j, rec)?;
            rec.free(&format!("film{j}"));
            if j > 0 {
                rec.free(&format!("up{}", j - 1));
            }
        }
        let out = self.out.forward(&lrelu(&h)?)?;
        rec.alloc("out", out.dims());
        rec.free(&format!("up{}", n - 1));
        Ok(out.squeeze(1)?)
    }
}

/// Per-frame log-power from conditioning features.
#[derive(Debug, Clone)]
pub struct GainEstimator {
    proj: Linear,
}

impl GainEstimator {
    pub fn new(b: &mut Builder, cond_dim: usize) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(b, cond_dim, 1)?,
        })
    }

    /// `(batch, frames, dim)` → `(batch, frames)`, clamped to a finite range.
    pub fn log_power(&self, feats: &Tensor) -> Result<Tensor> {
        Ok(self.proj.forward(feats)?.squeeze(2)?.clamp(-40.0, 5.0)?)
    }

    /// Mean exponentiated estimate per item, `(batch, 1)`, without gradient.
    pub fn target_power(&self, feats: &Tensor) -> Result<Tensor> {
        Ok(self.log_power(feats)?.exp()?.mean_keepdim(1)?.detach())
    }
}

/// Gain estimator and denoiser with their parameters.
#[derive(Debug, Clone)]
pub struct Vocoder {
    pub config: VocoderConfig,
    pub params: ParamStore,
    pub denoiser: Denoiser,
    pub gain: GainEstimator,
}

impl Vocoder {
    pub fn init(config: &VocoderConfig, seed: u64) -> Result<Self> {
        Self::build(config, ParamStore::new(seed), true)
    }

    /// Inference copy; every parameter must already be present.
    pub fn from_params(config: &VocoderConfig, params: ParamStore) -> Result<Self> {
        Self::build(config, params, false)
    }

    /// Trainable network over `params`, sharing their storage.
    pub fn trainable(config: &VocoderConfig, params: ParamStore) -> Result<Self> {
        Self::build(config, params, true)
    }

    fn build(config: &VocoderConfig, mut params: ParamStore, trainable: bool) -> Result<Self> {
        let before = params.num_params();
        let (denoiser, gain) = {
            let mut b = if trainable { params.root() } else { params.frozen() };
            let d = Denoiser::new(&mut b.pp("denoiser"), config)?;
            let g = GainEstimator::new(&mut b.pp("gain"), config.cond_dim)?;
            (d, g)
        };
        if !trainable && params.num_params() != before {
            return Err(Error::MissingParam("vocoder weights".into()));
        }
        Ok(Self {
            config: config.clone(),
            params,
            denoiser,
            gain,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn content_hash(&self) -> Result<String> {
        self.params.content_hash()
    }

    /// Iterates `y_{T-1}, …, y_0` starting from `noise` scaled to the
    /// estimated power.
    pub fn iterate(&self, noise: &Tensor, feats: &Tensor, iterations: usize) -> Result<Vec<Tensor>> {
        let mut rec = Recorder::off();
        let cond = self.denoiser.condition(feats, &mut rec)?;
        let p = self.gain.target_power(feats)?;
        let mut y = noise.broadcast_mul(&p.sqrt()?)?;
        let mut out = Vec::with_capacity(iterations);
        for i in 0..iterations {
            let z = (&y - self.denoiser.forward(&y, &cond, &mut rec)?)?;
            y = if self.config.gain_normalization {
                let pz = (z.sqr()?.mean_keepdim(1)? + POWER_EPS)?;
                z.broadcast_mul(&(p.broadcast_div(&pz)?).sqrt()?)?
            } else {
                z
            };
            let check: f64 = y.sum_all()?.to_dtype(DType::F64)?.to_scalar()?;
            if !check.is_finite() {
                return Err(Error::NonFinite {
                    iteration: iterations - 1 - i,
                });
            }
            out.push(y.clone());
        }
        Ok(out)
    }

    /// Per-item seeded noise, `(seeds.len(), samples)`.
    pub fn noise(&self, seeds: &[u64], samples: usize) -> Result<Tensor> {
        let mut v = Vec::with_capacity(seeds.len() * samples);
        for &s in seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            v.extend((0..samples).map(|_| StandardNormal.sample(&mut rng)).map(|x: f32| x));
        }
        Ok(Tensor::from_vec(v, (seeds.len(), samples), &Device::Cpu)?.to_dtype(self.params.dtype())?)
    }

    /// Final iterate for each item; item `i` uses noise seeded by `seeds[i]`.
    pub fn synthesize(&self, feats: &Tensor, seeds: &[u64]) -> Result<Tensor> {
        let (b, t, _) = feats.dims3()?;
        if b != seeds.len() {
            return Err(Error::Shape(format!("{b} items but {} seeds", seeds.len())));
        }
        let noise = self.noise(seeds, t * self.config.hop())?;
        let mut it = self.iterate(&noise, feats, self.config.iterations)?;
        Ok(it.pop().expect("at least one iteration"))
    }

    /// Event trace of conditioning plus one denoiser pass.
    pub fn trace(&self, feats: &Tensor) -> Result<Vec<super::MemEvent>> {
        let mut rec = Recorder::on();
        let cond = self.denoiser.condition(feats, &mut rec)?;
        let (b, t, _) = feats.dims3()?;
        let y = Tensor::zeros((b, t * self.config.hop()), self.params.dtype(), &Device::Cpu)?;
        self.denoiser.forward(&y, &cond, &mut rec)?;
        Ok(rec.into_events())
    }
}

/// Runs the iteration on one item: `initial` is the unscaled noise and
/// `cond` the feature-rate conditioning. Returns every iterate, last = `y_0`.
pub fn wavefit_iterate(
    initial: &Waveform,
    cond: &FeatureSequence,
    vocoder: &Vocoder,
    iterations: usize,
) -> Result<Vec<Waveform>> {
    let hop = vocoder.config.hop();
    if cond.frames * hop != initial.len() {
        return Err(Error::Shape(format!(
            "{} frames need {} samples, got {}",
            cond.frames,
            cond.frames * hop,
            initial.len()
        )));
    }
    let dtype = vocoder.params.dtype();
    let noise = Tensor::from_vec(initial.samples.clone(), (1, initial.len()), &Device::Cpu)?.to_dtype(dtype)?;
    let feats = cond.to_tensor(dtype)?.unsqueeze(0)?;
    vocoder
        .iterate(&noise, &feats, iterations)?
        .into_iter()
        .map(|y| {
            let samples: Vec<f32> = y.squeeze(0)?.to_dtype(DType::F32)?.to_vec1()?;
            Ok(Waveform::new(samples, vocoder.config.sample_rate)?)
        })
        .collect()
}
