//! Multi-resolution STFT loss and multi-scale waveform discriminators.

use std::cell::Cell;
use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Conv1d};
use crate::params::{Builder, ParamStore};

const MAG_EPS: f64 = 1e-7;

struct Resolution {
    fft: usize,
    hop: usize,
    /// Windowed DFT basis, `(fft, 2 · bins)`: cosines then sines.
    basis: Tensor,
}

/// Spectral convergence plus log-magnitude L1, averaged over resolutions.
pub struct MultiResStft {
    resolutions: Vec<Resolution>,
    calls: Cell<usize>,
}

impl MultiResStft {
    /// `(fft, hop)` pairs; `fft` must be a multiple of `hop`.
    pub fn new(resolutions: &[(usize, usize)], dtype: DType) -> Result<Self> {
        let resolutions = resolutions
            .iter()
            .map(|&(fft, hop)| {
                if hop == 0 || fft % hop != 0 {
                    return Err(Error::Config(format!("fft {fft} not a multiple of hop {hop}")));
                }
                let bins = fft / 2 + 1;
                let mut m = vec![0f64; fft * 2 * bins];
                for n in 0..fft {
                    let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / fft as f64).cos();
                    for k in 0..bins {
                        let a = 2.0 * PI * (n * k % fft) as f64 / fft as f64;
                        m[n * 2 * bins + k] = w * a.cos();
                        m[n * 2 * bins + bins + k] = -w * a.sin();
                    }
                }
                let basis = Tensor::from_vec(m, (fft, 2 * bins), &Device::Cpu)?.to_dtype(dtype)?;
                Ok(Resolution { fft, hop, basis })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            resolutions,
            calls: Cell::new(0),
        })
    }

    pub fn standard(dtype: DType) -> Result<Self> {
        Self::new(&[(512, 128), (1024, 256), (2048, 512)], dtype)
    }

    /// Number of [`loss`](Self::loss) evaluations so far.
    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn loss(&self, pred: &Tensor, target: &Tensor) -> Result<StftLoss> {
        if pred.dims() != target.dims() {
            return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims())));
        }
        self.calls.set(self.calls.get() + 1);
        let mut sc = None;
        let mut mag = None;
        for r in &self.resolutions {
            let p = magnitude(pred, r)?;
            let t = magnitude(target, r)?;
            let s = ((&t - &p)?.sqr()?.sum_all()?.sqrt()? / t.sqr()?.sum_all()?.sqrt()?)?;
            let m = (t.log()? - p.log()?)?.abs()?.mean_all()?;
            sc = Some(match sc {
                Some(a) => (a + s)?,
                None => s,
            });
            mag = Some(match mag {
                Some(a) => (a + m)?,
                None => m,
            });
        }
        let n = self.resolutions.len() as f64;
        let sc = (sc.ok_or_else(|| Error::Config("no STFT resolutions".into()))? / n)?;
        let mag = (mag.expect("same length as sc") / n)?;
        let total = (&sc + &mag)?;
        Ok(StftLoss { sc, mag, total })
    }
}

pub struct StftLoss {
    pub sc: Tensor,
    pub mag: Tensor,
    pub total: Tensor,
}

/// Centred, zero-padded framing of `(batch, samples)` into
/// `(batch, frames, fft)`.
fn frames(x: &Tensor, fft: usize, hop: usize) -> Result<Tensor> {
    let (b, len) = x.dims2()?;
    let count = len / hop + 1;
    let needed = (count - 1) * hop + fft;
    let right = needed - len - fft / 2;
    let xp = x.pad_with_zeros(1, fft / 2, right)?;
    let parts: Vec<Tensor> = (0..fft / hop)
        .map(|r| xp.narrow(1, r * hop, count * hop)?.reshape((b, count, hop)))
        .collect::<candle_core::Result<_>>()?;
    Ok(Tensor::cat(&parts, 2)?)
}

fn magnitude(x: &Tensor, r: &Resolution) -> Result<Tensor> {
    let spec = frames(x, r.fft, r.hop)?.broadcast_matmul(&r.basis)?;
    let bins = r.fft / 2 + 1;
    let re = spec.narrow(2, 0, bins)?;
    let im = spec.narrow(2, bins, bins)?;
    Ok(((re.sqr()? + im.sqr()?)? + MAG_EPS)?.sqrt()?)
}

/// Magnitude spectrogram `(batch, frames, bins)` of one resolution.
pub fn stft_magnitude(x: &Tensor, fft: usize, hop: usize) -> Result<Tensor> {
    let stft = MultiResStft::new(&[(fft, hop)], x.dtype())?;
    magnitude(x, &stft.resolutions[0])
}

#[derive(Debug, Clone)]
struct ScaleDiscriminator {
    layers: Vec<Conv1d>,
    out: Conv1d,
}

impl ScaleDiscriminator {
    fn new(b: &mut Builder, width: usize) -> Result<Self> {
        let w = width;
        let layers = vec![
            Conv1d::new(&mut b.pp("conv0"), 1, w, 15, 1, 1, 7, 7)?,
            Conv1d::new(&mut b.pp("conv1"), w, 2 * w, 11, 4, 1, 5, 5)?,
            Conv1d::new(&mut b.pp("conv2"), 2 * w, 4 * w, 11, 4, 1, 5, 5)?,
            Conv1d::new(&mut b.pp("conv3"), 4 * w, 4 * w, 11, 4, 1, 5, 5)?,
            Conv1d::new(&mut b.pp("conv4"), 4 * w, 4 * w, 5, 1, 1, 2, 2)?,
        ];
        Ok(Self {
            layers,
            out: Conv1d::new(&mut b.pp("out"), 4 * w, 1, 3, 1, 1, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut h = x.clone();
        let mut feats = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            h = nn::leaky_relu(&l.forward(&h)?, 0.2)?;
            feats.push(h.clone());
        }
        Ok((self.out.forward(&h)?, feats))
    }
}

/// Three discriminators on the waveform at 1×, 1/2 and 1/4 rate.
pub struct Discriminators {
    pub params: ParamStore,
    scales: Vec<ScaleDiscriminator>,
}

/// Score map and feature maps of each discriminator.
pub type DiscOutputs = Vec<(Tensor, Vec<Tensor>)>;

impl Discriminators {
    pub fn new(seed: u64, width: usize) -> Result<Self> {
        Self::with_params(ParamStore::new(seed), width)
    }

    pub fn with_params(mut params: ParamStore, width: usize) -> Result<Self> {
        let scales = {
            let mut b = params.root();
            (0..3)
                .map(|i| ScaleDiscriminator::new(&mut b.pp(format!("scale{i}")), width))
                .collect::<Result<_>>()?
        };
        Ok(Self { params, scales })
    }

    /// `x`: `(batch, samples)`.
    pub fn forward(&self, x: &Tensor) -> Result<DiscOutputs> {
        let (_, len) = x.dims2()?;
        let x = x.pad_with_zeros(1, 0, (4 - len % 4) % 4)?.unsqueeze(1)?;
        self.scales
            .iter()
            .enumerate()
            .map(|(i, d)| d.forward(&nn::avg_pool(&x, 1 << i)?))
            .collect()
    }
}

/// Hinge loss for the discriminators; `fake` should be detached.
pub fn disc_loss(discs: &Discriminators, real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let r = discs.forward(real)?;
    let f = discs.forward(fake)?;
    let mut total = Tensor::zeros((), real.dtype(), real.device())?;
    for ((sr, _), (sf, _)) in r.iter().zip(&f) {
        let lr = (1.0 - sr)?.relu()?.mean_all()?;
        let lf = (sf + 1.0)?.relu()?.mean_all()?;
        total = ((total + lr)? + lf)?;
    }
    Ok(total)
}

/// Generator hinge term and feature-matching L1 (mean over all maps).
pub fn generator_adversarial(discs: &Discriminators, real: &Tensor, fake: &Tensor) -> Result<(Tensor, Tensor)> {
    let r = discs.forward(&real.detach())?;
    let f = discs.forward(fake)?;
    let mut adv = Tensor::zeros((), fake.dtype(), fake.device())?;
    let mut fm = Tensor::zeros((), fake.dtype(), fake.device())?;
    let mut maps = 0usize;
    for ((_, fr), (sf, ff)) in r.iter().zip(&f) {
        adv = (adv + sf.neg()?.mean_all()?)?;
        for (a, b) in fr.iter().zip(ff) {
            fm = (fm + (a.detach() - b)?.abs()?.mean_all()?)?;
            maps += 1;
        }
    }
    Ok((adv, (fm / maps.max(1) as f64)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocoderLossWeights {
    pub stft: f64,
    pub adversarial: f64,
    pub feature_matching: f64,
}

impl Default for VocoderLossWeights {
    fn default() -> Self {
        Self {
            stft: 1.0,
            adversarial: 1.0,
            feature_matching: 2.0,
        }
    }
}

pub struct VocoderLoss {
    /// Summed over iterates.
    pub stft: Tensor,
    pub adversarial: Option<Tensor>,
    pub feature_matching: Option<Tensor>,
    pub total: Tensor,
    pub stft_terms: usize,
}

/// STFT loss on every iterate plus, when discriminators are given,
/// adversarial and feature-matching terms on the final iterate.
pub fn vocoder_loss(
    iterates: &[Tensor],
    target: &Tensor,
    stft: &MultiResStft,
    discs: Option<&Discriminators>,
    weights: &VocoderLossWeights,
) -> Result<VocoderLoss> {
    let last = iterates.last().ok_or_else(|| Error::Config("no iterates".into()))?;
    let mut s = Tensor::zeros((), target.dtype(), target.device())?;
    for y in iterates {
        s = (s + stft.loss(y, target)?.total)?;
    }
    let mut total = (&s * weights.stft)?;
    let (adversarial, feature_matching) = match discs {
        Some(d) => {
            let (adv, fm) = generator_adversarial(d, target, last)?;
            total = ((total + (&adv * weights.adversarial)?)? + (&fm * (weights.adversarial * weights.feature_matching))?)?;
            (Some(adv), Some(fm))
        }
        None => (None, None),
    };
    Ok(VocoderLoss {
        stft: s,
        adversarial,
        feature_matching,
        total,
        stft_terms: iterates.len(),
    })
}
