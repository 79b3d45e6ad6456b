//! Macaron conformer block (layer norm in place of batch norm).

use candle_core::{Tensor, D};

use crate::error::Result;
use crate::nn::{self, DepthwiseConv1d, LayerNorm, Linear};
use crate::params::Builder;

#[derive(Debug, Clone, Copy)]
pub struct BlockDims {
    pub dim: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub conv_kernel: usize,
}

#[derive(Debug, Clone)]
struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(b: &mut Builder, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&mut b.pp("norm"), dim)?,
            up: Linear::new(&mut b.pp("up"), dim, hidden)?,
            down: Linear::new(&mut b.pp("down"), hidden, dim)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = nn::silu(&self.up.forward(&self.norm.forward(x)?)?)?;
        self.down.forward(&h)
    }
}

#[derive(Debug, Clone)]
struct SelfAttention {
    norm: LayerNorm,
    qkv: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    fn new(b: &mut Builder, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&mut b.pp("norm"), dim)?,
            qkv: Linear::new(&mut b.pp("qkv"), dim, 3 * dim)?,
            out: Linear::new(&mut b.pp("out"), dim, dim)?,
            heads,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (bsz, t, d) = x.dims3()?;
        let hd = d / self.heads;
        let qkv = self
            .qkv
            .forward(&self.norm.forward(x)?)?
            .reshape((bsz, t, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        let attn = nn::softmax_last(&scores)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.reshape((bsz, t, d))?;
        self.out.forward(&ctx)
    }
}

#[derive(Debug, Clone)]
struct ConvModule {
    norm: LayerNorm,
    pointwise_in: Linear,
    depthwise: DepthwiseConv1d,
    mid_norm: LayerNorm,
    pointwise_out: Linear,
}

impl ConvModule {
    fn new(b: &mut Builder, dim: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&mut b.pp("norm"), dim)?,
            pointwise_in: Linear::new(&mut b.pp("pw_in"), dim, 2 * dim)?,
            depthwise: DepthwiseConv1d::new(&mut b.pp("dw"), dim, kernel)?,
            mid_norm: LayerNorm::new(&mut b.pp("mid_norm"), dim)?,
            pointwise_out: Linear::new(&mut b.pp("pw_out"), dim, dim)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dim(D::Minus1)?;
        let h = self.pointwise_in.forward(&self.norm.forward(x)?)?;
        let glu = h.narrow(2, 0, d)?.mul(&nn::sigmoid(&h.narrow(2, d, d)?)?)?;
        let conv = self.depthwise.forward(&glu.transpose(1, 2)?)?.transpose(1, 2)?;
        let h = nn::silu(&self.mid_norm.forward(&conv)?)?;
        self.pointwise_out.forward(&h)
    }
}

#[derive(Debug, Clone)]
pub struct ConformerBlock {
    ff1: FeedForward,
    attn: SelfAttention,
    conv: ConvModule,
    ff2: FeedForward,
    norm: LayerNorm,
}

impl ConformerBlock {
    pub fn new(b: &mut Builder, dims: BlockDims) -> Result<Self> {
        let hidden = dims.dim * dims.ff_mult;
        Ok(Self {
            ff1: FeedForward::new(&mut b.pp("ff1"), dims.dim, hidden)?,
            attn: SelfAttention::new(&mut b.pp("attn"), dims.dim, dims.heads)?,
            conv: ConvModule::new(&mut b.pp("conv"), dims.dim, dims.conv_kernel)?,
            ff2: FeedForward::new(&mut b.pp("ff2"), dims.dim, hidden)?,
            norm: LayerNorm::new(&mut b.pp("norm"), dims.dim)?,
        })
    }

    /// `x`: `(batch, frames, dim)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + (self.ff1.forward(x)? * 0.5)?)?;
        let x = (&x + self.attn.forward(&x)?)?;
        let x = (&x + self.conv.forward(&x)?)?;
        let x = (&x + (self.ff2.forward(&x)? * 0.5)?)?;
        self.norm.forward(&x)
    }

    /// Closed-form parameter count, used to cross-check enumeration.
    pub fn param_count(dims: BlockDims) -> usize {
        let d = dims.dim;
        let h = d * dims.ff_mult;
        let ln = 2 * d;
        let ff = ln + (d * h + h) + (h * d + d);
        let attn = ln + (d * 3 * d + 3 * d) + (d * d + d);
        let conv = ln + (d * 2 * d + 2 * d) + (d * dims.conv_kernel + d) + ln + (d * d + d);
        2 * ff + attn + conv + ln
    }
}
