//! Layers built from differentiable primitives only. Convolutions are
//! expressed as explicit unfold + matmul so both passes stay on the gemm
//! path for every stride and dilation.

use candle_core::{DType, Tensor, D};

use crate::error::Result;
use crate::params::{Builder, Init};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(b: &mut Builder, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: b.tensor("weight", &[output, input], Init::FanIn(input))?,
            bias: Some(b.tensor("bias", &[output], Init::FanIn(input))?),
        })
    }

    /// Weight and bias start at zero.
    pub fn zeros(b: &mut Builder, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: b.tensor("weight", &[output, input], Init::Zeros)?,
            bias: Some(b.tensor("bias", &[output], Init::Zeros)?),
        })
    }

    pub fn no_bias(b: &mut Builder, input: usize, output: usize, init: Init) -> Result<Self> {
        Ok(Self {
            weight: b.tensor("weight", &[output, input], init)?,
            bias: None,
        })
    }

    /// `x`: `(..., input)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.tensor("gamma", &[dim], Init::Ones)?,
            beta: b.tensor("beta", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    /// Normalises over the last dimension.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centred.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// 1-D convolution on `(batch, channels, length)`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    /// `(out, kernel * in)`, tap-major.
    pub weight: Tensor,
    pub bias: Tensor,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv1d {
    /// "Same" padding for stride 1; `kernel` must be odd.
    pub fn same(b: &mut Builder, input: usize, output: usize, kernel: usize, dilation: usize) -> Result<Self> {
        let pad = dilation * (kernel - 1) / 2;
        Self::new(b, input, output, kernel, 1, dilation, pad, pad)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut Builder,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Self> {
        let fan_in = input * kernel;
        Ok(Self {
            weight: b.tensor("weight", &[output, fan_in], Init::FanIn(fan_in))?,
            bias: b.tensor("bias", &[output], Init::FanIn(fan_in))?,
            in_channels: input,
            kernel,
            stride,
            dilation,
            pad_left,
            pad_right,
        })
    }

    pub fn out_len(&self, len: usize) -> usize {
        let padded = len + self.pad_left + self.pad_right;
        (padded - self.dilation * (self.kernel - 1) - 1) / self.stride + 1
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (bsz, _, len) = x.dims3()?;
        let out_len = self.out_len(len);
        let span = self.stride * out_len;
        let needed = self.dilation * (self.kernel - 1) + span;
        let padded = len + self.pad_left + self.pad_right;
        let extra = needed.saturating_sub(padded);
        let xp = if self.pad_left + self.pad_right + extra > 0 {
            x.pad_with_zeros(2, self.pad_left, self.pad_right + extra)?
        } else {
            x.clone()
        };
        let taps: Vec<Tensor> = (0..self.kernel)
            .map(|j| {
                let t = xp.narrow(2, j * self.dilation, span)?;
                if self.stride == 1 {
                    Ok(t)
                } else {
                    t.reshape((bsz, self.in_channels, out_len, self.stride))?
                        .narrow(3, 0, 1)?
                        .squeeze(3)
                }
            })
            .collect::<candle_core::Result<_>>()?;
        let cols = if taps.len() == 1 {
            taps.into_iter().next().expect("one tap").contiguous()?
        } else {
            Tensor::cat(&taps, 1)?
        };
        let y = self.weight.broadcast_matmul(&cols)?;
        Ok(y.broadcast_add(&self.bias.unsqueeze(1)?)?)
    }

    pub fn num_params(&self) -> usize {
        self.weight.elem_count() + self.bias.elem_count()
    }
}

/// Per-channel ("depthwise") convolution with same padding.
#[derive(Debug, Clone)]
pub struct DepthwiseConv1d {
    /// `(channels, kernel)`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DepthwiseConv1d {
    pub fn new(b: &mut Builder, channels: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            weight: b.tensor("weight", &[channels, kernel], Init::FanIn(kernel))?,
            bias: b.tensor("bias", &[channels], Init::FanIn(kernel))?,
        })
    }

    /// `x`: `(batch, channels, length)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, len) = x.dims3()?;
        let k = self.weight.dim(1)?;
        let xp = x.pad_with_zeros(2, (k - 1) / 2, k / 2)?;
        let mut acc: Option<Tensor> = None;
        for j in 0..k {
            let term = xp.narrow(2, j, len)?.broadcast_mul(&self.weight.narrow(1, j, 1)?)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
        let acc = acc.expect("kernel >= 1");
        Ok(acc.broadcast_add(&self.bias.unsqueeze(1)?)?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu()?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Softmax over the last dimension; the max shift carries no gradient.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Log-softmax over the last dimension.
pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// `(batch, frames, dim)` → `(batch, frames * factor, dim)`, each frame
/// repeated `factor` times.
pub fn repeat_frames(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (b, t, d) = x.dims3()?;
    Ok(x.unsqueeze(2)?.broadcast_as((b, t, factor, d))?.reshape((b, t * factor, d))?)
}

/// Nearest-neighbour upsampling of `(batch, channels, length)`.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, c, l) = x.dims3()?;
    Ok(x.unsqueeze(3)?.broadcast_as((b, c, l, factor))?.reshape((b, c, l * factor))?)
}

/// Non-overlapping average pooling of `(batch, channels, length)`; the
/// length must be a multiple of `factor`.
pub fn avg_pool(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, c, l) = x.dims3()?;
    Ok(x.reshape((b, c, l / factor, factor))?.mean(3)?)
}

/// Sinusoidal absolute positions, `(frames, dim)`.
pub fn sinusoidal_positions(frames: usize, dim: usize, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let mut v = vec![0f32; frames * dim];
    for t in 0..frames {
        for i in 0..dim / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            v[t * dim + 2 * i] = (t as f64 * rate).sin() as f32;
            v[t * dim + 2 * i + 1] = (t as f64 * rate).cos() as f32;
        }
    }
    Ok(Tensor::from_vec(v, (frames, dim), device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use candle_core::Device;

    /// Direct-sum oracle for a multi-channel strided, dilated convolution.
    fn conv_oracle(x: &[Vec<Vec<f64>>], w: &[Vec<f64>], bias: &[f64], c: &Conv1d) -> Vec<Vec<Vec<f64>>> {
        let len = x[0][0].len();
        let out_len = c.out_len(len);
        x.iter()
            .map(|xb| {
                w.iter()
                    .enumerate()
                    .map(|(o, wo)| {
                        (0..out_len)
                            .map(|t| {
                                let mut acc = bias[o];
                                for j in 0..c.kernel {
                                    for ci in 0..c.in_channels {
                                        let pos = (t * c.stride + j * c.dilation) as i64 - c.pad_left as i64;
                                        if pos >= 0 && (pos as usize) < len {
                                            acc += wo[j * c.in_channels + ci] * xb[ci][pos as usize];
                                        }
                                    }
                                }
                                acc
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn conv_matches_direct_sum() {
        for (k, s, d, pl, pr) in [(3, 1, 1, 1, 1), (3, 2, 1, 1, 1), (5, 1, 4, 8, 8), (11, 4, 1, 5, 5), (1, 1, 1, 0, 0)] {
            let mut store = ParamStore::with_dtype(1, DType::F64);
            let conv = Conv1d::new(&mut store.root(), 3, 4, k, s, d, pl, pr).unwrap();
            let x = Tensor::randn(0f64, 1.0, (2, 3, 37), &Device::Cpu).unwrap();
            let y = conv.forward(&x).unwrap().to_vec3::<f64>().unwrap();
            let w = conv.weight.to_vec2::<f64>().unwrap();
            let b = conv.bias.to_vec1::<f64>().unwrap();
            let want = conv_oracle(&x.to_vec3().unwrap(), &w, &b, &conv);
            assert_eq!(y.len(), want.len());
            for (yb, wb) in y.iter().zip(&want) {
                for (yo, wo) in yb.iter().zip(wb) {
                    assert_eq!(yo.len(), wo.len());
                    for (a, b) in yo.iter().zip(wo) {
                        assert!((a - b).abs() < 1e-12, "k{k} s{s} d{d}");
                    }
                }
            }
        }
    }

    #[test]
    fn repeat_and_pool_shapes() {
        let x = Tensor::arange(0f32, 6.0, &Device::Cpu).unwrap().reshape((1, 3, 2)).unwrap();
        let r = repeat_frames(&x, 4).unwrap();
        assert_eq!(r.dims(), &[1, 12, 2]);
        let v = r.to_vec3::<f32>().unwrap();
        for j in 0..12 {
            assert_eq!(v[0][j], vec![(2 * (j / 4)) as f32, (2 * (j / 4) + 1) as f32]);
        }
        let u = upsample_nearest(&x, 3).unwrap();
        assert_eq!(avg_pool(&u, 3).unwrap().to_vec3::<f32>().unwrap(), x.to_vec3::<f32>().unwrap());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1f32, 2.0, 3.0], [1000.0, 1000.0, 1000.0]], &Device::Cpu).unwrap();
        let s = softmax_last(&x).unwrap().sum(1).unwrap().to_vec1::<f32>().unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-6));
        let l = log_softmax_last(&x).unwrap().exp().unwrap().sum(1).unwrap().to_vec1::<f32>().unwrap();
        assert!(l.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn layer_norm_normalises() {
        let mut store = ParamStore::new(0);
        let ln = LayerNorm::new(&mut store.root(), 4).unwrap();
        let x = Tensor::new(&[[1f32, 2.0, 3.0, 4.0]], &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f32>().unwrap();
        let mean: f32 = y[0].iter().sum::<f32>() / 4.0;
        let var: f32 = y[0].iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-3);
    }
}
