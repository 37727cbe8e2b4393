//! Layer kernels with their hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Uniform init with bound `gain * sqrt(3 / fan_in)`.
pub fn kaiming_uniform(dims: &[usize], fan_in: usize, gain: f64, rng: &mut impl Rng) -> Tensor {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(dims, |_| rng.gen_range(-bound..=bound))
}

/// Fully connected layer `y = x W^T + b` over the trailing axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    /// `[out_features, in_features]`
    pub weight: Tensor,
    /// `[out_features]`
    pub bias: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Debug)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let layer = LinearLayer {
            weight,
            bias,
            trainable: true,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        LinearLayer {
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
            trainable: true,
        }
    }

    pub fn init(in_features: usize, out_features: usize, gain: f64, rng: &mut impl Rng) -> Self {
        LinearLayer {
            weight: kaiming_uniform(&[out_features, in_features], in_features, gain, rng),
            bias: Tensor::zeros(&[out_features]),
            trainable: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.weight.dims(), self.bias.dims()) {
            ([o, _], [b]) if o == b => Ok(()),
            (w, b) => Err(Error::dims("LinearLayer", w, b)),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    /// Apply to a token matrix `[n, in]`, producing `[n, out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (inf, outf) = (self.in_features(), self.out_features());
        let last = *x.dims().last().unwrap_or(&0);
        if last != inf {
            return Err(Error::dims("linear", &[inf], &[last]));
        }
        let n = x.len() / inf;
        let w = self.weight.data();
        let b = self.bias.data();
        let xd = x.data();
        let mut out = vec![0.0; n * outf];
        for t in 0..n {
            let row = &xd[t * inf..(t + 1) * inf];
            let dst = &mut out[t * outf..(t + 1) * outf];
            for (o, d) in dst.iter_mut().enumerate() {
                let wr = &w[o * inf..(o + 1) * inf];
                *d = b[o] + wr.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let mut dims = x.dims().to_vec();
        *dims.last_mut().unwrap() = outf;
        Tensor::from_vec(&dims, out)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
        let (inf, outf) = (self.in_features(), self.out_features());
        let n = x.len() / inf;
        if grad_out.len() != n * outf {
            return Err(Error::dims("linear backward", &[n, outf], grad_out.dims()));
        }
        let w = self.weight.data();
        let xd = x.data();
        let gd = grad_out.data();
        let mut gx = vec![0.0; n * inf];
        let mut gw = vec![0.0; outf * inf];
        let mut gb = vec![0.0; outf];
        for t in 0..n {
            let row = &xd[t * inf..(t + 1) * inf];
            let grow = &gd[t * outf..(t + 1) * outf];
            let gxr = &mut gx[t * inf..(t + 1) * inf];
            for (o, &g) in grow.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let wr = &w[o * inf..(o + 1) * inf];
                let gwr = &mut gw[o * inf..(o + 1) * inf];
                for i in 0..inf {
                    gxr[i] += g * wr[i];
                    gwr[i] += g * row[i];
                }
            }
        }
        Ok(LinearGrads {
            input: Tensor::from_vec(x.dims(), gx)?,
            weight: Tensor::from_vec(&[outf, inf], gw)?,
            bias: Tensor::from_vec(&[outf], gb)?,
        })
    }
}

/// Convenience wrapper matching the functional form `linear(layer, x)`.
pub fn linear(layer: &LinearLayer, x: &Tensor) -> Result<Tensor> {
    layer.forward(x)
}

/// 3x3 convolution with zero padding 1 on `[C,H,W]` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3 {
    /// `[out, in, 3, 3]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv_out_extent(n: usize, stride: usize) -> usize {
    (n + stride - 1) / stride
}

impl Conv3x3 {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize) -> Result<Self> {
        if !(stride == 1 || stride == 2) {
            return Err(Error::Domain(format!("conv stride {stride} unsupported")));
        }
        match (weight.dims(), bias.dims()) {
            ([o, _, 3, 3], [b]) if o == b => Ok(Conv3x3 {
                weight,
                bias,
                stride,
            }),
            (w, b) => Err(Error::dims("Conv3x3", w, b)),
        }
    }

    pub fn init(in_ch: usize, out_ch: usize, stride: usize, gain: f64, rng: &mut impl Rng) -> Self {
        Conv3x3 {
            weight: kaiming_uniform(&[out_ch, in_ch, 3, 3], in_ch * 9, gain, rng),
            bias: Tensor::zeros(&[out_ch]),
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = x.chw()?;
        if c != self.in_channels() {
            return Err(Error::dims("conv3x3", &[self.in_channels()], &[c]));
        }
        let s = self.stride;
        let (oh, ow) = (conv_out_extent(h, s), conv_out_extent(w, s));
        let oc = self.out_channels();
        let wd = self.weight.data();
        let xd = x.data();
        let mut out = vec![0.0; oc * oh * ow];
        for o in 0..oc {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.fill(self.bias.data()[o]);
            for ci in 0..c {
                let src = &xd[ci * h * w..(ci + 1) * h * w];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = wd[((o * c + ci) * 3 + ky) * 3 + kx];
                        if k == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                            let drow = &mut plane[oy * ow..(oy + 1) * ow];
                            let (lo, hi) = valid_range(ow, w, s, kx);
                            for ox in lo..hi {
                                drow[ox] += k * srow[ox * s + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[oc, oh, ow], out)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
        let (c, h, w) = x.chw()?;
        let s = self.stride;
        let (oh, ow) = (conv_out_extent(h, s), conv_out_extent(w, s));
        let oc = self.out_channels();
        if grad_out.dims() != [oc, oh, ow] {
            return Err(Error::dims("conv3x3 backward", &[oc, oh, ow], grad_out.dims()));
        }
        let wd = self.weight.data();
        let xd = x.data();
        let gd = grad_out.data();
        let mut gx = vec![0.0; c * h * w];
        let mut gw = vec![0.0; oc * c * 9];
        let mut gb = vec![0.0; oc];
        for o in 0..oc {
            let gplane = &gd[o * oh * ow..(o + 1) * oh * ow];
            gb[o] = gplane.iter().sum();
            for ci in 0..c {
                let src = &xd[ci * h * w..(ci + 1) * h * w];
                let gsrc = &mut gx[ci * h * w..(ci + 1) * h * w];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let widx = ((o * c + ci) * 3 + ky) * 3 + kx;
                        let k = wd[widx];
                        let mut acc = 0.0;
                        let (lo, hi) = valid_range(ow, w, s, kx);
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = iy as usize * w;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            for ox in lo..hi {
                                let ix = base + ox * s + kx - 1;
                                acc += grow[ox] * src[ix];
                                gsrc[ix] += grow[ox] * k;
                            }
                        }
                        gw[widx] = acc;
                    }
                }
            }
        }
        Ok(ConvGrads {
            input: Tensor::from_vec(&[c, h, w], gx)?,
            weight: Tensor::from_vec(&[oc, c, 3, 3], gw)?,
            bias: Tensor::from_vec(&[oc], gb)?,
        })
    }
}

/// Output columns `ox` for which input column `ox*s + kx - 1` is inside `[0, w)`.
fn valid_range(ow: usize, w: usize, s: usize, kx: usize) -> (usize, usize) {
    let lo = usize::from(kx == 0);
    // ox*s + kx - 1 <= w - 1  <=>  ox <= (w - kx) / s
    let hi = if w < kx { 0 } else { ((w - kx) / s + 1).min(ow) };
    (lo, hi.max(lo))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of relu given its output.
pub fn relu_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    out.zip_map(grad_out, |y, g| if y > 0.0 { g } else { 0.0 })
}

/// Numerically stabilized softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let dims = x.dims();
    if axis >= dims.len() {
        return Err(Error::Domain(format!("softmax axis {axis} for rank {}", dims.len())));
    }
    let n = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| d[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (d[idx(k)] - max).exp();
                d[idx(k)] = e;
                total += e;
            }
            for k in 0..n {
                d[idx(k)] /= total;
            }
        }
    }
    Ok(out)
}

/// `[C,H,W]` to `[C]` mean over space.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let n = h * w;
    let data = x
        .data()
        .chunks(n)
        .map(|plane| plane.iter().sum::<f64>() / n as f64)
        .collect();
    Tensor::from_vec(&[c], data)
}

/// 2x2 mean pooling with stride 2. Extents must be even.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dims("avg_pool2 (even extents)", &[h - h % 2, w - w % 2], &[h, w]));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let b = ch * h * w + 2 * y * w + 2 * xx;
                out[(ch * oh + y) * ow + xx] = 0.25 * (xd[b] + xd[b + 1] + xd[b + w] + xd[b + w + 1]);
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

pub fn avg_pool2_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (c, oh, ow) = grad_out.chw()?;
    let (h, w) = (oh * 2, ow * 2);
    let gd = grad_out.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ch * h + y) * w + xx] = 0.25 * gd[(ch * oh + y / 2) * ow + xx / 2];
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Nearest-neighbour 2x spatial upsampling.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let (oh, ow) = (h * 2, w * 2);
    let xd = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[(ch * oh + y) * ow + xx] = xd[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

pub fn upsample2_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (c, oh, ow) = grad_out.chw()?;
    let (h, w) = (oh / 2, ow / 2);
    let gd = grad_out.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[(ch * h + y / 2) * w + xx / 2] += gd[(ch * oh + y) * ow + xx];
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Seeded inverted-dropout mask: entries are `0` or `1/(1-p)`.
pub fn dropout_mask(len: usize, p: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("dropout probability {p} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect())
}

pub fn dropout(x: &Tensor, p: f64, training: bool, seed: u64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), p, seed)?;
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Tensor::from_vec(x.dims(), data)
}
