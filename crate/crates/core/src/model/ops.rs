//! Per-layer forward and backward kernels.

use super::im2col::{conv_with_weight, gemm, gemm_at_b, ConvGeometry};
use super::{AvgPool, BatchNorm, Conv2d, Linear};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channel count and spatial size per channel for `(N, C, ...)` tensors.
fn channel_layout(x: &Tensor) -> (usize, usize, usize) {
    let shape = x.shape();
    let n = shape[0];
    let c = shape.get(1).copied().unwrap_or(1);
    let spatial = shape.iter().skip(2).product();
    (n, c, spatial)
}

pub(crate) fn conv2d(x: &Tensor, conv: &Conv2d, weight: &Tensor) -> Result<Tensor> {
    conv_with_weight(x, conv, weight)
}

pub(crate) fn conv2d_backward(grad_out: &Tensor, input_shape: &[usize], conv: &Conv2d) -> Result<Tensor> {
    let (n, h, w) = (input_shape[0], input_shape[2], input_shape[3]);
    let g = ConvGeometry::new(conv, h, w)?;
    let (k, p, o) = (g.patch_len(), g.out_len(), conv.out_channels);
    let mut grad_in = Tensor::zeros(input_shape.to_vec());
    let sample_len = grad_in.sample_len();
    let mut cols = vec![0.0; k * p];
    for s in 0..n {
        cols.fill(0.0);
        gemm_at_b(conv.weight.data(), grad_out.sample(s), &mut cols, o, k, p);
        let dst = &mut grad_in.data_mut()[s * sample_len..(s + 1) * sample_len];
        g.raise_add(&cols, dst);
    }
    Ok(grad_in)
}

pub(crate) fn batch_norm(x: &Tensor, bn: &BatchNorm) -> Tensor {
    let (n, c, spatial) = channel_layout(x);
    let mut out = x.clone();
    let data = out.data_mut();
    for ch in 0..c {
        let inv = 1.0 / (bn.running_var[ch] + bn.eps).sqrt();
        let scale = bn.gamma[ch] * inv;
        let shift = bn.beta[ch] - bn.running_mean[ch] * scale;
        for s in 0..n {
            let base = (s * c + ch) * spatial;
            for v in &mut data[base..base + spatial] {
                *v = *v * scale + shift;
            }
        }
    }
    out
}

pub(crate) fn batch_norm_backward(grad_out: &Tensor, bn: &BatchNorm) -> Tensor {
    let (n, c, spatial) = channel_layout(grad_out);
    let mut g = grad_out.clone();
    let data = g.data_mut();
    for ch in 0..c {
        let scale = bn.gamma[ch] / (bn.running_var[ch] + bn.eps).sqrt();
        for s in 0..n {
            let base = (s * c + ch) * spatial;
            for v in &mut data[base..base + spatial] {
                *v *= scale;
            }
        }
    }
    g
}

/// Population mean and standard deviation per channel over batch and
/// spatial positions, accumulated in 64-bit.
pub(crate) fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, c, spatial) = channel_layout(x);
    let count = (n * spatial) as f64;
    let data = x.data();
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for s in 0..n {
            let base = (s * c + ch) * spatial;
            sum += data[base..base + spatial].iter().sum::<f64>();
        }
        let m = sum / count;
        let mut sq = 0.0;
        for s in 0..n {
            let base = (s * c + ch) * spatial;
            sq += data[base..base + spatial]
                .iter()
                .map(|v| (v - m) * (v - m))
                .sum::<f64>();
        }
        mean[ch] = m;
        std[ch] = (sq / count).sqrt();
    }
    (mean, std)
}

/// Gradient of `||mean - target_mean||^2 + ||std - target_std||^2` with
/// respect to `x`, using the same population statistics as [`channel_stats`].
pub(crate) fn stat_loss_gradient(x: &Tensor, target_mean: &[f64], target_std: &[f64]) -> Tensor {
    let (n, c, spatial) = channel_layout(x);
    let count = (n * spatial) as f64;
    let (mean, std) = channel_stats(x);
    let mut g = Tensor::zeros(x.shape().to_vec());
    let (src, dst) = (x.data(), g.data_mut());
    for ch in 0..c {
        let d_mean = 2.0 * (mean[ch] - target_mean[ch]) / count;
        let d_std = if std[ch] > 0.0 {
            2.0 * (std[ch] - target_std[ch]) / (count * std[ch])
        } else {
            0.0
        };
        for s in 0..n {
            let base = (s * c + ch) * spatial;
            for k in base..base + spatial {
                dst[k] = d_mean + d_std * (src[k] - mean[ch]);
            }
        }
    }
    g
}

pub(crate) fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub(crate) fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

pub(crate) fn avg_pool(x: &Tensor, p: &AvgPool) -> Result<Tensor> {
    let (n, c, h, w) = nchw(x)?;
    let oh = (h - p.window) / p.stride + 1;
    let ow = (w - p.window) / p.stride + 1;
    let norm = 1.0 / (p.window * p.window) as f64;
    let src = x.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let ib = plane * h * w;
        let ob = plane * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..p.window {
                    let row = ib + (oy * p.stride + ky) * w + ox * p.stride;
                    acc += src[row..row + p.window].iter().sum::<f64>();
                }
                out[ob + oy * ow + ox] = acc * norm;
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub(crate) fn avg_pool_backward(grad_out: &Tensor, input_shape: &[usize], p: &AvgPool) -> Tensor {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
    let planes = input_shape[0] * input_shape[1];
    let norm = 1.0 / (p.window * p.window) as f64;
    let mut g = Tensor::zeros(input_shape.to_vec());
    let (src, dst) = (grad_out.data(), g.data_mut());
    for plane in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = src[plane * oh * ow + oy * ow + ox] * norm;
                for ky in 0..p.window {
                    let row = plane * h * w + (oy * p.stride + ky) * w + ox * p.stride;
                    for d in &mut dst[row..row + p.window] {
                        *d += v;
                    }
                }
            }
        }
    }
    g
}

pub(crate) fn linear(x: &Tensor, l: &Linear, weight: &Tensor) -> Result<Tensor> {
    let n = x.batch();
    if x.sample_len() != l.in_features {
        return Err(Error::Shape(format!(
            "linear expects {} features, got {}",
            l.in_features,
            x.sample_len()
        )));
    }
    let (i, o) = (l.in_features, l.out_features);
    let mut out = vec![0.0; n * o];
    let wd = weight.data();
    for s in 0..n {
        let xs = x.sample(s);
        for r in 0..o {
            let dot: f64 = wd[r * i..(r + 1) * i].iter().zip(xs).map(|(a, b)| a * b).sum();
            out[s * o + r] = dot + l.bias.as_ref().map_or(0.0, |b| b[r]);
        }
    }
    Tensor::new(vec![n, o], out)
}

pub(crate) fn linear_backward(grad_out: &Tensor, input_shape: &[usize], l: &Linear) -> Tensor {
    let n = input_shape[0];
    let mut g = Tensor::zeros(input_shape.to_vec());
    let dst = g.data_mut();
    // grad_in (n x in) = grad_out (n x out) * W (out x in)
    gemm(grad_out.data(), l.weight.data(), dst, n, l.out_features, l.in_features);
    g
}

pub(crate) fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "residual add {:?} + {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    Ok(out)
}

pub(crate) fn add_assign(acc: &mut Tensor, g: &Tensor) {
    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += v;
    }
}

fn nchw(x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match x.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        other => Err(Error::Shape(format!("expected (N, C, H, W), got {other:?}"))),
    }
}
