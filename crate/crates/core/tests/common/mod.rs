//! Independent reference implementations used as test oracles. None of these
//! call into the library's arithmetic; they are deliberately naive.
#![allow(dead_code)]

use bitplan::model::{Conv2d, Layer, ModelGraph};
use bitplan::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Nested-loop convolution over an (N, C, H, W) batch.
pub fn direct_conv(x: &Tensor, conv: &Conv2d) -> Vec<f64> {
    let [n, c, h, w] = x.shape() else { panic!("rank 4") };
    let (kh, kw) = conv.kernel;
    let (s, p) = (conv.stride, conv.padding);
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (w + 2 * p - kw) / s + 1;
    let wt = conv.weight.data();
    let xd = x.data();
    let mut out = Vec::new();
    for b in 0..*n {
        for o in 0..conv.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias.as_ref().map_or(0.0, |v| v[o]);
                    for i in 0..*c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * s + ky) as isize - p as isize;
                                let xx = (ox * s + kx) as isize - p as isize;
                                if y < 0 || xx < 0 || y >= *h as isize || xx >= *w as isize {
                                    continue;
                                }
                                let xv = xd[((b * c + i) * h + y as usize) * w + xx as usize];
                                let wv = wt[((o * c + i) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Population mean and std per channel over batch and spatial extents.
pub fn channel_mean_std(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let shape = x.shape();
    let (n, c) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for ch in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| (0..spatial).map(move |s| (b, s)))
            .map(|(b, s)| x.data()[(b * c + ch) * spatial + s])
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        mean[ch] = m;
        std[ch] = v.sqrt();
    }
    (mean, std)
}

/// Eq. "round half away from zero" quantizer written out by hand.
pub fn ref_quantize(x: f64, scale: f64, zero: i64, bits: u32) -> i64 {
    let lo = -(1i64 << (bits - 1));
    let hi = (1i64 << (bits - 1)) - 1;
    let r = x / scale;
    let rounded = if r >= 0.0 { (r + 0.5).floor() } else { -((-r + 0.5).floor()) };
    (rounded as i64 - zero).clamp(lo, hi)
}

pub fn ref_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn ref_kl(p: &[f64], q: &[f64]) -> f64 {
    let eps = 1e-12;
    let clamped: Vec<f64> = q.iter().map(|&v| v.max(eps)).collect();
    let z: f64 = clamped.iter().sum();
    p.iter()
        .zip(&clamped)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / (qi / z)).ln())
        .sum()
}

/// Exhaustive search over all 2^L plans; ties keep the first plan found in
/// an order where lower layers are upgraded first.
pub fn brute_force_plan(merit: &[f64], sizes4: &[u64], sizes8: &[u64], limit: u64) -> (Vec<u8>, f64) {
    let l = merit.len();
    let mut best: Option<(Vec<u8>, f64)> = None;
    for mask in 0u64..(1 << l) {
        let bits: Vec<u8> = (0..l).map(|i| if mask >> i & 1 == 1 { 8 } else { 4 }).collect();
        let size: u64 = (0..l).map(|i| if bits[i] == 8 { sizes8[i] } else { sizes4[i] }).sum();
        if size > limit {
            continue;
        }
        let obj: f64 = bits.iter().zip(merit).map(|(&b, &m)| b as f64 * m).sum();
        if best.as_ref().is_none_or(|(_, o)| obj > *o) {
            best = Some((bits, obj));
        }
    }
    best.expect("limit admits the all-4 plan")
}

/// Random dyadic merits (multiples of 1/64 in [-1, 1]) so every sum is exact.
pub fn dyadic_merits(l: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..l).map(|_| r.random_range(-64i32..=64) as f64 / 64.0).collect()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(x: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + step;
            let up = f(&probe);
            probe.data_mut()[i] = orig - step;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Quantizable-layer weights of a model, in order.
pub fn weights(model: &ModelGraph) -> Vec<Tensor> {
    model.layers().iter().filter_map(Layer::weight).cloned().collect()
}
