//! Per-layer quantization sensitivity.
//!
//! [`mqe_sensitivity`] quantizes the whole model once at 8 bits, then for
//! every weighted layer zeroes a random fraction `alpha` of that layer's
//! integer weights and measures the mean per-sample KL divergence between the
//! softmax outputs of the unmasked and masked models. Only one quantization
//! is performed regardless of depth.
//!
//! [`naive_sensitivity`] is the direct approach kept as a cross-check: each
//! layer in turn is quantized alone while the rest stays at full precision,
//! which costs one quantization per layer.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ModelGraph};
use crate::quant::{
    dequantize, quantize_model, quantized_forward, BitConfig, QuantHooks, QuantizedModel, FULL_PRECISION,
};
use crate::tensor::{IntTensor, Tensor};

/// Lower clamp applied to `q` before the divergence is taken.
pub const KL_EPSILON: f64 = 1e-12;
const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Bit width of the single base quantization used by MQE.
pub const MQE_BITS: u8 = 8;
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub alpha: f64,
    pub seed: u64,
    /// Position of the masked layer among the quantizable layers.
    pub layer: usize,
}

impl MaskSpec {
    /// Number of positions zeroed in a tensor of `n` elements.
    pub fn masked_count(&self, n: usize) -> usize {
        (self.alpha * n as f64).round() as usize
    }

    fn subseed(&self) -> u64 {
        splitmix64(self.seed ^ splitmix64(self.layer as u64 ^ 0x6d61_736b))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("mask ratio {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Returns a copy of `weights` with exactly `round(alpha * n)` entries set to
/// zero, chosen uniformly without replacement from a per-layer seed.
pub fn mask_weights(weights: &IntTensor, spec: &MaskSpec) -> Result<IntTensor> {
    check_alpha(spec.alpha)?;
    let n = weights.len();
    let k = spec.masked_count(n).min(n);
    let mut out = weights.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.subseed());
    for pos in index::sample(&mut rng, n, k) {
        out.data_mut()[pos] = 0;
    }
    Ok(out)
}

fn check_distribution(v: &[f64], name: &str) -> Result<()> {
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(Error::InvalidArgument(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

/// `D_kl(p || q) = sum_x p(x) log(p(x) / q(x))`, with `q` clamped below at
/// [`KL_EPSILON`] and renormalised when the clamp is active.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "distribution lengths {} and {} differ or are empty",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    if p == q {
        return Ok(0.0);
    }
    let clamped = q.iter().any(|&v| v < KL_EPSILON);
    let norm = if clamped {
        q.iter().map(|&v| v.max(KL_EPSILON)).sum::<f64>()
    } else {
        1.0
    };
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| {
            let qi = if clamped { qi.max(KL_EPSILON) / norm } else { qi };
            pi * (pi / qi).ln()
        })
        .sum();
    Ok(kl.max(0.0))
}

/// Row-wise softmax of `(N, K)` logits.
pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.sample_len();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Mean over samples of `D_kl(reference_j || other_j)`.
pub fn mean_kl(reference: &[Vec<f64>], other: &[Vec<f64>]) -> Result<f64> {
    if reference.len() != other.len() || reference.is_empty() {
        return Err(Error::Shape("output batches differ in size".into()));
    }
    let mut total = 0.0;
    for (p, q) in reference.iter().zip(other) {
        total += kl_divergence(p, q)?;
    }
    Ok(total / reference.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mqe,
    Naive,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mqe" => Ok(Method::Mqe),
            "naive" => Ok(Method::Naive),
            other => Err(Error::config("sensitivity.method", format!("unknown method `{other}`"))),
        }
    }
}

/// Work counters, used to check the cost claims of each method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SensitivityStats {
    pub quantizations: usize,
    pub mask_operations: usize,
    pub forward_passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub method: Method,
    /// Mask ratio (MQE only).
    pub alpha: Option<f64>,
    /// Per-layer quantization width (naive only).
    pub bits: Option<u8>,
    pub seed: Option<u64>,
    pub batch_size: usize,
    /// Model-layer index of each entry in `omega`.
    pub layers: Vec<usize>,
    pub omega: Vec<f64>,
    pub stats: SensitivityStats,
}

impl SensitivityReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Logits of `qmodel` with one layer's integer weights masked per `spec`.
pub fn masked_forward(qmodel: &QuantizedModel, batch: &Tensor, spec: &MaskSpec) -> Result<Tensor> {
    let qlayer = qmodel
        .layers()
        .get(spec.layer)
        .ok_or_else(|| Error::InvalidArgument(format!("no quantizable layer {}", spec.layer)))?;
    let (Some(ints), Some(params)) = (&qlayer.weights, &qlayer.weight_params) else {
        return Err(Error::InvalidArgument(format!(
            "layer {} is not quantized; masking needs integer weights",
            qlayer.layer
        )));
    };
    let masked = dequantize(&mask_weights(ints, spec)?, params);
    let hooks = QuantHooks {
        model: qmodel,
        replace: Some((qlayer.layer, &masked)),
    };
    Ok(model::run(qmodel.base(), batch, &hooks, false)
        .map_err(|e| e.at_layer(qlayer.layer))?
        .logits)
}

pub fn mqe_sensitivity(model: &ModelGraph, batch: &Tensor, alpha: f64, seed: u64) -> Result<SensitivityReport> {
    check_alpha(alpha)?;
    let counter = Counter::default();
    let layers = model.quantizable_layers();
    let qmodel = counter.quantize(model, &BitConfig::uniform(layers.len(), MQE_BITS), batch)?;
    let reference = softmax_rows(&counter.quantized_forward(&qmodel, batch)?);

    let omega = (0..layers.len())
        .into_par_iter()
        .map(|k| {
            let spec = MaskSpec { alpha, seed, layer: k };
            counter.masks.fetch_add(1, Ordering::Relaxed);
            counter.forwards.fetch_add(1, Ordering::Relaxed);
            let logits = masked_forward(&qmodel, batch, &spec)?;
            mean_kl(&reference, &softmax_rows(&logits)).map_err(|e| e.at_layer(layers[k]))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SensitivityReport {
        method: Method::Mqe,
        alpha: Some(alpha),
        bits: None,
        seed: Some(seed),
        batch_size: batch.batch(),
        stats: counter.stats(),
        layers,
        omega,
    })
}

pub fn naive_sensitivity(model: &ModelGraph, batch: &Tensor, bits: u8) -> Result<SensitivityReport> {
    let counter = Counter::default();
    let layers = model.quantizable_layers();
    counter.forwards.fetch_add(1, Ordering::Relaxed);
    let (logits, _) = model::forward(model, batch, false)?;
    let reference = softmax_rows(&logits);

    let omega = (0..layers.len())
        .into_par_iter()
        .map(|k| {
            let mut config = BitConfig::uniform(layers.len(), FULL_PRECISION);
            config.weight_bits[k] = bits;
            config.activation_bits[k] = bits;
            let qmodel = counter.quantize(model, &config, batch)?;
            let out = softmax_rows(&counter.quantized_forward(&qmodel, batch)?);
            mean_kl(&reference, &out).map_err(|e| e.at_layer(layers[k]))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SensitivityReport {
        method: Method::Naive,
        alpha: None,
        bits: Some(bits),
        seed: None,
        batch_size: batch.batch(),
        stats: counter.stats(),
        layers,
        omega,
    })
}

/// Counts the expensive operations a method actually performs.
#[derive(Default)]
struct Counter {
    quantizations: AtomicUsize,
    masks: AtomicUsize,
    forwards: AtomicUsize,
}

impl Counter {
    fn quantize(&self, model: &ModelGraph, config: &BitConfig, batch: &Tensor) -> Result<QuantizedModel> {
        self.quantizations.fetch_add(1, Ordering::Relaxed);
        quantize_model(model, config, batch)
    }

    fn quantized_forward(&self, qmodel: &QuantizedModel, batch: &Tensor) -> Result<Tensor> {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        quantized_forward(qmodel, batch)
    }

    fn stats(&self) -> SensitivityStats {
        SensitivityStats {
            quantizations: self.quantizations.load(Ordering::Relaxed),
            mask_operations: self.masks.load(Ordering::Relaxed),
            forward_passes: self.forwards.load(Ordering::Relaxed),
        }
    }
}

/// Spearman rank correlation (average ranks for ties).
pub fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0;
            for &i in &idx[s..=e] {
                r[i] = avg;
            }
            s = e + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
