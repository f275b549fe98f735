//! Desk-scale models and data.
//!
//! Nothing here is trained. Convolutions are seeded random (He scaled),
//! BatchNorm running statistics are measured on task samples, and the
//! classifier head is the closed-form nearest-class-mean rule written as a
//! linear layer. This gives networks whose accuracy visibly degrades under
//! aggressive quantization while staying fully reproducible from a seed.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, read_f32_blob, write_f32_blob, AvgPool, BatchNorm, Conv2d, Layer, Linear, ModelGraph};
use crate::tensor::Tensor;

pub const TOY_INPUT: [usize; 3] = [3, 16, 16];
pub const TOY_CLASSES: usize = 10;
/// Pixel noise of the bundled task relative to unit-variance prototypes.
pub const TOY_NOISE: f64 = 1.6;
/// Task seed used by the bundled model and evaluation set.
pub const TOY_TASK_SEED: u64 = 7;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// He-scaled normal tensor.
pub fn he_tensor(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let s = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| s * normal(rng))
}

/// Classification data with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    format: String,
    version: u32,
    shape: Vec<usize>,
    labels: Vec<usize>,
    blob: String,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn accuracy(&self, logits: &Tensor) -> f64 {
        let hits = logits
            .argmax_rows()
            .iter()
            .zip(&self.labels)
            .filter(|(p, l)| p == l)
            .count();
        hits as f64 / self.len().max(1) as f64
    }

    /// Manifest JSON plus a little-endian f32 sidecar (`.bin`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob = path.with_extension("bin");
        let manifest = DatasetManifest {
            format: "bitplan-dataset".into(),
            version: 1,
            shape: self.inputs.shape().to_vec(),
            labels: self.labels.clone(),
            blob: blob.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        };
        write_f32_blob(&blob, self.inputs.data())?;
        fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.format != "bitplan-dataset" {
            return Err(Error::Format(format!("`{}` is not a dataset manifest", m.format)));
        }
        let data = read_f32_blob(&path.with_file_name(&m.blob))?;
        let expected: usize = m.shape.iter().product();
        if data.len() != expected {
            return Err(Error::BlobLength {
                expected,
                actual: data.len(),
            });
        }
        if m.shape.first() != Some(&m.labels.len()) {
            return Err(Error::Format("label count differs from batch extent".into()));
        }
        Ok(Self {
            inputs: Tensor::new(m.shape, data)?,
            labels: m.labels,
        })
    }
}

/// Ten smooth class prototypes plus isotropic pixel noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub shape: Vec<usize>,
    pub prototypes: Vec<Vec<f64>>,
    pub noise: f64,
}

impl SyntheticTask {
    /// Prototypes are drawn on a 4x4 grid per channel and upsampled, so
    /// classes differ in spatial structure rather than single pixels.
    pub fn new(shape: &[usize], classes: usize, noise: f64, seed: u64) -> Result<Self> {
        let [c, h, w] = shape else {
            return Err(Error::Shape(format!("task shape {shape:?} is not (C, H, W)")));
        };
        if classes == 0 {
            return Err(Error::InvalidArgument("task needs at least one class".into()));
        }
        let (gh, gw) = ((*h).min(4), (*w).min(4));
        let mut r = rng(seed);
        let prototypes = (0..classes)
            .map(|_| {
                let coarse: Vec<f64> = (0..c * gh * gw).map(|_| normal(&mut r)).collect();
                let mut p = Vec::with_capacity(c * h * w);
                for ch in 0..*c {
                    for y in 0..*h {
                        for x in 0..*w {
                            p.push(coarse[(ch * gh + y * gh / h) * gw + x * gw / w]);
                        }
                    }
                }
                p
            })
            .collect();
        Ok(Self {
            shape: shape.to_vec(),
            prototypes,
            noise,
        })
    }

    pub fn bundled() -> Self {
        Self::new(&TOY_INPUT, TOY_CLASSES, TOY_NOISE, TOY_TASK_SEED).expect("valid bundled task")
    }

    pub fn classes(&self) -> usize {
        self.prototypes.len()
    }

    /// `n` samples with labels cycling through the classes.
    pub fn sample(&self, n: usize, seed: u64) -> LabeledSet {
        let mut r = rng(seed);
        let len: usize = self.shape.iter().product();
        let labels: Vec<usize> = (0..n).map(|i| i % self.classes()).collect();
        let mut data = Vec::with_capacity(n * len);
        for &l in &labels {
            data.extend(self.prototypes[l].iter().map(|p| p + self.noise * normal(&mut r)));
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&self.shape);
        LabeledSet {
            inputs: Tensor::new(shape, data).expect("consistent sample shape"),
            labels,
        }
    }
}

fn conv(r: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Result<Layer> {
    let w = he_tensor(vec![cout, cin, k, k], cin * k * k, r);
    Ok(Layer::Conv2d(Conv2d::new(cin, cout, (k, k), stride, padding, w, None)?))
}

/// Replaces every BatchNorm's running statistics, in order, with those
/// measured on `data`, so the network normalizes its own activations.
pub fn calibrate_batch_norm(layers: Vec<Layer>, input_shape: &[usize], classes: usize, data: &Tensor) -> Result<ModelGraph> {
    let mut graph = ModelGraph::new(layers, input_shape.to_vec(), classes)?;
    let bn_layers: Vec<usize> = graph
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::BatchNorm(_)))
        .map(|(i, _)| i)
        .collect();
    for (k, &i) in bn_layers.iter().enumerate() {
        let (_, trace) = model::forward(&graph, data, true)?;
        let stats = &trace.expect("recorded").bn_stats[k];
        let mut layers = graph.layers().to_vec();
        let Layer::BatchNorm(old) = &layers[i] else { unreachable!() };
        let var = stats.std.iter().map(|s| (s * s).max(1e-6)).collect();
        layers[i] = Layer::BatchNorm(BatchNorm::new(
            stats.mean.clone(),
            var,
            old.gamma.clone(),
            old.beta.clone(),
            old.eps,
        )?);
        graph = ModelGraph::new(layers, input_shape.to_vec(), classes)?;
    }
    Ok(graph)
}

/// Installs a nearest-class-mean head as the final Linear layer: logits are
/// `s * (mu_k . f - |mu_k|^2 / 2)`, with `s` putting typical margins near 4.
pub fn fit_mean_head(graph: &ModelGraph, train: &LabeledSet) -> Result<ModelGraph> {
    let last = graph.layers().len() - 1;
    let Layer::Linear(head) = &graph.layers()[last] else {
        return Err(Error::InvalidArgument("last layer must be linear".into()));
    };
    let (_, trace) = model::forward(graph, &train.inputs, true)?;
    let acts = trace.and_then(|t| t.activations).expect("recorded");
    let feats = &acts[last];
    let d = head.in_features;
    let k = head.out_features;
    let mut means = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (n, &label) in train.labels.iter().enumerate() {
        counts[label] += 1;
        for (m, f) in means[label].iter_mut().zip(feats.sample(n)) {
            *m += f;
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c.max(1) as f64);
    }
    let mut spread = 0.0;
    let mut pairs = 0usize;
    for a in 0..k {
        for b in a + 1..k {
            spread += means[a].iter().zip(&means[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            pairs += 1;
        }
    }
    let s = if spread > 0.0 { 8.0 * pairs as f64 / spread } else { 1.0 };
    let weight = Tensor::new(vec![k, d], means.iter().flatten().map(|v| s * v).collect())?;
    let bias = means.iter().map(|m| -s * m.iter().map(|v| v * v).sum::<f64>() / 2.0).collect();
    let mut layers = graph.layers().to_vec();
    layers[last] = Layer::Linear(Linear::new(d, k, weight, Some(bias))?);
    ModelGraph::new(layers, graph.input_shape().to_vec(), graph.class_count())
}

/// The bundled four-weighted-layer CNN with one residual block.
///
/// ```text
/// conv 3->8 3x3 | bn | relu | conv 8->16 3x3 s2 | bn | relu
/// conv 16->16 3x3 | bn | +skip | relu | avgpool 4 | linear 64->10
/// ```
pub fn toy_cnn(task: &SyntheticTask, seed: u64) -> Result<ModelGraph> {
    let mut r = rng(seed);
    let layers = vec![
        conv(&mut r, 3, 8, 3, 1, 1)?,
        Layer::BatchNorm(BatchNorm::identity(8)),
        Layer::Relu,
        conv(&mut r, 8, 16, 3, 2, 1)?,
        Layer::BatchNorm(BatchNorm::identity(16)),
        Layer::Relu,
        conv(&mut r, 16, 16, 3, 1, 1)?,
        Layer::BatchNorm(BatchNorm::identity(16)),
        Layer::ResidualAdd { source: 5 },
        Layer::Relu,
        Layer::AvgPool(AvgPool { window: 4, stride: 4 }),
        Layer::Linear(Linear::new(64, task.classes(), Tensor::zeros(vec![task.classes(), 64]), None)?),
    ];
    let train = task.sample(400, seed.wrapping_add(1));
    let graph = calibrate_batch_norm(layers, &task.shape, task.classes(), &train.inputs)?;
    fit_mean_head(&graph, &train)
}

/// `toy_cnn` on the bundled task with seed 0.
pub fn bundled_model() -> Result<ModelGraph> {
    toy_cnn(&SyntheticTask::bundled(), 0)
}

/// Held-out evaluation set of the bundled task.
pub fn bundled_eval_set(samples: usize, seed: u64) -> LabeledSet {
    SyntheticTask::bundled().sample(samples, seed)
}

/// A single BatchNorm layer with identity affine parameters and the given
/// running statistics. Its data-synthesis loss depends only on the batch
/// mean and std per channel, so the optimum is known in closed form.
pub fn bn_passthrough(mean: &[f64], std: &[f64], spatial: usize) -> Result<ModelGraph> {
    let c = mean.len();
    let bn = BatchNorm::new(
        mean.to_vec(),
        std.iter().map(|s| s * s).collect(),
        vec![1.0; c],
        vec![0.0; c],
        0.0,
    )?;
    ModelGraph::new(vec![Layer::BatchNorm(bn)], vec![c, spatial, spatial], c * spatial * spatial)
}

/// Three weighted layers on a 1x6x6 input, four classes; BN statistics
/// calibrated on standard-normal inputs.
pub fn three_layer_net(seed: u64) -> Result<ModelGraph> {
    let mut r = rng(seed);
    let layers = vec![
        conv(&mut r, 1, 2, 3, 1, 1)?,
        Layer::BatchNorm(BatchNorm::identity(2)),
        Layer::Relu,
        conv(&mut r, 2, 3, 3, 1, 0)?,
        Layer::BatchNorm(BatchNorm::identity(3)),
        Layer::Relu,
        Layer::AvgPool(AvgPool { window: 2, stride: 2 }),
        Layer::Linear(Linear::new(12, 4, he_tensor(vec![4, 12], 12, &mut r), Some(vec![0.1, -0.1, 0.05, 0.0]))?),
    ];
    let data = Tensor::from_fn(vec![64, 1, 6, 6], |_| normal(&mut r));
    calibrate_batch_norm(layers, &[1, 6, 6], 4, &data)
}

/// Two weighted layers where the one with fewer weights costs more cycles:
/// a 72-weight conv over a 128x128 map against a 5120-weight linear head.
pub fn decorrelation_pair(seed: u64) -> Result<ModelGraph> {
    let mut r = rng(seed);
    let layers = vec![
        conv(&mut r, 1, 8, 3, 1, 1)?,
        Layer::Relu,
        Layer::AvgPool(AvgPool { window: 16, stride: 16 }),
        Layer::Linear(Linear::new(512, 10, he_tensor(vec![10, 512], 512, &mut r), None)?),
    ];
    ModelGraph::new(layers, vec![1, 128, 128], 10)
}

/// Uniform values in `[lo, hi)`, for property tests and examples.
pub fn uniform_values(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}
