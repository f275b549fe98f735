//! Model files: a JSON manifest plus a sidecar blob of little-endian `f32`
//! values in declaration order. Offsets and lengths in the manifest count
//! `f32` elements.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AvgPool, BatchNorm, Conv2d, Layer, Linear, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) const MODEL_FORMAT: &str = "bitplan-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    input_shape: Vec<usize>,
    class_count: usize,
    blob: String,
    layers: Vec<Value>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Segment {
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvEntry {
    kind: String,
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 2],
    stride: usize,
    padding: usize,
    weight: Segment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Segment>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchNormEntry {
    kind: String,
    channels: usize,
    eps: f64,
    running_mean: Segment,
    running_var: Segment,
    gamma: Segment,
    beta: Segment,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolEntry {
    kind: String,
    window: usize,
    stride: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearEntry {
    kind: String,
    in_features: usize,
    out_features: usize,
    weight: Segment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Segment>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResidualEntry {
    kind: String,
    source: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BareEntry {
    kind: String,
}

struct BlobWriter(Vec<f64>);

impl BlobWriter {
    fn push(&mut self, values: &[f64]) -> Segment {
        let seg = Segment {
            offset: self.0.len(),
            len: values.len(),
        };
        self.0.extend_from_slice(values);
        seg
    }
}

struct BlobReader<'a>(&'a [f64]);

impl BlobReader<'_> {
    fn take(&self, seg: Segment, expected: usize, what: &str) -> Result<Vec<f64>> {
        if seg.len != expected {
            return Err(Error::Format(format!(
                "{what} declares {} values, shape needs {expected}",
                seg.len
            )));
        }
        let end = seg.offset.checked_add(seg.len).filter(|&e| e <= self.0.len());
        match end {
            Some(end) => Ok(self.0[seg.offset..end].to_vec()),
            None => Err(Error::BlobLength {
                expected: seg.offset + seg.len,
                actual: self.0.len(),
            }),
        }
    }
}

pub(crate) fn blob_path_for(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `values` as little-endian `f32`.
pub fn write_f32_blob(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32_blob(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "blob {} has {} bytes, not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Saves `model` to `path` (manifest) and `path.bin` (weights).
pub fn save_model(model: &ModelGraph, path: &Path) -> Result<()> {
    let blob_path = blob_path_for(path);
    let mut blob = BlobWriter(Vec::new());
    let mut layers = Vec::with_capacity(model.layers().len());
    for layer in model.layers() {
        let kind = layer.kind().to_string();
        let entry = match layer {
            Layer::Conv2d(c) => serde_json::to_value(ConvEntry {
                kind,
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: [c.kernel.0, c.kernel.1],
                stride: c.stride,
                padding: c.padding,
                weight: blob.push(c.weight.data()),
                bias: c.bias.as_deref().map(|b| blob.push(b)),
            })?,
            Layer::BatchNorm(bn) => serde_json::to_value(BatchNormEntry {
                kind,
                channels: bn.channels,
                eps: bn.eps,
                running_mean: blob.push(&bn.running_mean),
                running_var: blob.push(&bn.running_var),
                gamma: blob.push(&bn.gamma),
                beta: blob.push(&bn.beta),
            })?,
            Layer::Relu => serde_json::to_value(BareEntry { kind })?,
            Layer::AvgPool(p) => serde_json::to_value(PoolEntry {
                kind,
                window: p.window,
                stride: p.stride,
            })?,
            Layer::Linear(l) => serde_json::to_value(LinearEntry {
                kind,
                in_features: l.in_features,
                out_features: l.out_features,
                weight: blob.push(l.weight.data()),
                bias: l.bias.as_deref().map(|b| blob.push(b)),
            })?,
            Layer::ResidualAdd { source } => serde_json::to_value(ResidualEntry {
                kind,
                source: *source,
            })?,
        };
        layers.push(entry);
    }
    let manifest = Manifest {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        input_shape: model.input_shape().to_vec(),
        class_count: model.class_count(),
        blob: blob_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        layers,
    };
    write_f32_blob(&blob_path, &blob.0)?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    let text = fs::read_to_string(path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format != MODEL_FORMAT {
        return Err(Error::Format(format!("unexpected format tag `{}`", manifest.format)));
    }
    if manifest.version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported version {}", manifest.version)));
    }
    let blob_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let values = read_f32_blob(&blob_path)?;
    let blob = BlobReader(&values);

    let mut declared = 0usize;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, entry) in manifest.layers.into_iter().enumerate() {
        let kind = entry
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Format(format!("layer {i} has no `kind`")))?
            .to_string();
        let bad = |e: serde_json::Error| Error::Format(format!("layer {i} ({kind}): {e}"));
        let layer = match kind.as_str() {
            "conv2d" => {
                let e: ConvEntry = serde_json::from_value(entry).map_err(bad)?;
                let [kh, kw] = e.kernel;
                let shape = vec![e.out_channels, e.in_channels, kh, kw];
                let n = shape.iter().product();
                let weight = Tensor::new(shape, blob.take(e.weight, n, "conv weight")?)?;
                declared += n;
                let bias = match e.bias {
                    Some(seg) => {
                        declared += seg.len;
                        Some(blob.take(seg, e.out_channels, "conv bias")?)
                    }
                    None => None,
                };
                Layer::Conv2d(Conv2d::new(
                    e.in_channels,
                    e.out_channels,
                    (kh, kw),
                    e.stride,
                    e.padding,
                    weight,
                    bias,
                )?)
            }
            "batch_norm" => {
                let e: BatchNormEntry = serde_json::from_value(entry).map_err(bad)?;
                let c = e.channels;
                declared += 4 * c;
                Layer::BatchNorm(BatchNorm::new(
                    blob.take(e.running_mean, c, "running_mean")?,
                    blob.take(e.running_var, c, "running_var")?,
                    blob.take(e.gamma, c, "gamma")?,
                    blob.take(e.beta, c, "beta")?,
                    e.eps,
                )?)
            }
            "relu" => {
                let _: BareEntry = serde_json::from_value(entry).map_err(bad)?;
                Layer::Relu
            }
            "avg_pool" => {
                let e: PoolEntry = serde_json::from_value(entry).map_err(bad)?;
                Layer::AvgPool(AvgPool {
                    window: e.window,
                    stride: e.stride,
                })
            }
            "linear" => {
                let e: LinearEntry = serde_json::from_value(entry).map_err(bad)?;
                let n = e.in_features * e.out_features;
                let weight = Tensor::new(
                    vec![e.out_features, e.in_features],
                    blob.take(e.weight, n, "linear weight")?,
                )?;
                declared += n;
                let bias = match e.bias {
                    Some(seg) => {
                        declared += seg.len;
                        Some(blob.take(seg, e.out_features, "linear bias")?)
                    }
                    None => None,
                };
                Layer::Linear(Linear::new(e.in_features, e.out_features, weight, bias)?)
            }
            "residual_add" => {
                let e: ResidualEntry = serde_json::from_value(entry).map_err(bad)?;
                Layer::ResidualAdd { source: e.source }
            }
            _ => return Err(Error::UnsupportedLayer(kind)),
        };
        layers.push(layer);
    }
    if declared != values.len() {
        return Err(Error::BlobLength {
            expected: declared,
            actual: values.len(),
        });
    }
    ModelGraph::new(layers, manifest.input_shape, manifest.class_count)
}
