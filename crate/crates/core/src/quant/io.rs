//! Quantized model files: a JSON manifest with per-layer parameters plus a
//! sidecar blob of `i8` integer weights (4-bit values are stored one per byte).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{QuantParams, QuantizedModel};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::tensor::IntTensor;

const FORMAT: &str = "bitplan-quantized";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    layer: usize,
    weight_params: Option<QuantParams>,
    activation_params: Option<QuantParams>,
    /// `[offset, len]` in the blob, in bytes.
    weights: Option<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    blob: String,
    layers: Vec<LayerEntry>,
}

pub fn save_quantized(qmodel: &QuantizedModel, path: &Path) -> Result<()> {
    let blob_path = path.with_extension("bin");
    let mut blob: Vec<u8> = Vec::new();
    let mut layers = Vec::new();
    for l in qmodel.layers() {
        let weights = match &l.weights {
            Some(q) => {
                let offset = blob.len();
                for &v in q.data() {
                    let b = i8::try_from(v)
                        .map_err(|_| Error::InvalidArgument(format!("layer {}: {v} does not fit in i8", l.layer)))?;
                    blob.push(b as u8);
                }
                Some([offset, q.len()])
            }
            None => None,
        };
        layers.push(LayerEntry {
            layer: l.layer,
            weight_params: l.weight_params,
            activation_params: l.activation_params,
            weights,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        blob: blob_path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        layers,
    };
    fs::write(&blob_path, blob)?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Rebuilds the quantized model on top of `base`, which must be the model it
/// was produced from.
pub fn load_quantized(path: &Path, base: ModelGraph) -> Result<QuantizedModel> {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT {
        return Err(Error::Format(format!("unexpected format tag `{}`", m.format)));
    }
    let blob = fs::read(path.with_file_name(&m.blob))?;
    let indices = base.quantizable_layers();
    if m.layers.iter().map(|l| l.layer).ne(indices.iter().copied()) {
        return Err(Error::Format("quantized layers do not match the base model".into()));
    }
    let mut parts = Vec::with_capacity(m.layers.len());
    for entry in m.layers {
        let ints = match entry.weights {
            Some([offset, len]) => {
                let bytes = blob.get(offset..offset + len).ok_or(Error::BlobLength {
                    expected: offset + len,
                    actual: blob.len(),
                })?;
                let shape = base.layers()[entry.layer].weight().expect("quantizable").shape().to_vec();
                Some(IntTensor::new(shape, bytes.iter().map(|&b| b as i8 as i32).collect())?)
            }
            None => None,
        };
        parts.push((entry.weight_params, entry.activation_params, ints));
    }
    QuantizedModel::from_parts(base, parts)
}
