use serde::{Deserialize, Serialize};

use super::params::{calibrate_minmax, dequantize, fake_quantize, quantize, QuantParams, FULL_PRECISION, PLAN_BITS};
use crate::error::{Error, Result};
use crate::model::{self, Hooks, ModelGraph};
use crate::tensor::{IntTensor, Tensor};

/// Per-quantizable-layer bit widths for weights and for the layer's input
/// activations. Entries are 4 or 8, or 32 to leave a tensor unquantized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitConfig {
    pub weight_bits: Vec<u8>,
    pub activation_bits: Vec<u8>,
}

impl BitConfig {
    pub fn uniform(layers: usize, bits: u8) -> Self {
        Self {
            weight_bits: vec![bits; layers],
            activation_bits: vec![bits; layers],
        }
    }

    /// Same widths for weights and activations.
    pub fn from_plan(bits: &[u8]) -> Self {
        Self {
            weight_bits: bits.to_vec(),
            activation_bits: bits.to_vec(),
        }
    }

    /// Weights follow `bits`, activations pinned at `activation`.
    pub fn with_pinned_activations(bits: &[u8], activation: u8) -> Self {
        Self {
            weight_bits: bits.to_vec(),
            activation_bits: vec![activation; bits.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.weight_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight_bits.is_empty()
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if self.weight_bits.len() != layers || self.activation_bits.len() != layers {
            return Err(Error::InvalidArgument(format!(
                "bit config covers {}/{} layers, model has {layers} quantizable layers",
                self.weight_bits.len(),
                self.activation_bits.len()
            )));
        }
        let ok = |b: &u8| PLAN_BITS.contains(b) || *b == FULL_PRECISION;
        if let Some(b) = self
            .weight_bits
            .iter()
            .chain(&self.activation_bits)
            .find(|b| !ok(b))
        {
            return Err(Error::InvalidArgument(format!(
                "bit width {b} not in {{4, 8}} (or 32 for full precision)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    /// Index into the base model's layer list.
    pub layer: usize,
    pub weight_params: Option<QuantParams>,
    pub activation_params: Option<QuantParams>,
    /// Integer weights; `None` when the layer stays at full precision.
    pub weights: Option<IntTensor>,
    /// Weights used for inference (dequantized, or the originals).
    effective: Tensor,
}

impl QuantizedLayer {
    pub fn effective_weight(&self) -> &Tensor {
        &self.effective
    }
}

/// Model with fake-quantized weights and per-layer activation quantizers.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    base: ModelGraph,
    layers: Vec<QuantizedLayer>,
    /// model layer index -> position in `layers`
    slot: Vec<Option<usize>>,
}

impl QuantizedModel {
    pub fn base(&self) -> &ModelGraph {
        &self.base
    }

    pub fn layers(&self) -> &[QuantizedLayer] {
        &self.layers
    }

    pub fn bit_config(&self) -> BitConfig {
        let bits = |p: &Option<QuantParams>| p.map_or(FULL_PRECISION, |p| p.bits);
        BitConfig {
            weight_bits: self.layers.iter().map(|l| bits(&l.weight_params)).collect(),
            activation_bits: self.layers.iter().map(|l| bits(&l.activation_params)).collect(),
        }
    }

    /// Rebuilds a quantized model from stored parameters and integer weights.
    pub fn from_parts(
        base: ModelGraph,
        parts: Vec<(Option<QuantParams>, Option<QuantParams>, Option<IntTensor>)>,
    ) -> Result<Self> {
        let indices = base.quantizable_layers();
        if parts.len() != indices.len() {
            return Err(Error::InvalidArgument(format!(
                "{} quantized layers for {} quantizable layers",
                parts.len(),
                indices.len()
            )));
        }
        let mut layers = Vec::with_capacity(parts.len());
        for (&layer, (wp, ap, ints)) in indices.iter().zip(parts) {
            let original = base.layers()[layer].weight().expect("quantizable");
            let effective = match (&wp, &ints) {
                (Some(p), Some(q)) => {
                    p.validate()?;
                    if q.shape() != original.shape() {
                        return Err(Error::Shape(format!(
                            "layer {layer}: integer weights {:?} vs {:?}",
                            q.shape(),
                            original.shape()
                        )));
                    }
                    dequantize(q, p)
                }
                (None, None) => original.clone(),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {layer}: weight params and integer weights must come together"
                    )))
                }
            };
            if let Some(p) = &ap {
                p.validate()?;
            }
            layers.push(QuantizedLayer {
                layer,
                weight_params: wp,
                activation_params: ap,
                weights: ints,
                effective,
            });
        }
        Ok(Self::assemble(base, layers))
    }

    fn assemble(base: ModelGraph, layers: Vec<QuantizedLayer>) -> Self {
        let mut slot = vec![None; base.layers().len()];
        for (k, l) in layers.iter().enumerate() {
            slot[l.layer] = Some(k);
        }
        Self { base, layers, slot }
    }

    pub(crate) fn slot_of(&self, layer: usize) -> Option<usize> {
        self.slot.get(layer).copied().flatten()
    }
}

/// Quantizes every weighted layer of `model` per `config`.
///
/// Weights use symmetric per-tensor min-max; input activations use asymmetric
/// per-tensor min-max over one recorded full-precision pass on `calib_batch`.
pub fn quantize_model(model: &ModelGraph, config: &BitConfig, calib_batch: &Tensor) -> Result<QuantizedModel> {
    let indices = model.quantizable_layers();
    config.validate(indices.len())?;
    let needs_activations = config.activation_bits.iter().any(|&b| b != FULL_PRECISION);
    let activations = if needs_activations {
        let (_, trace) = model::forward(model, calib_batch, true)?;
        trace.and_then(|t| t.activations)
    } else {
        None
    };

    let mut layers = Vec::with_capacity(indices.len());
    for (k, &layer) in indices.iter().enumerate() {
        let original = model.layers()[layer].weight().expect("quantizable");
        let wb = config.weight_bits[k];
        let (weight_params, weights, effective) = if wb == FULL_PRECISION {
            (None, None, original.clone())
        } else {
            let p = calibrate_minmax(original.data(), wb, true).map_err(|e| e.at_layer(layer))?;
            let q = quantize(original, &p)?;
            let deq = dequantize(&q, &p);
            (Some(p), Some(q), deq)
        };
        let ab = config.activation_bits[k];
        let activation_params = match (&activations, ab) {
            (Some(acts), b) if b != FULL_PRECISION => {
                Some(calibrate_minmax(acts[layer].data(), b, false).map_err(|e| e.at_layer(layer))?)
            }
            _ => None,
        };
        layers.push(QuantizedLayer {
            layer,
            weight_params,
            activation_params,
            weights,
            effective,
        });
    }
    Ok(QuantizedModel::assemble(model.clone(), layers))
}

pub(crate) struct QuantHooks<'a> {
    pub model: &'a QuantizedModel,
    /// Optional replacement weight for one model layer.
    pub replace: Option<(usize, &'a Tensor)>,
}

impl Hooks for QuantHooks<'_> {
    fn weight<'a>(&'a self, layer: usize, original: &'a Tensor) -> &'a Tensor {
        if let Some((l, w)) = self.replace {
            if l == layer {
                return w;
            }
        }
        match self.model.slot_of(layer) {
            Some(k) => &self.model.layers[k].effective,
            None => original,
        }
    }

    fn input(&self, layer: usize, x: &Tensor) -> Option<Tensor> {
        let k = self.model.slot_of(layer)?;
        let p = self.model.layers[k].activation_params.as_ref()?;
        Some(fake_quantize(x, p))
    }
}

/// Fake-quantized inference: quantize→dequantize each weighted layer's weights
/// and input activations, then compute in real arithmetic.
pub fn quantized_forward(qmodel: &QuantizedModel, batch: &Tensor) -> Result<Tensor> {
    let hooks = QuantHooks {
        model: qmodel,
        replace: None,
    };
    Ok(model::run(&qmodel.base, batch, &hooks, false)?.logits)
}
