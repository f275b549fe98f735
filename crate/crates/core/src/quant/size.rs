use serde::{Deserialize, Serialize};

use super::model::BitConfig;
use crate::error::Result;
use crate::model::ModelGraph;

/// Bits held by full-precision parameters (biases, BatchNorm vectors).
pub const FIXED_PARAM_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSize {
    /// Quantized weight storage, `sum_i count_i * b_i`.
    pub weight_bits: u64,
    /// Unquantized parameters at 32 bits each.
    pub fixed_bits: u64,
}

impl ModelSize {
    pub fn total_bits(&self) -> u64 {
        self.weight_bits + self.fixed_bits
    }

    pub fn megabits(&self) -> f64 {
        self.total_bits() as f64 / 1e6
    }
}

/// Per-layer weight storage at `bits`.
pub fn layer_size_bits(weight_count: usize, bits: u8) -> u64 {
    weight_count as u64 * bits as u64
}

pub fn model_size(model: &ModelGraph, config: &BitConfig) -> Result<ModelSize> {
    let indices = model.quantizable_layers();
    config.validate(indices.len())?;
    let weight_bits = indices
        .iter()
        .zip(&config.weight_bits)
        .map(|(&i, &b)| layer_size_bits(model.layers()[i].weight_count(), b))
        .sum();
    Ok(ModelSize {
        weight_bits,
        fixed_bits: model.fixed_param_count() as u64 * FIXED_PARAM_BITS,
    })
}
