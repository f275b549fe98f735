use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cost::layer_cost_with;
use super::{bram_allocate, BramAllocation, HwConfig, LayerCost};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::quant::{BitConfig, FIXED_PARAM_BITS, PLAN_BITS};

/// Cost of one weighted layer at one bit width. Element-wise layers that
/// follow it (BatchNorm, ReLU, pooling, residual adds) are fused into its
/// post-process stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    /// Position among the quantizable layers.
    pub layer: usize,
    pub model_layer: usize,
    pub kind: String,
    pub bits: u8,
    pub weight_count: usize,
    pub cost: LayerCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwProfile {
    pub config: HwConfig,
    pub bram: BramAllocation,
    pub candidates: Vec<u8>,
    /// Full-precision parameter storage outside the quantized weights.
    pub fixed_bits: u64,
    pub rows: Vec<ProfileRow>,
}

/// Flat CSV record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCsvRow {
    pub layer: usize,
    pub bits: u8,
    pub compute: u64,
    pub transfer: u64,
    pub write_back: u64,
    pub post_process: u64,
    pub total_cycles: u64,
    pub energy: f64,
}

impl HwProfile {
    pub fn layer_count(&self) -> usize {
        self.rows.iter().map(|r| r.layer + 1).max().unwrap_or(0)
    }

    pub fn row(&self, layer: usize, bits: u8) -> Option<&ProfileRow> {
        self.rows.iter().find(|r| r.layer == layer && r.bits == bits)
    }

    /// Per-layer rows at `bits`, in layer order.
    pub fn rows_at(&self, bits: u8) -> Result<Vec<&ProfileRow>> {
        (0..self.layer_count())
            .map(|l| {
                self.row(l, bits).ok_or_else(|| {
                    Error::InvalidArgument(format!("profile has no row for layer {l} at {bits} bits"))
                })
            })
            .collect()
    }

    /// Simulated cycles of the whole model under a per-layer bit plan.
    pub fn total_cycles(&self, plan: &[u8]) -> Result<u64> {
        plan.iter()
            .enumerate()
            .map(|(l, &b)| {
                self.row(l, b)
                    .map(|r| r.cost.total)
                    .ok_or_else(|| Error::InvalidArgument(format!("no profile row for layer {l} at {b} bits")))
            })
            .sum()
    }

    pub fn total_energy(&self, plan: &[u8]) -> Result<f64> {
        plan.iter()
            .enumerate()
            .map(|(l, &b)| {
                self.row(l, b)
                    .map(|r| r.cost.energy)
                    .ok_or_else(|| Error::InvalidArgument(format!("no profile row for layer {l} at {b} bits")))
            })
            .sum()
    }

    pub fn csv_rows(&self) -> Vec<ProfileCsvRow> {
        self.rows
            .iter()
            .map(|r| ProfileCsvRow {
                layer: r.layer,
                bits: r.bits,
                compute: r.cost.compute,
                transfer: r.cost.transfer,
                write_back: r.cost.write_back,
                post_process: r.cost.post_process,
                total_cycles: r.cost.total,
                energy: r.cost.energy,
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in self.csv_rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<ProfileCsvRow>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Per-layer, per-bit-width cycle and energy table for `model`.
pub fn profile_model(model: &ModelGraph, candidates: &[u8], config: &HwConfig) -> Result<HwProfile> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no bit candidates".into()));
    }
    if let Some(b) = candidates.iter().find(|b| !PLAN_BITS.contains(b)) {
        return Err(Error::InvalidArgument(format!("bit candidate {b} not in {{4, 8}}")));
    }
    let bram = bram_allocate(config)?;
    let weighted = model.quantizable_layers();
    if weighted.is_empty() {
        return Err(Error::InvalidArgument("model has no weighted layers".into()));
    }

    let owners = fusion_owners(model, &weighted);
    let jobs: Vec<(usize, u8)> = (0..weighted.len())
        .flat_map(|k| candidates.iter().map(move |&b| (k, b)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(k, bits)| {
            let mi = weighted[k];
            let layer = &model.layers()[mi];
            Ok(ProfileRow {
                layer: k,
                model_layer: mi,
                kind: layer.kind().to_string(),
                bits,
                weight_count: layer.weight_count(),
                cost: fused_cost(model, &weighted, &owners, k, bits, bits, config, &bram)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(HwProfile {
        config: *config,
        bram,
        candidates: candidates.to_vec(),
        fixed_bits: model.fixed_param_count() as u64 * FIXED_PARAM_BITS,
        rows,
    })
}

/// Weighted-layer ordinal that absorbs each model layer's cost. Element-wise
/// layers go to the closest weighted layer before them (or the first one).
fn fusion_owners(model: &ModelGraph, weighted: &[usize]) -> Vec<usize> {
    let mut current = 0usize;
    (0..model.layers().len())
        .map(|i| {
            if let Some(k) = weighted.iter().position(|&w| w == i) {
                current = k;
            }
            current
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn fused_cost(
    model: &ModelGraph,
    weighted: &[usize],
    owners: &[usize],
    k: usize,
    weight_bits: u8,
    act_bits: u8,
    config: &HwConfig,
    bram: &BramAllocation,
) -> Result<LayerCost> {
    let mi = weighted[k];
    let mut cost = layer_cost_with(&model.layers()[mi], model.activation_shape(mi), weight_bits, act_bits, config, bram)
        .map_err(|e| e.at_layer(mi))?;
    for (i, other) in model.layers().iter().enumerate() {
        if owners[i] == k && i != mi {
            let fused = layer_cost_with(other, model.activation_shape(i), weight_bits, act_bits, config, bram)
                .map_err(|e| e.at_layer(i))?;
            cost.absorb(&fused);
        }
    }
    Ok(cost)
}

/// Per-layer costs of a full bit configuration, including separate weight
/// and activation widths (32 is costed as 8: the datapath is at most 8 bits).
pub fn plan_costs(model: &ModelGraph, bits: &BitConfig, config: &HwConfig) -> Result<Vec<LayerCost>> {
    let weighted = model.quantizable_layers();
    bits.validate(weighted.len())?;
    let bram = bram_allocate(config)?;
    let owners = fusion_owners(model, &weighted);
    let clamp = |b: u8| b.min(8);
    (0..weighted.len())
        .map(|k| {
            fused_cost(
                model,
                &weighted,
                &owners,
                k,
                clamp(bits.weight_bits[k]),
                clamp(bits.activation_bits[k]),
                config,
                &bram,
            )
        })
        .collect()
}
