//! Four-step cycle model: compute, transfer, write-back, post-process.

use serde::{Deserialize, Serialize};

use super::{bram_allocate, simulate_blocked_transfer, BramAllocation, HwConfig, TilePlan};
use crate::error::{Error, Result};
use crate::model::{ConvGeometry, Layer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub compute: u64,
    pub transfer: u64,
    pub write_back: u64,
    pub post_process: u64,
    pub total: u64,
    pub energy: f64,
    /// Physical tree lanes busy during compute.
    pub lanes_used: u32,
    pub tile: Option<TilePlan>,
}

impl LayerCost {
    fn new(compute: u64, transfer: u64, write_back: u64, post_process: u64, lanes_used: u32, config: &HwConfig) -> Self {
        let total = compute + transfer + write_back + post_process;
        Self {
            compute,
            transfer,
            write_back,
            post_process,
            total,
            energy: energy(total, lanes_used, config),
            lanes_used,
            tile: None,
        }
    }

    /// Adds another layer's cost, as when an element-wise layer is fused
    /// into the preceding matrix unit.
    pub fn absorb(&mut self, other: &LayerCost) {
        self.compute += other.compute;
        self.transfer += other.transfer;
        self.write_back += other.write_back;
        self.post_process += other.post_process;
        self.total += other.total;
        self.energy += other.energy;
    }
}

/// `e = (static + active_per_lane * lanes_used) * cycles`.
pub fn energy(cycles: u64, lanes_used: u32, config: &HwConfig) -> f64 {
    (config.static_power + config.active_power_per_lane * lanes_used as f64) * cycles as f64
}

/// Latency of a binary reduction tree over `width` inputs plus pipeline fill.
fn tree_latency(width: usize, mac_init: u64) -> u64 {
    let depth = if width <= 1 { 0 } else { (width - 1).ilog2() as u64 + 1 };
    depth + mac_init
}

/// Compute cycles of a tiled product on a tree with `lanes` inputs.
///
/// Each tile pair issues `T^2` dot products of length `T`; every dot product
/// needs `ceil(T / lanes)` feeds of the tree, pipelined, plus one tree
/// latency per tile pair.
pub fn matmul_cycles_with_lanes(plan: &TilePlan, lanes: u64, mac_init: u64) -> u64 {
    let t = plan.tile as u64;
    let feeds = t.div_ceil(lanes);
    let per_pair = t * t * feeds + tree_latency(plan.tile.min(lanes as usize), mac_init);
    plan.tile_pairs() * per_pair
}

pub fn matmul_cycles(rows: usize, inner: usize, cols: usize, tile: usize, config: &HwConfig) -> Result<u64> {
    if tile == 0 || !tile.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("tile {tile} must be a power of two")));
    }
    if rows == 0 || inner == 0 || cols == 0 {
        return Err(Error::InvalidArgument("matrix dimensions must be positive".into()));
    }
    let plan = TilePlan::with_tile(rows, inner, cols, tile, tile, tile);
    Ok(matmul_cycles_with_lanes(&plan, config.lanes as u64, config.mac_init_latency))
}

/// Operands packed per lane slot: two 4-bit values share one 8-bit slot.
pub fn packing_factor(weight_bits: u8, act_bits: u8) -> u64 {
    if weight_bits.max(act_bits) <= 4 {
        2
    } else {
        1
    }
}

fn bytes_to_cycles(bits: u64, config: &HwConfig) -> u64 {
    bits.div_ceil(8).div_ceil(config.transfer_bandwidth)
}

fn post_process_cycles(elements: usize, config: &HwConfig) -> u64 {
    (elements as f64 * config.post_process_cycles_per_element).ceil() as u64
}

/// `(rows, inner, cols)` of the lowered product for a weighted layer.
pub fn matmul_dims(layer: &Layer, input_shape: &[usize]) -> Result<Option<(usize, usize, usize)>> {
    match layer {
        Layer::Conv2d(conv) => {
            let [_, h, w] = input_shape else {
                return Err(Error::Shape(format!("conv input {input_shape:?} is not (C, H, W)")));
            };
            let g = ConvGeometry::new(conv, *h, *w)?;
            Ok(Some((conv.out_channels, g.patch_len(), g.out_len())))
        }
        Layer::Linear(l) => Ok(Some((l.out_features, l.in_features, 1))),
        _ => Ok(None),
    }
}

/// Cost of one layer for a single input sample.
pub fn layer_cost(
    layer: &Layer,
    input_shape: &[usize],
    weight_bits: u8,
    act_bits: u8,
    config: &HwConfig,
) -> Result<LayerCost> {
    let alloc = bram_allocate(config)?;
    layer_cost_with(layer, input_shape, weight_bits, act_bits, config, &alloc)
}

pub(crate) fn layer_cost_with(
    layer: &Layer,
    input_shape: &[usize],
    weight_bits: u8,
    act_bits: u8,
    config: &HwConfig,
    alloc: &BramAllocation,
) -> Result<LayerCost> {
    let Some((rows, inner, cols)) = matmul_dims(layer, input_shape)? else {
        // element-wise layers only occupy the post-process stage
        let elements: usize = input_shape.iter().product();
        return Ok(LayerCost::new(0, 0, 0, post_process_cycles(elements, config), 0, config));
    };
    let plan = TilePlan::for_matmul(rows, inner, cols, alloc)?;
    let pack = packing_factor(weight_bits, act_bits);
    let lanes = config.lanes as u64 * pack;
    let compute = matmul_cycles_with_lanes(&plan, lanes, config.mac_init_latency);

    let traffic = simulate_blocked_transfer(&plan);
    let transfer = bytes_to_cycles(
        traffic.weight_elements * weight_bits as u64 + traffic.feature_elements * act_bits as u64,
        config,
    );
    let write_back = bytes_to_cycles(traffic.output_elements * act_bits as u64, config);
    let post_process = post_process_cycles(rows * cols, config);
    let lanes_used = (plan.tile as u64).min(lanes).div_ceil(pack) as u32;

    let mut cost = LayerCost::new(compute, transfer, write_back, post_process, lanes_used, config);
    cost.tile = Some(plan);
    Ok(cost)
}
