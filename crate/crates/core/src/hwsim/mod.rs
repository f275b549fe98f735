//! Parametric cost model of an FPGA matrix-multiply accelerator.
//!
//! Convolutions are lowered with Img2Col and run as tiled matrix products on
//! a multiplication-addition tree. BRAM is budgeted by doubling the tile side
//! until the three buffers no longer fit ([`bram_allocate`]); matrices are
//! sliced into power-of-two tiles bounded by that side ([`split_matrix`]).
//! Each layer's cost is split into compute, off-chip transfer, write-back and
//! post-process cycles, and energy is `(static + per_lane * lanes) * cycles`.
//!
//! All costs are for a single input sample and in arbitrary but consistent
//! units; only relative comparisons are meaningful.

mod bram;
mod config;
mod cost;
mod profile;
mod tiling;

pub use bram::{bram_allocate, BramAllocation};
pub use config::{BramCoefficients, HwConfig};
pub use cost::{energy, layer_cost, matmul_cycles, matmul_cycles_with_lanes, matmul_dims, packing_factor, LayerCost};
pub use profile::{plan_costs, profile_model, HwProfile, ProfileCsvRow, ProfileRow};
pub use tiling::{min_tile_side, simulate_blocked_transfer, split_matrix, transfer_volume, TilePlan, TransferCount};
