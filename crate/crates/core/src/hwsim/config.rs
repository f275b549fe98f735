use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blocks of BRAM per unit of matrix side length, for each buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BramCoefficients {
    pub weight: f64,
    pub feature_map: f64,
    pub output: f64,
}

/// Parametric accelerator description.
///
/// Defaults are loosely shaped after a small Zynq-7020 class part: 140
/// 36-Kbit BRAM blocks read 64 bits at a time, a 128-input
/// multiplication-addition tree and an 8-byte-per-cycle memory port. None of
/// the numbers claim cycle accuracy; energy is in arbitrary units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HwConfig {
    /// Total BRAM blocks available to the accelerator.
    pub bram_total: u64,
    pub bram_block_bits: u64,
    /// Bits of each BRAM row actually used per access.
    pub word_bits: u32,
    /// Inputs of the multiplication-addition tree. Power of two.
    pub lanes: u32,
    /// Off-chip transfer bandwidth in bytes per cycle.
    pub transfer_bandwidth: u64,
    /// Fixed pipeline fill cost per tile pair, in cycles.
    pub mac_init_latency: u64,
    /// Cycles spent per output element on BN / activation / requantize.
    pub post_process_cycles_per_element: f64,
    /// Energy per cycle regardless of activity.
    pub static_power: f64,
    /// Additional energy per cycle for each busy lane.
    pub active_power_per_lane: f64,
    pub bram_coefficients: BramCoefficients,
}

impl Default for HwConfig {
    fn default() -> Self {
        Self {
            bram_total: 140,
            bram_block_bits: 36_864,
            word_bits: 64,
            lanes: 128,
            transfer_bandwidth: 8,
            mac_init_latency: 4,
            post_process_cycles_per_element: 0.125,
            static_power: 1.0,
            active_power_per_lane: 0.05,
            bram_coefficients: BramCoefficients {
                weight: 0.25,
                feature_map: 0.25,
                output: 0.5,
            },
        }
    }
}

impl HwConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_int = [
            ("hw.bram_total", self.bram_total),
            ("hw.bram_block_bits", self.bram_block_bits),
            ("hw.word_bits", self.word_bits as u64),
            ("hw.lanes", self.lanes as u64),
            ("hw.transfer_bandwidth", self.transfer_bandwidth),
        ];
        for (field, v) in positive_int {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.lanes.is_power_of_two() {
            return Err(Error::config("hw.lanes", "must be a power of two"));
        }
        let positive_real = [
            ("hw.post_process_cycles_per_element", self.post_process_cycles_per_element),
            ("hw.static_power", self.static_power),
            ("hw.active_power_per_lane", self.active_power_per_lane),
            ("hw.bram_coefficients.weight", self.bram_coefficients.weight),
            ("hw.bram_coefficients.feature_map", self.bram_coefficients.feature_map),
            ("hw.bram_coefficients.output", self.bram_coefficients.output),
        ];
        for (field, v) in positive_real {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive and finite"));
            }
        }
        Ok(())
    }
}
