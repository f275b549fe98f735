use serde::{Deserialize, Serialize};

use super::HwConfig;
use crate::error::{Error, Result};

/// Smallest side length the allocator tries.
pub const START_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BramAllocation {
    pub weight_blocks: u64,
    pub feature_blocks: u64,
    pub output_blocks: u64,
    /// Largest matrix side the buffers can hold. Power of two.
    pub max_side: usize,
}

impl BramAllocation {
    pub fn total_blocks(&self) -> u64 {
        self.weight_blocks + self.feature_blocks + self.output_blocks
    }
}

fn blocks_for(side: usize, config: &HwConfig) -> (u64, u64, u64) {
    let c = &config.bram_coefficients;
    let b = |coe: f64| (side as f64 * coe).ceil() as u64;
    (b(c.weight), b(c.feature_map), b(c.output))
}

/// Doubles the side length from 8 while all three buffers fit in
/// `bram_total`, then steps back once.
pub fn bram_allocate(config: &HwConfig) -> Result<BramAllocation> {
    config.validate()?;
    let mut side = START_SIDE;
    loop {
        let (w, f, o) = blocks_for(side, config);
        if w + f + o <= config.bram_total {
            side = side.checked_mul(2).ok_or_else(|| {
                Error::Infeasible("BRAM budget does not bound the tile side".into())
            })?;
        } else {
            break;
        }
    }
    side /= 2;
    if side < START_SIDE {
        let (w, f, o) = blocks_for(START_SIDE, config);
        return Err(Error::Infeasible(format!(
            "BRAM budget {} cannot hold even side {START_SIDE} ({} blocks needed)",
            config.bram_total,
            w + f + o
        )));
    }
    let (weight_blocks, feature_blocks, output_blocks) = blocks_for(side, config);
    Ok(BramAllocation {
        weight_blocks,
        feature_blocks,
        output_blocks,
        max_side: side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwsim::BramCoefficients;

    fn with(coe: (f64, f64, f64), total: u64) -> HwConfig {
        HwConfig {
            bram_total: total,
            bram_coefficients: BramCoefficients {
                weight: coe.0,
                feature_map: coe.1,
                output: coe.2,
            },
            ..HwConfig::default()
        }
    }

    #[test]
    fn default_config_allows_side_128() {
        let a = bram_allocate(&HwConfig::default()).unwrap();
        assert_eq!(a.max_side, 128);
        assert!(a.total_blocks() <= 140);
    }

    #[test]
    fn first_iteration_failure_is_infeasible() {
        assert!(matches!(
            bram_allocate(&with((10.0, 10.0, 10.0), 140)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn exact_fit_at_start_side() {
        let a = bram_allocate(&with((1.0, 1.0, 1.0), 24)).unwrap();
        assert_eq!(a.max_side, 8);
        assert_eq!(a.total_blocks(), 24);
    }
}
