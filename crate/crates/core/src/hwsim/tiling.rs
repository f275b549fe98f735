//! Sub-matrix slicing and the transfer volume of blocked multiplication.

use serde::{Deserialize, Serialize};

use super::BramAllocation;
use crate::error::{Error, Result};

/// Smallest power of two that is at least `sqrt(max_side)`, so one tile can
/// fill a full row of the input buffer.
pub fn min_tile_side(max_side: usize) -> usize {
    let mut side = 1usize;
    while side * side < max_side {
        side *= 2;
    }
    side
}

fn check_limits(max_side: usize, min_side: usize) -> Result<()> {
    if !max_side.is_power_of_two() || !min_side.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "tile limits must be powers of two, got max {max_side}, min {min_side}"
        )));
    }
    if min_side > max_side || min_side * min_side < max_side {
        return Err(Error::InvalidArgument(format!(
            "min side {min_side} must satisfy sqrt({max_side}) <= min <= max"
        )));
    }
    Ok(())
}

fn tile_for(side: usize, max_side: usize, min_side: usize) -> Result<usize> {
    if side == 0 {
        return Err(Error::InvalidArgument("matrix side must be positive".into()));
    }
    if side > max_side {
        let rem = side % max_side;
        return Ok(if rem > max_side / 2 {
            max_side
        } else {
            (max_side / 2).max(min_side)
        });
    }
    if side.is_power_of_two() {
        return Ok(side.max(min_side));
    }
    if side < min_side {
        return Ok(min_side);
    }
    let lower = 1usize << side.ilog2();
    // round to the nearer power of two, ties going down
    let tile = if 2 * side > 3 * lower { 2 * lower } else { lower };
    Ok(tile.min(max_side))
}

/// Tile side for each matrix side in `sides`.
pub fn split_matrix(sides: &[usize], max_side: usize, min_side: usize) -> Result<Vec<usize>> {
    check_limits(max_side, min_side)?;
    sides.iter().map(|&s| tile_for(s, max_side, min_side)).collect()
}

/// Tiling of one `(rows x inner) * (inner x cols)` product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub tile: usize,
    pub max_side: usize,
    pub min_side: usize,
    /// Original `[rows, inner, cols]`.
    pub dims: [usize; 3],
    /// Dimensions extended to multiples of `tile`.
    pub padded: [usize; 3],
    /// Tiles along each padded dimension.
    pub grid: [usize; 3],
}

impl TilePlan {
    /// Slices on the smallest of the four matrix edges
    /// (`rows`, `inner` twice, `cols`).
    pub fn for_matmul(rows: usize, inner: usize, cols: usize, alloc: &BramAllocation) -> Result<Self> {
        let max_side = alloc.max_side;
        let min_side = min_tile_side(max_side);
        let smallest = rows.min(inner).min(cols);
        let tile = split_matrix(&[smallest], max_side, min_side)?[0];
        Ok(Self::with_tile(rows, inner, cols, tile, max_side, min_side))
    }

    pub fn with_tile(
        rows: usize,
        inner: usize,
        cols: usize,
        tile: usize,
        max_side: usize,
        min_side: usize,
    ) -> Self {
        let dims = [rows, inner, cols];
        let grid = dims.map(|d| d.div_ceil(tile));
        Self {
            tile,
            max_side,
            min_side,
            dims,
            padded: grid.map(|g| g * tile),
            grid,
        }
    }

    pub fn tile_pairs(&self) -> u64 {
        self.grid.iter().map(|&g| g as u64).product()
    }
}

/// `3 * M^2 * N^3` elements moved when multiplying two `L x L` matrices in
/// `M x M` blocks, `N = L / M`.
pub fn transfer_volume(side: usize, block: usize) -> Result<u64> {
    if block == 0 || !side.is_multiple_of(block) {
        return Err(Error::InvalidArgument(format!(
            "block {block} does not divide side {side}"
        )));
    }
    let (m, n) = (block as u64, (side / block) as u64);
    Ok(3 * m * m * n * n * n)
}

/// Element traffic observed by walking the tile grid of a blocked product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransferCount {
    pub sub_multiplications: u64,
    pub weight_elements: u64,
    pub feature_elements: u64,
    pub output_elements: u64,
}

impl TransferCount {
    pub fn total(&self) -> u64 {
        self.weight_elements + self.feature_elements + self.output_elements
    }
}

/// Every sub-multiplication loads one weight tile and one feature tile and
/// moves one partial-result tile.
pub fn simulate_blocked_transfer(plan: &TilePlan) -> TransferCount {
    let t2 = (plan.tile * plan.tile) as u64;
    let [gr, gk, gc] = plan.grid;
    let mut count = TransferCount::default();
    for _row in 0..gr {
        for _col in 0..gc {
            for _k in 0..gk {
                count.sub_multiplications += 1;
                count.weight_elements += t2;
                count.feature_elements += t2;
                count.output_elements += t2;
            }
        }
    }
    count
}
