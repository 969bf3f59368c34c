//! Egocentric multiresolution pooling of the agent's beliefs.
//!
//! Each channel is summarized by three 5×5 pyramids of square blocks
//! centered on the robot, with block sides 1, 3 and 9 cells. Blocks report
//! the sum of the in-bounds cells they cover, so the vector length is fixed
//! regardless of map or team size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, IntegralImage};

pub const BLOCKS_PER_SIDE: usize = 5;
pub const LEVELS: usize = 3;
pub const CHANNELS: usize = 2;
pub const BLOCKS_PER_LEVEL: usize = BLOCKS_PER_SIDE * BLOCKS_PER_SIDE;
pub const FEATURE_DIM: usize = CHANNELS * LEVELS * BLOCKS_PER_LEVEL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Offset of `(channel, level, block_row, block_col)`; block coordinates
    /// run 0..5 with `(2, 2)` the block containing the robot.
    pub fn index(channel: usize, level: usize, block_row: usize, block_col: usize) -> usize {
        ((channel * LEVELS + level) * BLOCKS_PER_SIDE + block_row) * BLOCKS_PER_SIDE + block_col
    }

    pub fn get(&self, channel: usize, level: usize, block_row: usize, block_col: usize) -> f64 {
        self.0[Self::index(channel, level, block_row, block_col)]
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        FeatureVector(v)
    }
}

/// Side length in cells of a block at `level`.
pub fn block_side(level: usize) -> usize {
    3usize.pow(level as u32)
}

/// Half-width in cells of the area a level covers (2, 7, 22).
pub fn level_radius(level: usize) -> usize {
    (BLOCKS_PER_SIDE * block_side(level)) / 2
}

/// Pool the reward belief and the summed teammate belief around `position`.
pub fn aggregate(reward_belief: &Grid, teammate_mass: &Grid, position: Cell) -> Result<FeatureVector> {
    if !reward_belief.same_shape(teammate_mass) {
        return Err(Error::Contract(format!(
            "feature inputs differ in shape: {}x{} vs {}x{}",
            reward_belief.height(),
            reward_belief.width(),
            teammate_mass.height(),
            teammate_mass.width()
        )));
    }
    if !reward_belief.contains(position) {
        return Err(Error::Contract(format!("position {position:?} outside the map")));
    }
    let mut out = Vec::with_capacity(FEATURE_DIM);
    for channel in [reward_belief, teammate_mass] {
        let table = IntegralImage::new(channel);
        for level in 0..LEVELS {
            let side = block_side(level) as i64;
            let half = (side - 1) / 2;
            for br in -2..=2i64 {
                for bc in -2..=2i64 {
                    let r = position.row as i64 + br * side;
                    let c = position.col as i64 + bc * side;
                    out.push(table.window_sum(r - half, r + half, c - half, c + half));
                }
            }
        }
    }
    Ok(FeatureVector(out))
}
