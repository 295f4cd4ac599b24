use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of the rescoring network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnetConfig {
    pub num_blocks: usize,
    /// Width `c` of the per-detection representation.
    pub feature_dim: usize,
    /// Width each representation is reduced to before pairing.
    pub reduced_dim: usize,
    /// Width `g` of the learned pair descriptor.
    pub pair_feature_dim: usize,
    /// Detections `j` with IoU above this become neighbours of `i`.
    pub neighbor_iou_threshold: f64,
    pub pair_encoder_layers: usize,
    pub block_pair_layers: usize,
    pub post_pool_layers: usize,
    pub score_head_layers: usize,
    pub num_classes: usize,
    /// Expected weight of the positive class in the loss.
    pub gamma: f64,
    /// Seed for Xavier initialisation.
    pub init_seed: u64,
}

impl Default for GnetConfig {
    fn default() -> Self {
        Self {
            num_blocks: 16,
            feature_dim: 128,
            reduced_dim: 32,
            pair_feature_dim: 32,
            neighbor_iou_threshold: 0.2,
            pair_encoder_layers: 3,
            block_pair_layers: 2,
            post_pool_layers: 2,
            score_head_layers: 3,
            num_classes: 1,
            gamma: 0.5,
            init_seed: 0,
        }
    }
}

impl GnetConfig {
    /// Defaults scaled to representation width `c`, keeping the 128:32:32
    /// proportions between detection, reduced and pair features.
    pub fn with_feature_dim(c: usize) -> Self {
        Self {
            feature_dim: c,
            reduced_dim: (c / 4).max(1),
            pair_feature_dim: (c / 4).max(1),
            ..Self::default()
        }
    }

    /// Width of one pair row: both reduced representations plus the pair
    /// descriptor.
    pub fn pair_width(&self) -> usize {
        2 * self.reduced_dim + self.pair_feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.feature_dim == 0 || self.reduced_dim == 0 || self.pair_feature_dim == 0 {
            return fail("feature widths must be positive");
        }
        if self.reduced_dim > self.feature_dim {
            return fail("reduced_dim must not exceed feature_dim");
        }
        if self.pair_encoder_layers == 0
            || self.block_pair_layers == 0
            || self.post_pool_layers == 0
            || self.score_head_layers == 0
        {
            return fail("every layer count must be at least 1");
        }
        if !(0.0..1.0).contains(&self.neighbor_iou_threshold) {
            return fail("neighbor_iou_threshold must lie in [0,1)");
        }
        if self.num_classes == 0 {
            return fail("num_classes must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma must lie in (0,1)");
        }
        Ok(())
    }
}
