//! Focus-map generator and critic.
//!
//! The generator encodes every color channel of both sources with one shared
//! branch (six branches in total), averages the three branch outputs of each
//! source, concatenates the two source features and decodes a single-channel
//! map through a logistic output. The critic scores the 7-channel stack of
//! both sources and a (real or generated) map.

mod checkpoint;
mod discriminator;
mod generator;
mod params;
mod se;

pub use checkpoint::Checkpoint;
pub use discriminator::{Critic, Discriminator, CRITIC_INPUT_CHANNELS};
pub use generator::{BnStat, GenOutput, Generator};
pub use params::ParamStore;
pub use se::{se_block, se_forward, squeeze, SeBlockParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How source channels are routed through the shared encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    /// One single-channel branch per color channel of each source.
    #[default]
    Six,
    /// One three-channel branch per source.
    Two,
}

impl BranchMode {
    /// Branches fed by one source.
    pub fn per_source(self) -> usize {
        match self {
            BranchMode::Six => 3,
            BranchMode::Two => 1,
        }
    }

    pub fn input_channels(self) -> usize {
        3 / self.per_source()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Width of the first encoder convolution; later stages use 2× and 4×.
    pub base_channels: usize,
    pub res_blocks: usize,
    pub se_reduction: usize,
    pub use_se: bool,
    pub branches: BranchMode,
    pub critic_base_channels: usize,
    /// Square training resolution; the critic has `log2(resolution)` layers.
    pub resolution: usize,
    pub critic_sigmoid: bool,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub init_std: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            res_blocks: 9,
            se_reduction: 16,
            use_se: true,
            branches: BranchMode::Six,
            critic_base_channels: 64,
            resolution: 256,
            critic_sigmoid: false,
            leaky_slope: 0.2,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            init_std: 0.02,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::invalid("base_channels must be positive"));
        }
        let trunk = 4 * self.base_channels;
        if self.use_se && (self.se_reduction == 0 || !trunk.is_multiple_of(self.se_reduction)) {
            return Err(Error::invalid(format!(
                "SE reduction {} must divide trunk width {trunk}",
                self.se_reduction
            )));
        }
        if !self.resolution.is_power_of_two() || self.resolution < 2 {
            return Err(Error::invalid(format!(
                "resolution {} must be a power of two >= 2",
                self.resolution
            )));
        }
        if self.critic_base_channels == 0 {
            return Err(Error::invalid("critic_base_channels must be positive"));
        }
        Ok(())
    }

    pub fn critic_layers(&self) -> usize {
        self.resolution.trailing_zeros() as usize
    }

    /// Output widths of the critic's layers; the last one is always 1.
    pub fn critic_widths(&self) -> Vec<usize> {
        let l = self.critic_layers();
        let cap = 8 * self.critic_base_channels;
        let mut widths: Vec<usize> = (0..l.saturating_sub(1))
            .map(|i| (self.critic_base_channels << i.min(20)).min(cap))
            .collect();
        widths.push(1);
        widths
    }
}
