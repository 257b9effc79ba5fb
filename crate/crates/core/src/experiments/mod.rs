//! Experiment drivers shared by the command-line front end: configuration
//! bundles, the ablation matrix, the boundary study, timing and run records.

mod ablation;
mod bench;
mod edge;
mod pairs;
pub mod plot;

pub use ablation::{
    ablation_csv, ablation_svg, build_variant, config_diff, run_variant, AblationOutcome,
    AblationVariant, EvalPair,
};
pub use bench::{timing_bench, TimingRow, TimingTable};
pub use edge::{edge_study, normalize_rows, EdgeStudyConfig, EdgeStudyResult};
pub use pairs::{fused_path, list_pairs, PairPaths};

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionOptions;
use crate::network::NetworkConfig;
use crate::synth::{make_sample, procedural::random_scene, SynthesisConfig, TrainingSample};
use crate::training::TrainConfig;

/// Every tunable of a run, loadable from one JSON file; missing sections and
/// fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub synthesis: SynthesisConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub fusion: FusionOptions,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Overrides every seed with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synthesis.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.synthesis.validate()?;
        self.network.validate()?;
        self.train.validate()
    }
}

/// `count` samples synthesized from procedural scenes at the network
/// resolution, using the synthesis mode, σ range and seed of `synthesis`.
pub fn procedural_samples(
    count: usize,
    size: usize,
    synthesis: &SynthesisConfig,
) -> Result<Vec<TrainingSample>> {
    synthesis.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(synthesis.seed);
    let [lo, hi] = synthesis.sigma_range;
    (0..count)
        .map(|_| {
            let (img, map) = random_scene(&mut rng, size, size);
            let sigma = rng.gen_range(lo..=hi);
            make_sample(synthesis.mode, img, map, sigma)
        })
        .collect()
}

/// Provenance written next to every command's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub crate_version: String,
    pub args: Vec<String>,
}

impl RunRecord {
    pub fn new(command: &str, seed: u64, config: serde_json::Value, args: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            args,
        }
    }

    /// Writes `run.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("run.json");
        fs::write(&p, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&p, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthesisMode;

    #[test]
    fn partial_config_fills_defaults() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"train": {"total_steps": 7}, "network": {"base_channels": 4}}"#,
        )
        .unwrap();
        assert_eq!(c.train.total_steps, 7);
        assert_eq!(c.network.base_channels, 4);
        assert_eq!(c.fusion, FusionOptions::default());
        let s = c.clone().with_seed(9);
        assert_eq!((s.train.seed, s.synthesis.seed), (9, 9));
    }

    #[test]
    fn procedural_modes_share_scenes() {
        let alpha = SynthesisConfig {
            seed: 3,
            ..Default::default()
        };
        let conv = SynthesisConfig {
            mode: SynthesisMode::Conventional,
            ..alpha.clone()
        };
        let a = procedural_samples(3, 16, &alpha).unwrap();
        let c = procedural_samples(3, 16, &conv).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(x.ground_truth, y.ground_truth);
            assert_eq!(x.focus_map, y.focus_map);
            assert_eq!(x.sigma_used, y.sigma_used);
        }
        assert_eq!(a, procedural_samples(3, 16, &alpha).unwrap());
    }
}
