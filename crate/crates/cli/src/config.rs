//! Run configuration: TOML file, command-line overrides, content hash.

use std::path::Path;

use keylearn::evalkit::EvalConfig;
use keylearn::learner::{CvGrid, TrainConfig};
use keylearn::synth::SynthConfig;
use keylearn::trainset::TrainsetConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub radius: usize,
    pub budget: Option<usize>,
    pub threshold: Option<f64>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            radius: keylearn::detector::DEFAULT_NMS_RADIUS,
            budget: None,
            threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxConfig {
    /// Dictionary size stored in the model.
    pub size: usize,
    /// Sizes reported in the error curve.
    pub sizes: Vec<usize>,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            size: 24,
            sizes: vec![2, 4, 8, 16, 24],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRun {
    pub scene: SynthConfig,
    /// Images written to `train/`; the rest go to `test/`.
    pub train: usize,
}

impl Default for SynthRun {
    fn default() -> Self {
        Self {
            scene: SynthConfig::default(),
            train: 15,
        }
    }
}

/// Everything a run depends on. Each section can be given in the TOML config
/// file; command-line flags override single fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub trainset: TrainsetConfig,
    pub train: TrainConfig,
    pub cv: CvGrid,
    pub approx: ApproxConfig,
    pub detect: DetectConfig,
    pub eval: EvalConfig,
    pub synth: SynthRun,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::data(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 hex of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `{config, config_hash}` as embedded in artifacts.
    pub fn stamp(&self) -> serde_json::Value {
        serde_json::json!({ "config": self.to_json(), "config_hash": self.hash() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: RunConfig = toml::from_str(
            "[train]\nn = 2\ngamma_c = 0.5\n[trainset.samples]\npatch_size = 11\n[eval]\nbudget = { fixed = 40 }\n",
        )
        .unwrap();
        assert_eq!(c.train.n, 2);
        assert_eq!(c.train.m, TrainConfig::default().m);
        assert_eq!(c.trainset.samples.patch_size, 11);
        assert_eq!(c.eval.budget, keylearn::evalkit::BudgetRule::Fixed(40));
        assert_eq!(c.synth.train, 15);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nbogus = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("nope = 1\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.gamma_t = 0.25;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
