// SPDX-License-Identifier: Apache-2.0

//! Run configuration: defaults, overridden by a TOML file, overridden by
//! command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use gatelab_core::LabelConfig;
use gatelab_model::{FinetuneConfig, ModelConfig, Side, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for generation, pair sampling and candidate sampling.
    pub seed: u64,
    /// Sequential execution for bitwise reproducibility.
    pub deterministic: bool,
    pub gen: GenConfig,
    pub label: LabelConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scale: ScaleConfig,
    pub large: LargeConfig,
    pub ttpair: TtPairConfig,
    pub finetune: FinetuneConfig,
    pub sat: SatConfig,
}

/// Synthetic circuit generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n: usize,
    pub pis_min: usize,
    pub pis_max: usize,
    pub gates_min: usize,
    pub gates_max: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n: 100,
            pis_min: 4,
            pis_max: 8,
            gates_min: 20,
            gates_max: 60,
        }
    }
}

/// Scaling harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    pub fractions: Vec<f64>,
    /// Share of the dataset held out when no separate held-out file is given.
    pub holdout: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.1, 0.5, 1.0],
            holdout: 0.1,
        }
    }
}

/// Area partition used by `encode-large` and `sat-pairs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LargeConfig {
    pub l: usize,
    pub delta: usize,
    pub max_gates: usize,
}

impl Default for LargeConfig {
    fn default() -> Self {
        Self {
            l: 6,
            delta: 3,
            max_gates: gatelab_model::large::MAX_AREA_GATES,
        }
    }
}

/// Labelled gate pairs for `finetune-ttpair`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtPairConfig {
    pub pairs: usize,
    pub n_patterns: usize,
}

impl Default for TtPairConfig {
    fn default() -> Self {
        Self {
            pairs: 200,
            n_patterns: 4096,
        }
    }
}

/// Correlated-pair export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SatConfig {
    pub theta: f64,
    pub side: Side,
    /// Above this many gate pairs, a seeded sample of this size is scored.
    pub max_candidates: usize,
}

impl Default for SatConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            side: Side::Above,
            max_candidates: 20_000,
        }
    }
}

impl RunConfig {
    /// Defaults, overridden by `file` when given.
    pub fn load(file: Option<&Path>) -> Result<Self> {
        let Some(path) = file else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cli: reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("cli: config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.gen;
        if g.pis_min == 0 || g.pis_min > g.pis_max || g.gates_min > g.gates_max {
            bail!("cli: gen ranges must satisfy 1 <= pis_min <= pis_max and gates_min <= gates_max");
        }
        if !(0.0..1.0).contains(&self.scale.holdout) {
            bail!("cli: scale.holdout must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.sat.theta) {
            bail!("cli: sat.theta must lie in [0, 1]");
        }
        self.model.validate().map_err(|e| anyhow::anyhow!("model: {e}"))?;
        self.train.validate().map_err(|e| anyhow::anyhow!("train: {e}"))?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
