// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width of both embedding streams.
    pub d: usize,
    pub rt_depth: usize,
    pub pt_depth: usize,
    pub heads: usize,
    /// Hidden width of the feed-forward sublayer in every transformer block.
    pub ffn_hidden: usize,
    /// Hidden width of the readout MLPs.
    pub head_hidden: usize,
    pub tokenizer_rounds: usize,
    /// Most gates a circuit may have for direct (non-windowed) encoding.
    pub seq_cap: usize,
    /// Learned positions available to each pooling sequence.
    pub pt_positions: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 128,
            rt_depth: 12,
            pt_depth: 3,
            heads: 4,
            ffn_hidden: 256,
            head_hidden: 128,
            tokenizer_rounds: 1,
            seq_cap: 512,
            pt_positions: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The reduced configuration used for desk-scale experiments.
    pub fn tiny() -> Self {
        Self {
            d: 16,
            rt_depth: 2,
            pt_depth: 1,
            heads: 2,
            ffn_hidden: 32,
            head_hidden: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return arg(format!(
                "d = {} must be a positive multiple of heads = {}",
                self.d, self.heads
            ));
        }
        if self.rt_depth == 0 || self.pt_depth == 0 || self.tokenizer_rounds == 0 {
            return arg("depths and tokenizer rounds must be at least 1");
        }
        if self.ffn_hidden == 0 || self.head_hidden == 0 {
            return arg("hidden widths must be positive");
        }
        if self.pt_positions < 16 {
            return arg("pooling needs at least 16 positions (CLS plus a 15-node cone)");
        }
        Ok(())
    }
}
