// SPDX-License-Identifier: Apache-2.0

//! Two-stream circuit encoder: tokenizer GNN, cone-masked refine
//! transformers, pooling transformers and readout heads, with pretraining
//! and large-circuit encoding on top.

pub mod config;
pub mod encode;
pub mod error;
pub mod large;
pub mod net;
pub mod pool;
pub mod train;

pub use config::ModelConfig;
pub use encode::{EmbeddingState, Stage, StreamVars};
pub use error::{Error, Result};
pub use large::{
    area_mask, correlated_pairs, export_pairs, finetune_tt_pair, partition_areas, AreaPartition, AreaVisit,
    FinetuneConfig, FinetuneHistory, ScoredPair, Side, WindowOutput,
};
pub use net::{Fwd, Head, Model, Readout, HEAD_NAMES};
pub use train::{
    batch_gradients, compute_losses, evaluate, load_model, nested_subsets, pretrain, save_model, scaling_csv,
    scaling_harness, EpochRecord, EvalReport, LossBundle, ScalingRow, TrainConfig, TrainState,
};
