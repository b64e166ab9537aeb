// SPDX-License-Identifier: Apache-2.0

//! And-inverter graphs and everything derived from them without learning:
//! parsing and generation, reachability and attention masks, fanin cones
//! with canonical labeling, logic simulation and truth tables, graph edit
//! distance, and per-circuit supervision labels.

pub mod aig;
pub mod bits;
pub mod cone;
pub mod dataset;
pub mod error;
pub mod ged;
pub mod labels;
pub mod sim;

pub use aig::{cone_mask, generate_random_aig, pair_class, parse_aiger, Aig, ConeMask, GateKind, Reachability};
pub use bits::{hamming_fraction, BitVec};
pub use cone::{canonical_form, extract_khop_cone, SubGraph};
pub use dataset::{read_dataset, write_dataset};
pub use error::{Error, Result};
pub use ged::{graph_edit_distance, GedValue};
pub use labels::{build_labelpack, build_labelpacks, LabelConfig, LabelPack, TokenPlan};
pub use sim::{exact_truth_table, simulate, TruthTable, Workload};
