// SPDX-License-Identifier: Apache-2.0

//! Bit-parallel logic simulation and truth-table conventions.
//!
//! Row `m` of a `k`-input table assigns input `i` the bit
//! `(m >> (k - 1 - i)) & 1`: input 0 is the most significant. Padding puts
//! don't-care inputs after the real ones, on the low-significance side.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aig::{Aig, GateKind};
use crate::bits::BitVec;
use crate::cone::SubGraph;
use crate::error::{arg, Error, Result};

/// Width every pooled truth table is brought to.
pub const TABLE_INPUTS: usize = 6;
pub const MAX_EXACT_INPUTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    p: Vec<f64>,
}

impl Workload {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some(bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return arg(format!("input probability {bad} outside [0, 1]"));
        }
        Ok(Self { p })
    }

    pub fn uniform(n: usize) -> Self {
        Self { p: vec![0.5; n] }
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        Self {
            p: (0..n).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TruthTable {
    k: usize,
    bits: BitVec,
}

impl TruthTable {
    pub fn new(k: usize, bits: BitVec) -> Result<Self> {
        if bits.len() != 1 << k {
            return arg(format!(
                "{}-input table needs {} bits, got {}",
                k,
                1usize << k,
                bits.len()
            ));
        }
        Ok(Self { k, bits })
    }

    pub fn from_fn(k: usize, f: impl Fn(usize) -> bool) -> Self {
        let mut bits = BitVec::zeros(1 << k);
        for m in 0..1 << k {
            bits.set(m, f(m));
        }
        Self { k, bits }
    }

    /// Parses a string of '0'/'1' characters, row 0 first.
    pub fn from_bit_str(s: &str) -> Result<Self> {
        let bools: Vec<bool> = s.chars().map(|c| c == '1').collect();
        if !bools.len().is_power_of_two() {
            return arg("table length must be a power of two");
        }
        Self::new(bools.len().trailing_zeros() as usize, BitVec::from_bools(&bools))
    }

    pub fn num_inputs(&self) -> usize {
        self.k
    }

    pub fn bits(&self) -> &BitVec {
        &self.bits
    }

    pub fn get(&self, m: usize) -> bool {
        self.bits.get(m)
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|b| if b { '1' } else { '0' }).collect()
    }

    /// The 64 entries of a 6-input table as a word (bit `m` = row `m`).
    pub fn as_u64(&self) -> Option<u64> {
        (self.k == TABLE_INPUTS).then(|| self.bits.words()[0])
    }
}

/// Simulation result: per-gate response bits and logic-1 frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub responses: Vec<BitVec>,
    pub prob: Vec<f64>,
}

fn propagate(aig: &Aig, words: usize, values: &mut [Vec<u64>]) {
    for g in 0..aig.len() {
        match aig.kind(g) {
            GateKind::Pi => {}
            GateKind::Not => {
                let f = aig.fanins(g)[0];
                let (lo, hi) = values.split_at_mut(g);
                for w in 0..words {
                    hi[0][w] = !lo[f][w];
                }
            }
            GateKind::And => {
                let (a, b) = (aig.fanins(g)[0], aig.fanins(g)[1]);
                let (lo, hi) = values.split_at_mut(g);
                for w in 0..words {
                    hi[0][w] = lo[a][w] & lo[b][w];
                }
            }
        }
    }
}

/// Random-pattern simulation. Input `i` (PI order) draws i.i.d.
/// Bernoulli(`p_i`) bits from a ChaCha stream seeded by `seed`, input by
/// input.
pub fn simulate(aig: &Aig, workload: &Workload, n_patterns: usize, seed: u64) -> Result<SimResult> {
    if workload.len() != aig.pis().len() {
        return arg(format!(
            "workload has {} entries, circuit has {} inputs",
            workload.len(),
            aig.pis().len()
        ));
    }
    if n_patterns == 0 {
        return arg("simulation needs at least one pattern");
    }
    let words = n_patterns.div_ceil(64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![vec![0u64; words]; aig.len()];
    for (&pi, &p) in aig.pis().iter().zip(workload.probs()) {
        let row = &mut values[pi];
        for t in 0..n_patterns {
            if rng.gen::<f64>() < p {
                row[t / 64] |= 1 << (t % 64);
            }
        }
    }
    propagate(aig, words, &mut values);
    let responses: Vec<BitVec> = values
        .into_iter()
        .map(|w| BitVec::from_words(n_patterns, w).expect("word count matches"))
        .collect();
    let prob = responses
        .iter()
        .map(|r| r.count_ones() as f64 / n_patterns as f64)
        .collect();
    Ok(SimResult { responses, prob })
}

/// Exhaustive simulation: every gate's response over all `2^k` input rows.
pub fn enumerate_all(aig: &Aig) -> Result<Vec<BitVec>> {
    let k = aig.pis().len();
    if k > MAX_EXACT_INPUTS {
        return Err(Error::Capacity(format!(
            "{k} inputs exceed exact-simulation limit {MAX_EXACT_INPUTS}"
        )));
    }
    let rows = 1usize << k;
    let words = rows.div_ceil(64);
    let mut values = vec![vec![0u64; words]; aig.len()];
    for (i, &pi) in aig.pis().iter().enumerate() {
        let shift = k - 1 - i;
        let row = &mut values[pi];
        for m in 0..rows {
            if (m >> shift) & 1 == 1 {
                row[m / 64] |= 1 << (m % 64);
            }
        }
    }
    propagate(aig, words, &mut values);
    Ok(values
        .into_iter()
        .map(|w| BitVec::from_words(rows, w).expect("word count matches"))
        .collect())
}

/// Full truth table of a sub-graph's root over its canonical input order.
pub fn exact_truth_table(sub: &SubGraph) -> Result<TruthTable> {
    let k = sub.num_pis();
    if k > MAX_EXACT_INPUTS {
        return Err(Error::Capacity(format!(
            "{k} inputs exceed exact-simulation limit {MAX_EXACT_INPUTS}"
        )));
    }
    if sub.aig.pis() != sub.canonical_pi_order.as_slice() {
        return arg("sub-graph input order differs from its canonical order");
    }
    let all = enumerate_all(&sub.aig)?;
    TruthTable::new(k, all[sub.root].clone())
}

/// Extends a table with fewer than 6 inputs by appending don't-care inputs.
pub fn pad_truth_table(tt: &TruthTable) -> Result<TruthTable> {
    let k = tt.num_inputs();
    if k >= TABLE_INPUTS {
        return arg(format!("padding needs fewer than {TABLE_INPUTS} inputs, got {k}"));
    }
    let shift = TABLE_INPUTS - k;
    Ok(TruthTable::from_fn(TABLE_INPUTS, |m| tt.get(m >> shift)))
}

/// Cofactor of a table: the inputs named in `fixings` are held at the given
/// values and the table is re-indexed over the remaining inputs in order.
pub fn cofactor(tt: &TruthTable, fixings: &[(usize, bool)]) -> Result<TruthTable> {
    let k = tt.num_inputs();
    let mut fixed = vec![None; k];
    for &(i, v) in fixings {
        if i >= k {
            return arg(format!("fixed input {i} out of range {k}"));
        }
        if fixed[i].is_some() {
            return arg(format!("input {i} fixed twice"));
        }
        fixed[i] = Some(v);
    }
    let free: Vec<usize> = (0..k).filter(|&i| fixed[i].is_none()).collect();
    let kf = free.len();
    let mut base = 0usize;
    for (i, f) in fixed.iter().enumerate() {
        if *f == Some(true) {
            base |= 1 << (k - 1 - i);
        }
    }
    Ok(TruthTable::from_fn(kf, |m| {
        let mut row = base;
        for (j, &i) in free.iter().enumerate() {
            if (m >> (kf - 1 - j)) & 1 == 1 {
                row |= 1 << (k - 1 - i);
            }
        }
        tt.get(row)
    }))
}

/// Brings a sub-graph with more than 6 inputs to a 6-input table by fixing
/// exactly `k - 6` inputs (canonical input index, value).
pub fn condition_truth_table(sub: &SubGraph, fixings: &[(usize, bool)]) -> Result<TruthTable> {
    let k = sub.num_pis();
    if k <= TABLE_INPUTS {
        return arg(format!("conditioning needs more than {TABLE_INPUTS} inputs, got {k}"));
    }
    if fixings.len() != k - TABLE_INPUTS {
        return arg(format!(
            "{k}-input cone needs {} fixings, got {}",
            k - TABLE_INPUTS,
            fixings.len()
        ));
    }
    let tt = match &sub.truth_table {
        Some(t) => t.clone(),
        None => exact_truth_table(sub)?,
    };
    cofactor(&tt, fixings)
}

pub use crate::bits::hamming_fraction;
