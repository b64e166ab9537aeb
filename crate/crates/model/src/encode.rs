// SPDX-License-Identifier: Apache-2.0

//! Tokenizer GNN and the two cone-masked refine transformers.

use gatelab_core::aig::{cone_mask, Aig, GateKind};
use gatelab_core::sim::Workload;
use gatelab_tensor::{Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::net::{Fwd, Model, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Tokenized,
    Refined,
}

/// Per-gate functional and structural embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState<T> {
    pub hf: Tensor<T>,
    pub hs: Tensor<T>,
    pub stage: Stage,
}

/// Embedding rows of one pass, on the tape.
#[derive(Debug, Clone, Copy)]
pub struct StreamVars {
    pub hf: Var,
    pub hs: Var,
}

impl<T: Real> Model<T> {
    /// Structural rows for `n` primary inputs. Beyond `d` inputs the basis
    /// repeats with random sign flips and is no longer orthogonal.
    pub fn pi_structural_rows(&self, n: usize) -> Tensor<T> {
        let d = self.config.d;
        if n > d {
            log::warn!("{n} primary inputs exceed embedding width {d}; structural rows are not orthogonal");
        }
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            let wrap = i / d;
            let row = self.pi_basis.row(i % d);
            if wrap == 0 {
                data.extend_from_slice(row);
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(wrap as u64));
                data.extend(row.iter().map(|&x| if rng.gen_bool(0.5) { -x } else { x }));
            }
        }
        Tensor::matrix(n, d, data).expect("sizes agree")
    }
}

impl<T: Real> Fwd<'_, T> {
    fn stream_update(&mut self, s: &Stream, x: Var, h: Var, kinds: &[GateKind]) -> Result<Var> {
        let a = self.linear(x, s.agg_and)?;
        let n = self.linear(x, s.agg_not)?;
        let idx: Vec<(usize, usize)> = kinds
            .iter()
            .enumerate()
            .map(|(r, k)| (usize::from(*k == GateKind::Not), r))
            .collect();
        let msg = self.tape.select_rows(&[a, n], &idx)?;
        let msg = self.tape.relu(msg);
        let gru = s.gru;
        self.gru(msg, h, &gru)
    }

    /// Level-synchronous two-stream tokenizer. Has no sequence cap.
    pub fn tokenize(&mut self, aig: &Aig, workload: &Workload) -> Result<StreamVars> {
        if workload.len() != aig.pis().len() {
            return arg(format!(
                "workload has {} entries for {} inputs",
                workload.len(),
                aig.pis().len()
            ));
        }
        let d = self.model.config.d;
        let n = aig.len();
        let npi = aig.pis().len();
        let mut hf0 = Vec::with_capacity(npi * d);
        for &p in workload.probs() {
            hf0.extend(std::iter::repeat_n(T::of(p), d));
        }
        let pi_f = self.tape.constant(Tensor::matrix(npi, d, hf0)?);
        let pi_s = self.tape.constant(self.model.pi_structural_rows(npi));
        let by_level = aig.gates_by_level();
        let tok_f = self.model.layout.tok_f.clone();
        let tok_s = self.model.layout.tok_s.clone();

        let mut pi_row = vec![usize::MAX; n];
        for (i, &p) in aig.pis().iter().enumerate() {
            pi_row[p] = i;
        }
        let mut prev: Option<StreamVars> = None;
        let mut out = None;
        for _ in 0..self.model.config.tokenizer_rounds {
            let mut blocks_f = vec![pi_f];
            let mut blocks_s = vec![pi_s];
            let mut loc: Vec<(usize, usize)> = (0..n).map(|g| (0, pi_row[g])).collect();
            for (lev, gates) in by_level.iter().enumerate().skip(1) {
                if gates.is_empty() {
                    continue;
                }
                let ia: Vec<(usize, usize)> = gates.iter().map(|&g| loc[aig.fanins(g)[0]]).collect();
                let ib: Vec<(usize, usize)> = gates
                    .iter()
                    .map(|&g| loc[*aig.fanins(g).last().expect("non-input gate")])
                    .collect();
                let fa = self.tape.select_rows(&blocks_f, &ia)?;
                let fb = self.tape.select_rows(&blocks_f, &ib)?;
                let sa = self.tape.select_rows(&blocks_s, &ia)?;
                let sb = self.tape.select_rows(&blocks_s, &ib)?;
                let f = self.tape.add(fa, fb)?;
                let f = self.tape.scale(f, 0.5);
                let s = self.tape.add(sa, sb)?;
                let s = self.tape.scale(s, 0.5);
                let xf = self.tape.concat_cols(&[f, s])?;
                let kinds: Vec<GateKind> = gates.iter().map(|&g| aig.kind(g)).collect();
                let (hf_prev, hs_prev) = match prev {
                    None => {
                        let z = self.tape.constant(Tensor::zeros(&[gates.len(), d]));
                        (z, z)
                    }
                    Some(p) => (self.tape.rows(p.hf, gates)?, self.tape.rows(p.hs, gates)?),
                };
                let nf = self.stream_update(&tok_f, xf, hf_prev, &kinds)?;
                let ns = self.stream_update(&tok_s, s, hs_prev, &kinds)?;
                blocks_f.push(nf);
                blocks_s.push(ns);
                let b = blocks_f.len() - 1;
                for (r, &g) in gates.iter().enumerate() {
                    loc[g] = (b, r);
                }
                debug_assert!(lev > 0);
            }
            let hf = self.tape.select_rows(&blocks_f, &loc)?;
            let hs = self.tape.select_rows(&blocks_s, &loc)?;
            let cur = StreamVars { hf, hs };
            prev = Some(cur);
            out = Some(cur);
        }
        Ok(out.expect("at least one round"))
    }

    /// Both refine stacks over the given rows, restricted by `allow`
    /// (row-major `n x n`, `allow[q * n + k]`).
    pub fn refine(&mut self, x: StreamVars, allow: &[bool]) -> Result<StreamVars> {
        let (n, _) = self.tape.dims(x.hf);
        if allow.len() != n * n {
            return arg(format!("mask of {} entries for {n} rows", allow.len()));
        }
        let input = self.tape.add(x.hf, x.hs)?;
        let rt_f = self.model.layout.rt_f.clone();
        let rt_s = self.model.layout.rt_s.clone();
        let mut hf = input;
        for b in &rt_f {
            hf = self.block(hf, input, b, allow)?;
        }
        let mut hs = input;
        for b in &rt_s {
            hs = self.block(hs, input, b, allow)?;
        }
        Ok(StreamVars { hf, hs })
    }

    /// Tokenize then refine a whole circuit under its cone mask.
    pub fn encode(&mut self, aig: &Aig, workload: &Workload) -> Result<StreamVars> {
        let cap = self.model.config.seq_cap;
        if aig.len() > cap {
            return Err(Error::Capacity(format!(
                "circuit of {} gates exceeds sequence cap {cap}; partition it first",
                aig.len()
            )));
        }
        let tok = self.tokenize(aig, workload)?;
        let mask = cone_mask(aig);
        self.refine(tok, mask.as_slice())
    }

    pub fn state(&self, v: StreamVars, stage: Stage) -> EmbeddingState<T> {
        EmbeddingState {
            hf: self.tape.value(v.hf).clone(),
            hs: self.tape.value(v.hs).clone(),
            stage,
        }
    }
}

impl<T: Real> Model<T> {
    pub fn tokenize(&self, aig: &Aig, workload: &Workload) -> Result<EmbeddingState<T>> {
        if aig.len() > self.config.seq_cap {
            return Err(Error::Capacity(format!(
                "circuit of {} gates exceeds sequence cap {}",
                aig.len(),
                self.config.seq_cap
            )));
        }
        self.tokenize_uncapped(aig, workload)
    }

    /// Tokenizer without the sequence cap, for windowed encoding.
    pub fn tokenize_uncapped(&self, aig: &Aig, workload: &Workload) -> Result<EmbeddingState<T>> {
        let mut f = Fwd::inference(self);
        let v = f.tokenize(aig, workload)?;
        Ok(f.state(v, Stage::Tokenized))
    }

    /// Refines tokenized rows under `allow`.
    pub fn refine(&self, state: &EmbeddingState<T>, allow: &[bool]) -> Result<EmbeddingState<T>> {
        if state.hf.rows() != state.hs.rows() {
            return arg("stream row counts differ");
        }
        let mut f = Fwd::inference(self);
        let x = StreamVars {
            hf: f.tape.constant(state.hf.clone()),
            hs: f.tape.constant(state.hs.clone()),
        };
        let v = f.refine(x, allow)?;
        Ok(f.state(v, Stage::Refined))
    }

    pub fn encode(&self, aig: &Aig, workload: &Workload) -> Result<EmbeddingState<T>> {
        let tok = self.tokenize(aig, workload)?;
        self.refine(&tok, cone_mask(aig).as_slice())
    }
}
