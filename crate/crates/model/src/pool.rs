// SPDX-License-Identifier: Apache-2.0

//! Pooling transformers: one embedding per sampled cone.

use gatelab_core::cone::SubGraph;
use gatelab_core::labels::TokenPlan;
use gatelab_core::sim::TABLE_INPUTS;
use gatelab_tensor::{Real, Var};

use crate::error::{Error, Result};
use crate::net::{Block, Fwd, TOKEN_CLS, TOKEN_DONT_CARE, TOKEN_ONE, TOKEN_ZERO};

/// Rows of one pooling sequence: `(0, r)` is row `r` of the circuit
/// embedding, `(1, t)` is special token `t`.
pub type TokenRows = Vec<(usize, usize)>;

/// Functional sequence: CLS, one slot per input in canonical order (padded
/// with don't-care to six, fixed inputs replaced by zero/one), then the
/// root.
pub fn functional_tokens(sub: &SubGraph, plan: &TokenPlan) -> Result<TokenRows> {
    let k = sub.num_pis();
    plan.check(k)?;
    let mut rows = vec![(1, TOKEN_CLS)];
    let fixed = |j: usize| match plan {
        TokenPlan::Fix { fixings } => fixings.iter().find(|(i, _)| *i == j).map(|(_, v)| *v),
        _ => None,
    };
    for j in 0..k.max(TABLE_INPUTS) {
        if j >= k {
            rows.push((1, TOKEN_DONT_CARE));
        } else if let Some(v) = fixed(j) {
            rows.push((1, if v { TOKEN_ONE } else { TOKEN_ZERO }));
        } else {
            rows.push((0, sub.parent[sub.canonical_pi_order[j]]));
        }
    }
    rows.push((0, sub.parent[sub.root]));
    Ok(rows)
}

/// Structural sequence: CLS then every node in canonical order.
pub fn structural_tokens(sub: &SubGraph) -> TokenRows {
    let mut rows = vec![(1, TOKEN_CLS)];
    rows.extend(sub.parent.iter().map(|&g| (0, g)));
    rows
}

impl<T: Real> Fwd<'_, T> {
    fn pool(&mut self, emb: Var, seqs: &[TokenRows], pos: usize, blocks: &[Block]) -> Result<Var> {
        let cap = self.model.config.pt_positions;
        let total: usize = seqs.iter().map(Vec::len).sum();
        let mut idx = Vec::with_capacity(total);
        let mut pidx = Vec::with_capacity(total);
        let mut allow = vec![false; total * total];
        let mut cls = Vec::with_capacity(seqs.len());
        let mut off = 0;
        for s in seqs {
            if s.len() > cap {
                return Err(Error::Capacity(format!(
                    "pooling sequence of {} exceeds {cap} positions",
                    s.len()
                )));
            }
            cls.push(off);
            for (p, &r) in s.iter().enumerate() {
                idx.push(r);
                pidx.push((0, p));
                for q in 0..s.len() {
                    allow[(off + p) * total + off + q] = true;
                }
            }
            off += s.len();
        }
        let special = self.p(self.model.layout.special);
        let pos = self.p(pos);
        let x = self.tape.select_rows(&[emb, special], &idx)?;
        let pe = self.tape.select_rows(&[pos], &pidx)?;
        let mut h = self.tape.add(x, pe)?;
        for b in blocks {
            h = self.block(h, h, b, &allow)?;
        }
        Ok(self.tape.rows(h, &cls)?)
    }

    /// Functional cone embeddings, one row per cone.
    pub fn pool_functional(&mut self, hf: Var, cones: &[(&SubGraph, &TokenPlan)]) -> Result<Var> {
        let seqs = cones
            .iter()
            .map(|(s, p)| functional_tokens(s, p))
            .collect::<Result<Vec<_>>>()?;
        let blocks = self.model.layout.pt_f.clone();
        self.pool(hf, &seqs, self.model.layout.pos_f, &blocks)
    }

    /// Structural cone embeddings, one row per cone.
    pub fn pool_structural(&mut self, hs: Var, cones: &[&SubGraph]) -> Result<Var> {
        let seqs: Vec<TokenRows> = cones.iter().map(|s| structural_tokens(s)).collect();
        let blocks = self.model.layout.pt_s.clone();
        self.pool(hs, &seqs, self.model.layout.pos_s, &blocks)
    }
}
