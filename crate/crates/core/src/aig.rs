// SPDX-License-Identifier: Apache-2.0

//! And-inverter graphs with explicit inverter nodes.
//!
//! Gates are stored in a topological order: every fanin index is strictly
//! smaller than the index of the gate that consumes it. Primary outputs are
//! defined structurally as gates without fanout; outputs declared by an
//! AIGER file are kept separately in [`Aig::outputs`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    Pi,
    And,
    Not,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::Pi => 0,
            GateKind::Not => 1,
            GateKind::And => 2,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            GateKind::Pi => 0,
            GateKind::And => 1,
            GateKind::Not => 2,
        }
    }
}

/// Serialized form. Field order is fixed: `gates`, `fanins`, `pis`, `outputs`.
#[derive(Serialize, Deserialize)]
struct AigRepr {
    gates: Vec<GateKind>,
    fanins: Vec<Vec<usize>>,
    pis: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outputs: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AigRepr", into = "AigRepr")]
pub struct Aig {
    kinds: Vec<GateKind>,
    fanins: Vec<Vec<usize>>,
    fanouts: Vec<Vec<usize>>,
    levels: Vec<u32>,
    pis: Vec<usize>,
    pos: Vec<usize>,
    outputs: Option<Vec<usize>>,
}

impl TryFrom<AigRepr> for Aig {
    type Error = Error;

    fn try_from(r: AigRepr) -> Result<Self> {
        let mut aig = Aig::with_pi_order(r.gates, r.fanins, r.pis)?;
        if let Some(outs) = r.outputs {
            aig = aig.with_outputs(outs)?;
        }
        Ok(aig)
    }
}

impl From<Aig> for AigRepr {
    fn from(a: Aig) -> Self {
        AigRepr {
            gates: a.kinds,
            fanins: a.fanins,
            pis: a.pis,
            outputs: a.outputs,
        }
    }
}

impl Aig {
    /// Builds an AIG whose primary inputs are listed in index order.
    pub fn new(kinds: Vec<GateKind>, fanins: Vec<Vec<usize>>) -> Result<Self> {
        let pis = kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == GateKind::Pi)
            .map(|(i, _)| i)
            .collect();
        Self::with_pi_order(kinds, fanins, pis)
    }

    /// Builds an AIG with an explicit primary-input order. Workloads and
    /// input embeddings are indexed by position in this list.
    pub fn with_pi_order(kinds: Vec<GateKind>, fanins: Vec<Vec<usize>>, pis: Vec<usize>) -> Result<Self> {
        let n = kinds.len();
        if fanins.len() != n {
            return Err(Error::Invalid(format!("{} gates but {} fanin lists", n, fanins.len())));
        }
        let mut levels = vec![0u32; n];
        let mut fanouts = vec![Vec::new(); n];
        for (g, (kind, fi)) in kinds.iter().zip(&fanins).enumerate() {
            if fi.len() != kind.arity() {
                return Err(Error::Invalid(format!(
                    "gate {g} of kind {kind:?} has {} fanins",
                    fi.len()
                )));
            }
            let mut lev = 0;
            for &f in fi {
                if f >= g {
                    return Err(Error::Invalid(format!(
                        "gate {g} reads gate {f} which does not precede it"
                    )));
                }
                lev = lev.max(levels[f] + 1);
                fanouts[f].push(g);
            }
            levels[g] = lev;
        }
        let mut seen = vec![false; n];
        let n_pi = kinds.iter().filter(|k| **k == GateKind::Pi).count();
        if pis.len() != n_pi {
            return Err(Error::Invalid(format!(
                "pi order lists {} gates, circuit has {n_pi} inputs",
                pis.len()
            )));
        }
        for &p in &pis {
            if p >= n || kinds[p] != GateKind::Pi || seen[p] {
                return Err(Error::Invalid(format!("bad entry {p} in pi order")));
            }
            seen[p] = true;
        }
        let pos = (0..n).filter(|&g| fanouts[g].is_empty()).collect();
        Ok(Self {
            kinds,
            fanins,
            fanouts,
            levels,
            pis,
            pos,
            outputs: None,
        })
    }

    pub fn with_outputs(mut self, outputs: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = outputs.iter().find(|&&o| o >= self.len()) {
            return Err(Error::Invalid(format!("output {bad} out of range")));
        }
        self.outputs = Some(outputs);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, g: usize) -> GateKind {
        self.kinds[g]
    }

    pub fn kinds(&self) -> &[GateKind] {
        &self.kinds
    }

    pub fn fanins(&self, g: usize) -> &[usize] {
        &self.fanins[g]
    }

    pub fn fanouts(&self, g: usize) -> &[usize] {
        &self.fanouts[g]
    }

    pub fn level(&self, g: usize) -> u32 {
        self.levels[g]
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn max_level(&self) -> u32 {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    pub fn pis(&self) -> &[usize] {
        &self.pis
    }

    /// Gates with zero fanout.
    pub fn pos(&self) -> &[usize] {
        &self.pos
    }

    /// Outputs as declared by the source file, if any.
    pub fn outputs(&self) -> Option<&[usize]> {
        self.outputs.as_deref()
    }

    pub fn num_ands(&self) -> usize {
        self.kinds.iter().filter(|k| **k == GateKind::And).count()
    }

    /// Gate indices grouped by level, each group ascending.
    pub fn gates_by_level(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.max_level() as usize + 1];
        if self.is_empty() {
            return Vec::new();
        }
        for g in 0..self.len() {
            out[self.levels[g] as usize].push(g);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("aig serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Invalid(e.to_string()))
    }

    /// Returns the gate subgraph induced by `gates` (ascending, parent
    /// indices). Fanins that fall outside the set turn the gate into a local
    /// input.
    pub fn induced(&self, gates: &[usize]) -> Result<(Aig, Vec<usize>)> {
        let mut local = vec![usize::MAX; self.len()];
        for (i, &g) in gates.iter().enumerate() {
            if i > 0 && gates[i - 1] >= g {
                return arg("induced subgraph gates must be strictly ascending");
            }
            local[g] = i;
        }
        let mut kinds = Vec::with_capacity(gates.len());
        let mut fanins = Vec::with_capacity(gates.len());
        for &g in gates {
            let fi = self.fanins(g);
            if !fi.is_empty() && fi.iter().all(|&f| local[f] != usize::MAX) {
                kinds.push(self.kind(g));
                fanins.push(fi.iter().map(|&f| local[f]).collect());
            } else {
                kinds.push(GateKind::Pi);
                fanins.push(Vec::new());
            }
        }
        Ok((Aig::new(kinds, fanins)?, gates.to_vec()))
    }

    /// Evaluates every gate for a single input assignment given in PI order.
    pub fn eval(&self, inputs: &[bool]) -> Vec<bool> {
        assert_eq!(inputs.len(), self.pis.len());
        let mut v = vec![false; self.len()];
        for (&p, &x) in self.pis.iter().zip(inputs) {
            v[p] = x;
        }
        for g in 0..self.len() {
            match self.kinds[g] {
                GateKind::Pi => {}
                GateKind::Not => v[g] = !v[self.fanins[g][0]],
                GateKind::And => v[g] = v[self.fanins[g][0]] && v[self.fanins[g][1]],
            }
        }
        v
    }

    /// ASCII AIGER text. Inverter nodes become negated literals, so a chain
    /// of two inverters collapses on re-read.
    pub fn to_aiger(&self) -> String {
        let mut lit = vec![0usize; self.len()];
        let mut var = 0usize;
        for &p in &self.pis {
            var += 1;
            lit[p] = 2 * var;
        }
        let mut ands = Vec::new();
        for g in 0..self.len() {
            match self.kinds[g] {
                GateKind::Pi => {}
                GateKind::Not => lit[g] = lit[self.fanins[g][0]] ^ 1,
                GateKind::And => {
                    var += 1;
                    lit[g] = 2 * var;
                    ands.push((lit[g], lit[self.fanins[g][0]], lit[self.fanins[g][1]]));
                }
            }
        }
        let outs: Vec<usize> = match &self.outputs {
            Some(o) => o.clone(),
            None => self.pos.clone(),
        };
        let mut s = format!("aag {} {} 0 {} {}\n", var, self.pis.len(), outs.len(), ands.len());
        for &p in &self.pis {
            s.push_str(&format!("{}\n", lit[p]));
        }
        for &o in &outs {
            s.push_str(&format!("{}\n", lit[o]));
        }
        for (l, a, b) in ands {
            s.push_str(&format!("{l} {a} {b}\n"));
        }
        s
    }
}

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, msg: msg.into() })
}

/// Parses an ASCII AIGER (`aag`) document. Latches and constant literals are
/// rejected; negated literals are materialized as NOT gates, one per driven
/// literal.
pub fn parse_aiger(text: &str) -> Result<Aig> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = match lines.next() {
        Some(h) => h,
        None => return parse_err(1, "empty document"),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&"aag") {
        return parse_err(hline, "expected 'aag' header");
    }
    if fields.len() < 6 {
        return parse_err(hline, "header needs M I L O A");
    }
    let nums: Vec<usize> = match fields[1..6].iter().map(|f| f.parse()).collect() {
        Ok(v) => v,
        Err(_) => return parse_err(hline, "non-numeric header field"),
    };
    let (max_var, n_in, n_latch, n_out, n_and) = (nums[0], nums[1], nums[2], nums[3], nums[4]);
    if n_latch != 0 {
        return parse_err(hline, "latches are not supported");
    }
    if n_in + n_and > max_var {
        return parse_err(hline, "M smaller than I + A");
    }

    let mut next_numbers = |count: usize, what: &str| -> Result<(usize, Vec<usize>)> {
        let (ln, l) = match lines.next() {
            Some(x) => x,
            None => return parse_err(text.lines().count() + 1, format!("missing {what} line")),
        };
        let v: Vec<usize> = match l.split_whitespace().map(|f| f.parse()).collect() {
            Ok(v) => v,
            Err(_) => return parse_err(ln, format!("malformed {what} line")),
        };
        if v.len() != count {
            return parse_err(ln, format!("{what} line needs {count} literals"));
        }
        Ok((ln, v))
    };

    // Driver of each variable: None = undefined, Some(None) = input,
    // Some(Some(k)) = k-th AND definition.
    let mut driver: Vec<Option<Option<usize>>> = vec![None; max_var + 1];
    let mut input_vars = Vec::with_capacity(n_in);
    for _ in 0..n_in {
        let (ln, v) = next_numbers(1, "input")?;
        let l = v[0];
        if l < 2 || l % 2 == 1 || l / 2 > max_var {
            return parse_err(ln, format!("invalid input literal {l}"));
        }
        if driver[l / 2].is_some() {
            return parse_err(ln, format!("variable {} defined twice", l / 2));
        }
        driver[l / 2] = Some(None);
        input_vars.push(l / 2);
    }
    let mut outs = Vec::with_capacity(n_out);
    for _ in 0..n_out {
        let (ln, v) = next_numbers(1, "output")?;
        outs.push((ln, v[0]));
    }
    let mut ands: Vec<(usize, [usize; 2])> = Vec::with_capacity(n_and);
    let mut and_lines = Vec::with_capacity(n_and);
    for k in 0..n_and {
        let (ln, v) = next_numbers(3, "and")?;
        let lhs = v[0];
        if lhs < 2 || lhs % 2 == 1 || lhs / 2 > max_var {
            return parse_err(ln, format!("invalid and literal {lhs}"));
        }
        if driver[lhs / 2].is_some() {
            return parse_err(ln, format!("variable {} defined twice", lhs / 2));
        }
        driver[lhs / 2] = Some(Some(k));
        ands.push((lhs / 2, [v[1], v[2]]));
        and_lines.push(ln);
    }

    let check_lit = |ln: usize, l: usize| -> Result<()> {
        if l < 2 {
            return parse_err(ln, format!("constant literal {l} is not supported"));
        }
        if l / 2 > max_var || driver[l / 2].is_none() {
            return parse_err(ln, format!("literal {l} references an undefined variable"));
        }
        Ok(())
    };
    for (k, (_, rhs)) in ands.iter().enumerate() {
        for &l in rhs {
            check_lit(and_lines[k], l)?;
        }
    }
    for &(ln, l) in &outs {
        check_lit(ln, l)?;
    }

    // Topological order of AND definitions (iterative DFS).
    let mut order = Vec::with_capacity(n_and);
    let mut state = vec![0u8; n_and];
    for start in 0..n_and {
        if state[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        state[start] = 1;
        while let Some((k, child)) = stack.pop() {
            if child < 2 {
                stack.push((k, child + 1));
                let var = ands[k].1[child] / 2;
                if let Some(Some(dep)) = driver[var] {
                    match state[dep] {
                        0 => {
                            state[dep] = 1;
                            stack.push((dep, 0));
                        }
                        1 => return parse_err(and_lines[dep], "combinational cycle"),
                        _ => {}
                    }
                }
            } else {
                state[k] = 2;
                order.push(k);
            }
        }
    }

    let mut kinds = Vec::new();
    let mut fanins: Vec<Vec<usize>> = Vec::new();
    let mut pos_node = vec![usize::MAX; max_var + 1];
    let mut neg_node = vec![usize::MAX; max_var + 1];
    for &v in &input_vars {
        pos_node[v] = kinds.len();
        kinds.push(GateKind::Pi);
        fanins.push(Vec::new());
    }
    let mut node_of = |l: usize, pos_node: &[usize], kinds: &mut Vec<GateKind>, fanins: &mut Vec<Vec<usize>>| {
        let v = l / 2;
        let base = pos_node[v];
        if l.is_multiple_of(2) {
            return base;
        }
        if neg_node[v] == usize::MAX {
            neg_node[v] = kinds.len();
            kinds.push(GateKind::Not);
            fanins.push(vec![base]);
        }
        neg_node[v]
    };
    for &k in &order {
        let (var, rhs) = ands[k];
        let a = node_of(rhs[0], &pos_node, &mut kinds, &mut fanins);
        let b = node_of(rhs[1], &pos_node, &mut kinds, &mut fanins);
        if a == b {
            return parse_err(and_lines[k], "and gate with identical fanins");
        }
        pos_node[var] = kinds.len();
        kinds.push(GateKind::And);
        fanins.push(vec![a, b]);
    }
    let mut declared = Vec::with_capacity(outs.len());
    for &(_, l) in &outs {
        declared.push(node_of(l, &pos_node, &mut kinds, &mut fanins));
    }
    Aig::new(kinds, fanins)?.with_outputs(declared)
}

/// Random combinational AIG. Inverters never feed inverters and each gate
/// drives at most one inverter, so the result survives an AIGER round trip
/// up to node order.
pub fn generate_random_aig(seed: u64, n_pis: usize, n_gates: usize) -> Result<Aig> {
    if n_pis == 0 {
        return arg("generate_random_aig needs at least one primary input");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds = vec![GateKind::Pi; n_pis];
    let mut fanins: Vec<Vec<usize>> = vec![Vec::new(); n_pis];
    let mut has_not = vec![false; n_pis];

    // Bias toward recent gates for depth, with uniform picks mixed in.
    let pick = |rng: &mut ChaCha8Rng, upto: usize| -> usize {
        if upto > 6 && rng.gen_bool(0.5) {
            upto - 1 - rng.gen_range(0..6)
        } else {
            rng.gen_range(0..upto)
        }
    };

    for _ in 0..n_gates {
        let n = kinds.len();
        let not_candidates = (0..n).any(|g| kinds[g] != GateKind::Not && !has_not[g]);
        let make_not = n < 2 || (not_candidates && rng.gen_bool(0.25));
        if make_not && not_candidates {
            let mut f = pick(&mut rng, n);
            let mut tries = 0;
            while kinds[f] == GateKind::Not || has_not[f] {
                f = if tries < 16 { pick(&mut rng, n) } else { (f + 1) % n };
                tries += 1;
            }
            has_not[f] = true;
            kinds.push(GateKind::Not);
            fanins.push(vec![f]);
        } else if n >= 2 {
            let a = pick(&mut rng, n);
            let mut b = pick(&mut rng, n);
            while b == a {
                b = rng.gen_range(0..n);
            }
            kinds.push(GateKind::And);
            fanins.push(vec![a, b]);
        } else {
            // A single PI with every inverter slot used cannot grow further.
            return arg("cannot place more gates over a single input");
        }
        has_not.push(false);
    }
    Aig::new(kinds, fanins)
}

/// Transitive-fanin bitsets: `ancestors(g)` holds every gate with a directed
/// path to `g` (excluding `g`).
#[derive(Debug, Clone)]
pub struct Reachability {
    n: usize,
    stride: usize,
    bits: Vec<u64>,
}

impl Reachability {
    pub fn new(aig: &Aig) -> Self {
        let n = aig.len();
        let stride = n.div_ceil(64).max(1);
        let mut bits = vec![0u64; n * stride];
        for g in 0..n {
            for &f in aig.fanins(g) {
                let (lo, hi) = bits.split_at_mut(g * stride);
                let row = &mut hi[..stride];
                let src = &lo[f * stride..(f + 1) * stride];
                for (r, s) in row.iter_mut().zip(src) {
                    *r |= *s;
                }
                row[f / 64] |= 1 << (f % 64);
            }
        }
        Self { n, stride, bits }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// True iff a directed path `from -> to` exists (`from != to`).
    #[inline]
    pub fn reaches(&self, from: usize, to: usize) -> bool {
        (self.bits[to * self.stride + from / 64] >> (from % 64)) & 1 == 1
    }

    pub fn ancestors(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&a| self.reaches(a, g))
    }

    pub fn pair_class(&self, i: usize, j: usize) -> u8 {
        if self.reaches(i, j) {
            0
        } else if self.reaches(j, i) {
            1
        } else {
            2
        }
    }
}

/// Connection class of a gate pair: 0 when `i` reaches `j`, 1 when `j`
/// reaches `i`, 2 when neither does.
pub fn pair_class(aig: &Aig, i: usize, j: usize) -> Result<u8> {
    if i == j {
        return arg("pair_class needs two distinct gates");
    }
    if i >= aig.len() || j >= aig.len() {
        return arg(format!("gate pair ({i}, {j}) out of range {}", aig.len()));
    }
    let path = |from: usize, to: usize| {
        // Walk backwards from `to`; gates below `from` cannot lead to it.
        let mut seen = vec![false; aig.len()];
        let mut stack = vec![to];
        while let Some(g) = stack.pop() {
            for &f in aig.fanins(g) {
                if f == from {
                    return true;
                }
                if f > from && !seen[f] {
                    seen[f] = true;
                    stack.push(f);
                }
            }
        }
        false
    };
    Ok(if path(i, j) {
        0
    } else if path(j, i) {
        1
    } else {
        2
    })
}

/// Attention mask over gates: entry `(q, k)` is allowed iff `k` lies in the
/// fanin cone or fanout cone of `q`, or `k == q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConeMask {
    n: usize,
    allow: Vec<bool>,
}

impl ConeMask {
    pub fn from_reachability(r: &Reachability) -> Self {
        let n = r.len();
        let mut allow = vec![false; n * n];
        for q in 0..n {
            for k in 0..n {
                allow[q * n + k] = q == k || r.reaches(k, q) || r.reaches(q, k);
            }
        }
        Self { n, allow }
    }

    /// Mask that lets every position see only itself.
    pub fn diagonal(n: usize) -> Self {
        let mut allow = vec![false; n * n];
        for i in 0..n {
            allow[i * n + i] = true;
        }
        Self { n, allow }
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            allow: vec![true; n * n],
        }
    }

    pub fn from_rows(n: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != n * n {
            return arg(format!("mask of {} entries is not {n}x{n}", allow.len()));
        }
        Ok(Self { n, allow })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allow[q * self.n + k]
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.allow[q * self.n..(q + 1) * self.n]
    }

    /// Row-major `n * n` entries.
    pub fn as_slice(&self) -> &[bool] {
        &self.allow
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|q| (0..q).all(|k| self.allowed(q, k) == self.allowed(k, q)))
    }
}

pub fn cone_mask(aig: &Aig) -> ConeMask {
    ConeMask::from_reachability(&Reachability::new(aig))
}
