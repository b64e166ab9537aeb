// SPDX-License-Identifier: Apache-2.0

//! Encoding circuits beyond the sequence cap: level-band area partition,
//! the window-shifting encoder, pair-distance fine-tuning and the
//! correlated-pair exporter.

use gatelab_core::aig::{Aig, GateKind};
use gatelab_core::cone::cone_nodes;
use gatelab_core::labels::GatePair;
use gatelab_core::sim::Workload;
use gatelab_tensor::{Adam, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::encode::{EmbeddingState, Stage, StreamVars};
use crate::error::{arg, Error, Result};
use crate::net::{Fwd, Head, Model};

/// Overlapping areas of a circuit, in processing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaPartition {
    /// Gate indices of each area, ascending.
    pub areas: Vec<Vec<usize>>,
    /// Band index of each area.
    pub bands: Vec<usize>,
    pub l: usize,
    pub delta: usize,
    pub max_gates: usize,
    /// Gate count of the partitioned circuit.
    pub n: usize,
}

/// Default area size cap.
pub const MAX_AREA_GATES: usize = 512;

/// Splits `aig` into level bands. Band `b` takes as roots the gates whose
/// level lies in `(L(b-1), L(b)]` with `L(b) = l + b * delta` clamped to the
/// maximum level (band 0 takes every level up to `l`), and merges their
/// `l`-hop fanin cones. A band larger than `max_gates` is cut into groups
/// of whole cones in ascending root order.
pub fn partition_areas(aig: &Aig, l: usize, delta: usize, max_gates: usize) -> Result<AreaPartition> {
    if l < 1 {
        return arg("l must be at least 1");
    }
    if delta == 0 || delta >= l {
        return arg(format!("delta = {delta} must lie in [1, l) with l = {l}"));
    }
    if max_gates == 0 {
        return arg("max_gates must be positive");
    }
    if aig.is_empty() {
        return arg("empty circuit");
    }
    let top = aig.max_level() as usize;
    let mut areas = Vec::new();
    let mut bands = Vec::new();
    let mut lo = 0usize;
    let mut band = 0;
    loop {
        let hi = (l + band * delta).min(top);
        let roots: Vec<usize> = (0..aig.len())
            .filter(|&g| {
                let lev = aig.level(g) as usize;
                lev <= hi && (band == 0 || lev > lo)
            })
            .collect();
        for area in band_areas(aig, &roots, l, max_gates)? {
            areas.push(area);
            bands.push(band);
        }
        if hi >= top {
            break;
        }
        lo = hi;
        band += 1;
    }
    Ok(AreaPartition {
        areas,
        bands,
        l,
        delta,
        max_gates,
        n: aig.len(),
    })
}

fn band_areas(aig: &Aig, roots: &[usize], l: usize, max_gates: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    let mut member = vec![false; aig.len()];
    let mut cur: Vec<usize> = Vec::new();
    for &r in roots {
        let (cone, _) = cone_nodes(aig, r, l);
        if cone.len() > max_gates {
            return Err(Error::Capacity(format!(
                "the {l}-hop cone of gate {r} has {} gates, above the area cap {max_gates}",
                cone.len()
            )));
        }
        let fresh = cone.iter().filter(|&&g| !member[g]).count();
        if cur.len() + fresh > max_gates {
            cur.iter().for_each(|&g| member[g] = false);
            cur.sort_unstable();
            out.push(std::mem::take(&mut cur));
        }
        for g in cone {
            if !member[g] {
                member[g] = true;
                cur.push(g);
            }
        }
    }
    if !cur.is_empty() {
        cur.sort_unstable();
        out.push(cur);
    }
    Ok(out)
}

impl AreaPartition {
    /// The whole circuit as one area.
    pub fn single(aig: &Aig) -> Self {
        Self {
            areas: vec![(0..aig.len()).collect()],
            bands: vec![0],
            l: 0,
            delta: 0,
            max_gates: aig.len(),
            n: aig.len(),
        }
    }

    /// Coverage, ordering and size checks against `aig`.
    pub fn validate(&self, aig: &Aig) -> Result<()> {
        if self.n != aig.len() {
            return arg(format!("partition of {} gates for a circuit of {}", self.n, aig.len()));
        }
        if self.areas.len() != self.bands.len() {
            return arg("band list does not match area list");
        }
        let mut seen = vec![false; aig.len()];
        for a in &self.areas {
            if a.is_empty() || a.len() > self.max_gates {
                return arg(format!("area of {} gates outside [1, {}]", a.len(), self.max_gates));
            }
            if a.windows(2).any(|w| w[0] >= w[1]) || *a.last().expect("non-empty") >= aig.len() {
                return arg("area gates must be ascending and in range");
            }
            a.iter().for_each(|&g| seen[g] = true);
        }
        if let Some(g) = seen.iter().position(|s| !s) {
            return arg(format!("gate {g} belongs to no area"));
        }
        Ok(())
    }
}

/// Cone mask of an area using only edges between its own gates:
/// `allow[q * n + k]` holds when `k` is `q`, or one reaches the other
/// inside the area.
pub fn area_mask(aig: &Aig, area: &[usize]) -> Vec<bool> {
    let n = area.len();
    let mut local = vec![usize::MAX; aig.len()];
    for (i, &g) in area.iter().enumerate() {
        local[g] = i;
    }
    let words = n.div_ceil(64);
    let mut anc = vec![0u64; n * words];
    for (i, &g) in area.iter().enumerate() {
        for &f in aig.fanins(g) {
            let j = local[f];
            if j == usize::MAX {
                continue;
            }
            for w in 0..words {
                let v = anc[j * words + w];
                anc[i * words + w] |= v;
            }
            anc[i * words + j / 64] |= 1 << (j % 64);
        }
    }
    let has = |a: usize, b: usize| anc[a * words + b / 64] >> (b % 64) & 1 == 1;
    let mut allow = vec![false; n * n];
    for q in 0..n {
        for k in 0..n {
            allow[q * n + k] = q == k || has(q, k) || has(k, q);
        }
    }
    allow
}

/// Refined rows of one area visit, recorded when tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaVisit<T> {
    pub gates: Vec<usize>,
    pub hf: Tensor<T>,
    pub hs: Tensor<T>,
}

/// Window-shifting output: merged embeddings and per-gate visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutput<T> {
    pub state: EmbeddingState<T>,
    pub visits: Vec<usize>,
    pub trace: Vec<AreaVisit<T>>,
}

/// Running per-gate sums; the merged row is `sum * (1 / count)`.
struct Merge<T> {
    d: usize,
    sum_f: Vec<T>,
    sum_s: Vec<T>,
    count: Vec<usize>,
}

impl<T: Real> Merge<T> {
    fn row(&self, sum: &[T], g: usize) -> Vec<T> {
        let inv = T::one() / T::of(self.count[g] as f64);
        sum[g * self.d..(g + 1) * self.d].iter().map(|&x| x * inv).collect()
    }

    fn add(&mut self, gates: &[usize], hf: &Tensor<T>, hs: &Tensor<T>) {
        let d = self.d;
        for (r, &g) in gates.iter().enumerate() {
            self.count[g] += 1;
            for c in 0..d {
                self.sum_f[g * d + c] += hf.get(r, c);
                self.sum_s[g * d + c] += hs.get(r, c);
            }
        }
    }
}

impl<T: Real> Fwd<'_, T> {
    /// Tokenizes the whole circuit, then refines each area in order on
    /// rows that already hold the running means of earlier visits. Reads of
    /// merged rows enter the tape as constants, so gradients reach each
    /// area's refine pass but do not cross area boundaries.
    pub fn window_shift(
        &mut self,
        aig: &Aig,
        workload: &Workload,
        partition: &AreaPartition,
        trace: bool,
    ) -> Result<(StreamVars, Vec<usize>, Vec<AreaVisit<T>>)> {
        partition.validate(aig)?;
        let cap = self.model.config.seq_cap;
        if let Some(a) = partition.areas.iter().find(|a| a.len() > cap) {
            return Err(Error::Capacity(format!(
                "area of {} gates exceeds sequence cap {cap}",
                a.len()
            )));
        }
        let d = self.model.config.d;
        let n = aig.len();
        let tok = self.tokenize(aig, workload)?;
        let mut merge = Merge {
            d,
            sum_f: vec![T::zero(); n * d],
            sum_s: vec![T::zero(); n * d],
            count: vec![0; n],
        };
        let mut refined: Vec<(Var, Var)> = Vec::with_capacity(partition.areas.len());
        let mut visits: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        let mut out_trace = Vec::new();
        for (a, area) in partition.areas.iter().enumerate() {
            let mut merged_f = Vec::new();
            let mut merged_s = Vec::new();
            let mut idx = Vec::with_capacity(area.len());
            for &g in area {
                if merge.count[g] == 0 {
                    idx.push((0, g));
                } else {
                    idx.push((1, merged_f.len() / d));
                    merged_f.extend(merge.row(&merge.sum_f, g));
                    merged_s.extend(merge.row(&merge.sum_s, g));
                }
            }
            let (src_f, src_s) = if merged_f.is_empty() {
                (vec![tok.hf], vec![tok.hs])
            } else {
                let m = merged_f.len() / d;
                let cf = self.tape.constant(Tensor::matrix(m, d, merged_f)?);
                let cs = self.tape.constant(Tensor::matrix(m, d, merged_s)?);
                (vec![tok.hf, cf], vec![tok.hs, cs])
            };
            let x = StreamVars {
                hf: self.tape.select_rows(&src_f, &idx)?,
                hs: self.tape.select_rows(&src_s, &idx)?,
            };
            let y = self.refine(x, &area_mask(aig, area))?;
            let (vf, vs) = (self.tape.value(y.hf).clone(), self.tape.value(y.hs).clone());
            merge.add(area, &vf, &vs);
            for (r, &g) in area.iter().enumerate() {
                visits[g].push((a, r));
            }
            refined.push((y.hf, y.hs));
            if trace {
                out_trace.push(AreaVisit {
                    gates: area.clone(),
                    hf: vf,
                    hs: vs,
                });
            }
        }
        let counts: Vec<usize> = merge.count.clone();
        let most = counts.iter().copied().max().unwrap_or(0);
        let srcs_f: Vec<Var> = refined.iter().map(|r| r.0).collect();
        let srcs_s: Vec<Var> = refined.iter().map(|r| r.1).collect();
        let mut inv = Vec::with_capacity(n * d);
        for &c in &counts {
            let w = T::one() / T::of(c as f64);
            inv.extend(std::iter::repeat_n(w, d));
        }
        let inv = self.tape.constant(Tensor::matrix(n, d, inv)?);
        let mut acc: Option<(Var, Var)> = None;
        for k in 0..most {
            // Gates with fewer than k + 1 visits take a zero row.
            let zero = self.tape.constant(Tensor::zeros(&[1, d]));
            let zi = srcs_f.len();
            let idx: Vec<(usize, usize)> = visits.iter().map(|v| v.get(k).copied().unwrap_or((zi, 0))).collect();
            let mut sf = srcs_f.clone();
            sf.push(zero);
            let mut ss = srcs_s.clone();
            ss.push(zero);
            let xf = self.tape.select_rows(&sf, &idx)?;
            let xs = self.tape.select_rows(&ss, &idx)?;
            acc = Some(match acc {
                None => (xf, xs),
                Some((af, as_)) => (self.tape.add(af, xf)?, self.tape.add(as_, xs)?),
            });
        }
        let (sf, ss) = acc.expect("partition covers every gate");
        let hf = self.tape.mul(sf, inv)?;
        let hs = self.tape.mul(ss, inv)?;
        Ok((StreamVars { hf, hs }, counts, out_trace))
    }
}

impl<T: Real> Model<T> {
    /// Window-shifting encoder over `partition`, without gradients.
    pub fn window_shift_encode(
        &self,
        aig: &Aig,
        workload: &Workload,
        partition: &AreaPartition,
        trace: bool,
    ) -> Result<WindowOutput<T>> {
        let mut f = Fwd::inference(self);
        let (v, visits, trace) = f.window_shift(aig, workload, partition, trace)?;
        Ok(WindowOutput {
            state: f.state(v, Stage::Refined),
            visits,
            trace,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub lr: f64,
    /// Parameter-name prefixes that receive updates.
    pub trainable: Vec<String>,
    pub l: usize,
    pub delta: usize,
    pub max_gates: usize,
    /// Stop early once the loss falls to this fraction of its initial
    /// value (0 disables).
    pub stop_ratio: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            trainable: vec!["rt.".into(), "head.gate_tt.".into()],
            l: 6,
            delta: 3,
            max_gates: MAX_AREA_GATES,
            stop_ratio: 0.0,
        }
    }
}

/// Fine-tuning history: the pair loss before each step and after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneHistory {
    pub losses: Vec<f64>,
}

fn pair_rows(pairs: &[GatePair]) -> (Vec<(usize, usize)>, Vec<f64>) {
    let idx = pairs.iter().map(|p| (p.i.min(p.j), p.i.max(p.j))).collect();
    (idx, pairs.iter().map(|p| p.dist).collect())
}

fn pair_loss<T: Real>(f: &mut Fwd<'_, T>, hf: Var, idx: &[(usize, usize)], target: &[T]) -> Result<Var> {
    let ia: Vec<usize> = idx.iter().map(|p| p.0).collect();
    let ib: Vec<usize> = idx.iter().map(|p| p.1).collect();
    let a = f.tape.rows(hf, &ia)?;
    let b = f.tape.rows(hf, &ib)?;
    let p = f.head_on(Head::GateTt, &[a, b])?;
    Ok(f.tape.l1_loss(p, target)?)
}

/// Trains the configured parameter subset on the gate-pair distance loss,
/// with embeddings from the window-shifting encoder.
pub fn finetune_tt_pair<T: Real>(
    model: &mut Model<T>,
    aig: &Aig,
    workload: &Workload,
    pairs: &[GatePair],
    config: &FinetuneConfig,
) -> Result<FinetuneHistory> {
    if pairs.is_empty() {
        return arg("fine-tuning needs at least one labelled gate pair");
    }
    if let Some(p) = pairs.iter().find(|p| p.i >= aig.len() || p.j >= aig.len()) {
        return arg(format!("pair ({}, {}) out of range", p.i, p.j));
    }
    let partition = partition_areas(aig, config.l, config.delta, config.max_gates)?;
    let trainable = model.trainable_mask(&config.trainable);
    if !trainable.iter().any(|&t| t) {
        return arg("no parameter matches the trainable prefixes");
    }
    let (idx, target) = pair_rows(pairs);
    let target: Vec<T> = target.into_iter().map(T::of).collect();
    let mut adam = Adam::new(&model.params, config.lr);
    let mut losses = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let mut f = Fwd::with_trainable(model, &trainable);
        let (v, _, _) = f.window_shift(aig, workload, &partition, false)?;
        let loss = pair_loss(&mut f, v.hf, &idx, &target)?;
        let value = f.tape.value(loss).item().f64();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                component: "gate_tt".into(),
                value,
            });
        }
        losses.push(value);
        if step == config.steps || value <= config.stop_ratio * losses[0] {
            break;
        }
        let grads = f.gradients(loss);
        adam.step(&mut model.params, &grads, Some(&trainable))?;
        log::debug!("finetune step {step} loss {value:.6}");
    }
    Ok(FinetuneHistory { losses })
}

/// Which side of the threshold counts as correlated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Predicted distance at or above the threshold.
    #[default]
    Above,
    /// Predicted distance at or below the threshold.
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

/// Scores candidate pairs with the gate-pair distance head and keeps those
/// on the chosen side of `theta`, highest score first (ties by index).
pub fn correlated_pairs<T: Real>(
    model: &Model<T>,
    hf: &Tensor<T>,
    theta: f64,
    side: Side,
    candidates: &[(usize, usize)],
) -> Result<Vec<ScoredPair>> {
    if !(0.0..=1.0).contains(&theta) {
        return arg(format!("threshold {theta} outside [0, 1]"));
    }
    if hf.cols() != model.config.d {
        return arg("embedding width differs from the model");
    }
    if let Some(p) = candidates.iter().find(|p| p.0 >= hf.rows() || p.1 >= hf.rows()) {
        return arg(format!("candidate ({}, {}) out of range", p.0, p.1));
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let mut f = Fwd::inference(model);
    let h = f.tape.constant(hf.clone());
    let ord: Vec<(usize, usize)> = candidates.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
    let a = f.tape.rows(h, &ord.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let b = f.tape.rows(h, &ord.iter().map(|p| p.1).collect::<Vec<_>>())?;
    let s = f.head_on(Head::GateTt, &[a, b])?;
    let scores = f.tape.value(s);
    let mut out: Vec<ScoredPair> = ord
        .iter()
        .enumerate()
        .map(|(r, &(i, j))| ScoredPair {
            i,
            j,
            score: scores.get(r, 0).f64(),
        })
        .filter(|p| match side {
            Side::Above => p.score >= theta,
            Side::Below => p.score <= theta,
        })
        .collect();
    out.sort_by(|x, y| y.score.total_cmp(&x.score).then((x.i, x.j).cmp(&(y.i, y.j))));
    Ok(out)
}

/// Plain-text pair list: a `#` header line, then `i j score` per pair.
pub fn export_pairs(pairs: &[ScoredPair], theta: f64, side: Side, seed: u64, checkpoint_sha256: &str) -> String {
    let side = match side {
        Side::Above => "above",
        Side::Below => "below",
    };
    let mut s = format!("# theta={theta} side={side} seed={seed} checkpoint_sha256={checkpoint_sha256}\n");
    for p in pairs {
        s.push_str(&format!("{} {} {}\n", p.i, p.j, p.score));
    }
    s
}

/// Non-input gates, the default candidate pool for pair scoring.
pub fn logic_gates(aig: &Aig) -> Vec<usize> {
    (0..aig.len()).filter(|&g| aig.kind(g) != GateKind::Pi).collect()
}
