// SPDX-License-Identifier: Apache-2.0

//! Supervision targets for one circuit.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aig::{Aig, GateKind, Reachability};
use crate::bits::{hamming_fraction, BitVec};
use crate::cone::{extract_khop_cone, SubGraph};
use crate::error::{arg, Error, Result};
use crate::ged::graph_edit_distance;
use crate::sim::{
    condition_truth_table, exact_truth_table, pad_truth_table, simulate, TruthTable, Workload, TABLE_INPUTS,
};

/// Most inputs a pooled cone may carry (the cone bound for four levels).
pub const MAX_POOL_INPUTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub seed: u64,
    /// Random patterns per gate for the incomplete truth tables.
    pub n_patterns: usize,
    pub hops: usize,
    pub tt_pairs: usize,
    pub con_pairs: usize,
    pub cones: usize,
    pub graph_pairs: usize,
    pub in_samples: usize,
    pub max_gates: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_patterns: 1024,
            hops: 4,
            tt_pairs: 64,
            con_pairs: 48,
            cones: 8,
            graph_pairs: 8,
            in_samples: 16,
            max_gates: 512,
        }
    }
}

impl LabelConfig {
    pub fn empty(seed: u64) -> Self {
        Self {
            seed,
            tt_pairs: 0,
            con_pairs: 0,
            cones: 0,
            graph_pairs: 0,
            in_samples: 0,
            ..Self::default()
        }
    }
}

/// How a cone's inputs fill the six truth-table slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TokenPlan {
    /// Exactly six inputs.
    Exact,
    /// `real` inputs followed by don't-care slots.
    Pad { real: usize },
    /// Canonical inputs held at constants; the rest fill the table.
    Fix { fixings: Vec<(usize, bool)> },
}

impl TokenPlan {
    pub fn check(&self, k: usize) -> Result<()> {
        let ok = match self {
            TokenPlan::Exact => k == TABLE_INPUTS,
            TokenPlan::Pad { real } => *real == k && k < TABLE_INPUTS,
            TokenPlan::Fix { fixings } => {
                k > TABLE_INPUTS && fixings.len() == k - TABLE_INPUTS && fixings.iter().all(|(i, _)| *i < k)
            }
        };
        if ok {
            Ok(())
        } else {
            arg(format!("token plan {self:?} does not fit a {k}-input cone"))
        }
    }

    /// The 64-entry table a cone is trained against under this plan.
    pub fn table(&self, sub: &SubGraph) -> Result<TruthTable> {
        self.check(sub.num_pis())?;
        match self {
            TokenPlan::Exact => match &sub.truth_table {
                Some(t) => Ok(t.clone()),
                None => exact_truth_table(sub),
            },
            TokenPlan::Pad { .. } => {
                let t = match &sub.truth_table {
                    Some(t) => t.clone(),
                    None => exact_truth_table(sub)?,
                };
                pad_truth_table(&t)
            }
            TokenPlan::Fix { fixings } => condition_truth_table(sub, fixings),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeLabel {
    pub sub: SubGraph,
    pub plan: TokenPlan,
    /// Row `m` of the 64-entry table is bit `m`.
    pub tt64: u64,
}

impl ConeLabel {
    pub fn table_bit(&self, m: usize) -> bool {
        (self.tt64 >> m) & 1 == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatePair {
    pub i: usize,
    pub j: usize,
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConPair {
    pub i: usize,
    pub j: usize,
    pub class: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPair {
    pub s1: usize,
    pub s2: usize,
    pub tt_dist: f64,
    pub ged: u32,
    /// `ged / (|s1| + |s2|)`, the regression target.
    pub ged_norm: f64,
    pub ged_approx: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InSample {
    pub gate: usize,
    pub cone: usize,
    pub bit: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPack {
    pub name: String,
    pub aig: Aig,
    pub seed: u64,
    pub workload: Workload,
    pub n_patterns: usize,
    pub prob_seed: u64,
    /// Seed of the uniform-pattern simulation behind `responses`.
    pub tt_seed: u64,
    pub prob: Vec<f64>,
    pub lev: Vec<u32>,
    pub responses: Vec<BitVec>,
    pub tt_pairs: Vec<GatePair>,
    pub con_pairs: Vec<ConPair>,
    pub cones: Vec<ConeLabel>,
    pub graph_pairs: Vec<GraphPair>,
    pub in_samples: Vec<InSample>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn sample_tt_pairs(aig: &Aig, responses: &[BitVec], count: usize, rng: &mut impl Rng) -> Result<Vec<GatePair>> {
    let n = aig.len();
    let by_level = aig.gates_by_level();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < count * 8 {
        attempts += 1;
        let i = rng.gen_range(0..n);
        let peers = &by_level[aig.level(i) as usize];
        let j = if peers.len() > 1 {
            let mut j = i;
            while j == i {
                j = peers[rng.gen_range(0..peers.len())];
            }
            j
        } else {
            let j = rng.gen_range(0..n - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        };
        let (i, j) = (i.min(j), i.max(j));
        if seen.insert((i, j)) {
            let dist = hamming_fraction(&responses[i], &responses[j])?;
            out.push(GatePair { i, j, dist });
        }
    }
    Ok(out)
}

/// Simulation-labelled gate pairs for a circuit of any size: uniform random
/// patterns, pairs drawn from equal levels where possible.
pub fn tt_pairs_for(aig: &Aig, count: usize, n_patterns: usize, seed: u64) -> Result<Vec<GatePair>> {
    if aig.len() < 2 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim = simulate(aig, &Workload::uniform(aig.pis().len()), n_patterns, rng.gen())?;
    sample_tt_pairs(aig, &sim.responses, count, &mut rng)
}

fn sample_con_pairs(aig: &Aig, reach: &Reachability, count: usize, rng: &mut impl Rng) -> Vec<ConPair> {
    let n = aig.len();
    let mut related = Vec::new();
    let mut unrelated = Vec::new();
    for j in 0..n {
        for i in 0..j {
            if reach.reaches(i, j) {
                related.push((i, j));
            } else {
                unrelated.push((i, j));
            }
        }
    }
    let mut out = Vec::with_capacity(count);
    for t in 0..count {
        let class = (0..3).map(|o| ((t + o) % 3) as u8).find(|c| {
            if *c == 2 {
                !unrelated.is_empty()
            } else {
                !related.is_empty()
            }
        });
        let Some(class) = class else { break };
        let (i, j) = match class {
            0 => related[rng.gen_range(0..related.len())],
            1 => {
                let (a, b) = related[rng.gen_range(0..related.len())];
                (b, a)
            }
            _ => {
                let (a, b) = unrelated[rng.gen_range(0..unrelated.len())];
                if rng.gen_bool(0.5) {
                    (a, b)
                } else {
                    (b, a)
                }
            }
        };
        out.push(ConPair { i, j, class });
    }
    out
}

fn make_cone(aig: &Aig, root: usize, hops: usize, rng: &mut impl Rng) -> Result<Option<ConeLabel>> {
    let mut sub = extract_khop_cone(aig, root, hops)?;
    let k = sub.num_pis();
    if k > MAX_POOL_INPUTS {
        return Ok(None);
    }
    sub.truth_table = Some(exact_truth_table(&sub)?);
    let plan = if k < TABLE_INPUTS {
        TokenPlan::Pad { real: k }
    } else if k == TABLE_INPUTS {
        TokenPlan::Exact
    } else {
        TokenPlan::Fix {
            fixings: (TABLE_INPUTS..k).map(|i| (i, rng.gen_bool(0.5))).collect(),
        }
    };
    let tt64 = plan.table(&sub)?.as_u64().expect("six-input table");
    Ok(Some(ConeLabel { sub, plan, tt64 }))
}

/// Builds the full label set for one circuit. Deterministic in
/// `config.seed`; lists whose sample space is empty come back empty with a
/// note in `warnings`.
pub fn build_labelpack(name: &str, aig: &Aig, config: &LabelConfig) -> Result<LabelPack> {
    if aig.len() > config.max_gates {
        return Err(Error::Capacity(format!(
            "circuit {name} has {} gates, limit is {}",
            aig.len(),
            config.max_gates
        )));
    }
    if aig.is_empty() {
        return arg(format!("circuit {name} is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut warnings = Vec::new();
    let workload = Workload::random(aig.pis().len(), &mut rng);
    let prob_seed: u64 = rng.gen();
    let tt_seed: u64 = rng.gen();
    let prob = simulate(aig, &workload, config.n_patterns, prob_seed)?.prob;
    let responses = simulate(aig, &Workload::uniform(aig.pis().len()), config.n_patterns, tt_seed)?.responses;
    let n = aig.len();

    let tt_pairs = if config.tt_pairs > 0 && n < 2 {
        warnings.push("tt_pairs: fewer than two gates".into());
        Vec::new()
    } else if config.tt_pairs > 0 {
        sample_tt_pairs(aig, &responses, config.tt_pairs, &mut rng)?
    } else {
        Vec::new()
    };

    let reach = Reachability::new(aig);
    let con_pairs = if config.con_pairs > 0 && n < 2 {
        warnings.push("con_pairs: fewer than two gates".into());
        Vec::new()
    } else {
        sample_con_pairs(aig, &reach, config.con_pairs, &mut rng)
    };

    let mut roots: Vec<usize> = (0..n).filter(|&g| aig.kind(g) != GateKind::Pi).collect();
    if roots.is_empty() {
        roots = (0..n).collect();
    }
    roots.shuffle(&mut rng);
    let mut cones = Vec::new();
    for &root in &roots {
        if cones.len() >= config.cones {
            break;
        }
        match make_cone(aig, root, config.hops, &mut rng)? {
            Some(c) => cones.push(c),
            None => warnings.push(format!("cone at gate {root} has more than {MAX_POOL_INPUTS} inputs")),
        }
    }

    let mut graph_pairs = Vec::new();
    if config.graph_pairs > 0 {
        if cones.len() < 2 {
            warnings.push("graph_pairs: fewer than two cones".into());
        } else {
            let mut seen = HashSet::new();
            let mut attempts = 0;
            while graph_pairs.len() < config.graph_pairs && attempts < config.graph_pairs * 8 {
                attempts += 1;
                let a = rng.gen_range(0..cones.len());
                let b = rng.gen_range(0..cones.len());
                let (s1, s2) = (a.min(b), a.max(b));
                if s1 == s2 || !seen.insert((s1, s2)) {
                    continue;
                }
                graph_pairs.push(graph_pair(&cones, s1, s2)?);
            }
        }
    }

    let mut in_samples = Vec::new();
    if config.in_samples > 0 {
        if cones.is_empty() {
            warnings.push("in_samples: no cones".into());
        } else {
            let mut attempts = 0;
            while in_samples.len() < config.in_samples && attempts < config.in_samples * 8 {
                attempts += 1;
                let positive = in_samples.len() % 2 == 0;
                let cone = rng.gen_range(0..cones.len());
                let parent = &cones[cone].sub.parent;
                if positive {
                    let gate = parent[rng.gen_range(0..parent.len())];
                    in_samples.push(InSample { gate, cone, bit: 1 });
                } else if parent.len() < n {
                    let mut gate = rng.gen_range(0..n);
                    while parent.contains(&gate) {
                        gate = rng.gen_range(0..n);
                    }
                    in_samples.push(InSample { gate, cone, bit: 0 });
                }
            }
            if in_samples.len() < config.in_samples {
                warnings.push("in_samples: cones cover the whole circuit".into());
            }
        }
    }

    Ok(LabelPack {
        name: name.to_string(),
        aig: aig.clone(),
        seed: config.seed,
        workload,
        n_patterns: config.n_patterns,
        prob_seed,
        tt_seed,
        prob,
        lev: aig.levels().to_vec(),
        responses,
        tt_pairs,
        con_pairs,
        cones,
        graph_pairs,
        in_samples,
        warnings,
    })
}

fn graph_pair(cones: &[ConeLabel], s1: usize, s2: usize) -> Result<GraphPair> {
    let (a, b) = (&cones[s1], &cones[s2]);
    let tt_dist = (a.tt64 ^ b.tt64).count_ones() as f64 / 64.0;
    let ged = graph_edit_distance(&a.sub, &b.sub)?;
    Ok(GraphPair {
        s1,
        s2,
        tt_dist,
        ged: ged.cost,
        ged_norm: ged.cost as f64 / (a.sub.size + b.sub.size) as f64,
        ged_approx: ged.approximate,
    })
}

/// Labels many circuits. Circuit `i` uses seed `base_seed + i`; output order
/// follows input order whether or not the work runs in parallel.
pub fn build_labelpacks(circuits: &[(String, Aig)], config: &LabelConfig, parallel: bool) -> Result<Vec<LabelPack>> {
    let one = |(i, (name, aig)): (usize, &(String, Aig))| {
        let cfg = LabelConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        build_labelpack(name, aig, &cfg)
    };
    if parallel {
        circuits.par_iter().enumerate().map(one).collect()
    } else {
        circuits.iter().enumerate().map(one).collect()
    }
}

impl LabelPack {
    /// Recomputes every stored label from the stored primitives.
    pub fn verify(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Invalid(format!("{}: {what}", self.name)));
        let n = self.aig.len();
        if self.prob.len() != n || self.lev.len() != n || self.responses.len() != n {
            return bad("per-gate vectors have wrong length".into());
        }
        let prob = simulate(&self.aig, &self.workload, self.n_patterns, self.prob_seed)?.prob;
        if prob != self.prob {
            return bad("prob differs from simulation".into());
        }
        if self.lev != self.aig.levels() {
            return bad("levels differ".into());
        }
        let resp = simulate(
            &self.aig,
            &Workload::uniform(self.aig.pis().len()),
            self.n_patterns,
            self.tt_seed,
        )?
        .responses;
        if resp != self.responses {
            return bad("responses differ from simulation".into());
        }
        for p in &self.tt_pairs {
            if p.i >= n || p.j >= n {
                return bad(format!("tt pair ({}, {}) out of range", p.i, p.j));
            }
            let d = hamming_fraction(&self.responses[p.i], &self.responses[p.j])?;
            if (d - p.dist).abs() > 1e-12 || !(0.0..=1.0).contains(&p.dist) {
                return bad(format!("tt pair ({}, {}) distance", p.i, p.j));
            }
        }
        let reach = Reachability::new(&self.aig);
        for p in &self.con_pairs {
            if p.i >= n || p.j >= n || p.i == p.j || reach.pair_class(p.i, p.j) != p.class {
                return bad(format!("con pair ({}, {})", p.i, p.j));
            }
        }
        for (s, c) in self.cones.iter().enumerate() {
            let table = c.plan.table(&c.sub)?;
            if table.as_u64() != Some(c.tt64) {
                return bad(format!("cone {s} table"));
            }
            if c.sub.truth_table.as_ref() != Some(&exact_truth_table(&c.sub)?) {
                return bad(format!("cone {s} exact table"));
            }
            if c.sub.parent.iter().any(|&g| g >= n) {
                return bad(format!("cone {s} parent index"));
            }
        }
        for p in &self.graph_pairs {
            if p.s1 >= self.cones.len() || p.s2 >= self.cones.len() {
                return bad("graph pair index".into());
            }
            let again = graph_pair(&self.cones, p.s1, p.s2)?;
            if again != *p {
                return bad(format!("graph pair ({}, {})", p.s1, p.s2));
            }
        }
        for s in &self.in_samples {
            if s.cone >= self.cones.len() || s.gate >= n {
                return bad("in sample index".into());
            }
            let member = self.cones[s.cone].sub.contains_parent(s.gate);
            if u8::from(member) != s.bit {
                return bad(format!("in sample ({}, {})", s.gate, s.cone));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aig::generate_random_aig;

    #[test]
    fn empty_counts_give_bare_pack() {
        let aig = generate_random_aig(1, 4, 20).unwrap();
        let p = build_labelpack("c", &aig, &LabelConfig::empty(3)).unwrap();
        assert_eq!(p.prob.len(), aig.len());
        assert_eq!(p.lev.len(), aig.len());
        assert!(p.tt_pairs.is_empty() && p.con_pairs.is_empty() && p.cones.is_empty());
        assert!(p.graph_pairs.is_empty() && p.in_samples.is_empty());
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn single_gate_circuit_warns() {
        let aig = Aig::new(vec![GateKind::Pi], vec![vec![]]).unwrap();
        let p = build_labelpack("one", &aig, &LabelConfig::default()).unwrap();
        assert!(p.tt_pairs.is_empty());
        assert!(p.con_pairs.is_empty());
        assert!(p.graph_pairs.is_empty());
        assert!(!p.warnings.is_empty());
        p.verify().unwrap();
    }

    #[test]
    fn oversize_circuit_is_rejected() {
        let aig = generate_random_aig(1, 4, 40).unwrap();
        let cfg = LabelConfig {
            max_gates: 10,
            ..LabelConfig::default()
        };
        assert!(matches!(build_labelpack("big", &aig, &cfg), Err(Error::Capacity(_))));
    }

    #[test]
    fn packs_verify_and_are_deterministic() {
        let aig = generate_random_aig(5, 6, 50).unwrap();
        let cfg = LabelConfig {
            seed: 9,
            ..LabelConfig::default()
        };
        let a = build_labelpack("x", &aig, &cfg).unwrap();
        let b = build_labelpack("x", &aig, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        a.verify().unwrap();
        for c in &a.cones {
            c.plan.check(c.sub.num_pis()).unwrap();
        }
    }

    #[test]
    fn in_samples_are_balanced() {
        let aig = generate_random_aig(8, 6, 60).unwrap();
        let p = build_labelpack("x", &aig, &LabelConfig::default()).unwrap();
        let pos = p.in_samples.iter().filter(|s| s.bit == 1).count();
        assert_eq!(pos * 2, p.in_samples.len());
    }

    #[test]
    fn token_plan_checks_shape() {
        assert!(TokenPlan::Exact.check(6).is_ok());
        assert!(TokenPlan::Exact.check(5).is_err());
        assert!(TokenPlan::Pad { real: 3 }.check(3).is_ok());
        assert!(TokenPlan::Fix {
            fixings: vec![(7, true)]
        }
        .check(8)
        .is_err());
        assert!(TokenPlan::Fix {
            fixings: vec![(7, true), (6, false)]
        }
        .check(8)
        .is_ok());
    }
}
