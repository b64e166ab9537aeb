// SPDX-License-Identifier: Apache-2.0

//! Fanin cones of bounded hop count and their canonical labeling.
//!
//! Canonical labeling runs color refinement from an initial partition keyed
//! by (local level, gate kind), then explores every individualization branch
//! and keeps the smallest certificate. Cones are small enough that the full
//! search tree stays cheap.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::aig::{Aig, GateKind};
use crate::error::{arg, Result};
use crate::sim::TruthTable;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGraph {
    /// Parent gate index of every local node.
    pub parent: Vec<usize>,
    pub aig: Aig,
    pub root: usize,
    /// Local PI indices in truth-table order (input 0 is the most
    /// significant bit of a row index).
    pub canonical_pi_order: Vec<usize>,
    pub size: usize,
    pub depth: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_table: Option<TruthTable>,
}

impl SubGraph {
    /// Wraps a local graph. `root` must be the only sink.
    pub fn new(aig: Aig, parent: Vec<usize>, root: usize) -> Result<Self> {
        if parent.len() != aig.len() {
            return arg("parent map length differs from node count");
        }
        if root >= aig.len() {
            return arg("root out of range");
        }
        if aig.pos() != [root] {
            return arg("every node of a sub-graph must lead to its root");
        }
        Ok(Self {
            size: aig.len(),
            depth: aig.level(root),
            canonical_pi_order: aig.pis().to_vec(),
            parent,
            aig,
            root,
            truth_table: None,
        })
    }

    pub fn num_pis(&self) -> usize {
        self.aig.pis().len()
    }

    /// Structure-only serialization: kinds and sorted fanins in node order.
    /// Equal keys for canonical forms mean isomorphic cones.
    pub fn structure_key(&self) -> String {
        let mut s = String::with_capacity(self.size * 6);
        for g in 0..self.aig.len() {
            let mut fi = self.aig.fanins(g).to_vec();
            fi.sort_unstable();
            s.push(match self.aig.kind(g) {
                GateKind::Pi => 'i',
                GateKind::And => 'a',
                GateKind::Not => 'n',
            });
            for f in fi {
                s.push_str(&f.to_string());
                s.push(',');
            }
            s.push(';');
        }
        s
    }

    pub fn contains_parent(&self, g: usize) -> bool {
        self.parent.contains(&g)
    }
}

/// Parent gates within `hops - 1` edges upstream of `root`, ascending, with
/// the subset that must become local inputs (frontier gates that are not
/// already PIs).
pub fn cone_nodes(aig: &Aig, root: usize, hops: usize) -> (Vec<usize>, Vec<bool>) {
    let reach = hops.saturating_sub(1);
    let mut dist = vec![usize::MAX; aig.len()];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut nodes = vec![root];
    while let Some(g) = queue.pop_front() {
        if dist[g] == reach {
            continue;
        }
        for &f in aig.fanins(g) {
            if dist[f] == usize::MAX {
                dist[f] = dist[g] + 1;
                nodes.push(f);
                queue.push_back(f);
            }
        }
    }
    nodes.sort_unstable();
    let frontier = nodes
        .iter()
        .map(|&g| dist[g] == reach && aig.kind(g) != GateKind::Pi)
        .collect();
    (nodes, frontier)
}

/// The `hops`-level fanin cone of `root` (the root counts as the first
/// level), canonically reindexed. Gates on the last level are re-typed as
/// local inputs, which bounds a cone over 2-input gates to `2^(hops-1)`
/// inputs and `2^hops - 1` nodes.
pub fn extract_khop_cone(aig: &Aig, root: usize, hops: usize) -> Result<SubGraph> {
    if hops < 1 {
        return arg("cone extraction needs hops >= 1");
    }
    if root >= aig.len() {
        return arg(format!("root {root} out of range {}", aig.len()));
    }
    let (nodes, frontier) = cone_nodes(aig, root, hops);
    let mut local = vec![usize::MAX; aig.len()];
    for (i, &g) in nodes.iter().enumerate() {
        local[g] = i;
    }
    let mut kinds = Vec::with_capacity(nodes.len());
    let mut fanins = Vec::with_capacity(nodes.len());
    for (i, &g) in nodes.iter().enumerate() {
        if frontier[i] || aig.kind(g) == GateKind::Pi {
            kinds.push(GateKind::Pi);
            fanins.push(Vec::new());
        } else {
            kinds.push(aig.kind(g));
            fanins.push(aig.fanins(g).iter().map(|&f| local[f]).collect());
        }
    }
    let sub = SubGraph::new(Aig::new(kinds, fanins)?, nodes, local[root])?;
    canonical_form(&sub)
}

type Certificate = Vec<(u8, Vec<usize>)>;

struct Canonizer<'a> {
    aig: &'a Aig,
    parent: &'a [usize],
    best: Option<(Certificate, Vec<usize>, Vec<usize>)>,
}

impl Canonizer<'_> {
    fn refine(&self, cells: &mut Vec<Vec<usize>>) {
        let n = self.aig.len();
        let mut cell_of = vec![0usize; n];
        loop {
            for (c, cell) in cells.iter().enumerate() {
                for &v in cell {
                    cell_of[v] = c;
                }
            }
            let mut next = Vec::with_capacity(cells.len());
            for cell in cells.iter() {
                if cell.len() == 1 {
                    next.push(cell.clone());
                    continue;
                }
                let mut keyed: Vec<((Vec<usize>, Vec<usize>), usize)> = cell
                    .iter()
                    .map(|&v| {
                        let mut fi: Vec<usize> = self.aig.fanins(v).iter().map(|&f| cell_of[f]).collect();
                        let mut fo: Vec<usize> = self.aig.fanouts(v).iter().map(|&f| cell_of[f]).collect();
                        fi.sort_unstable();
                        fo.sort_unstable();
                        ((fi, fo), v)
                    })
                    .collect();
                keyed.sort_by(|a, b| a.0.cmp(&b.0));
                let mut start = 0;
                for i in 1..=keyed.len() {
                    if i == keyed.len() || keyed[i].0 != keyed[start].0 {
                        next.push(keyed[start..i].iter().map(|(_, v)| *v).collect());
                        start = i;
                    }
                }
            }
            let split = next.len() != cells.len();
            *cells = next;
            if !split {
                return;
            }
        }
    }

    fn search(&mut self, mut cells: Vec<Vec<usize>>) {
        self.refine(&mut cells);
        let target = cells.iter().position(|c| c.len() > 1);
        let Some(t) = target else {
            self.leaf(&cells);
            return;
        };
        for pick in 0..cells[t].len() {
            let mut branch = Vec::with_capacity(cells.len() + 1);
            branch.extend_from_slice(&cells[..t]);
            let v = cells[t][pick];
            branch.push(vec![v]);
            branch.push(cells[t].iter().copied().filter(|&u| u != v).collect());
            branch.extend_from_slice(&cells[t + 1..]);
            self.search(branch);
        }
    }

    fn leaf(&mut self, cells: &[Vec<usize>]) {
        let order: Vec<usize> = cells.iter().map(|c| c[0]).collect();
        let mut label = vec![0usize; order.len()];
        for (i, &v) in order.iter().enumerate() {
            label[v] = i;
        }
        let cert: Certificate = order
            .iter()
            .map(|&v| {
                let mut fi: Vec<usize> = self.aig.fanins(v).iter().map(|&f| label[f]).collect();
                fi.sort_unstable();
                (self.aig.kind(v).code(), fi)
            })
            .collect();
        let tiebreak: Vec<usize> = order.iter().map(|&v| self.parent[v]).collect();
        let better = match &self.best {
            None => true,
            Some((c, t, _)) => (&cert, &tiebreak) < (c, t),
        };
        if better {
            self.best = Some((cert, tiebreak, order));
        }
    }
}

/// Canonically relabels a sub-graph. Isomorphic inputs produce identical
/// structure keys; among automorphic labelings the one listing parent gates
/// in lexicographically smallest order wins, which makes the map idempotent.
/// Any attached truth table is recomputed for the new input order.
pub fn canonical_form(sub: &SubGraph) -> Result<SubGraph> {
    let aig = &sub.aig;
    let n = aig.len();
    let mut keyed: Vec<((u32, u8), usize)> = (0..n).map(|v| ((aig.level(v), aig.kind(v).code()), v)).collect();
    keyed.sort();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for (i, (key, v)) in keyed.iter().enumerate() {
        if i == 0 || keyed[i - 1].0 != *key {
            cells.push(vec![*v]);
        } else {
            cells.last_mut().unwrap().push(*v);
        }
    }
    let mut canon = Canonizer {
        aig,
        parent: &sub.parent,
        best: None,
    };
    canon.search(cells);
    let (_, _, order) = canon.best.expect("search visits at least one leaf");

    let mut label = vec![0usize; n];
    for (i, &v) in order.iter().enumerate() {
        label[v] = i;
    }
    let mut kinds = Vec::with_capacity(n);
    let mut fanins = Vec::with_capacity(n);
    let mut parent = Vec::with_capacity(n);
    for &v in &order {
        kinds.push(aig.kind(v));
        let mut fi: Vec<usize> = aig.fanins(v).iter().map(|&f| label[f]).collect();
        fi.sort_unstable();
        fanins.push(fi);
        parent.push(sub.parent[v]);
    }
    let mut out = SubGraph::new(Aig::new(kinds, fanins)?, parent, label[sub.root])?;
    if sub.truth_table.is_some() {
        out.truth_table = Some(crate::sim::exact_truth_table(&out)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aig::generate_random_aig;
    use GateKind::*;

    /// Full binary AND tree over 8 PIs: 15 nodes, root last.
    fn and_tree() -> Aig {
        let mut kinds = vec![Pi; 8];
        let mut fanins = vec![vec![]; 8];
        let mut layer: Vec<usize> = (0..8).collect();
        while layer.len() > 1 {
            let mut next = Vec::new();
            for pair in layer.chunks(2) {
                next.push(kinds.len());
                kinds.push(And);
                fanins.push(vec![pair[0], pair[1]]);
            }
            layer = next;
        }
        Aig::new(kinds, fanins).unwrap()
    }

    #[test]
    fn pi_root_is_single_node() {
        let aig = generate_random_aig(4, 3, 10).unwrap();
        let s = extract_khop_cone(&aig, 0, 4).unwrap();
        assert_eq!(s.size, 1);
        assert_eq!(s.depth, 0);
        assert_eq!(s.parent, vec![0]);
    }

    #[test]
    fn binary_tree_hits_the_bound() {
        let aig = and_tree();
        let s = extract_khop_cone(&aig, 14, 4).unwrap();
        assert_eq!(s.num_pis(), 8);
        assert_eq!(s.size, 15);
        assert_eq!(s.depth, 3);
        assert_eq!(s.root, 14);
    }

    #[test]
    fn frontier_gates_become_inputs() {
        let aig = and_tree();
        let s = extract_khop_cone(&aig, 14, 2).unwrap();
        assert_eq!(s.size, 3);
        assert_eq!(s.num_pis(), 2);
        let mut p = s.parent.clone();
        p.sort();
        assert_eq!(p, vec![12, 13, 14]);
    }

    #[test]
    fn diamond_counts_shared_node_once() {
        // r = AND(NOT c, AND(c, d)) with c shared.
        let aig = Aig::new(
            vec![Pi, Pi, Not, And, And],
            vec![vec![], vec![], vec![0], vec![0, 1], vec![2, 3]],
        )
        .unwrap();
        let s = extract_khop_cone(&aig, 4, 4).unwrap();
        assert_eq!(s.size, 5);
        assert!(s.size < 15);
        assert_eq!(s.num_pis(), 2);
    }

    #[test]
    fn canonical_form_is_idempotent() {
        for seed in 0..30 {
            let aig = generate_random_aig(seed, 5, 30).unwrap();
            let root = aig.len() - 1;
            let s = extract_khop_cone(&aig, root, 4).unwrap();
            let again = canonical_form(&s).unwrap();
            assert_eq!(again, s);
        }
    }

    #[test]
    fn pis_come_first_and_root_last() {
        let aig = generate_random_aig(11, 6, 50).unwrap();
        for root in aig.len() - 10..aig.len() {
            let s = extract_khop_cone(&aig, root, 4).unwrap();
            let k = s.num_pis();
            assert_eq!(s.canonical_pi_order, (0..k).collect::<Vec<_>>());
            assert_eq!(s.root, s.size - 1);
            assert_eq!(s.parent[s.root], root);
        }
    }
}
