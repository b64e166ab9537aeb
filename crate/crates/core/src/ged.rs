// SPDX-License-Identifier: Apache-2.0

//! Graph edit distance between small directed, node-labelled graphs with
//! unit costs: node insertion, deletion and relabel, edge insertion and
//! deletion.

use serde::{Deserialize, Serialize};

use crate::aig::Aig;
use crate::cone::SubGraph;
use crate::error::{Error, Result};

pub const MAX_GED_NODES: usize = 15;
/// Above this node count the search switches to a beam-limited bound.
pub const EXACT_GED_NODES: usize = 8;
const BEAM_WIDTH: usize = 96;
const EPS: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GedValue {
    pub cost: u32,
    /// True when the value is an upper bound from beam search.
    pub approximate: bool,
}

/// Labelled digraph in adjacency-matrix form.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    labels: Vec<u8>,
    adj: Vec<bool>,
}

impl LabeledGraph {
    pub fn new(labels: Vec<u8>, edges: &[(usize, usize)]) -> Self {
        let n = labels.len();
        let mut adj = vec![false; n * n];
        for &(u, v) in edges {
            adj[u * n + v] = true;
        }
        Self { labels, adj }
    }

    pub fn from_aig(aig: &Aig) -> Self {
        let labels = aig.kinds().iter().map(|k| k.code()).collect();
        let edges: Vec<(usize, usize)> = (0..aig.len())
            .flat_map(|g| aig.fanins(g).iter().map(move |&f| (f, g)))
            .collect();
        Self::new(labels, &edges)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, u: usize) -> u8 {
        self.labels[u]
    }

    #[inline]
    pub fn edge(&self, u: usize, v: usize) -> bool {
        self.adj[u * self.len() + v]
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|e| **e).count()
    }
}

struct Search<'a> {
    g1: &'a LabeledGraph,
    g2: &'a LabeledGraph,
}

impl Search<'_> {
    /// Cost added by deciding the image of `g1` node `t`, given images of
    /// nodes `0..t`.
    fn step_cost(&self, map: &[usize], t: usize, img: usize) -> usize {
        let (g1, g2) = (self.g1, self.g2);
        let mut c = if img == EPS {
            1
        } else {
            usize::from(g1.label(t) != g2.label(img))
        };
        for (w, &iw) in map.iter().enumerate().take(t) {
            for (a1, a2) in [((t, w), (img, iw)), ((w, t), (iw, img))] {
                let e1 = g1.edge(a1.0, a1.1);
                if img == EPS || iw == EPS {
                    c += usize::from(e1);
                } else {
                    c += usize::from(e1 != g2.edge(a2.0, a2.1));
                }
            }
        }
        c
    }

    /// Insertion cost for `g2` nodes left unused by a complete map.
    fn completion_cost(&self, used: &[bool]) -> usize {
        let g2 = self.g2;
        let n2 = g2.len();
        let mut c = used.iter().filter(|u| !**u).count();
        for u in 0..n2 {
            for v in 0..n2 {
                if g2.edge(u, v) && (!used[u] || !used[v]) {
                    c += 1;
                }
            }
        }
        c
    }

    /// Admissible bound from label multisets of the undecided nodes.
    fn lower_bound(&self, t: usize, used: &[bool]) -> usize {
        let mut c1 = [0usize; 4];
        let mut c2 = [0usize; 4];
        for u in t..self.g1.len() {
            c1[self.g1.label(u) as usize & 3] += 1;
        }
        let mut r2 = 0;
        for (v, &u) in used.iter().enumerate() {
            if !u {
                c2[self.g2.label(v) as usize & 3] += 1;
                r2 += 1;
            }
        }
        let r1 = self.g1.len() - t;
        let common: usize = (0..4).map(|l| c1[l].min(c2[l])).sum();
        r1.max(r2) - common
    }

    fn exact(&self, upper: usize) -> usize {
        let mut best = upper;
        let mut map = vec![EPS; self.g1.len()];
        let mut used = vec![false; self.g2.len()];
        self.dfs(0, 0, &mut map, &mut used, &mut best);
        best
    }

    fn dfs(&self, t: usize, cost: usize, map: &mut [usize], used: &mut [bool], best: &mut usize) {
        if t == self.g1.len() {
            let total = cost + self.completion_cost(used);
            if total < *best {
                *best = total;
            }
            return;
        }
        let mut options: Vec<(usize, usize)> = (0..self.g2.len())
            .filter(|&v| !used[v])
            .chain(std::iter::once(EPS))
            .map(|img| (self.step_cost(map, t, img), img))
            .collect();
        options.sort();
        for (c, img) in options {
            let next = cost + c;
            if img != EPS {
                used[img] = true;
            }
            if next + self.lower_bound(t + 1, used) < *best {
                map[t] = img;
                self.dfs(t + 1, next, map, used, best);
                map[t] = EPS;
            }
            if img != EPS {
                used[img] = false;
            }
        }
    }

    fn beam(&self, width: usize) -> usize {
        let mut states: Vec<(usize, Vec<usize>, Vec<bool>)> = vec![(0, Vec::new(), vec![false; self.g2.len()])];
        for t in 0..self.g1.len() {
            let mut next = Vec::new();
            for (cost, map, used) in &states {
                let mut full = map.clone();
                full.push(EPS);
                for img in (0..self.g2.len()).filter(|&v| !used[v]).chain(std::iter::once(EPS)) {
                    let c = cost + self.step_cost(&full, t, img);
                    let mut m = map.clone();
                    m.push(img);
                    let mut u = used.clone();
                    if img != EPS {
                        u[img] = true;
                    }
                    let h = self.lower_bound(t + 1, &u);
                    next.push((c + h, c, m, u));
                }
            }
            next.sort_by(|a, b| (a.0, a.1, &a.2).cmp(&(b.0, b.1, &b.2)));
            next.truncate(width);
            states = next.into_iter().map(|(_, c, m, u)| (c, m, u)).collect();
        }
        states
            .iter()
            .map(|(c, _, used)| c + self.completion_cost(used))
            .min()
            .unwrap_or(0)
    }
}

/// Edit distance between two labelled graphs: exact when both have at most
/// [`EXACT_GED_NODES`] nodes, otherwise the better of two beam searches.
pub fn labeled_ged(a: &LabeledGraph, b: &LabeledGraph) -> Result<GedValue> {
    for g in [a, b] {
        if g.len() > MAX_GED_NODES {
            return Err(Error::Capacity(format!(
                "graph of {} nodes exceeds edit-distance limit {MAX_GED_NODES}",
                g.len()
            )));
        }
    }
    let fwd = Search { g1: a, g2: b };
    let bwd = Search { g1: b, g2: a };
    let beam = fwd.beam(BEAM_WIDTH).min(bwd.beam(BEAM_WIDTH));
    if a.len().max(b.len()) <= EXACT_GED_NODES {
        // The larger graph drives the search so deletions are decided early.
        let exact = if a.len() >= b.len() {
            fwd.exact(beam + 1)
        } else {
            bwd.exact(beam + 1)
        };
        Ok(GedValue {
            cost: exact as u32,
            approximate: false,
        })
    } else {
        Ok(GedValue {
            cost: beam as u32,
            approximate: true,
        })
    }
}

pub fn graph_edit_distance(s1: &SubGraph, s2: &SubGraph) -> Result<GedValue> {
    if s1.structure_key() == s2.structure_key() {
        for s in [s1, s2] {
            if s.size > MAX_GED_NODES {
                return Err(Error::Capacity(format!(
                    "graph of {} nodes exceeds edit-distance limit {MAX_GED_NODES}",
                    s.size
                )));
            }
        }
        return Ok(GedValue {
            cost: 0,
            approximate: false,
        });
    }
    labeled_ged(&LabeledGraph::from_aig(&s1.aig), &LabeledGraph::from_aig(&s2.aig))
}
