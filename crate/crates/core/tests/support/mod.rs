// SPDX-License-Identifier: Apache-2.0

//! Brute-force reference implementations shared by the integration tests.
//! Each one works from first principles and never calls the code it checks.

#![allow(dead_code)]

use std::collections::HashMap;

use gatelab_core::aig::{Aig, GateKind};
use gatelab_core::cone::SubGraph;
use gatelab_core::ged::LabeledGraph;
use rand::seq::SliceRandom;
use rand::Rng;

/// Depth-first cycle search over the fanin relation, without assuming any
/// storage order.
pub fn has_cycle(aig: &Aig) -> bool {
    fn visit(aig: &Aig, g: usize, state: &mut [u8]) -> bool {
        match state[g] {
            1 => return true,
            2 => return false,
            _ => {}
        }
        state[g] = 1;
        for &f in aig.fanins(g) {
            if visit(aig, f, state) {
                return true;
            }
        }
        state[g] = 2;
        false
    }
    let mut state = vec![0u8; aig.len()];
    (0..aig.len()).any(|g| visit(aig, g, &mut state))
}

/// Transitive closure by Floyd–Warshall: `r[i][j]` iff a path `i -> j` of
/// length at least one exists.
pub fn closure(aig: &Aig) -> Vec<Vec<bool>> {
    let n = aig.len();
    let mut r = vec![vec![false; n]; n];
    for g in 0..n {
        for &f in aig.fanins(g) {
            r[f][g] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

/// Path search from `from` to `to` following fanout edges found by scanning
/// every gate's fanin list.
pub fn path_exists(aig: &Aig, from: usize, to: usize) -> bool {
    let mut stack = vec![from];
    let mut seen = vec![false; aig.len()];
    while let Some(u) = stack.pop() {
        for g in 0..aig.len() {
            if aig.fanins(g).contains(&u) && !seen[g] {
                if g == to {
                    return true;
                }
                seen[g] = true;
                stack.push(g);
            }
        }
    }
    false
}

pub fn brute_mask_row(aig: &Aig, q: usize) -> Vec<bool> {
    (0..aig.len())
        .map(|k| k == q || path_exists(aig, k, q) || path_exists(aig, q, k))
        .collect()
}

/// Recursive evaluation of one gate under a PI assignment in PI-list order.
pub fn eval_gate(aig: &Aig, g: usize, inputs: &[bool], memo: &mut HashMap<usize, bool>) -> bool {
    if let Some(v) = memo.get(&g) {
        return *v;
    }
    let v = match aig.kind(g) {
        GateKind::Pi => inputs[aig.pis().iter().position(|&p| p == g).unwrap()],
        GateKind::Not => !eval_gate(aig, aig.fanins(g)[0], inputs, memo),
        GateKind::And => {
            let (a, b) = (aig.fanins(g)[0], aig.fanins(g)[1]);
            eval_gate(aig, a, inputs, memo) & eval_gate(aig, b, inputs, memo)
        }
    };
    memo.insert(g, v);
    v
}

/// Row `m` assigns PI `i` the bit `k - 1 - i` of `m`.
pub fn row_inputs(k: usize, m: usize) -> Vec<bool> {
    (0..k).map(|i| (m >> (k - 1 - i)) & 1 == 1).collect()
}

pub fn cone_table(sub: &SubGraph) -> Vec<bool> {
    let k = sub.num_pis();
    (0..1usize << k)
        .map(|m| eval_gate(&sub.aig, sub.root, &row_inputs(k, m), &mut HashMap::new()))
        .collect()
}

/// Evaluates a cone with some inputs tied to constants; the free inputs keep
/// their relative order and index the rows.
pub fn substituted_table(sub: &SubGraph, fixings: &[(usize, bool)]) -> Vec<bool> {
    let k = sub.num_pis();
    let free: Vec<usize> = (0..k).filter(|i| !fixings.iter().any(|(f, _)| f == i)).collect();
    let kf = free.len();
    (0..1usize << kf)
        .map(|m| {
            let mut inputs = vec![false; k];
            for &(i, v) in fixings {
                inputs[i] = v;
            }
            for (j, &i) in free.iter().enumerate() {
                inputs[i] = (m >> (kf - 1 - j)) & 1 == 1;
            }
            eval_gate(&sub.aig, sub.root, &inputs, &mut HashMap::new())
        })
        .collect()
}

/// Evaluates an ASCII AIGER document literal by literal.
pub fn eval_aag(text: &str, inputs: &[bool]) -> Vec<bool> {
    let mut lines = text.lines();
    let h: Vec<usize> = lines
        .next()
        .unwrap()
        .split_whitespace()
        .skip(1)
        .map(|t| t.parse().unwrap())
        .collect();
    let (i, o, a) = (h[1], h[3], h[4]);
    let mut val: HashMap<usize, bool> = HashMap::new();
    for (n, l) in lines.by_ref().take(i).enumerate() {
        val.insert(l.trim().parse::<usize>().unwrap() / 2, inputs[n]);
    }
    let outs: Vec<usize> = lines.by_ref().take(o).map(|l| l.trim().parse().unwrap()).collect();
    let ands: Vec<Vec<usize>> = lines
        .take(a)
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
        .collect();
    fn lit(l: usize, val: &mut HashMap<usize, bool>, ands: &[Vec<usize>]) -> bool {
        let v = l / 2;
        let x = if v == 0 {
            false
        } else if let Some(x) = val.get(&v) {
            *x
        } else {
            let d = ands.iter().find(|d| d[0] / 2 == v).unwrap();
            let x = lit(d[1], val, ands) & lit(d[2], val, ands);
            val.insert(v, x);
            x
        };
        x ^ (l % 2 == 1)
    }
    outs.iter().map(|&l| lit(l, &mut val, &ands)).collect()
}

/// Backtracking isomorphism test for small graphs: node kinds and fanin
/// multisets must correspond under a bijection.
pub fn isomorphic(a: &Aig, b: &Aig) -> bool {
    let n = a.len();
    if n != b.len() {
        return false;
    }
    let edges = |g: &Aig| -> Vec<Vec<bool>> {
        let mut e = vec![vec![false; g.len()]; g.len()];
        for v in 0..g.len() {
            for &f in g.fanins(v) {
                e[f][v] = true;
            }
        }
        e
    };
    let (ea, eb) = (edges(a), edges(b));
    fn extend(
        t: usize,
        map: &mut Vec<usize>,
        used: &mut [bool],
        a: &Aig,
        b: &Aig,
        ea: &[Vec<bool>],
        eb: &[Vec<bool>],
    ) -> bool {
        let n = a.len();
        if t == n {
            return true;
        }
        for c in 0..n {
            if used[c] || a.kind(t) != b.kind(c) {
                continue;
            }
            let ok = (0..t).all(|w| ea[w][t] == eb[map[w]][c] && ea[t][w] == eb[c][map[w]]);
            if ok {
                used[c] = true;
                map.push(c);
                if extend(t + 1, map, used, a, b, ea, eb) {
                    return true;
                }
                map.pop();
                used[c] = false;
            }
        }
        false
    }
    extend(0, &mut Vec::new(), &mut vec![false; n], a, b, &ea, &eb)
}

/// Random topological relabeling of an AIG. Returns the new graph and the
/// map from old to new index.
pub fn shuffle_topological(aig: &Aig, rng: &mut impl Rng) -> (Aig, Vec<usize>) {
    let n = aig.len();
    let mut indeg: Vec<usize> = (0..n).map(|g| aig.fanins(g).len()).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&g| indeg[g] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while !ready.is_empty() {
        let pick = rng.gen_range(0..ready.len());
        let g = ready.swap_remove(pick);
        order.push(g);
        for h in 0..n {
            for &f in aig.fanins(h) {
                if f == g {
                    indeg[h] -= 1;
                    if indeg[h] == 0 {
                        ready.push(h);
                    }
                }
            }
        }
    }
    let mut new_of = vec![0; n];
    for (i, &g) in order.iter().enumerate() {
        new_of[g] = i;
    }
    let kinds = order.iter().map(|&g| aig.kind(g)).collect();
    let fanins = order
        .iter()
        .map(|&g| {
            let mut f: Vec<usize> = aig.fanins(g).iter().map(|&x| new_of[x]).collect();
            f.shuffle(rng);
            f
        })
        .collect();
    (Aig::new(kinds, fanins).unwrap(), new_of)
}

pub fn shuffle_subgraph(sub: &SubGraph, rng: &mut impl Rng) -> SubGraph {
    let (aig, new_of) = shuffle_topological(&sub.aig, rng);
    let mut parent = vec![0; sub.size];
    for (old, &new) in new_of.iter().enumerate() {
        parent[new] = sub.parent[old];
    }
    SubGraph::new(aig, parent, new_of[sub.root]).unwrap()
}

/// Exhaustive edit distance: every partial injective map from the nodes of
/// `a` into the nodes of `b`, each costed from scratch.
pub fn brute_ged(a: &LabeledGraph, b: &LabeledGraph) -> usize {
    fn cost(a: &LabeledGraph, b: &LabeledGraph, map: &[Option<usize>]) -> usize {
        let mut c = 0;
        let mut hit = vec![false; b.len()];
        for (u, m) in map.iter().enumerate() {
            match m {
                None => c += 1,
                Some(v) => {
                    hit[*v] = true;
                    c += usize::from(a.label(u) != b.label(*v));
                }
            }
        }
        c += hit.iter().filter(|h| !**h).count();
        let mut covered = vec![vec![false; b.len()]; b.len()];
        for u in 0..a.len() {
            for w in 0..a.len() {
                if a.edge(u, w) {
                    match (map[u], map[w]) {
                        (Some(x), Some(y)) if b.edge(x, y) => covered[x][y] = true,
                        _ => c += 1,
                    }
                }
            }
        }
        for x in 0..b.len() {
            for y in 0..b.len() {
                if b.edge(x, y) && !covered[x][y] {
                    c += 1;
                }
            }
        }
        c
    }
    fn rec(
        t: usize,
        map: &mut Vec<Option<usize>>,
        used: &mut [bool],
        a: &LabeledGraph,
        b: &LabeledGraph,
        best: &mut usize,
    ) {
        if t == a.len() {
            *best = (*best).min(cost(a, b, map));
            return;
        }
        map.push(None);
        rec(t + 1, map, used, a, b, best);
        map.pop();
        for v in 0..b.len() {
            if !used[v] {
                used[v] = true;
                map.push(Some(v));
                rec(t + 1, map, used, a, b, best);
                map.pop();
                used[v] = false;
            }
        }
    }
    let mut best = usize::MAX;
    rec(0, &mut Vec::new(), &mut vec![false; b.len()], a, b, &mut best);
    best
}

/// Random labelled digraph on `n` nodes with labels in `0..3`.
pub fn random_labeled_graph(n: usize, rng: &mut impl Rng) -> LabeledGraph {
    let labels = (0..n).map(|_| rng.gen_range(0..3u8)).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen_bool(0.25) {
                edges.push((u, v));
            }
        }
    }
    LabeledGraph::new(labels, &edges)
}

/// Cone graph of a random circuit, redrawn until its size is within
/// `min..=max` nodes.
pub fn random_cone(rng: &mut impl Rng, min: usize, max: usize, hops: usize) -> SubGraph {
    loop {
        let n_pis = rng.gen_range(2..=8);
        let n_gates = rng.gen_range(4..=40);
        let aig = gatelab_core::generate_random_aig(rng.gen(), n_pis, n_gates).unwrap();
        let root = rng.gen_range(0..aig.len());
        let sub = gatelab_core::extract_khop_cone(&aig, root, hops).unwrap();
        if (min..=max).contains(&sub.size) {
            return sub;
        }
    }
}
