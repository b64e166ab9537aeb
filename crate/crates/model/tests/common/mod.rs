// SPDX-License-Identifier: Apache-2.0

//! Circuit builders and invariant checkers shared by the model tests.

#![allow(dead_code)]

use std::collections::HashMap;

use gatelab_core::aig::{Aig, GateKind};
use gatelab_model::AreaPartition;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Coverage, size cap, ascending gate order, band order and overlap of
/// consecutive bands, checked from the area lists alone.
pub fn check_partition(aig: &Aig, p: &AreaPartition) {
    let mut covered = vec![false; aig.len()];
    for a in &p.areas {
        assert!(!a.is_empty() && a.len() <= p.max_gates);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        for &g in a {
            covered[g] = true;
        }
    }
    assert!(covered.iter().all(|&c| c), "some gate is in no area");
    assert!(p.bands.windows(2).all(|w| w[0] <= w[1]));
    let band_gates = |band: usize| -> Vec<usize> {
        let mut v: Vec<usize> = p
            .areas
            .iter()
            .zip(&p.bands)
            .filter(|(_, &x)| x == band)
            .flat_map(|(a, _)| a.iter().copied())
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let last = *p.bands.last().unwrap();
    for b in 0..last {
        let (lo, hi) = (band_gates(b), band_gates(b + 1));
        assert!(
            lo.iter().any(|g| hi.binary_search(g).is_ok()),
            "bands {b} and {} do not overlap",
            b + 1
        );
    }
}

/// Chain of `blocks` XOR blocks `x = a ^ (b & c)` over 16 inputs, built
/// from ANDs and inverters. Each block ends in `w` and `x = !w`, so the two
/// differ on every pattern. Returns the circuit and ten such pairs spread
/// along the chain.
pub fn xor_chain(blocks: usize, seed: u64) -> (Aig, Vec<(usize, usize)>) {
    let mut kinds = vec![GateKind::Pi; 16];
    let mut fanins: Vec<Vec<usize>> = vec![vec![]; 16];
    let mut push = |kind: GateKind, fi: Vec<usize>| {
        kinds.push(kind);
        fanins.push(fi);
        kinds.len() - 1
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inv: HashMap<usize, usize> = HashMap::new();
    let mut sig: Vec<usize> = (0..16).collect();
    let mut xors = Vec::new();
    for _ in 0..blocks {
        let n = sig.len();
        let pick = |r: &mut ChaCha8Rng| {
            sig[if n > 8 && r.gen_bool(0.6) {
                n - 1 - r.gen_range(0..8)
            } else {
                r.gen_range(0..n)
            }]
        };
        let a = pick(&mut rng);
        let mut b = pick(&mut rng);
        while b == a {
            b = pick(&mut rng);
        }
        let mut c = pick(&mut rng);
        while c == a || c == b {
            c = pick(&mut rng);
        }
        let t = push(GateKind::And, vec![b, c]);
        let nt = push(GateKind::Not, vec![t]);
        let na = match inv.get(&a) {
            Some(&x) => x,
            None => {
                let x = push(GateKind::Not, vec![a]);
                inv.insert(a, x);
                x
            }
        };
        let u = push(GateKind::And, vec![a, nt]);
        let v = push(GateKind::And, vec![na, t]);
        let nu = push(GateKind::Not, vec![u]);
        let nv = push(GateKind::Not, vec![v]);
        let w = push(GateKind::And, vec![nu, nv]);
        let x = push(GateKind::Not, vec![w]);
        inv.insert(x, w);
        sig.push(x);
        xors.push((w, x));
    }
    let pairs = (0..10).map(|k| xors[xors.len() * (2 * k + 1) / 20]).collect();
    (Aig::new(kinds, fanins).unwrap(), pairs)
}
