// SPDX-License-Identifier: Apache-2.0

//! Randomized compositions shared by the gradient tests.

#![allow(dead_code)]

use gatelab_tensor::gradcheck::max_relative_error;
use gatelab_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const FLOOR: f64 = 1e-3;

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Masked attention, a residual MLP and all losses, composed at random.
pub fn attention_composite(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..6);
    let d = 4;
    let heads = 2;
    let dh = d / heads;
    let mut allow = vec![false; n * n];
    for q in 0..n {
        for k in 0..n {
            allow[q * n + k] = q == k || rng.gen_bool(0.5);
        }
    }
    let inputs: Vec<Tensor<f64>> = vec![
        randn(&[n, d], &mut rng),
        randn(&[d, d], &mut rng),
        randn(&[d, d], &mut rng),
        randn(&[d, d], &mut rng),
        randn(&[d, d], &mut rng),
        randn(&[1, d], &mut rng),
        randn(&[1, d], &mut rng),
        randn(&[d, 3], &mut rng),
        randn(&[1, 3], &mut rng),
    ];
    let classes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let targets: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    max_relative_error(&inputs, H, FLOOR, move |t, v| {
        let q = t.matmul(v[0], v[1]).unwrap();
        let k = t.matmul(v[0], v[2]).unwrap();
        let val = t.matmul(v[0], v[3]).unwrap();
        let mut outs = Vec::new();
        for h in 0..heads {
            let qh = t.slice_cols(q, h * dh, dh).unwrap();
            let kh = t.slice_cols(k, h * dh, dh).unwrap();
            let vh = t.slice_cols(val, h * dh, dh).unwrap();
            let s = t.matmul_t(qh, kh, false, true).unwrap();
            let s = t.scale(s, 1.0 / (dh as f64).sqrt());
            let p = t.softmax_masked(s, &allow).unwrap();
            outs.push(t.matmul(p, vh).unwrap());
        }
        let cat = t.concat_cols(&outs).unwrap();
        let o = t.matmul(cat, v[4]).unwrap();
        let x = t.add(v[0], o).unwrap();
        let y = t.layer_norm(x, v[5], v[6]).unwrap();
        let hdn = t.relu(y);
        let logits = t.matmul(hdn, v[7]).unwrap();
        let logits = t.add_row(logits, v[8]).unwrap();
        let ce = t.cross_entropy(logits, &classes).unwrap();
        let sp = t.softplus(logits);
        let l1 = t.l1_loss(sp, &targets).unwrap();
        let bce = t.bce_with_logits(logits, &targets).unwrap();
        let s = t.add(ce, l1).unwrap();
        t.add(s, bce).unwrap()
    })
}
