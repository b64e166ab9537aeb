// SPDX-License-Identifier: Apache-2.0

mod support;

use gatelab_tensor::gradcheck::max_relative_error;
use gatelab_tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

fn check(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let e = max_relative_error(inputs, H, FLOOR, f);
    assert!(e < TOL, "relative error {e}");
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&[3, 4], &mut rng);
    let b = randn(&[3, 4], &mut rng);
    check(&[a, b], |t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let d = t.sub(s, v[1]).unwrap();
        let m = t.mul(d, v[1]).unwrap();
        let x = t.tanh(m);
        let y = t.sigmoid(x);
        let z = t.softplus(y);
        let w = t.affine(z, 1.7, -0.3);
        t.mean(w)
    });
}

#[test]
fn matmul_all_layouts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = randn(&[3, 5], &mut rng);
    let b = randn(&[5, 2], &mut rng);
    let c = randn(&[4, 5], &mut rng);
    let d = randn(&[3, 6], &mut rng);
    check(&[a, b, c, d], |t, v| {
        let ab = t.matmul(v[0], v[1]).unwrap();
        let act = t.matmul_t(v[0], v[2], false, true).unwrap();
        let atd = t.matmul_t(v[0], v[3], true, false).unwrap();
        let s1 = t.sum(ab);
        let s2 = t.mean(act);
        let sq = t.mul(atd, atd).unwrap();
        let s3 = t.sum(sq);
        let s = t.add(s1, s2).unwrap();
        t.add(s, s3).unwrap()
    });
}

#[test]
fn structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = randn(&[3, 4], &mut rng);
    let b = randn(&[3, 2], &mut rng);
    let bias = randn(&[1, 6], &mut rng);
    let w = randn(&[6, 6], &mut rng);
    check(&[a, b, bias, w], |t, v| {
        let cat = t.concat_cols(&[v[0], v[1]]).unwrap();
        let moved = t.add_row(cat, v[2]).unwrap();
        let rows = t.concat_rows(&[moved, v[3]]).unwrap();
        let sl = t.slice_cols(rows, 1, 4).unwrap();
        let sel = t.select_rows(&[sl, v[0]], &[(0, 8), (1, 2), (0, 0), (0, 8)]).unwrap();
        let mr = t.mean_rows(sel);
        let sq = t.mul(mr, mr).unwrap();
        t.sum(sq)
    });
}

#[test]
fn layer_norm_and_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&[4, 5], &mut rng);
    let g = randn(&[1, 5], &mut rng);
    let b = randn(&[1, 5], &mut rng);
    let target: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
    let classes = [0usize, 4, 2, 1];
    check(&[x, g, b], move |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
        let p = t.sigmoid(y);
        let l1 = t.bce_loss(p, &target).unwrap();
        let l2 = t.bce_with_logits(y, &target).unwrap();
        let l3 = t.cross_entropy(y, &classes).unwrap();
        let l4 = t.l1_loss(y, &target).unwrap();
        let s = t.add(l1, l2).unwrap();
        let s = t.add(s, l3).unwrap();
        t.add(s, l4).unwrap()
    });
}

#[test]
fn attention_compositions_over_seeds() {
    for seed in 0..20 {
        let e = support::attention_composite(seed);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn masked_keys_do_not_leak() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 5;
    let allow: Vec<bool> = (0..n * n).map(|i| i % n == i / n || i % 3 == 0).collect();
    let scores = randn(&[n, n], &mut rng);
    let values = randn(&[n, 3], &mut rng);
    let run = |values: &Tensor<f64>| {
        let mut t = Tape::new();
        let s = t.constant(scores.clone());
        let v = t.constant(values.clone());
        let p = t.softmax_masked(s, &allow).unwrap();
        let o = t.matmul(p, v).unwrap();
        t.value(o).clone()
    };
    let base = run(&values);
    for k in 0..n {
        let mut zeroed = values.clone();
        for c in 0..3 {
            zeroed.data_mut()[k * 3 + c] = 0.0;
        }
        let out = run(&zeroed);
        for q in 0..n {
            if !allow[q * n + k] {
                assert_eq!(out.row(q), base.row(q));
            }
        }
    }
}
