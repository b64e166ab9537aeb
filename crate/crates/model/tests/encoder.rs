// SPDX-License-Identifier: Apache-2.0

//! Tokenizer, refine, pooling and head properties against independent
//! oracles.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use gatelab_core::aig::{cone_mask, Aig, ConeMask, GateKind};
use gatelab_core::cone::{canonical_form, extract_khop_cone};
use gatelab_core::sim::Workload;
use gatelab_core::{build_labelpack, generate_random_aig, LabelConfig};
use gatelab_model::net::Readout;
use gatelab_model::{Fwd, Head, Model, ModelConfig};
use gatelab_tensor::{Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> Model<f64> {
    Model::new(ModelConfig {
        seed,
        ..ModelConfig::tiny()
    })
    .unwrap()
}

fn random_workload(aig: &Aig, seed: u64) -> Workload {
    Workload::random(aig.pis().len(), &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn input_rows_repeat_the_workload() {
    let cfg = ModelConfig {
        d: 4,
        heads: 2,
        ..ModelConfig::tiny()
    };
    let model = Model::<f64>::new(cfg).unwrap();
    let aig = Aig::new(vec![GateKind::Pi], vec![vec![]]).unwrap();
    let st = model.tokenize(&aig, &Workload::new(vec![0.25]).unwrap()).unwrap();
    assert_eq!(st.hf.data(), &[0.25; 4]);
}

#[test]
fn input_structural_rows_are_orthonormal() {
    let model = tiny(3);
    let d = model.config.d;
    let rows = model.pi_structural_rows(d);
    for i in 0..d {
        for j in 0..d {
            let dot: f64 = rows.row(i).iter().zip(rows.row(j)).map(|(a, b)| a * b).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((dot - want).abs() < 1e-6, "rows {i},{j}: {dot}");
        }
    }
    let aig = generate_random_aig(1, 2, 5).unwrap();
    let st = model.tokenize(&aig, &Workload::uniform(2)).unwrap();
    let (a, b) = (st.hs.row(aig.pis()[0]), st.hs.row(aig.pis()[1]));
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    assert!(dot.abs() < 1e-6);
}

#[test]
fn storage_order_does_not_change_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let model = tiny(5);
    for trial in 0..10 {
        let aig = generate_random_aig(400 + trial, rng.gen_range(2..7), rng.gen_range(5..40)).unwrap();
        let (shuffled, new_of) = support::shuffle_topological(&aig, &mut rng);
        let kinds = shuffled.kinds().to_vec();
        let fanins = (0..shuffled.len()).map(|g| shuffled.fanins(g).to_vec()).collect();
        let pis = aig.pis().iter().map(|&p| new_of[p]).collect();
        let shuffled = Aig::with_pi_order(kinds, fanins, pis).unwrap();
        let wl = random_workload(&aig, trial);
        let a = model.encode(&aig, &wl).unwrap();
        let b = model.encode(&shuffled, &wl).unwrap();
        let ta = model.tokenize(&aig, &wl).unwrap();
        let tb = model.tokenize(&shuffled, &wl).unwrap();
        for g in 0..aig.len() {
            let h = new_of[g];
            for (x, y) in [(&ta.hf, &tb.hf), (&ta.hs, &tb.hs), (&a.hf, &b.hf), (&a.hs, &b.hs)] {
                let diff = x
                    .row(g)
                    .iter()
                    .zip(y.row(h))
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max);
                assert!(diff < 1e-6, "trial {trial} gate {g}: {diff}");
            }
        }
    }
}

fn perturbed(t: &Tensor<f64>, row: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let mut t = t.clone();
    let d = t.cols();
    for c in 0..d {
        t.data_mut()[row * d + c] += rng.gen_range(-1.0..1.0);
    }
    t
}

#[test]
fn refined_rows_ignore_gates_outside_their_cones() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let model = tiny(9);
    for trial in 0..6 {
        let aig = generate_random_aig(900 + trial, 5, 40).unwrap();
        let tok = model.tokenize(&aig, &random_workload(&aig, trial)).unwrap();
        let mask = cone_mask(&aig);
        let base = model.refine(&tok, mask.as_slice()).unwrap();
        for _ in 0..8 {
            let j = rng.gen_range(0..aig.len());
            let mut t2 = tok.clone();
            t2.hf = perturbed(&tok.hf, j, &mut rng);
            t2.hs = perturbed(&tok.hs, j, &mut rng);
            let out = model.refine(&t2, mask.as_slice()).unwrap();
            for q in 0..aig.len() {
                let same = base.hf.row(q) == out.hf.row(q) && base.hs.row(q) == out.hs.row(q);
                let related = support::brute_mask_row(&aig, q)[j];
                if !related {
                    assert!(same, "row {q} moved when gate {j} changed");
                }
                if q == j {
                    assert!(!same);
                }
            }
        }
    }
}

#[test]
fn diagonal_mask_isolates_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = tiny(2);
    let aig = generate_random_aig(77, 4, 20).unwrap();
    let tok = model.tokenize(&aig, &Workload::uniform(4)).unwrap();
    let diag = ConeMask::diagonal(aig.len());
    let base = model.refine(&tok, diag.as_slice()).unwrap();
    let j = 7;
    let mut t2 = tok.clone();
    t2.hf = perturbed(&tok.hf, j, &mut rng);
    let out = model.refine(&t2, diag.as_slice()).unwrap();
    for i in (0..aig.len()).filter(|&i| i != j) {
        assert_eq!(base.hf.row(i), out.hf.row(i));
        assert_eq!(base.hs.row(i), out.hs.row(i));
    }
}

#[test]
fn zeroed_residual_branches_pass_the_input_through() {
    let mut model = tiny(6);
    let names: Vec<String> = model.params.names().to_vec();
    for (i, n) in names.iter().enumerate() {
        if n.starts_with("rt.") && (n.contains(".o.") || n.contains(".ff2.")) {
            let t = model.params.get_mut(i);
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let aig = generate_random_aig(5, 4, 25).unwrap();
    let tok = model.tokenize(&aig, &Workload::uniform(4)).unwrap();
    let out = model.refine(&tok, cone_mask(&aig).as_slice()).unwrap();
    let sum: Vec<f64> = tok.hf.data().iter().zip(tok.hs.data()).map(|(a, b)| a + b).collect();
    assert_eq!(out.hf.data(), &sum[..]);
    assert_eq!(out.hs.data(), &sum[..]);
}

#[test]
fn mismatched_mask_is_rejected() {
    let model = tiny(1);
    let aig = generate_random_aig(5, 3, 10).unwrap();
    let tok = model.tokenize(&aig, &Workload::uniform(3)).unwrap();
    assert!(model.refine(&tok, &[true; 4]).is_err());
    assert!(model.tokenize(&aig, &Workload::uniform(2)).is_err());
}

#[test]
fn oversize_circuits_need_partitioning() {
    let model = Model::<f64>::new(ModelConfig {
        seq_cap: 20,
        ..ModelConfig::tiny()
    })
    .unwrap();
    let aig = generate_random_aig(5, 3, 30).unwrap();
    assert!(matches!(
        model.encode(&aig, &Workload::uniform(3)),
        Err(gatelab_model::Error::Capacity(_))
    ));
    assert!(model.tokenize_uncapped(&aig, &Workload::uniform(3)).is_ok());
}

fn pooled(
    model: &Model<f64>,
    hs: &Tensor<f64>,
    hf: &Tensor<f64>,
    cone: &gatelab_core::cone::SubGraph,
) -> (Vec<f64>, Vec<f64>) {
    let mut f = Fwd::inference(model);
    let vs = f.tape.constant(hs.clone());
    let vf = f.tape.constant(hf.clone());
    let s = f.pool_structural(vs, &[cone]).unwrap();
    let k = cone.num_pis();
    let plan = if k < 6 {
        gatelab_core::TokenPlan::Pad { real: k }
    } else if k == 6 {
        gatelab_core::TokenPlan::Exact
    } else {
        gatelab_core::TokenPlan::Fix {
            fixings: (6..k).map(|i| (i, i % 2 == 0)).collect(),
        }
    };
    let p = f.pool_functional(vf, &[(cone, &plan)]).unwrap();
    (f.tape.value(s).data().to_vec(), f.tape.value(p).data().to_vec())
}

#[test]
fn relabelled_cones_pool_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let model = tiny(8);
    for trial in 0..20 {
        let aig = generate_random_aig(1000 + trial, 6, 40).unwrap();
        let st = model.encode(&aig, &Workload::uniform(6)).unwrap();
        let root = rng.gen_range(0..aig.len());
        let cone = extract_khop_cone(&aig, root, 3).unwrap();
        let again = canonical_form(&support::shuffle_subgraph(&cone, &mut rng)).unwrap();
        assert_eq!(
            pooled(&model, &st.hs, &st.hf, &cone),
            pooled(&model, &st.hs, &st.hf, &again)
        );
    }
}

#[test]
fn pooling_rejects_oversize_cones() {
    let model = tiny(1);
    let aig = generate_random_aig(3, 8, 60).unwrap();
    let root = (0..aig.len())
        .max_by_key(|&g| extract_khop_cone(&aig, g, 5).unwrap().size)
        .unwrap();
    let cone = extract_khop_cone(&aig, root, 5).unwrap();
    assert!(cone.size + 1 > model.config.pt_positions);
    let mut f = Fwd::inference(&model);
    let hs = f.tape.constant(Tensor::zeros(&[aig.len(), model.config.d]));
    assert!(matches!(
        f.pool_structural(hs, &[&cone]),
        Err(gatelab_model::Error::Capacity(_))
    ));
}

#[test]
fn head_arity_and_names_are_checked() {
    let model = tiny(1);
    let mut f = Fwd::inference(&model);
    let x = f.tape.constant(Tensor::zeros(&[2, model.config.d]));
    assert!(f.head_on(Head::GateTt, &[x]).is_err());
    assert!(f.head_on(Head::Prob, &[x, x]).is_err());
    assert!(Head::from_name("nope").is_err());
    for h in Head::ALL {
        assert_eq!(Head::from_name(h.name()).unwrap(), h);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn heads_stay_in_range(seed in 0u64..1000, scale in 0.1f64..50.0) {
        let model = tiny(seed % 7);
        let d = model.config.d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Fwd::inference(&model);
        let x: Var = f.tape.constant(Tensor::randn(&[3, 2 * d], scale, &mut rng));
        let one: Var = f.tape.slice_cols(x, 0, d).unwrap();
        for h in Head::ALL {
            let input = if h.arity() == 1 { one } else { x };
            let y = f.head(h, input).unwrap();
            let v = f.tape.value(y);
            prop_assert_eq!(v.dims(), (3, h.out_width()));
            for &e in v.data() {
                prop_assert!(e.is_finite());
                match h.readout() {
                    Readout::Sigmoid => prop_assert!((0.0..=1.0).contains(&e)),
                    Readout::Softplus => prop_assert!(e >= 0.0),
                    Readout::Logits => {}
                }
            }
        }
        prop_assert_eq!(Head::Tt.out_width(), 64);
        prop_assert_eq!(Head::Con.out_width(), 3);
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let aig = generate_random_aig(42, 3, 7).unwrap();
    assert_eq!(aig.len(), 10);
    let cfg = LabelConfig {
        tt_pairs: 6,
        con_pairs: 6,
        cones: 3,
        graph_pairs: 2,
        in_samples: 4,
        ..LabelConfig::default()
    };
    let pack = build_labelpack("g", &aig, &cfg).unwrap();
    let mut model = tiny(11);
    let (bundle, grads) = gatelab_model::batch_gradients(&model, &[&pack], None, false).unwrap();
    assert!(bundle.counts.iter().all(|&c| c > 0), "{:?}", bundle.counts);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let loss_at = |model: &mut Model<f64>, id: usize, e: usize, h: f64| {
        let orig = model.params.get(id).data()[e];
        model.params.get_mut(id).data_mut()[e] = orig + h;
        let up = gatelab_model::compute_losses(model, &[&pack]).unwrap().loss_all;
        model.params.get_mut(id).data_mut()[e] = orig - h;
        let down = gatelab_model::compute_losses(model, &[&pack]).unwrap().loss_all;
        model.params.get_mut(id).data_mut()[e] = orig;
        (up - down) / (2.0 * h)
    };
    let mut worst: f64 = 0.0;
    for id in 0..model.params.len() {
        let len = model.params.get(id).len();
        let g = grads[id]
            .clone()
            .unwrap_or_else(|| panic!("no gradient for {}", model.params.name(id)));
        for _ in 0..2 {
            let e = rng.gen_range(0..len);
            // A ReLU or L1 kink inside the step makes one central
            // difference meaningless; a smaller step steps over it.
            let rel = [1e-6, 1e-7]
                .iter()
                .map(|&h| {
                    let fd = loss_at(&mut model, id, e, h);
                    (fd - g[e]).abs() / fd.abs().max(g[e].abs()).max(1e-3)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(rel < 1e-3, "{}[{e}]: relative error {rel}", model.params.name(id));
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-3);
}
