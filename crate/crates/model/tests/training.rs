// SPDX-License-Identifier: Apache-2.0

//! Objective bookkeeping, metric definitions, checkpoint/resume and the
//! scaling harness.

use gatelab_core::labels::LabelPack;
use gatelab_core::{build_labelpacks, generate_random_aig, LabelConfig};
use gatelab_model::net::HEAD_NAMES;
use gatelab_model::train::{epoch_order, scaling_columns, NUM_LOSSES};
use gatelab_model::*;
use proptest::prelude::*;

fn packs(n: usize, seed: u64) -> Vec<LabelPack> {
    let circuits: Vec<(String, _)> = (0..n as u64)
        .map(|i| (format!("c{i}"), generate_random_aig(seed + i, 5, 24).unwrap()))
        .collect();
    let cfg = LabelConfig {
        seed,
        tt_pairs: 16,
        con_pairs: 12,
        cones: 4,
        graph_pairs: 3,
        in_samples: 8,
        ..LabelConfig::default()
    };
    build_labelpacks(&circuits, &cfg, false).unwrap()
}

fn tiny() -> Model<f64> {
    Model::new(ModelConfig::tiny()).unwrap()
}

fn small_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 2,
        lr: 3e-3,
        parallel: false,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_all_is_the_component_sum() {
    let data = packs(4, 1);
    let refs: Vec<&LabelPack> = data.iter().collect();
    let b = compute_losses(&tiny(), &refs).unwrap();
    let sum: f64 = b.values.iter().sum();
    assert!((b.loss_all - sum).abs() < 1e-6);
    assert!(b.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(b.empty_components().is_empty());
    assert_eq!(b.get("lev"), Some(b.values[2]));
}

#[test]
fn untrained_membership_loss_is_near_chance() {
    let data = packs(6, 2);
    let refs: Vec<&LabelPack> = data.iter().collect();
    let b = compute_losses(&tiny(), &refs).unwrap();
    let ones: usize = data.iter().flat_map(|p| &p.in_samples).filter(|s| s.bit == 1).count();
    let total: usize = data.iter().map(|p| p.in_samples.len()).sum();
    assert!((ones as f64 / total as f64 - 0.5).abs() < 0.1);
    let l_in = b.get("in").unwrap();
    assert!((l_in - std::f64::consts::LN_2).abs() < 0.2, "{l_in}");
}

#[test]
fn labels_equal_to_predictions_give_zero_regression_loss() {
    let model = tiny();
    let mut data = packs(1, 3);
    let pack = &mut data[0];
    let mut f = Fwd::inference(&model);
    let x = f.encode(&pack.aig, &pack.workload).unwrap();
    let p = f.head(Head::Prob, x.hf).unwrap();
    pack.prob = f.tape.value(p).data().to_vec();
    let b = compute_losses(&model, &[&*pack]).unwrap();
    assert!(b.get("prob").unwrap() < 1e-12);
}

#[test]
fn components_without_samples_are_zero_and_flagged() {
    let mut data = packs(1, 4);
    data[0].graph_pairs.clear();
    data[0].in_samples.clear();
    let b = compute_losses(&tiny(), &[&data[0]]).unwrap();
    assert_eq!(b.empty_components(), vec!["graph_tt", "graph_ged", "in"]);
    assert_eq!(b.get("in"), Some(0.0));
}

#[test]
fn perfect_predictions_score_perfectly() {
    let model = tiny();
    let mut data = packs(3, 5);
    for pack in &mut data {
        let mut f = Fwd::inference(&model);
        let x = f.encode(&pack.aig, &pack.workload).unwrap();
        let fc: Vec<_> = pack.cones.iter().map(|c| (&c.sub, &c.plan)).collect();
        let hfs = f.pool_functional(x.hf, &fc).unwrap();
        let sc: Vec<_> = pack.cones.iter().map(|c| &c.sub).collect();
        let hss = f.pool_structural(x.hs, &sc).unwrap();
        let tt = f.head_raw(Head::Tt, hfs).unwrap();
        let tt = f.tape.value(tt).clone();
        let mut tts = Vec::new();
        for c in 0..pack.cones.len() {
            tts.push((0..64).fold(0u64, |acc, m| acc | (u64::from(tt.get(c, m) >= 0.0) << m)));
        }
        for (cone, t) in pack.cones.iter_mut().zip(tts) {
            cone.tt64 = t;
        }
        let ia: Vec<usize> = pack.con_pairs.iter().map(|q| q.i).collect();
        let ib: Vec<usize> = pack.con_pairs.iter().map(|q| q.j).collect();
        let (a, b) = (f.tape.rows(x.hs, &ia).unwrap(), f.tape.rows(x.hs, &ib).unwrap());
        let con = f.head_on(Head::Con, &[a, b]).unwrap();
        let con = f.tape.value(con).clone();
        for (r, q) in pack.con_pairs.iter_mut().enumerate() {
            let row = con.row(r);
            q.class = (0..3).fold(0, |b, k| if row[k] > row[b] { k } else { b }) as u8;
        }
        let ig: Vec<usize> = pack.in_samples.iter().map(|s| s.gate).collect();
        let ic: Vec<usize> = pack.in_samples.iter().map(|s| s.cone).collect();
        let (a, b) = (f.tape.rows(x.hs, &ig).unwrap(), f.tape.rows(hss, &ic).unwrap());
        let ab = f.tape.concat_cols(&[a, b]).unwrap();
        let pin = f.head_raw(Head::In, ab).unwrap();
        let pin = f.tape.value(pin).clone();
        for (r, s) in pack.in_samples.iter_mut().enumerate() {
            s.bit = u8::from(pin.get(r, 0) >= 0.0);
        }
    }
    let refs: Vec<&LabelPack> = data.iter().collect();
    let r = evaluate(&model, &refs, false).unwrap();
    assert_eq!(r.p_tt, Some(0.0));
    assert_eq!(r.p_con, Some(1.0));
    assert_eq!(r.p_in, Some(1.0));
}

#[test]
fn constant_connectivity_predictor_scores_its_class_share() {
    let mut model = tiny();
    let w = model.params.id("head.con.2.w").unwrap();
    let b = model.params.id("head.con.2.b").unwrap();
    model.params.get_mut(w).data_mut().iter_mut().for_each(|x| *x = 0.0);
    model.params.get_mut(b).data_mut().copy_from_slice(&[0.0, 1.0, 0.0]);
    let data = packs(8, 6);
    let refs: Vec<&LabelPack> = data.iter().collect();
    let r = evaluate(&model, &refs, false).unwrap();
    let all: Vec<u8> = data.iter().flat_map(|p| p.con_pairs.iter().map(|q| q.class)).collect();
    let share = all.iter().filter(|&&c| c == 1).count() as f64 / all.len() as f64;
    assert_eq!(r.p_con, Some(share));
    assert!((share - 1.0 / 3.0).abs() < 0.15);
    for p in [r.p_tt, r.p_con, r.p_in] {
        assert!((0.0..=1.0).contains(&p.unwrap()));
    }
}

#[test]
fn empty_evaluation_set_is_an_error() {
    assert!(evaluate(&tiny(), &[], false).is_err());
}

#[test]
fn parallel_and_sequential_batches_agree_bitwise() {
    let data = packs(4, 7);
    let refs: Vec<&LabelPack> = data.iter().collect();
    let model = tiny();
    let (a, ga) = batch_gradients(&model, &refs, None, false).unwrap();
    let (b, gb) = batch_gradients(&model, &refs, None, true).unwrap();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}

#[test]
fn one_epoch_smoke_run_writes_a_readable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let data = packs(2, 8);
    let cfg = TrainConfig {
        epochs: 1,
        ..small_train()
    };
    let state = pretrain(&ModelConfig::tiny(), &cfg, &data, &data, Some(&path)).unwrap();
    assert_eq!(state.history.len(), 1);
    let back: TrainState<f64> = TrainState::load(&path, None).unwrap();
    assert_eq!(back, state);
    let model: Model<f64> = load_model(&path).unwrap();
    assert_eq!(model.params, state.model.params);
    assert!(!dir.path().join("model.partial").exists());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let data = packs(5, 9);
    let full_cfg = TrainConfig {
        epochs: 3,
        ..small_train()
    };
    let full = pretrain(&ModelConfig::tiny(), &full_cfg, &data, &[], None).unwrap();

    let first = TrainConfig {
        epochs: 2,
        ..small_train()
    };
    pretrain(&ModelConfig::tiny(), &first, &data, &[], Some(&path)).unwrap();
    let mut resumed: TrainState<f64> = TrainState::load(&path, Some(&full_cfg)).unwrap();
    resumed.run(&data, &[], None).unwrap();
    assert_eq!(resumed.model.params, full.model.params);
    assert_eq!(resumed.adam, full.adam);
    assert_eq!(resumed.history, full.history);
}

#[test]
fn resume_with_a_different_run_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let data = packs(2, 10);
    pretrain(
        &ModelConfig::tiny(),
        &TrainConfig {
            epochs: 1,
            ..small_train()
        },
        &data,
        &[],
        Some(&path),
    )
    .unwrap();
    let other = TrainConfig {
        lr: 1e-2,
        ..small_train()
    };
    assert!(matches!(
        TrainState::<f64>::load(&path, Some(&other)),
        Err(Error::Checkpoint(_))
    ));
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(TrainState::<f64>::load(&path, None).is_err());
}

#[test]
fn step_limit_stops_training() {
    let data = packs(4, 11);
    let cfg = TrainConfig {
        epochs: 10,
        max_steps: 3,
        ..small_train()
    };
    let st = pretrain(&ModelConfig::tiny(), &cfg, &data, &[], None).unwrap();
    assert_eq!(st.adam.step, 3);
    assert_eq!(st.history.len(), 2);
}

#[test]
fn epoch_orders_are_seeded_permutations() {
    let a = epoch_order(50, 3, 0);
    assert_eq!(a, epoch_order(50, 3, 0));
    assert_ne!(a, epoch_order(50, 3, 1));
    let mut s = a.clone();
    s.sort_unstable();
    assert_eq!(s, (0..50).collect::<Vec<_>>());
}

#[test]
fn full_fraction_equals_a_direct_run() {
    let train = packs(4, 12);
    let held = packs(2, 40);
    let cfg = small_train();
    let rows = scaling_harness(&train, &held, &[1.0], &ModelConfig::tiny(), &cfg, 5).unwrap();
    let state = pretrain(&ModelConfig::tiny(), &cfg, &train, &[], None).unwrap();
    let refs: Vec<&LabelPack> = held.iter().collect();
    let direct = evaluate(&state.model, &refs, false).unwrap();
    let row = rows[0].report.as_ref().unwrap();
    assert_eq!(row.losses, direct.losses);
    assert_eq!(
        (row.p_tt, row.p_con, row.p_in),
        (direct.p_tt, direct.p_con, direct.p_in)
    );
}

#[test]
fn tiny_fractions_produce_warning_rows_and_a_fixed_schema() {
    let train = packs(3, 13);
    let held = packs(1, 41);
    let cfg = TrainConfig {
        epochs: 1,
        ..small_train()
    };
    let rows = scaling_harness(&train, &held, &[0.1, 1.0], &ModelConfig::tiny(), &cfg, 5).unwrap();
    assert!(rows[0].report.is_none() && rows[0].warning.is_some());
    assert!(rows[1].report.is_some());
    let csv = scaling_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    let cols = scaling_columns();
    assert_eq!(cols.len(), 2 + NUM_LOSSES + 3);
    assert_eq!(lines[0], cols.join(","));
    assert_eq!(cols[1], format!("L_{}", HEAD_NAMES[0]));
    assert!(lines.iter().all(|l| l.split(',').count() == cols.len()));
    assert!(scaling_harness(&train, &held, &[0.0], &ModelConfig::tiny(), &cfg, 5).is_err());
}

proptest! {
    #[test]
    fn subsets_are_nested(n in 1usize..300, seed in 0u64..1000, mut fr in proptest::collection::vec(0.01f64..=1.0, 1..6)) {
        fr.sort_by(f64::total_cmp);
        let subs = nested_subsets(n, &fr, seed).unwrap();
        for w in subs.windows(2) {
            prop_assert!(w[0].iter().all(|i| w[1].contains(i)));
        }
        for (s, f) in subs.iter().zip(&fr) {
            prop_assert_eq!(s.len(), ((f * n as f64).round() as usize).min(n));
            prop_assert!(s.windows(2).all(|p| p[0] < p[1]));
        }
    }
}

#[test]
fn model_checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = tiny();
    save_model(&model, &path, serde_json::json!({"note": 1})).unwrap();
    let back: Model<f64> = load_model(&path).unwrap();
    assert_eq!(back, model);
    assert!(TrainState::<f64>::load(&path, None).is_err());
}
