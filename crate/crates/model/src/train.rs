// SPDX-License-Identifier: Apache-2.0

//! The ten-component objective, evaluation metrics, the pretraining loop
//! with resumable checkpoints, and the data-scaling harness.

use std::path::Path;
use std::time::Instant;

use gatelab_core::labels::LabelPack;
use gatelab_tensor::{accumulate, checkpoint, Adam, Real, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{arg, Error, Result};
use crate::net::{Fwd, Head, Model, HEAD_NAMES};

/// Number of loss components.
pub const NUM_LOSSES: usize = 10;

/// One value per loss component, in `HEAD_NAMES` order, plus their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub values: [f64; NUM_LOSSES],
    /// Samples behind each component.
    pub counts: [usize; NUM_LOSSES],
    pub loss_all: f64,
}

impl LossBundle {
    pub fn get(&self, name: &str) -> Option<f64> {
        HEAD_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    /// Components with no samples contribute zero.
    pub fn empty_components(&self) -> Vec<&'static str> {
        (0..NUM_LOSSES)
            .filter(|&i| self.counts[i] == 0)
            .map(|i| HEAD_NAMES[i])
            .collect()
    }

    fn from_sums(sums: [f64; NUM_LOSSES], counts: [usize; NUM_LOSSES]) -> Self {
        let mut values = [0.0; NUM_LOSSES];
        for i in 0..NUM_LOSSES {
            if counts[i] > 0 {
                values[i] = sums[i] / counts[i] as f64;
            }
        }
        Self {
            values,
            counts,
            loss_all: values.iter().sum(),
        }
    }

    /// Component-wise mean of several bundles.
    pub fn mean(bundles: &[LossBundle]) -> Option<Self> {
        let first = bundles.first()?;
        let k = bundles.len() as f64;
        let mut out = first.clone();
        for i in 0..NUM_LOSSES {
            out.values[i] = bundles.iter().map(|b| b.values[i]).sum::<f64>() / k;
            out.counts[i] = bundles.iter().map(|b| b.counts[i]).sum();
        }
        out.loss_all = out.values.iter().sum();
        Some(out)
    }
}

/// Per-component sample counts, read from the labels alone.
pub fn sample_counts(packs: &[&LabelPack]) -> [usize; NUM_LOSSES] {
    let mut c = [0; NUM_LOSSES];
    for p in packs {
        let n = p.aig.len();
        let k = p.cones.len();
        c[Head::Prob as usize] += n;
        c[Head::GateTt as usize] += p.tt_pairs.len();
        c[Head::Lev as usize] += n;
        c[Head::Con as usize] += p.con_pairs.len();
        c[Head::Size as usize] += k;
        c[Head::Depth as usize] += k;
        c[Head::Tt as usize] += k;
        c[Head::GraphTt as usize] += p.graph_pairs.len();
        c[Head::GraphGed as usize] += p.graph_pairs.len();
        c[Head::In as usize] += p.in_samples.len();
    }
    c
}

/// Tape values of one circuit's forward pass.
struct CircuitPass {
    /// Sum of per-sample losses for each component.
    sums: [Option<Var>; NUM_LOSSES],
    tt_logits: Option<Var>,
    con_logits: Option<Var>,
    in_logits: Option<Var>,
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

impl<T: Real> Fwd<'_, T> {
    fn pair_input(&mut self, a: Var, b: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let ia: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let ib: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let x = self.tape.rows(a, &ia)?;
        let y = self.tape.rows(b, &ib)?;
        Ok(self.tape.concat_cols(&[x, y])?)
    }

    fn summed(&mut self, mean: Var, n: usize) -> Var {
        self.tape.scale(mean, n as f64)
    }

    fn circuit_pass(&mut self, pack: &LabelPack) -> Result<CircuitPass> {
        let mut sums: [Option<Var>; NUM_LOSSES] = [None; NUM_LOSSES];
        let x = self.encode(&pack.aig, &pack.workload)?;
        let (hf, hs) = (x.hf, x.hs);
        let n = pack.aig.len();

        let p = self.head(Head::Prob, hf)?;
        let target: Vec<T> = pack.prob.iter().map(|&v| T::of(v)).collect();
        let l = self.tape.l1_loss(p, &target)?;
        sums[Head::Prob as usize] = Some(self.summed(l, n));

        let p = self.head(Head::Lev, hs)?;
        let target: Vec<T> = pack.lev.iter().map(|&v| T::of(v as f64)).collect();
        let l = self.tape.l1_loss(p, &target)?;
        sums[Head::Lev as usize] = Some(self.summed(l, n));

        if !pack.tt_pairs.is_empty() {
            let pairs: Vec<_> = pack.tt_pairs.iter().map(|q| ordered(q.i, q.j)).collect();
            let x = self.pair_input(hf, hf, &pairs)?;
            let p = self.head(Head::GateTt, x)?;
            let target: Vec<T> = pack.tt_pairs.iter().map(|q| T::of(q.dist)).collect();
            let l = self.tape.l1_loss(p, &target)?;
            sums[Head::GateTt as usize] = Some(self.summed(l, pairs.len()));
        }

        let mut con_logits = None;
        if !pack.con_pairs.is_empty() {
            let pairs: Vec<_> = pack.con_pairs.iter().map(|q| (q.i, q.j)).collect();
            let x = self.pair_input(hs, hs, &pairs)?;
            let logits = self.head_raw(Head::Con, x)?;
            let classes: Vec<usize> = pack.con_pairs.iter().map(|q| q.class as usize).collect();
            let l = self.tape.cross_entropy(logits, &classes)?;
            sums[Head::Con as usize] = Some(self.summed(l, pairs.len()));
            con_logits = Some(logits);
        }

        let (mut tt_logits, mut in_logits) = (None, None);
        if !pack.cones.is_empty() {
            let k = pack.cones.len();
            let fcones: Vec<_> = pack.cones.iter().map(|c| (&c.sub, &c.plan)).collect();
            let scones: Vec<_> = pack.cones.iter().map(|c| &c.sub).collect();
            let hfs = self.pool_functional(hf, &fcones)?;
            let hss = self.pool_structural(hs, &scones)?;

            let p = self.head(Head::Size, hss)?;
            let target: Vec<T> = pack.cones.iter().map(|c| T::of(c.sub.size as f64)).collect();
            let l = self.tape.l1_loss(p, &target)?;
            sums[Head::Size as usize] = Some(self.summed(l, k));

            let p = self.head(Head::Depth, hss)?;
            let target: Vec<T> = pack.cones.iter().map(|c| T::of(c.sub.depth as f64)).collect();
            let l = self.tape.l1_loss(p, &target)?;
            sums[Head::Depth as usize] = Some(self.summed(l, k));

            let logits = self.head_raw(Head::Tt, hfs)?;
            let target: Vec<T> = pack
                .cones
                .iter()
                .flat_map(|c| (0..64).map(move |m| if c.table_bit(m) { T::one() } else { T::zero() }))
                .collect();
            let l = self.tape.bce_with_logits(logits, &target)?;
            sums[Head::Tt as usize] = Some(self.summed(l, k));
            tt_logits = Some(logits);

            if !pack.graph_pairs.is_empty() {
                let pairs: Vec<_> = pack.graph_pairs.iter().map(|g| ordered(g.s1, g.s2)).collect();
                let m = pairs.len();
                let x = self.pair_input(hfs, hfs, &pairs)?;
                let p = self.head(Head::GraphTt, x)?;
                let target: Vec<T> = pack.graph_pairs.iter().map(|g| T::of(g.tt_dist)).collect();
                let l = self.tape.l1_loss(p, &target)?;
                sums[Head::GraphTt as usize] = Some(self.summed(l, m));

                let x = self.pair_input(hss, hss, &pairs)?;
                let p = self.head(Head::GraphGed, x)?;
                let target: Vec<T> = pack.graph_pairs.iter().map(|g| T::of(g.ged_norm)).collect();
                let l = self.tape.l1_loss(p, &target)?;
                sums[Head::GraphGed as usize] = Some(self.summed(l, m));
            }

            if !pack.in_samples.is_empty() {
                let pairs: Vec<_> = pack.in_samples.iter().map(|s| (s.gate, s.cone)).collect();
                let x = self.pair_input(hs, hss, &pairs)?;
                let logits = self.head_raw(Head::In, x)?;
                let target: Vec<T> = pack.in_samples.iter().map(|s| T::of(s.bit as f64)).collect();
                let l = self.tape.bce_with_logits(logits, &target)?;
                sums[Head::In as usize] = Some(self.summed(l, pairs.len()));
                in_logits = Some(logits);
            }
        }
        for (i, s) in sums.iter().enumerate() {
            if let Some(v) = s {
                let x = self.tape.value(*v).item().f64();
                if !x.is_finite() {
                    return Err(Error::NonFinite {
                        component: HEAD_NAMES[i].to_string(),
                        value: x,
                    });
                }
            }
        }
        Ok(CircuitPass {
            sums,
            tt_logits,
            con_logits,
            in_logits,
        })
    }

    /// This circuit's share of the batch objective: every component sum
    /// divided by the component's batch-wide sample count.
    fn weighted(&mut self, pass: &CircuitPass, counts: &[usize; NUM_LOSSES]) -> Option<Var> {
        let mut total: Option<Var> = None;
        for i in 0..NUM_LOSSES {
            let Some(s) = pass.sums[i] else { continue };
            let w = self.tape.scale(s, 1.0 / counts[i] as f64);
            total = Some(match total {
                None => w,
                Some(t) => self.tape.add(t, w).expect("scalars"),
            });
        }
        total
    }
}

fn check_caps<T: Real>(model: &Model<T>, packs: &[&LabelPack]) -> Result<()> {
    for p in packs {
        if p.aig.len() > model.config.seq_cap {
            return Err(Error::Capacity(format!(
                "circuit {} has {} gates, sequence cap is {}",
                p.name,
                p.aig.len(),
                model.config.seq_cap
            )));
        }
    }
    Ok(())
}

/// One circuit's contribution: component sums and parameter gradients of
/// its weighted objective.
type CircuitGrad<T> = ([f64; NUM_LOSSES], Vec<Option<Vec<T>>>);

fn circuit_grad<T: Real>(
    model: &Model<T>,
    pack: &LabelPack,
    counts: &[usize; NUM_LOSSES],
    trainable: Option<&[bool]>,
) -> Result<CircuitGrad<T>> {
    let mut f = match trainable {
        Some(t) => Fwd::with_trainable(model, t),
        None => Fwd::new(model),
    };
    let pass = f.circuit_pass(pack)?;
    let mut sums = [0.0; NUM_LOSSES];
    for i in 0..NUM_LOSSES {
        if let Some(v) = pass.sums[i] {
            sums[i] = f.tape.value(v).item().f64();
        }
    }
    let grads = match f.weighted(&pass, counts) {
        Some(obj) => f.gradients(obj),
        None => vec![None; model.params.len()],
    };
    Ok((sums, grads))
}

/// Losses of a batch and the gradient of `loss_all` with respect to every
/// parameter. Per-circuit passes may run in parallel; the reduction runs in
/// batch order either way, so results do not depend on `parallel`.
pub fn batch_gradients<T: Real>(
    model: &Model<T>,
    batch: &[&LabelPack],
    trainable: Option<&[bool]>,
    parallel: bool,
) -> Result<(LossBundle, Vec<Option<Vec<T>>>)> {
    if batch.is_empty() {
        return arg("empty batch");
    }
    check_caps(model, batch)?;
    let counts = sample_counts(batch);
    let parts: Vec<Result<CircuitGrad<T>>> = if parallel {
        batch
            .par_iter()
            .map(|p| circuit_grad(model, p, &counts, trainable))
            .collect()
    } else {
        batch
            .iter()
            .map(|p| circuit_grad(model, p, &counts, trainable))
            .collect()
    };
    let mut sums = [0.0; NUM_LOSSES];
    let mut grads: Vec<Option<Vec<T>>> = vec![None; model.params.len()];
    for part in parts {
        let (s, g) = part?;
        for i in 0..NUM_LOSSES {
            sums[i] += s[i];
        }
        accumulate(&mut grads, g);
    }
    Ok((LossBundle::from_sums(sums, counts), grads))
}

/// Loss components of a batch without gradients.
pub fn compute_losses<T: Real>(model: &Model<T>, batch: &[&LabelPack]) -> Result<LossBundle> {
    Ok(evaluate(model, batch, false)?.losses)
}

/// Held-out evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub losses: LossBundle,
    /// Mean per-bit Hamming fraction of thresholded cone truth tables.
    pub p_tt: Option<f64>,
    /// Three-class connectivity accuracy.
    pub p_con: Option<f64>,
    /// Cone-membership accuracy.
    pub p_in: Option<f64>,
    pub circuits: usize,
    pub n_cones: usize,
    pub n_con: usize,
    pub n_in: usize,
    pub model: ModelConfig,
    pub seconds: f64,
}

#[derive(Default)]
struct Tally {
    sums: [f64; NUM_LOSSES],
    tt_bits: usize,
    n_cones: usize,
    con_hits: usize,
    n_con: usize,
    in_hits: usize,
    n_in: usize,
}

fn tally<T: Real>(model: &Model<T>, pack: &LabelPack) -> Result<Tally> {
    let mut f = Fwd::inference(model);
    let pass = f.circuit_pass(pack)?;
    let mut t = Tally::default();
    for i in 0..NUM_LOSSES {
        if let Some(v) = pass.sums[i] {
            t.sums[i] = f.tape.value(v).item().f64();
        }
    }
    if let Some(v) = pass.tt_logits {
        let logits = f.tape.value(v);
        for (c, cone) in pack.cones.iter().enumerate() {
            t.tt_bits += (0..64)
                .filter(|&m| (logits.get(c, m).f64() >= 0.0) != cone.table_bit(m))
                .count();
        }
        t.n_cones = pack.cones.len();
    }
    if let Some(v) = pass.con_logits {
        let logits = f.tape.value(v);
        for (r, q) in pack.con_pairs.iter().enumerate() {
            let row = logits.row(r);
            let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            t.con_hits += usize::from(best == q.class as usize);
        }
        t.n_con = pack.con_pairs.len();
    }
    if let Some(v) = pass.in_logits {
        let logits = f.tape.value(v);
        for (r, s) in pack.in_samples.iter().enumerate() {
            let pred = logits.get(r, 0).f64() >= 0.0;
            t.in_hits += usize::from(pred == (s.bit == 1));
        }
        t.n_in = pack.in_samples.len();
    }
    Ok(t)
}

/// Losses and accuracy metrics over an evaluation set.
pub fn evaluate<T: Real>(model: &Model<T>, packs: &[&LabelPack], parallel: bool) -> Result<EvalReport> {
    if packs.is_empty() {
        return arg("empty evaluation set");
    }
    check_caps(model, packs)?;
    let start = Instant::now();
    let parts: Vec<Result<Tally>> = if parallel {
        packs.par_iter().map(|p| tally(model, p)).collect()
    } else {
        packs.iter().map(|p| tally(model, p)).collect()
    };
    let mut all = Tally::default();
    for t in parts {
        let t = t?;
        for i in 0..NUM_LOSSES {
            all.sums[i] += t.sums[i];
        }
        all.tt_bits += t.tt_bits;
        all.n_cones += t.n_cones;
        all.con_hits += t.con_hits;
        all.n_con += t.n_con;
        all.in_hits += t.in_hits;
        all.n_in += t.n_in;
    }
    let frac = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(EvalReport {
        losses: LossBundle::from_sums(all.sums, sample_counts(packs)),
        p_tt: frac(all.tt_bits, all.n_cones * 64),
        p_con: frac(all.con_hits, all.n_con),
        p_in: frac(all.in_hits, all.n_in),
        circuits: packs.len(),
        n_cones: all.n_cones,
        n_con: all.n_con,
        n_in: all.n_in,
        model: model.config.clone(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps (0 = no limit).
    pub max_steps: u64,
    /// Evaluate every this many epochs (0 = never).
    pub eval_every: usize,
    /// Evaluate per-circuit passes on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 128,
            lr: 1e-4,
            seed: 0,
            max_steps: 0,
            eval_every: 0,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return arg("batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return arg(format!("learning rate {} must be positive", self.lr));
        }
        Ok(())
    }

    /// Fields that must agree between a checkpoint and a resumed run.
    fn same_run(&self, other: &TrainConfig) -> bool {
        self.batch_size == other.batch_size && self.lr == other.lr && self.seed == other.seed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train: LossBundle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    pub config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Container format version of training checkpoints.
pub const TRAIN_CHECKPOINT_VERSION: u32 = 1;
const TRAIN_KIND: &str = "gatelab-train";
const MODEL_KIND: &str = "gatelab-model";

/// Epoch order of the training set: a permutation seeded by run seed and
/// epoch, so a resumed run sees the same batches.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

impl<T: Real> TrainState<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: Adam::new(&model.params, config.lr),
            model,
            config,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Runs epochs until `config.epochs` (or the step limit) is reached.
    /// Writes `checkpoint` atomically after every epoch when given.
    pub fn run(&mut self, train: &[LabelPack], eval: &[LabelPack], checkpoint: Option<&Path>) -> Result<()> {
        if train.is_empty() {
            return arg("empty training set");
        }
        let refs: Vec<&LabelPack> = train.iter().collect();
        check_caps(&self.model, &refs)?;
        let eval_refs: Vec<&LabelPack> = eval.iter().collect();
        let limit = self.config.max_steps;
        while self.epoch < self.config.epochs && (limit == 0 || self.adam.step < limit) {
            let order = epoch_order(train.len(), self.config.seed, self.epoch);
            let mut bundles = Vec::new();
            for chunk in order.chunks(self.config.batch_size) {
                if limit > 0 && self.adam.step >= limit {
                    break;
                }
                let batch: Vec<&LabelPack> = chunk.iter().map(|&i| &train[i]).collect();
                let (bundle, grads) = batch_gradients(&self.model, &batch, None, self.config.parallel)?;
                self.adam.step(&mut self.model.params, &grads, None)?;
                bundles.push(bundle);
            }
            self.epoch += 1;
            let every = self.config.eval_every;
            let eval = if every > 0 && !eval_refs.is_empty() && self.epoch.is_multiple_of(every) {
                Some(evaluate(&self.model, &eval_refs, self.config.parallel)?)
            } else {
                None
            };
            let record = EpochRecord {
                epoch: self.epoch,
                steps: self.adam.step,
                train: LossBundle::mean(&bundles).expect("at least one batch"),
                eval,
            };
            log::info!("epoch {} loss_all {:.6}", record.epoch, record.train.loss_all);
            self.history.push(record);
            if let Some(path) = checkpoint {
                self.save(path)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, Tensor<T>)> = self
            .model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        for (i, name) in self.model.params.names().iter().enumerate() {
            tensors.push((format!("adam.m.{name}"), self.adam.m[i].clone()));
            tensors.push((format!("adam.v.{name}"), self.adam.v[i].clone()));
        }
        let meta = serde_json::json!({
            "kind": TRAIN_KIND,
            "version": TRAIN_CHECKPOINT_VERSION,
            "model": self.model.config,
            "train": self.config,
            "epoch": self.epoch,
            "adam_step": self.adam.step,
            "history": self.history,
        });
        checkpoint::save(path, &tensors, &meta)?;
        Ok(())
    }

    /// Restores a training run. `config`, when given, must describe the
    /// same run (batch size, learning rate, seed); its epoch and step
    /// limits replace the stored ones.
    pub fn load(path: &Path, config: Option<&TrainConfig>) -> Result<Self> {
        let (tensors, meta) = checkpoint::load::<T>(path)?;
        check_kind(&meta)?;
        let model_cfg: ModelConfig = field(&meta, "model")?;
        let stored: TrainConfig = field(&meta, "train")?;
        let config = match config {
            Some(c) if !c.same_run(&stored) => {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was trained with batch {} lr {} seed {}, resume asked for batch {} lr {} seed {}",
                    stored.batch_size, stored.lr, stored.seed, c.batch_size, c.lr, c.seed
                )))
            }
            Some(c) => c.clone(),
            None => stored,
        };
        let mut model = Model::new(model_cfg)?;
        let np = model.params.len();
        if tensors.len() != 3 * np {
            return Err(Error::Checkpoint(format!(
                "{} tensors, expected {} for this architecture",
                tensors.len(),
                3 * np
            )));
        }
        model.load_params(&tensors[..np])?;
        let mut adam = Adam::new(&model.params, config.lr);
        for i in 0..np {
            let (m, v) = (&tensors[np + 2 * i], &tensors[np + 2 * i + 1]);
            let name = model.params.name(i);
            if m.0 != format!("adam.m.{name}") || v.0 != format!("adam.v.{name}") {
                return Err(Error::Checkpoint(format!("optimizer state for {name} missing")));
            }
            adam.m[i] = m.1.clone();
            adam.v[i] = v.1.clone();
        }
        adam.step = field(&meta, "adam_step")?;
        Ok(Self {
            model,
            adam,
            config,
            epoch: field(&meta, "epoch")?,
            history: field(&meta, "history")?,
        })
    }
}

fn check_kind(meta: &serde_json::Value) -> Result<()> {
    if meta.get("kind").and_then(|k| k.as_str()) != Some(TRAIN_KIND) {
        return Err(Error::Checkpoint("not a training checkpoint".into()));
    }
    let v: u32 = field(meta, "version")?;
    if v != TRAIN_CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "training checkpoint version {v}, expected {TRAIN_CHECKPOINT_VERSION}"
        )));
    }
    Ok(())
}

fn field<D: serde::de::DeserializeOwned>(meta: &serde_json::Value, key: &str) -> Result<D> {
    let v = meta
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("checkpoint metadata lacks {key}")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("{key}: {e}")))
}

/// Writes a model-only checkpoint; `extra` is stored under `meta.extra`.
pub fn save_model<T: Real>(model: &Model<T>, path: &Path, extra: serde_json::Value) -> Result<()> {
    let tensors: Vec<(String, Tensor<T>)> = model.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let meta = serde_json::json!({
        "kind": MODEL_KIND,
        "version": TRAIN_CHECKPOINT_VERSION,
        "model": model.config,
        "extra": extra,
    });
    checkpoint::save(path, &tensors, &meta)?;
    Ok(())
}

/// Reads the model from a training or model-only checkpoint.
pub fn load_model<T: Real>(path: &Path) -> Result<Model<T>> {
    let (tensors, meta) = checkpoint::load::<T>(path)?;
    if meta.get("kind").and_then(|k| k.as_str()) == Some(MODEL_KIND) {
        let v: u32 = field(&meta, "version")?;
        if v != TRAIN_CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "model checkpoint version {v}, expected {TRAIN_CHECKPOINT_VERSION}"
            )));
        }
    } else {
        check_kind(&meta)?;
    }
    let mut model = Model::new(field(&meta, "model")?)?;
    let np = model.params.len();
    if tensors.len() < np {
        return Err(Error::Checkpoint("checkpoint holds too few tensors".into()));
    }
    model.load_params(&tensors[..np])?;
    Ok(model)
}

/// Trains a fresh model on `train` and returns the final state.
pub fn pretrain(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[LabelPack],
    eval: &[LabelPack],
    checkpoint: Option<&Path>,
) -> Result<TrainState<f64>> {
    let mut state = TrainState::new(Model::new(model_cfg.clone())?, train_cfg.clone())?;
    state.run(train, eval, checkpoint)?;
    Ok(state)
}

/// Nested subsets: one seeded permutation, subset `f` keeps its first
/// `round(f * n)` entries, returned in original order.
pub fn nested_subsets(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return arg(format!("fraction {f} outside (0, 1]"));
            }
            let k = ((f * n as f64).round() as usize).min(n);
            let mut s = perm[..k].to_vec();
            s.sort_unstable();
            Ok(s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub fraction: f64,
    pub circuits: usize,
    pub report: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// One training run per fraction with identical hyperparameters, each
/// evaluated on the same held-out set.
pub fn scaling_harness(
    train: &[LabelPack],
    heldout: &[LabelPack],
    fractions: &[f64],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    subset_seed: u64,
) -> Result<Vec<ScalingRow>> {
    if heldout.is_empty() {
        return arg("scaling needs a held-out set");
    }
    let subsets = nested_subsets(train.len(), fractions, subset_seed)?;
    let eval_refs: Vec<&LabelPack> = heldout.iter().collect();
    let mut rows = Vec::new();
    for (&fraction, subset) in fractions.iter().zip(subsets) {
        if subset.is_empty() {
            let msg = format!("fraction {fraction} selects no circuits out of {}", train.len());
            log::warn!("{msg}");
            rows.push(ScalingRow {
                fraction,
                circuits: 0,
                report: None,
                warning: Some(msg),
            });
            continue;
        }
        let data: Vec<LabelPack> = subset.iter().map(|&i| train[i].clone()).collect();
        let state = pretrain(model_cfg, train_cfg, &data, &[], None)?;
        let report = evaluate(&state.model, &eval_refs, train_cfg.parallel)?;
        log::info!("fraction {fraction}: held-out loss_all {:.6}", report.losses.loss_all);
        rows.push(ScalingRow {
            fraction,
            circuits: data.len(),
            report: Some(report),
            warning: None,
        });
    }
    Ok(rows)
}

/// CSV column names of the scaling report.
pub fn scaling_columns() -> Vec<String> {
    let mut c = vec!["fraction".to_string()];
    c.extend(HEAD_NAMES.iter().map(|n| format!("L_{n}")));
    c.extend(["loss_all", "P_tt", "P_con", "P_in"].map(String::from));
    c
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = scaling_columns().join(",");
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let mut cells = vec![r.fraction.to_string()];
        match &r.report {
            Some(rep) => {
                cells.extend(rep.losses.values.iter().map(|v| v.to_string()));
                cells.push(rep.losses.loss_all.to_string());
                cells.extend([opt(rep.p_tt), opt(rep.p_con), opt(rep.p_in)]);
            }
            None => cells.extend(std::iter::repeat_n(String::new(), 14)),
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
