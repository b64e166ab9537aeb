// SPDX-License-Identifier: Apache-2.0

//! Parameter layout and the shared building blocks: linear maps, readout
//! MLPs, GRU cells and pre-norm transformer blocks.

use gatelab_tensor::{ParamStore, Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{arg, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Mlp {
    pub layers: [Linear; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Gru {
    pub z: Linear,
    pub uz: usize,
    pub r: Linear,
    pub ur: usize,
    pub n: Linear,
    pub un: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Block {
    pub ln1: Norm,
    /// Present when keys and values are read from the stack input.
    pub ln_kv: Option<Norm>,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Stream {
    pub agg_and: Linear,
    pub agg_not: Linear,
    pub gru: Gru,
}

/// Readout head names in loss order.
pub const HEAD_NAMES: [&str; 10] = [
    "prob",
    "gate_tt",
    "lev",
    "con",
    "size",
    "depth",
    "tt",
    "graph_tt",
    "graph_ged",
    "in",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Prob,
    GateTt,
    Lev,
    Con,
    Size,
    Depth,
    Tt,
    GraphTt,
    GraphGed,
    In,
}

/// How a head's raw output is mapped into its range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    Sigmoid,
    Softplus,
    Logits,
}

impl Head {
    pub const ALL: [Head; 10] = [
        Head::Prob,
        Head::GateTt,
        Head::Lev,
        Head::Con,
        Head::Size,
        Head::Depth,
        Head::Tt,
        Head::GraphTt,
        Head::GraphGed,
        Head::In,
    ];

    pub fn name(self) -> &'static str {
        HEAD_NAMES[self as usize]
    }

    pub fn from_name(name: &str) -> Result<Head> {
        match HEAD_NAMES.iter().position(|n| *n == name) {
            Some(i) => Ok(Head::ALL[i]),
            None => arg(format!("unknown head {name}")),
        }
    }

    /// Number of concatenated embeddings the head reads.
    pub fn arity(self) -> usize {
        match self {
            Head::Prob | Head::Lev | Head::Size | Head::Depth | Head::Tt => 1,
            _ => 2,
        }
    }

    pub fn out_width(self) -> usize {
        match self {
            Head::Tt => 64,
            Head::Con => 3,
            _ => 1,
        }
    }

    pub fn readout(self) -> Readout {
        match self {
            Head::Prob | Head::GateTt | Head::Tt | Head::GraphTt | Head::In => Readout::Sigmoid,
            Head::Lev | Head::Size | Head::Depth | Head::GraphGed => Readout::Softplus,
            Head::Con => Readout::Logits,
        }
    }
}

/// Handles of every learnable tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub tok_f: Stream,
    pub tok_s: Stream,
    pub rt_f: Vec<Block>,
    pub rt_s: Vec<Block>,
    pub pt_f: Vec<Block>,
    pub pt_s: Vec<Block>,
    /// Rows: cls, dont_care, zero, one.
    pub special: usize,
    pub pos_f: usize,
    pub pos_s: usize,
    pub heads: Vec<Mlp>,
}

pub(crate) const TOKEN_CLS: usize = 0;
pub(crate) const TOKEN_DONT_CARE: usize = 1;
pub(crate) const TOKEN_ZERO: usize = 2;
pub(crate) const TOKEN_ONE: usize = 3;

/// A model: configuration, parameters and their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub(crate) layout: Layout,
    /// Fixed orthonormal rows for primary-input structural embeddings.
    pub(crate) pi_basis: Tensor<T>,
}

struct Init<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Init<'_, T> {
    fn tensor(&mut self, name: String, t: Tensor<T>) -> usize {
        self.store.add(name, t).expect("unique parameter names")
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) -> Linear {
        let w = Tensor::randn(&[i, o], 1.0 / (i as f64).sqrt(), &mut self.rng);
        Linear {
            w: self.tensor(format!("{name}.w"), w),
            b: self.tensor(format!("{name}.b"), Tensor::zeros(&[1, o])),
        }
    }

    fn matrix(&mut self, name: &str, i: usize, o: usize) -> usize {
        let w = Tensor::randn(&[i, o], 1.0 / (i as f64).sqrt(), &mut self.rng);
        self.tensor(name.to_string(), w)
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.tensor(format!("{name}.g"), Tensor::full(&[1, d], T::one())),
            b: self.tensor(format!("{name}.b"), Tensor::zeros(&[1, d])),
        }
    }

    fn block(&mut self, name: &str, cfg: &ModelConfig, anchored: bool) -> Block {
        let d = cfg.d;
        Block {
            ln1: self.norm(&format!("{name}.ln1"), d),
            ln_kv: anchored.then(|| self.norm(&format!("{name}.ln_kv"), d)),
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
            ln2: self.norm(&format!("{name}.ln2"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, cfg.ffn_hidden),
            ff2: self.linear(&format!("{name}.ff2"), cfg.ffn_hidden, d),
        }
    }

    fn stream(&mut self, name: &str, input: usize, d: usize) -> Stream {
        Stream {
            agg_and: self.linear(&format!("{name}.agg_and"), input, d),
            agg_not: self.linear(&format!("{name}.agg_not"), input, d),
            gru: Gru {
                z: self.linear(&format!("{name}.gru.z"), d, d),
                uz: self.matrix(&format!("{name}.gru.uz"), d, d),
                r: self.linear(&format!("{name}.gru.r"), d, d),
                ur: self.matrix(&format!("{name}.gru.ur"), d, d),
                n: self.linear(&format!("{name}.gru.n"), d, d),
                un: self.matrix(&format!("{name}.gru.un"), d, d),
            },
        }
    }

    fn mlp(&mut self, name: &str, i: usize, h: usize, o: usize) -> Mlp {
        Mlp {
            layers: [
                self.linear(&format!("{name}.0"), i, h),
                self.linear(&format!("{name}.1"), h, h),
                self.linear(&format!("{name}.2"), h, o),
            ],
        }
    }
}

/// Rows of a seeded orthonormal basis of `R^d` (Gram–Schmidt on Gaussian
/// rows).
pub(crate) fn orthonormal_basis(d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Tensor::<f64>::randn(&[d, d], 1.0, &mut rng);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    for i in 0..d {
        let mut v = raw.row(i).to_vec();
        for _ in 0..2 {
            for u in &rows {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        rows.push(v);
    }
    rows
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let d = config.d;
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let tok_f = init.stream("tok.f", 2 * d, d);
        let tok_s = init.stream("tok.s", d, d);
        let rt_f = (0..config.rt_depth)
            .map(|i| init.block(&format!("rt.f.{i}"), &config, true))
            .collect();
        let rt_s = (0..config.rt_depth)
            .map(|i| init.block(&format!("rt.s.{i}"), &config, true))
            .collect();
        let pt_f = (0..config.pt_depth)
            .map(|i| init.block(&format!("pt.f.{i}"), &config, false))
            .collect();
        let pt_s = (0..config.pt_depth)
            .map(|i| init.block(&format!("pt.s.{i}"), &config, false))
            .collect();
        let special = Tensor::randn(&[4, d], 0.5, &mut init.rng);
        let special = init.tensor("pt.special".into(), special);
        let pos_f = Tensor::randn(&[config.pt_positions, d], 0.1, &mut init.rng);
        let pos_f = init.tensor("pt.f.pos".into(), pos_f);
        let pos_s = Tensor::randn(&[config.pt_positions, d], 0.1, &mut init.rng);
        let pos_s = init.tensor("pt.s.pos".into(), pos_s);
        let heads = Head::ALL
            .iter()
            .map(|h| {
                init.mlp(
                    &format!("head.{}", h.name()),
                    h.arity() * d,
                    config.head_hidden,
                    h.out_width(),
                )
            })
            .collect();
        let layout = Layout {
            tok_f,
            tok_s,
            rt_f,
            rt_s,
            pt_f,
            pt_s,
            special,
            pos_f,
            pos_s,
            heads,
        };
        let basis: Vec<T> = orthonormal_basis(d, config.seed ^ 0x5eed_0b5e)
            .into_iter()
            .flatten()
            .map(T::of)
            .collect();
        Ok(Self {
            pi_basis: Tensor::matrix(d, d, basis)?,
            config,
            params,
            layout,
        })
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
            pi_basis: self.pi_basis.cast(),
        }
    }

    /// Replaces all parameter values, checking names and shapes.
    pub fn load_params(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        if tensors.len() != self.params.len() {
            return arg(format!(
                "{} tensors for {} parameters",
                tensors.len(),
                self.params.len()
            ));
        }
        for (i, (name, t)) in tensors.iter().enumerate() {
            if name != self.params.name(i) || t.shape() != self.params.get(i).shape() {
                return arg(format!(
                    "parameter {i} is {name} {:?}, expected {}",
                    t.shape(),
                    self.params.name(i)
                ));
            }
        }
        for (i, (_, t)) in tensors.iter().enumerate() {
            *self.params.get_mut(i) = t.clone();
        }
        Ok(())
    }

    /// Trainable flags from parameter-name prefixes.
    pub fn trainable_mask(&self, prefixes: &[String]) -> Vec<bool> {
        self.params
            .names()
            .iter()
            .map(|n| prefixes.iter().any(|p| n.starts_with(p.as_str())))
            .collect()
    }
}

/// One forward pass: a tape plus the parameters bound to it. Frozen
/// parameters enter as constants.
pub struct Fwd<'m, T: Real> {
    pub tape: Tape<T>,
    pub model: &'m Model<T>,
    bound: Vec<Option<Var>>,
    frozen: Option<Vec<bool>>,
}

impl<'m, T: Real> Fwd<'m, T> {
    pub fn new(model: &'m Model<T>) -> Self {
        Self {
            tape: Tape::new(),
            model,
            bound: vec![None; model.params.len()],
            frozen: None,
        }
    }

    /// A pass that records no gradients.
    pub fn inference(model: &'m Model<T>) -> Self {
        let mut f = Self::new(model);
        f.frozen = Some(vec![true; model.params.len()]);
        f
    }

    /// Only parameters flagged in `trainable` will receive gradients.
    pub fn with_trainable(model: &'m Model<T>, trainable: &[bool]) -> Self {
        let mut f = Self::new(model);
        f.frozen = Some(trainable.iter().map(|t| !t).collect());
        f
    }

    pub fn p(&mut self, id: usize) -> Var {
        if let Some(v) = self.bound[id] {
            return v;
        }
        let t = self.model.params.get(id).clone();
        let v = if self.frozen.as_ref().is_some_and(|f| f[id]) {
            self.tape.constant(t)
        } else {
            self.tape.leaf(t)
        };
        self.bound[id] = Some(v);
        v
    }

    /// Per-parameter gradients of `loss`.
    pub fn gradients(&self, loss: Var) -> Vec<Option<Vec<T>>> {
        let mut g = self.tape.backward(loss);
        self.bound.iter().map(|v| v.and_then(|v| g.take(v))).collect()
    }

    pub(crate) fn linear(&mut self, x: Var, l: Linear) -> Result<Var> {
        let (w, b) = (self.p(l.w), self.p(l.b));
        let y = self.tape.matmul(x, w)?;
        Ok(self.tape.add_row(y, b)?)
    }

    pub(crate) fn norm(&mut self, x: Var, n: Norm) -> Result<Var> {
        let (g, b) = (self.p(n.g), self.p(n.b));
        Ok(self.tape.layer_norm(x, g, b)?)
    }

    /// Three-layer ReLU MLP, raw outputs.
    pub(crate) fn mlp(&mut self, x: Var, m: &Mlp) -> Result<Var> {
        let h = self.linear(x, m.layers[0])?;
        let h = self.tape.relu(h);
        let h = self.linear(h, m.layers[1])?;
        let h = self.tape.relu(h);
        self.linear(h, m.layers[2])
    }

    pub(crate) fn gru(&mut self, x: Var, h: Var, g: &Gru) -> Result<Var> {
        let (uz, ur, un) = (self.p(g.uz), self.p(g.ur), self.p(g.un));
        let zx = self.linear(x, g.z)?;
        let zh = self.tape.matmul(h, uz)?;
        let z = self.tape.add(zx, zh)?;
        let z = self.tape.sigmoid(z);
        let rx = self.linear(x, g.r)?;
        let rh = self.tape.matmul(h, ur)?;
        let r = self.tape.add(rx, rh)?;
        let r = self.tape.sigmoid(r);
        let rh = self.tape.mul(r, h)?;
        let nx = self.linear(x, g.n)?;
        let nh = self.tape.matmul(rh, un)?;
        let n = self.tape.add(nx, nh)?;
        let n = self.tape.tanh(n);
        // h' = n + z * (h - n)
        let diff = self.tape.sub(h, n)?;
        let zd = self.tape.mul(z, diff)?;
        Ok(self.tape.add(n, zd)?)
    }

    /// Pre-norm block. Queries come from `h`; keys and values come from
    /// `h` itself, or from `anchor` when the block carries its own key/value
    /// normalization.
    pub(crate) fn block(&mut self, h: Var, anchor: Var, b: &Block, allow: &[bool]) -> Result<Var> {
        let heads = self.model.config.heads;
        let d = self.model.config.d;
        let dh = d / heads;
        let a = self.norm(h, b.ln1)?;
        let src = match b.ln_kv {
            Some(n) => self.norm(anchor, n)?,
            None => a,
        };
        let q = self.linear(a, b.q)?;
        let k = self.linear(src, b.k)?;
        let v = self.linear(src, b.v)?;
        let mut outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let qh = self.tape.slice_cols(q, i * dh, dh)?;
            let kh = self.tape.slice_cols(k, i * dh, dh)?;
            let vh = self.tape.slice_cols(v, i * dh, dh)?;
            let s = self.tape.matmul_t(qh, kh, false, true)?;
            let s = self.tape.scale(s, 1.0 / (dh as f64).sqrt());
            let p = self.tape.softmax_masked(s, allow)?;
            outs.push(self.tape.matmul(p, vh)?);
        }
        let cat = if heads == 1 {
            outs[0]
        } else {
            self.tape.concat_cols(&outs)?
        };
        let o = self.linear(cat, b.o)?;
        let h = self.tape.add(h, o)?;
        let m = self.norm(h, b.ln2)?;
        let f = self.linear(m, b.ff1)?;
        let f = self.tape.relu(f);
        let f = self.linear(f, b.ff2)?;
        Ok(self.tape.add(h, f)?)
    }

    /// Runs a readout head on already-concatenated inputs and returns raw
    /// outputs (logits for sigmoid heads, pre-softplus values otherwise).
    pub fn head_raw(&mut self, head: Head, x: Var) -> Result<Var> {
        let want = head.arity() * self.model.config.d;
        let got = self.tape.dims(x).1;
        if got != want {
            return arg(format!("head {} takes width {want}, got {got}", head.name()));
        }
        let m = self.model.layout.heads[head as usize].clone();
        self.mlp(x, &m)
    }

    /// Head output mapped into its declared range.
    pub fn head(&mut self, head: Head, x: Var) -> Result<Var> {
        let raw = self.head_raw(head, x)?;
        Ok(match head.readout() {
            Readout::Sigmoid => self.tape.sigmoid(raw),
            Readout::Softplus => self.tape.softplus(raw),
            Readout::Logits => raw,
        })
    }

    /// Head on one or two embedding blocks given as separate variables.
    pub fn head_on(&mut self, head: Head, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != head.arity() {
            return arg(format!(
                "head {} takes {} inputs, got {}",
                head.name(),
                head.arity(),
                inputs.len()
            ));
        }
        let x = if inputs.len() == 1 {
            inputs[0]
        } else {
            self.tape.concat_cols(inputs)?
        };
        self.head(head, x)
    }
}
