// SPDX-License-Identifier: Apache-2.0

//! The `gatelab` command-line driver.

pub mod config;
pub mod manifest;

use std::fmt::Display;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use gatelab_core::labels::{tt_pairs_for, LabelPack};
use gatelab_core::sim::Workload;
use gatelab_core::{build_labelpacks, generate_random_aig, parse_aiger, read_dataset, write_dataset, Aig};
use gatelab_model::large::logic_gates;
use gatelab_model::{
    correlated_pairs, evaluate, export_pairs, finetune_tt_pair, load_model, partition_areas, save_model, scaling_csv,
    scaling_harness, Model, Side, TrainState,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::manifest::{file_sha256, write_manifest, Outputs};

#[derive(Debug, Parser)]
#[command(name = "gatelab", version, about = "Circuit representation learning toolkit")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; also sets the seed of the command's own section.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run sequentially so outputs are bitwise reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write random AIGs as AIGER files into a directory.
    Gen {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        pis_min: Option<usize>,
        #[arg(long)]
        pis_max: Option<usize>,
        #[arg(long)]
        gates_min: Option<usize>,
        #[arg(long)]
        gates_max: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a label dataset from the AIGER files of a directory.
    Label {
        /// Directory of `.aag` files.
        #[arg(long)]
        input: PathBuf,
        /// Dataset file (JSON lines).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_patterns: Option<usize>,
    },
    /// Train a model on a label dataset.
    Pretrain {
        #[arg(long)]
        train: PathBuf,
        /// Optional dataset evaluated after every epoch.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Training checkpoint written after every epoch.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset and write a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on nested fractions of a dataset and write a CSV report.
    Scale {
        #[arg(long)]
        data: PathBuf,
        /// Held-out dataset; without it a seeded share of `--data` is held out.
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a circuit of any size by window shifting; writes JSON.
    EncodeLarge {
        #[arg(long)]
        checkpoint: PathBuf,
        /// AIGER file.
        #[arg(long)]
        aig: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        l: Option<usize>,
        #[arg(long)]
        delta: Option<usize>,
        #[arg(long)]
        max_gates: Option<usize>,
    },
    /// Fine-tune on simulated gate-pair distances of one circuit.
    FinetuneTtpair {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        aig: PathBuf,
        /// Model checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Export correlated gate pairs for a SAT solver.
    SatPairs {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        aig: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, value_parser = parse_side)]
        side: Option<Side>,
        #[arg(long)]
        max_candidates: Option<usize>,
    },
}

fn parse_side(s: &str) -> std::result::Result<Side, String> {
    match s {
        "above" => Ok(Side::Above),
        "below" => Ok(Side::Below),
        _ => Err(format!("side must be `above` or `below`, got `{s}`")),
    }
}

/// Prefixes an error with the module that raised it.
fn tag<E: Display>(module: &'static str) -> impl FnOnce(E) -> anyhow::Error {
    move |e| anyhow!("{module}: {e}")
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Cli {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        if self.deterministic {
            c.deterministic = true;
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
            match self.command {
                Command::Label { .. } => c.label.seed = seed,
                Command::Pretrain { .. } | Command::Scale { .. } => {
                    c.train.seed = seed;
                    c.model.seed = seed;
                }
                _ => {}
            }
        }
        match &self.command {
            Command::Gen {
                n,
                pis_min,
                pis_max,
                gates_min,
                gates_max,
                ..
            } => {
                set(&mut c.gen.n, *n);
                set(&mut c.gen.pis_min, *pis_min);
                set(&mut c.gen.pis_max, *pis_max);
                set(&mut c.gen.gates_min, *gates_min);
                set(&mut c.gen.gates_max, *gates_max);
            }
            Command::Label { n_patterns, .. } => set(&mut c.label.n_patterns, *n_patterns),
            Command::Pretrain {
                epochs,
                batch_size,
                lr,
                max_steps,
                ..
            } => {
                set(&mut c.train.epochs, *epochs);
                set(&mut c.train.batch_size, *batch_size);
                set(&mut c.train.lr, *lr);
                set(&mut c.train.max_steps, *max_steps);
            }
            Command::Scale { fractions, epochs, .. } => {
                set(&mut c.scale.fractions, fractions.clone());
                set(&mut c.train.epochs, *epochs);
            }
            Command::EncodeLarge {
                l, delta, max_gates, ..
            } => {
                set(&mut c.large.l, *l);
                set(&mut c.large.delta, *delta);
                set(&mut c.large.max_gates, *max_gates);
            }
            Command::FinetuneTtpair { steps, lr, pairs, .. } => {
                set(&mut c.finetune.steps, *steps);
                set(&mut c.finetune.lr, *lr);
                set(&mut c.ttpair.pairs, *pairs);
            }
            Command::SatPairs {
                theta,
                side,
                max_candidates,
                ..
            } => {
                set(&mut c.sat.theta, *theta);
                set(&mut c.sat.side, *side);
                set(&mut c.sat.max_candidates, *max_candidates);
            }
            Command::Eval { .. } => {}
        }
        if c.deterministic {
            c.train.parallel = false;
        }
        c.validate()?;
        Ok(c)
    }

    fn name(&self) -> &'static str {
        match self.command {
            Command::Gen { .. } => "gen",
            Command::Label { .. } => "label",
            Command::Pretrain { .. } => "pretrain",
            Command::Eval { .. } => "eval",
            Command::Scale { .. } => "scale",
            Command::EncodeLarge { .. } => "encode-large",
            Command::FinetuneTtpair { .. } => "finetune-ttpair",
            Command::SatPairs { .. } => "sat-pairs",
        }
    }
}

/// Runs one command. Files it created are removed again on error.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    let mut out = Outputs::default();
    let name = cli.name();
    match &cli.command {
        Command::Gen { out: dir, .. } => gen(&cfg, dir, &mut out)?,
        Command::Label { input, out: path, .. } => label(&cfg, input, path, &mut out)?,
        Command::Pretrain {
            train,
            eval,
            out: path,
            resume,
            ..
        } => pretrain(&cfg, train, eval.as_deref(), path, resume.as_deref(), &mut out)?,
        Command::Eval {
            checkpoint,
            data,
            out: path,
        } => {
            let model = read_model(checkpoint)?;
            let packs = read_packs(data)?;
            let refs: Vec<&LabelPack> = packs.iter().collect();
            let report = evaluate(&model, &refs, !cfg.deterministic).map_err(tag("train"))?;
            out.write(path, serde_json::to_string_pretty(&report)? + "\n")?;
            write_manifest(
                &mut out,
                name,
                &cfg,
                &[checkpoint, data],
                path,
                std::slice::from_ref(path),
            )?;
        }
        Command::Scale {
            data,
            heldout,
            out: path,
            ..
        } => scale(&cfg, data, heldout.as_deref(), path, &mut out)?,
        Command::EncodeLarge {
            checkpoint,
            aig,
            out: path,
            ..
        } => encode_large(&cfg, checkpoint, aig, path, &mut out)?,
        Command::FinetuneTtpair {
            checkpoint,
            aig,
            out: path,
            ..
        } => finetune(&cfg, checkpoint, aig, path, &mut out)?,
        Command::SatPairs {
            checkpoint,
            aig,
            out: path,
            ..
        } => sat_pairs(&cfg, checkpoint, aig, path, &mut out)?,
    }
    out.commit();
    Ok(())
}

fn gen(cfg: &RunConfig, dir: &Path, out: &mut Outputs) -> Result<()> {
    let g = &cfg.gen;
    out.dir(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = g.n.saturating_sub(1).to_string().len().max(4);
    let mut produced = Vec::with_capacity(g.n);
    for i in 0..g.n {
        let pis = rng.gen_range(g.pis_min..=g.pis_max);
        let gates = rng.gen_range(g.gates_min..=g.gates_max);
        let aig = generate_random_aig(rng.gen(), pis, gates).map_err(tag("aig-core"))?;
        let path = dir.join(format!("c{i:0width$}.aag"));
        out.write(&path, aig.to_aiger())?;
        produced.push(path);
    }
    write_manifest(out, "gen", cfg, &[], dir, &produced)?;
    log::info!("wrote {} circuits to {}", g.n, dir.display());
    Ok(())
}

fn read_aig(path: &Path) -> Result<Aig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cli: reading {}", path.display()))?;
    parse_aiger(&text).map_err(|e| anyhow!("aig-core: {}: {e}", path.display()))
}

fn read_packs(path: &Path) -> Result<Vec<LabelPack>> {
    read_dataset(path).map_err(|e| anyhow!("labels: {}: {e}", path.display()))
}

fn read_model(path: &Path) -> Result<Model<f64>> {
    load_model(path).map_err(|e| anyhow!("train: {}: {e}", path.display()))
}

fn label(cfg: &RunConfig, input: &Path, path: &Path, out: &mut Outputs) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("cli: reading directory {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "aag"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("labels: no .aag files in {}", input.display());
    }
    let circuits = files
        .iter()
        .map(|f| {
            let name = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, read_aig(f)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let packs = build_labelpacks(&circuits, &cfg.label, !cfg.deterministic).map_err(tag("labels"))?;
    out.file(path);
    write_dataset(&packs, path).map_err(tag("labels"))?;
    let inputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    write_manifest(out, "label", cfg, &inputs, path, &[path.to_path_buf()])?;
    log::info!("labelled {} circuits into {}", packs.len(), path.display());
    Ok(())
}

fn pretrain(
    cfg: &RunConfig,
    train: &Path,
    eval: Option<&Path>,
    path: &Path,
    resume: Option<&Path>,
    out: &mut Outputs,
) -> Result<()> {
    let packs = read_packs(train)?;
    let eval_packs = match eval {
        Some(e) => read_packs(e)?,
        None => Vec::new(),
    };
    let mut state = match resume {
        Some(r) => TrainState::<f64>::load(r, Some(&cfg.train)).map_err(tag("train"))?,
        None => TrainState::new(Model::new(cfg.model.clone()).map_err(tag("model"))?, cfg.train.clone())
            .map_err(tag("train"))?,
    };
    out.file(path);
    state.run(&packs, &eval_packs, Some(path)).map_err(tag("train"))?;
    if !path.exists() {
        state.save(path).map_err(tag("train"))?;
    }
    let mut inputs = vec![train];
    inputs.extend(eval);
    inputs.extend(resume);
    write_manifest(out, "pretrain", cfg, &inputs, path, &[path.to_path_buf()])?;
    Ok(())
}

fn scale(cfg: &RunConfig, data: &Path, heldout: Option<&Path>, path: &Path, out: &mut Outputs) -> Result<()> {
    let mut packs = read_packs(data)?;
    let held = match heldout {
        Some(h) => read_packs(h)?,
        None => {
            let n_held = ((packs.len() as f64) * cfg.scale.holdout).round().max(1.0) as usize;
            if n_held >= packs.len() {
                bail!("cli: {} circuits are too few to hold out {n_held}", packs.len());
            }
            packs.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
            packs.split_off(packs.len() - n_held)
        }
    };
    let rows =
        scaling_harness(&packs, &held, &cfg.scale.fractions, &cfg.model, &cfg.train, cfg.seed).map_err(tag("train"))?;
    out.write(path, scaling_csv(&rows))?;
    let mut inputs = vec![data];
    inputs.extend(heldout);
    write_manifest(out, "scale", cfg, &inputs, path, &[path.to_path_buf()])?;
    Ok(())
}

fn encode_large(cfg: &RunConfig, checkpoint: &Path, aig_path: &Path, path: &Path, out: &mut Outputs) -> Result<()> {
    let model = read_model(checkpoint)?;
    let aig = read_aig(aig_path)?;
    let lc = &cfg.large;
    let part = partition_areas(&aig, lc.l, lc.delta, lc.max_gates).map_err(tag("largecircuit"))?;
    let wl = Workload::uniform(aig.pis().len());
    let enc = model
        .window_shift_encode(&aig, &wl, &part, false)
        .map_err(tag("largecircuit"))?;
    let doc = serde_json::json!({
        "gates": aig.len(),
        "d": model.config.d,
        "areas": part.areas.len(),
        "stage": enc.state.stage,
        "visits": enc.visits,
        "hf": (0..aig.len()).map(|g| enc.state.hf.row(g).to_vec()).collect::<Vec<_>>(),
        "hs": (0..aig.len()).map(|g| enc.state.hs.row(g).to_vec()).collect::<Vec<_>>(),
    });
    out.write(path, serde_json::to_string(&doc)? + "\n")?;
    write_manifest(
        out,
        "encode-large",
        cfg,
        &[checkpoint, aig_path],
        path,
        &[path.to_path_buf()],
    )?;
    Ok(())
}

fn finetune(cfg: &RunConfig, checkpoint: &Path, aig_path: &Path, path: &Path, out: &mut Outputs) -> Result<()> {
    let mut model = read_model(checkpoint)?;
    let aig = read_aig(aig_path)?;
    let pairs = tt_pairs_for(&aig, cfg.ttpair.pairs, cfg.ttpair.n_patterns, cfg.seed).map_err(tag("labels"))?;
    let wl = Workload::uniform(aig.pis().len());
    let history = finetune_tt_pair(&mut model, &aig, &wl, &pairs, &cfg.finetune).map_err(tag("largecircuit"))?;
    log::info!(
        "gate-pair loss {:.6} -> {:.6} over {} steps",
        history.losses[0],
        history.losses.last().copied().unwrap_or(f64::NAN),
        history.losses.len() - 1
    );
    out.file(path);
    let extra = serde_json::json!({ "finetune": cfg.finetune, "losses": history.losses });
    save_model(&model, path, extra).map_err(tag("train"))?;
    write_manifest(
        out,
        "finetune-ttpair",
        cfg,
        &[checkpoint, aig_path],
        path,
        &[path.to_path_buf()],
    )?;
    Ok(())
}

fn sat_pairs(cfg: &RunConfig, checkpoint: &Path, aig_path: &Path, path: &Path, out: &mut Outputs) -> Result<()> {
    let model = read_model(checkpoint)?;
    let aig = read_aig(aig_path)?;
    let lc = &cfg.large;
    let part = partition_areas(&aig, lc.l, lc.delta, lc.max_gates).map_err(tag("largecircuit"))?;
    let wl = Workload::uniform(aig.pis().len());
    let enc = model
        .window_shift_encode(&aig, &wl, &part, false)
        .map_err(tag("largecircuit"))?;
    let candidates = candidate_pairs(&logic_gates(&aig), cfg.sat.max_candidates, cfg.seed);
    let scored = correlated_pairs(&model, &enc.state.hf, cfg.sat.theta, cfg.sat.side, &candidates)
        .map_err(tag("largecircuit"))?;
    let text = export_pairs(
        &scored,
        cfg.sat.theta,
        cfg.sat.side,
        cfg.seed,
        &file_sha256(checkpoint)?,
    );
    out.write(path, text)?;
    write_manifest(
        out,
        "sat-pairs",
        cfg,
        &[checkpoint, aig_path],
        path,
        &[path.to_path_buf()],
    )?;
    log::info!("{} of {} candidate pairs exported", scored.len(), candidates.len());
    Ok(())
}

/// Every unordered pair of `gates`, or a seeded sample of `max` distinct
/// pairs when there are more, in ascending order.
pub fn candidate_pairs(gates: &[usize], max: usize, seed: u64) -> Vec<(usize, usize)> {
    let n = gates.len();
    let total = n * n.saturating_sub(1) / 2;
    if total <= max {
        let mut all = Vec::with_capacity(total);
        for a in 0..n {
            for b in a + 1..n {
                all.push((gates[a], gates[b]));
            }
        }
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < max {
        let a = gates[rng.gen_range(0..n)];
        let b = gates[rng.gen_range(0..n)];
        if a != b {
            picked.insert((a.min(b), a.max(b)));
        }
    }
    picked.into_iter().collect()
}
