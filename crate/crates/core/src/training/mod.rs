//! Joint training: per step, one discriminator update, one generator update
//! and one regularizer update, in that order.

mod checkpoint;

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_MAGIC};

use crate::autograd::{Graph, Tensor, Var};
use crate::config::{NetworksConfig, RunConfig, TrainConfig};
use crate::data::{batch_of, make_pair_stream, FaceImage, Sample};
use crate::experiment::{Datasets, FrModels};
use crate::histogram::histogram_match_batch;
use crate::losses::{
    adv_loss_g, adv_loss_h, gan_loss_d, gan_loss_g, gan_loss_h_on, idt_loss_with, makeup_loss,
    reg_cycle_loss_with, totals, LossReport, LossTerms, RandomFeaturePerceptual,
};
use crate::networks::{
    BoundEmbedder, BoundRegularizer, Discriminator, Embedder, FaceRecognizer, Generator, Purifier,
    Regularizer, Surrogate, Translator,
};
use crate::nn::ParamStore;
use crate::optim::{Adam, AdamConfig};
use crate::{Error, Result};

const NET_SALT: u64 = 0x6e65_7473;
const PAIR_SALT: u64 = 0x7061_6972;
const PROTECT_CHUNK: usize = 16;

/// The four trained networks.
#[derive(Clone, Debug)]
pub struct Nets {
    pub g: Generator,
    pub dx: Discriminator,
    pub dy: Discriminator,
    pub h: Regularizer,
}

impl Nets {
    pub fn new(cfg: &NetworksConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NET_SALT);
        Self {
            g: Generator::new(cfg.generator, &mut rng),
            dx: Discriminator::new(cfg.discriminator, &mut rng),
            dy: Discriminator::new(cfg.discriminator, &mut rng),
            h: Regularizer::new(cfg.regularizer, &mut rng),
        }
    }

    /// Parameter stores with their short names, in checkpoint order.
    pub fn stores(&self) -> [(&'static str, &ParamStore); 4] {
        [
            ("g", &self.g.params),
            ("dx", &self.dx.params),
            ("dy", &self.dy.params),
            ("h", &self.h.params),
        ]
    }

    pub(crate) fn stores_mut(&mut self) -> [&mut ParamStore; 4] {
        [
            &mut self.g.params,
            &mut self.dx.params,
            &mut self.dy.params,
            &mut self.h.params,
        ]
    }
}

pub fn adam_config(t: &TrainConfig) -> AdamConfig {
    AdamConfig {
        learning_rate: t.learning_rate,
        beta1: t.adam_beta1,
        beta2: t.adam_beta2,
        ..AdamConfig::default()
    }
}

/// One Adam state per network, matching [`Nets::stores`].
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub g: Adam,
    pub dx: Adam,
    pub dy: Adam,
    pub h: Adam,
}

impl Optimizers {
    pub fn new(cfg: &TrainConfig, nets: &Nets) -> Self {
        let c = adam_config(cfg);
        Self {
            g: Adam::new(c, &nets.g.params),
            dx: Adam::new(c, &nets.dx.params),
            dy: Adam::new(c, &nets.dy.params),
            h: Adam::new(c, &nets.h.params),
        }
    }

    pub fn all(&self) -> [&Adam; 4] {
        [&self.g, &self.dx, &self.dy, &self.h]
    }

    pub(crate) fn all_mut(&mut self) -> [&mut Adam; 4] {
        [&mut self.g, &mut self.dx, &mut self.dy, &mut self.h]
    }
}

/// Everything a run needs to continue or to be evaluated: trained weights,
/// optimizer moments, random state, the surrogate and holdout embedders and
/// the target face.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// Completed steps.
    pub step: u64,
    pub config: RunConfig,
    /// Drives the input-diversity draws.
    pub rng: ChaCha8Rng,
    /// Position of the pair sampler.
    pub pair_word_pos: u128,
    pub nets: Nets,
    pub optim: Optimizers,
    pub ensemble: Vec<FaceRecognizer>,
    pub holdout: FaceRecognizer,
    /// `[1, 3, R, R]`.
    pub target: Tensor,
}

impl Checkpoint {
    pub fn new(config: RunConfig, fr: FrModels, target: &FaceImage) -> Result<Self> {
        config.validate()?;
        if fr.ensemble.is_empty() {
            return Err(Error::Config("the surrogate ensemble is empty".into()));
        }
        if fr
            .ensemble
            .iter()
            .any(|m| m.model_id == fr.holdout.model_id)
        {
            return Err(Error::Config(format!(
                "holdout model {} is also in the ensemble",
                fr.holdout.model_id
            )));
        }
        let seed = config.training.seed;
        let nets = Nets::new(&config.networks, seed);
        let optim = Optimizers::new(&config.training, &nets);
        Ok(Self {
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pair_word_pos: 0,
            nets,
            optim,
            ensemble: fr.ensemble,
            holdout: fr.holdout,
            target: batch_of([target]),
            config,
        })
    }

    pub fn config_hash(&self) -> String {
        self.config.hash()
    }

    /// `G(x, y)` for batches of sources and references, outside any
    /// training graph.
    pub fn protect(&self, sources: &Tensor, references: &Tensor) -> Result<Tensor> {
        if sources.shape() != references.shape() {
            return Err(Error::ShapeMismatch {
                expected: sources.shape().to_vec(),
                actual: references.shape().to_vec(),
            });
        }
        let n = sources.shape()[0];
        let parts: Vec<Tensor> = (0..n)
            .step_by(PROTECT_CHUNK)
            .map(|start| {
                let count = PROTECT_CHUNK.min(n - start);
                let g = Graph::new();
                let gen = self.nets.g.bind(&g, false);
                let out = gen.translate(
                    g.constant(sources.slice_batch(start, count)),
                    g.constant(references.slice_batch(start, count)),
                );
                (*out.value()).clone()
            })
            .collect();
        Ok(Tensor::stack(&parts))
    }

    /// Mean cosine similarity of each image to the target over the ensemble.
    pub fn ensemble_similarity(&self, images: &Tensor) -> Vec<f64> {
        let n = images.shape()[0];
        let mut sims = vec![0.0; n];
        for m in &self.ensemble {
            let z = m.embed_images(&self.target);
            for (s, v) in sims.iter_mut().zip(crate::evaluation::similarities_to(
                &m.embed_images(images),
                &z,
            )) {
                *s += v / self.ensemble.len() as f64;
            }
        }
        sims
    }
}

/// A batch of `(x, y)` pairs with their histogram-matched makeup targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    /// `HM(x, y)`: `x` recoloured region-wise after `y`.
    pub hm_xy: Tensor,
    /// `HM(y, x)`.
    pub hm_yx: Tensor,
}

impl Batch {
    pub fn from_pairs(pairs: &[(&Sample, &Sample)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        let x = batch_of(pairs.iter().map(|p| &p.0.image));
        let y = batch_of(pairs.iter().map(|p| &p.1.image));
        let xm: Vec<_> = pairs.iter().map(|p| &p.0.masks).collect();
        let ym: Vec<_> = pairs.iter().map(|p| &p.1.masks).collect();
        let hm_xy = histogram_match_batch(&x, &xm, &y, &ym)?;
        let hm_yx = histogram_match_batch(&y, &ym, &x, &xm)?;
        Ok(Self { x, y, hm_xy, hm_yx })
    }
}

/// Sub-steps of one training step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Discriminator,
    Generator,
    Regularizer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepTrace {
    /// 1-based index of the step.
    pub step: u64,
    pub report: LossReport,
    pub wall_ms: f64,
}

/// One line of the trace CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub l_d: f64,
    pub l_g_gan: f64,
    pub l_g_reg: f64,
    pub l_g_adv: f64,
    pub l_g_make: f64,
    pub l_idt: f64,
    pub l_h_gan: f64,
    pub l_h_adv: f64,
    pub l_h_make: f64,
    pub l_g_total: f64,
    pub l_h_total: f64,
    pub l_d_total: f64,
    pub wall_ms: f64,
}

impl TraceRow {
    /// The row with its timing zeroed, for run-to-run comparisons.
    pub fn without_wall(self) -> Self {
        Self {
            wall_ms: 0.0,
            ..self
        }
    }
}

impl StepTrace {
    pub fn row(&self) -> TraceRow {
        let (r, t) = (&self.report, &self.report.terms);
        TraceRow {
            step: self.step,
            l_d: t.d_gan,
            l_g_gan: t.g_gan,
            l_g_reg: t.g_reg,
            l_g_adv: t.g_adv,
            l_g_make: t.g_make,
            l_idt: t.idt,
            l_h_gan: t.h_gan,
            l_h_adv: t.h_adv,
            l_h_make: t.h_make,
            l_g_total: r.g_total,
            l_h_total: r.h_total,
            l_d_total: r.d_total,
            wall_ms: self.wall_ms,
        }
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(std::io::Error::from)?;
    let rows = rd
        .deserialize()
        .collect::<std::result::Result<Vec<TraceRow>, _>>();
    Ok(rows.map_err(std::io::Error::from)?)
}

/// `H` when the regularizer is trained, the identity otherwise.
enum Purify<'a, 'g> {
    Net(BoundRegularizer<'a, 'g>),
    Identity,
}

impl<'g> Purifier<'g> for Purify<'_, 'g> {
    fn purify(&self, x: Var<'g>) -> Var<'g> {
        match self {
            Purify::Net(h) => h.purify(x),
            Purify::Identity => x,
        }
    }
}

fn frozen<'a, 'g>(models: &'a [FaceRecognizer], graph: &'g Graph) -> Vec<BoundEmbedder<'a, 'g>> {
    models.iter().map(|m| m.bind(graph, false)).collect()
}

fn as_embedders<'b, 'g>(bound: &'b [BoundEmbedder<'_, 'g>]) -> Vec<&'b dyn Embedder<'g>> {
    bound.iter().map(|m| m as &dyn Embedder<'g>).collect()
}

/// Live training state: the checkpointable part plus the data it samples.
pub struct TrainState {
    pub checkpoint: Checkpoint,
    pub data: Datasets,
    z_embeddings: Vec<Tensor>,
    perceptual: RandomFeaturePerceptual,
}

impl TrainState {
    pub fn new(config: RunConfig, data: Datasets, fr: FrModels) -> Result<Self> {
        let ck = Checkpoint::new(config, fr, &data.target)?;
        Ok(Self::resume(ck, data))
    }

    /// Continues from `checkpoint`; the target face comes from the checkpoint.
    pub fn resume(checkpoint: Checkpoint, data: Datasets) -> Self {
        let z_embeddings = checkpoint
            .ensemble
            .iter()
            .map(|m| m.embed_images(&checkpoint.target))
            .collect();
        Self {
            checkpoint,
            data,
            z_embeddings,
            perceptual: RandomFeaturePerceptual::default(),
        }
    }

    /// Draws the next batch of pairs and advances the sampler.
    pub fn next_batch(&mut self) -> Result<Batch> {
        let ck = &mut self.checkpoint;
        let mut stream = make_pair_stream(
            &self.data.sources,
            &self.data.references,
            ck.config.training.seed ^ PAIR_SALT,
        )?;
        stream.set_word_pos(ck.pair_word_pos);
        let pairs = stream.next_batch(ck.config.training.batch_size);
        ck.pair_word_pos = stream.word_pos();
        Batch::from_pairs(&pairs)
    }

    /// Samples a batch and trains on it.
    pub fn step(&mut self) -> Result<StepTrace> {
        let batch = self.next_batch()?;
        train_step(self, &batch)
    }
}

pub fn train_step(state: &mut TrainState, batch: &Batch) -> Result<StepTrace> {
    train_step_observed(state, batch, |_, _| {})
}

fn finite<'g>(term: &str, v: Var<'g>, step: u64) -> Result<Var<'g>> {
    if v.value().all_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            term: term.into(),
            step,
        })
    }
}

/// [`train_step`], calling `observe` after each sub-step's update.
pub fn train_step_observed(
    state: &mut TrainState,
    batch: &Batch,
    mut observe: impl FnMut(Phase, &Nets),
) -> Result<StepTrace> {
    let started = Instant::now();
    let TrainState {
        checkpoint: ck,
        z_embeddings,
        perceptual,
        ..
    } = state;
    let step = ck.step + 1;
    let at = |e: Error| match e {
        Error::NonFinite { term, .. } => Error::NonFinite { term, step },
        other => other,
    };
    let w = ck.config.loss;
    let diversity = ck.config.diversity;
    let use_h = ck.config.training.regularizer;
    let mut terms = LossTerms::default();

    let gg = Graph::new();
    let x = gg.constant(batch.x.clone());
    let y = gg.constant(batch.y.clone());
    let gen = ck.nets.g.bind(&gg, true);
    let gxy = gen.translate(x, y);
    let gyx = gen.translate(y, x);

    // Discriminators, on detached fakes.
    {
        let dg = Graph::new();
        let c = |t: &Tensor| dg.constant(t.clone());
        let dx = ck.nets.dx.bind(&dg, true);
        let dy = ck.nets.dy.bind(&dg, true);
        let loss = gan_loss_d(
            &dx,
            &dy,
            c(&batch.x),
            c(&batch.y),
            c(&gxy.value()),
            c(&gyx.value()),
        )
        .map_err(at)?;
        terms.d_gan = loss.value().item();
        let grads = dg.backward(loss.scale(w.gan));
        let (gx, gy) = (dx.params.grads(&grads), dy.params.grads(&grads));
        drop((dx, dy));
        ck.optim.dx.update(&mut ck.nets.dx.params, &gx);
        ck.optim.dy.update(&mut ck.nets.dy.params, &gy);
    }
    observe(Phase::Discriminator, &ck.nets);

    // Generator, against the updated discriminators; H and the surrogates frozen.
    let (gxy_v, gyx_v, gxx_v, gyy_v, g_grads) = {
        let dx = ck.nets.dx.bind(&gg, false);
        let dy = ck.nets.dy.bind(&gg, false);
        let h = if use_h {
            Purify::Net(ck.nets.h.bind(&gg, false))
        } else {
            Purify::Identity
        };
        let fr = frozen(&ck.ensemble, &gg);
        let models = as_embedders(&fr);
        let g_gan = gan_loss_g(&dx, &dy, gxy, gyx).map_err(at)?;
        let g_reg = finite(
            "reg_cycle",
            reg_cycle_loss_with(&gen, &h, x, y, gxy, gyx),
            step,
        )?;
        let g_adv = finite(
            "adv_g",
            adv_loss_g(&models, z_embeddings, gxy, gyx, &diversity, &mut ck.rng),
            step,
        )?;
        let g_make = makeup_loss(gxy, &batch.hm_xy)?.add(makeup_loss(gyx, &batch.hm_yx)?);
        let g_make = finite("make_g", g_make, step)?;
        let gxx = gen.translate(x, x);
        let gyy = gen.translate(y, y);
        let idt = finite("idt", idt_loss_with(&h, x, y, gxx, gyy, perceptual), step)?;
        terms.g_gan = g_gan.value().item();
        terms.g_reg = g_reg.value().item();
        terms.g_adv = g_adv.value().item();
        terms.g_make = g_make.value().item();
        terms.idt = idt.value().item();
        let total = g_gan
            .scale(w.gan)
            .add(g_reg.scale(w.reg))
            .add(g_adv.scale(w.adv))
            .add(g_make.scale(w.make))
            .add(idt.scale(w.idt));
        let grads = gg.backward(total);
        (
            gxy.value(),
            gyx.value(),
            gxx.value(),
            gyy.value(),
            gen.params.grads(&grads),
        )
    };
    drop(gen);
    ck.optim.g.update(&mut ck.nets.g.params, &g_grads);
    observe(Phase::Generator, &ck.nets);

    // Regularizer, on the generator's detached outputs.
    if use_h {
        let hg = Graph::new();
        let c = |t: &Tensor| hg.constant(t.clone());
        let (x, y) = (c(&batch.x), c(&batch.y));
        let h = ck.nets.h.bind(&hg, true);
        let dx = ck.nets.dx.bind(&hg, false);
        let dy = ck.nets.dy.bind(&hg, false);
        let fr = frozen(&ck.ensemble, &hg);
        let models = as_embedders(&fr);
        let h_gxy = h.purify(c(&gxy_v));
        let h_gyx = h.purify(c(&gyx_v));
        let h_gan = gan_loss_h_on(&dx, &dy, h_gxy, h_gyx).map_err(at)?;
        let h_adv = finite("adv_h", adv_loss_h(&models, x, y, h_gxy, h_gyx), step)?;
        let h_make = makeup_loss(h_gxy, &batch.hm_xy)?.add(makeup_loss(h_gyx, &batch.hm_yx)?);
        let h_make = finite("make_h", h_make, step)?;
        let idt = idt_loss_with(&h, x, y, c(&gxx_v), c(&gyy_v), perceptual);
        terms.h_gan = h_gan.value().item();
        terms.h_adv = h_adv.value().item();
        terms.h_make = h_make.value().item();
        let total = h_gan
            .scale(w.gan)
            .add(h_adv.scale(w.adv))
            .add(h_make.scale(w.make))
            .add(idt.scale(w.idt));
        let grads = hg.backward(total);
        let hgrads = h.params.grads(&grads);
        drop(h);
        ck.optim.h.update(&mut ck.nets.h.params, &hgrads);
    }
    observe(Phase::Regularizer, &ck.nets);

    ck.step = step;
    let report = totals(terms, &w)?;
    for (name, v) in [
        ("l_g_total", report.g_total),
        ("l_h_total", report.h_total),
        ("l_d_total", report.d_total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: name.into(),
                step,
            });
        }
    }
    Ok(StepTrace {
        step,
        report,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// `epochs · ceil(sources / batch_size)`, capped by `max_steps`.
pub fn total_steps(cfg: &RunConfig, n_sources: usize) -> u64 {
    let t = &cfg.training;
    let per_epoch = n_sources.div_ceil(t.batch_size) as u64;
    let total = t.epochs as u64 * per_epoch;
    t.max_steps.map_or(total, |m| total.min(m))
}

pub const TRACE_FILE: &str = "trace.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir
        .join("checkpoints")
        .join(format!("step-{step:06}.ckpt"))
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Resume even if the checkpoint was written under a different config.
    pub force: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub steps: u64,
    pub trace: Vec<StepTrace>,
}

/// Builds the datasets and surrogates for `config` (or resumes) and trains
/// into `run_dir`.
pub fn train(config: &RunConfig, run_dir: &Path, opts: &TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    let data = crate::experiment::training_data(config)?;
    let state = match &opts.resume {
        Some(path) => {
            let mut ck = load_checkpoint(path)?;
            if ck.config_hash() != config.hash() {
                if !opts.force {
                    return Err(Error::Config(format!(
                        "checkpoint {} was written under config {}, current config is {}; pass --force to resume anyway",
                        path.display(),
                        ck.config_hash(),
                        config.hash()
                    )));
                }
                log::warn!("resuming {} under a different config", path.display());
                ck.config = config.clone();
                for adam in ck.optim.all_mut() {
                    adam.config = adam_config(&config.training);
                }
            }
            TrainState::resume(ck, data)
        }
        None => TrainState::new(
            config.clone(),
            data,
            crate::experiment::train_fr_models(config)?,
        )?,
    };
    train_state(state, run_dir)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs `state` to the configured number of steps, checkpointing every
/// `checkpoint_every` steps and at the end, and appending to the trace CSV.
pub fn train_state(mut state: TrainState, run_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(run_dir.join("checkpoints"))?;
    let config = state.checkpoint.config.clone();
    write_atomic(
        &run_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&config.manifest())?.as_bytes(),
    )?;
    write_atomic(
        &run_dir.join("config.toml"),
        config.to_toml_string().as_bytes(),
    )?;

    let start = state.checkpoint.step;
    let trace_path = run_dir.join(TRACE_FILE);
    let kept: Vec<TraceRow> = if start > 0 && trace_path.is_file() {
        read_trace(&trace_path)?
            .into_iter()
            .filter(|r| r.step <= start)
            .collect()
    } else {
        Vec::new()
    };
    let mut csv_out = csv::Writer::from_writer(File::create(&trace_path)?);
    for r in &kept {
        csv_out.serialize(r).map_err(std::io::Error::from)?;
    }
    if kept.is_empty() {
        csv_out
            .write_record(TRACE_HEADER)
            .map_err(std::io::Error::from)?;
    }
    csv_out.flush()?;
    let mut csv_out = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(OpenOptions::new().append(true).open(&trace_path)?);

    let total = total_steps(&config, state.data.sources.len());
    let every = config.training.checkpoint_every.max(1);
    let mut last_checkpoint =
        Some(checkpoint_path(run_dir, start)).filter(|p| start > 0 && p.is_file());
    let mut trace = Vec::new();
    log::info!(
        "training steps {}..={total} into {}",
        start + 1,
        run_dir.display()
    );
    while state.checkpoint.step < total {
        let t = state.step().map_err(|e| match e {
            Error::NonFinite { term, step } => Error::Diverged {
                term,
                step,
                last_checkpoint: last_checkpoint.clone(),
            },
            other => other,
        })?;
        csv_out.serialize(t.row()).map_err(std::io::Error::from)?;
        csv_out.flush()?;
        if t.step % 10 == 0 || t.step == 1 {
            let r = &t.report;
            log::info!(
                "step {}: d {:.4} g {:.4} h {:.4} (adv {:.4}, make {:.4}) {:.0} ms",
                t.step,
                r.d_total,
                r.g_total,
                r.h_total,
                r.terms.g_adv,
                r.terms.g_make,
                t.wall_ms
            );
        }
        trace.push(t);
        if t.step % every == 0 && t.step < total {
            let path = checkpoint_path(run_dir, t.step);
            save_checkpoint(&state.checkpoint, &path)?;
            last_checkpoint = Some(path);
        }
    }
    let steps = state.checkpoint.step;
    save_checkpoint(&state.checkpoint, &checkpoint_path(run_dir, steps))?;
    let final_checkpoint = run_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&state.checkpoint, &final_checkpoint)?;
    Ok(TrainOutcome {
        final_checkpoint,
        steps,
        trace,
    })
}

pub const TRACE_HEADER: [&str; 14] = [
    "step",
    "l_d",
    "l_g_gan",
    "l_g_reg",
    "l_g_adv",
    "l_g_make",
    "l_idt",
    "l_h_gan",
    "l_h_adv",
    "l_h_make",
    "l_g_total",
    "l_h_total",
    "l_d_total",
    "wall_ms",
];
