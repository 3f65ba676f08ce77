//! Adam training of decoder and reverb under the multi-scale spectral loss.
//!
//! A step draws one minibatch, evaluates every clip on its own graph (in
//! parallel), sums the per-clip gradients in clip order, averages them over
//! the batch, clips the global norm and applies one Adam update.
//!
//! Output directory layout: `step-NNNNNNNN.ckpt` every `checkpoint_every`
//! steps and at the end, `best.ckpt` for the lowest validation loss, and
//! `loss.csv` with columns `step, lr, train_loss, valid_loss`.

use std::fmt;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, ParamSet, Tensor};
use crate::container::Container;
use crate::dataset::{load_split, minibatches, CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::fm::{patches, FmConfig, HOP};
use crate::model::{signal, Model, TrainClip};
use crate::seed::derive_seed;
use crate::spectral::{mss_loss_on, MssSpec};
use crate::tcn::{Mode, TcnSpec};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Modulation-index ceiling, restricted to the swept values 2, 2π and 4π.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IMax(f64);

impl IMax {
    pub const SWEEP: [(&'static str, f64); 3] =
        [("2", 2.0), ("2pi", std::f64::consts::TAU), ("4pi", 2.0 * std::f64::consts::TAU)];

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn label(self) -> &'static str {
        Self::SWEEP.iter().find(|(_, v)| *v == self.0).map(|(l, _)| *l).expect("validated value")
    }

    pub fn all() -> impl Iterator<Item = IMax> {
        Self::SWEEP.iter().map(|(_, v)| IMax(*v))
    }

    pub fn from_value(v: f64) -> Result<Self> {
        Self::SWEEP
            .iter()
            .find(|(_, s)| (s - v).abs() < 1e-9)
            .map(|(_, s)| IMax(*s))
            .ok_or_else(|| Error::Config(format!("i_max {v} is not one of 2, 2pi, 4pi")))
    }
}

impl std::str::FromStr for IMax {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace('π', "pi");
        if let Some((_, v)) = Self::SWEEP.iter().find(|(l, _)| *l == t) {
            return Ok(IMax(*v));
        }
        let v: f64 = t.parse().map_err(|_| Error::Config(format!("i_max {s:?} is not one of 2, 2pi, 4pi")))?;
        Self::from_value(v)
    }
}

impl fmt::Display for IMax {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for IMax {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for IMax {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(v) => IMax::from_value(v),
            Raw::Text(t) => t.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

fn default_lr0() -> f64 {
    3e-4
}
fn default_lr_decay() -> f64 {
    0.98
}
fn default_decay_every() -> u64 {
    10_000
}
fn default_clip() -> f64 {
    2.0
}
fn default_steps() -> u64 {
    120_000
}
fn default_batch() -> usize {
    16
}
fn default_checkpoint_every() -> u64 {
    1000
}
fn default_precision() -> String {
    "f64".into()
}
fn default_hidden() -> usize {
    128
}
fn default_blocks() -> usize {
    5
}
fn default_dropout() -> f64 {
    0.5
}
fn default_i_max() -> IMax {
    IMax(2.0)
}

/// Everything that determines a training run. Stored verbatim in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Prepared corpus directory.
    pub corpus: PathBuf,
    /// Built-in patch name or path to a patch file.
    pub patch: String,
    #[serde(default = "default_i_max")]
    pub i_max: IMax,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_decay_every")]
    pub lr_decay_every: u64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default = "default_precision")]
    pub precision: String,
    #[serde(default = "default_hidden")]
    pub hidden_channels: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, patch: impl Into<String>) -> Self {
        RunConfig {
            corpus: corpus.into(),
            patch: patch.into(),
            i_max: default_i_max(),
            steps: default_steps(),
            batch: default_batch(),
            lr0: default_lr0(),
            lr_decay: default_lr_decay(),
            lr_decay_every: default_decay_every(),
            clip_norm: default_clip(),
            seed: 0,
            checkpoint_every: default_checkpoint_every(),
            precision: default_precision(),
            hidden_channels: default_hidden(),
            blocks: default_blocks(),
            dropout: default_dropout(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let run: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
            Error::Parse { line, msg: e.message().to_string() }
        })?;
        run.validate()?;
        Ok(run)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.lr0 > 0.0 && self.lr_decay > 0.0 && self.clip_norm > 0.0;
        if !positive || self.steps == 0 || self.batch == 0 || self.lr_decay_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("training hyperparameters must be positive".into()));
        }
        if self.precision != "f64" {
            return Err(Error::Config(format!("precision {:?} unsupported; only f64", self.precision)));
        }
        if self.hidden_channels == 0 || self.blocks == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("decoder sizes must be positive and dropout in [0, 1)".into()));
        }
        Ok(())
    }

    /// Hash of every field except `steps`, so a run can be extended on resume.
    pub fn digest(&self) -> String {
        let mut trajectory = self.clone();
        trajectory.steps = 0;
        let bytes = Sha256::digest(trajectory.to_toml().as_bytes());
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn fm_config(&self) -> Result<FmConfig> {
        load_patch(&self.patch)
    }

    pub fn tcn_spec(&self, config: &FmConfig) -> TcnSpec {
        TcnSpec {
            hidden_channels: self.hidden_channels,
            blocks: self.blocks,
            dropout_p: self.dropout,
            ..TcnSpec::for_config(config, self.i_max.value())
        }
    }

    /// Step-wise decayed learning rate.
    pub fn lr_at(&self, step: u64) -> f64 {
        let k = i32::try_from(step / self.lr_decay_every).unwrap_or(i32::MAX);
        self.lr0 * self.lr_decay.powi(k)
    }
}

/// A built-in patch name, or a path to a patch file.
pub fn load_patch(name_or_path: &str) -> Result<FmConfig> {
    if patches::source(name_or_path).is_some() {
        return patches::builtin(name_or_path);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(Error::Config(format!("{name_or_path:?} is neither a built-in patch nor an existing file")));
    }
    FmConfig::parse(&std::fs::read_to_string(path)?)
}

/// Learning rate for `step` with the default schedule.
pub fn lr_at(step: u64) -> f64 {
    RunConfig::new("", "").lr_at(step)
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut ParamSet, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (name, t) in grads.iter() {
        if let Some(v) = t.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name} contains {v}")));
        }
        sq += t.data().iter().map(|v| v * v).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, t) in grads.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(norm)
}

/// Bias-corrected Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: ParamSet,
    pub v: ParamSet,
    /// Updates applied so far.
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            let mut s = ParamSet::new();
            for (n, t) in params.iter() {
                s.insert(n, Tensor::zeros(t.shape())).expect("unique names");
            }
            s
        };
        Adam { m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
        for (name, p) in params.iter_mut() {
            let g = grads.require(name)?;
            let m = self.m.get_mut(name).ok_or_else(|| Error::Mismatch(format!("no moment for {name}")))?;
            if g.shape() != p.shape() || m.shape() != p.shape() {
                return Err(Error::shape("adam", format!("{name}: param {:?}, grad {:?}", p.shape(), g.shape())));
            }
            let m = m.data_mut();
            let v = self.v.get_mut(name).ok_or_else(|| Error::Mismatch(format!("no moment for {name}")))?.data_mut();
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub model: Model,
    pub adam: Adam,
    /// Completed optimizer steps.
    pub step: u64,
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("checkpoint");
        c.set_meta("checkpoint_version", CHECKPOINT_VERSION);
        c.set_meta("run_config_digest", self.run.digest());
        c.set_meta("step", self.step);
        c.set_meta("adam_t", self.adam.t);
        c.set_meta("run_config", self.run.to_toml());
        c.set_meta("fm_config", self.model.config.to_toml());
        for (prefix, set) in [("param", &self.model.params), ("adam_m", &self.adam.m), ("adam_v", &self.adam.v)] {
            for (name, t) in set.iter() {
                c.push(format!("{prefix}/{name}"), t.clone());
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let version = c.require_meta("checkpoint_version")?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(Error::Container(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let run = RunConfig::parse(c.require_meta("run_config")?)?;
        if run.digest() != c.require_meta("run_config_digest")? {
            return Err(Error::Container("run config digest does not match its text".into()));
        }
        let config = FmConfig::parse(c.require_meta("fm_config")?)?;
        let number = |k: &str| -> Result<u64> { c.require_meta(k)?.parse().map_err(|_| Error::Container(format!("bad {k}"))) };
        let mut sets = [ParamSet::new(), ParamSet::new(), ParamSet::new()];
        for (name, t) in &c.arrays {
            let (prefix, rest) = name.split_once('/').ok_or_else(|| Error::Container(format!("array {name:?} has no prefix")))?;
            let idx = ["param", "adam_m", "adam_v"]
                .iter()
                .position(|p| *p == prefix)
                .ok_or_else(|| Error::Container(format!("unknown array group {prefix:?}")))?;
            sets[idx].insert(rest, t.clone())?;
        }
        let [params, m, v] = sets;
        let tcn = run.tcn_spec(&config);
        let model = Model { config, tcn, params };
        model.check()?;
        Ok(Checkpoint { run, model, adam: Adam { m, v, t: number("adam_t")? }, step: number("step")? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read_kind(path, "checkpoint")?)
    }
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

/// Loss and parameter gradients for one clip.
pub fn clip_loss_and_gradients(model: &Model, mss: &MssSpec, clip: &TrainClip, mode: Mode) -> Result<(f64, ParamSet)> {
    let g = Graph::new();
    let bound = model.params.bind(&g, true);
    let y = model.synthesize_on(&g, &bound, &clip.cond, &clip.f0_hz, mode)?;
    let target = signal(&g, &clip.target[..clip.cond.frames() * HOP])?;
    let loss = mss_loss_on(target, y, mss)?;
    let value = loss.value().item();
    let grads = g.backward(loss)?;
    Ok((value, bound.gradients(&grads)))
}

/// Inference-mode loss for one clip.
pub fn clip_loss(model: &Model, mss: &MssSpec, clip: &TrainClip) -> Result<f64> {
    let g = Graph::new();
    let bound = model.params.bind(&g, false);
    let y = model.synthesize_on(&g, &bound, &clip.cond, &clip.f0_hz, Mode::Inference)?;
    let target = signal(&g, &clip.target[..clip.cond.frames() * HOP])?;
    Ok(mss_loss_on(target, y, mss)?.value().item())
}

/// Training loop state over in-memory clips.
pub struct Trainer {
    pub run: RunConfig,
    pub model: Model,
    pub adam: Adam,
    pub step: u64,
    pub mss: MssSpec,
    train: Vec<TrainClip>,
    valid: Vec<TrainClip>,
}

impl Trainer {
    pub fn new(run: RunConfig, config: FmConfig, train: Vec<TrainClip>, valid: Vec<TrainClip>) -> Result<Self> {
        run.validate()?;
        let tcn = run.tcn_spec(&config);
        let model = Model::init(config, tcn, run.seed)?;
        let adam = Adam::new(&model.params);
        Self::assemble(run, model, adam, 0, train, valid)
    }

    pub fn from_checkpoint(ckpt: Checkpoint, train: Vec<TrainClip>, valid: Vec<TrainClip>) -> Result<Self> {
        Self::assemble(ckpt.run, ckpt.model, ckpt.adam, ckpt.step, train, valid)
    }

    fn assemble(run: RunConfig, model: Model, adam: Adam, step: u64, train: Vec<TrainClip>, valid: Vec<TrainClip>) -> Result<Self> {
        if train.is_empty() || valid.is_empty() {
            return Err(Error::Dataset("training needs non-empty train and valid splits".into()));
        }
        Ok(Trainer { run, model, adam, step, mss: MssSpec::default(), train, valid })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { run: self.run.clone(), model: self.model.clone(), adam: self.adam.clone(), step: self.step }
    }

    /// Mean inference-mode loss over the validation clips.
    pub fn validate(&self) -> Result<f64> {
        let losses: Vec<f64> = self.valid.par_iter().map(|c| clip_loss(&self.model, &self.mss, c)).collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Runs one optimizer step and returns `(lr, mean batch loss)`.
    pub fn step(&mut self) -> Result<(f64, f64)> {
        let per_epoch = self.train.len().div_ceil(self.run.batch) as u64;
        let epoch = self.step / per_epoch;
        let batches = minibatches(self.train.len(), self.run.batch, self.run.seed, epoch)?;
        let batch = &batches[(self.step % per_epoch) as usize];
        let seed = self.run.seed;
        let step = self.step;
        let results: Vec<(f64, ParamSet)> = batch
            .par_iter()
            .map(|&i| {
                let mode = Mode::Train { seed: derive_seed(&[seed, step, i as u64]) };
                clip_loss_and_gradients(&self.model, &self.mss, &self.train[i], mode)
            })
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::NanActivation(_) | Error::NonFinite(_) => Error::TrainingAborted { step, reason: e.to_string() },
                e => e,
            })?;

        let scale = 1.0 / batch.len() as f64;
        let loss = results.iter().map(|(l, _)| l).sum::<f64>() * scale;
        if !loss.is_finite() {
            return Err(Error::TrainingAborted { step, reason: format!("loss is {loss}") });
        }
        let mut iter = results.into_iter();
        let (_, mut total) = iter.next().expect("non-empty batch");
        for (_, g) in iter {
            for (name, t) in total.iter_mut() {
                let add = g.require(name)?;
                t.data_mut().iter_mut().zip(add.data()).for_each(|(a, b)| *a += b);
            }
        }
        for (_, t) in total.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        clip_gradients(&mut total, self.run.clip_norm).map_err(|e| Error::TrainingAborted { step, reason: e.to_string() })?;
        let lr = self.run.lr_at(step);
        self.adam.step(&mut self.model.params, &total, lr)?;
        if !self.model.params.all_finite() {
            return Err(Error::TrainingAborted { step, reason: "parameters became non-finite".into() });
        }
        self.step += 1;
        Ok((lr, loss))
    }
}

pub fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(format!("step-{step:08}.ckpt"))
}

/// Highest-step periodic checkpoint in `out`.
pub fn latest_checkpoint(out: &Path) -> Result<Option<PathBuf>> {
    if !out.is_dir() {
        return Ok(None);
    }
    let mut found: Vec<(u64, PathBuf)> = std::fs::read_dir(out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let step = name.strip_prefix("step-")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((step, p))
        })
        .collect();
    found.sort();
    Ok(found.pop().map(|(_, p)| p))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))).collect()
}

fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Dataset(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Dataset(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_train_loss: f64,
    pub final_valid_loss: f64,
    pub best_valid_loss: f64,
    pub final_checkpoint: PathBuf,
    pub log: Vec<LogRow>,
}

/// Runs `trainer` up to `run.steps`, logging to and checkpointing in `out`.
/// Rows already in the log at or beyond the trainer's step are discarded
/// first, so an interrupted run resumes to the same log.
pub fn run_loop(trainer: &mut Trainer, out: &Path) -> Result<TrainSummary> {
    std::fs::create_dir_all(out)?;
    let log_path = out.join("loss.csv");
    let mut log: Vec<LogRow> = read_log(&log_path)?.into_iter().filter(|r| r.step < trainer.step).collect();
    let mut best = log.iter().filter_map(|r| r.valid_loss).fold(f64::INFINITY, f64::min);
    let total = trainer.run.steps;
    let mut last_valid = f64::NAN;
    let mut last_train = f64::NAN;
    while trainer.step < total {
        let (lr, loss) = match trainer.step() {
            Ok(v) => v,
            Err(e) => {
                write_log(&log_path, &log)?;
                return Err(e);
            }
        };
        last_train = loss;
        let done = trainer.step;
        let at_checkpoint = done % trainer.run.checkpoint_every == 0 || done == total;
        let valid = if at_checkpoint { Some(trainer.validate()?) } else { None };
        log.push(LogRow { step: done - 1, lr, train_loss: loss, valid_loss: valid });
        if let Some(v) = valid {
            last_valid = v;
            let ckpt = trainer.checkpoint();
            ckpt.save(&checkpoint_path(out, done))?;
            if v < best {
                best = v;
                ckpt.save(&out.join("best.ckpt"))?;
            }
            write_log(&log_path, &log)?;
            info!("step {done}: train {loss:.4}, valid {v:.4}");
        }
    }
    write_log(&log_path, &log)?;
    Ok(TrainSummary {
        steps: trainer.step,
        final_train_loss: last_train,
        final_valid_loss: last_valid,
        best_valid_loss: best,
        final_checkpoint: checkpoint_path(out, trainer.step),
        log,
    })
}

fn load_clips(run: &RunConfig, split: Split) -> Result<Vec<TrainClip>> {
    let manifest = CorpusManifest::load(&run.corpus)?;
    load_split(&run.corpus, &manifest, split)?.iter().map(TrainClip::from_record).collect()
}

/// Trains from the corpus named in `run`. With `resume`, continues from the
/// latest checkpoint in `out`, which must come from an identical run config
/// (apart from `steps`).
pub fn train(run: &RunConfig, out: &Path, resume: bool) -> Result<TrainSummary> {
    run.validate()?;
    let config = run.fm_config()?;
    let (train, valid) = (load_clips(run, Split::Train)?, load_clips(run, Split::Valid)?);
    let mut trainer = match (resume, latest_checkpoint(out)?) {
        (true, Some(path)) => {
            let mut ckpt = Checkpoint::load(&path)?;
            if ckpt.run.digest() != run.digest() {
                return Err(Error::Mismatch(format!("{} was written by a different run config", path.display())));
            }
            ckpt.run.steps = run.steps;
            info!("resuming from {} at step {}", path.display(), ckpt.step);
            Trainer::from_checkpoint(ckpt, train, valid)?
        }
        _ => Trainer::new(run.clone(), config, train, valid)?,
    };
    run_loop(&mut trainer, out)
}
