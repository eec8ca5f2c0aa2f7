//! Adam, reduce-on-plateau scheduling and the epoch loop.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{CollocationSet, TrajectorySet};
use crate::diffengine::{check_finite, Block};
use crate::dynamics::System;
use crate::error::{Error, Result};
use crate::losses::{effective_system, loss_and_grad, total_objective, CollocBatch, LossReport, LossWeights, Problem, TrajBatch};
use crate::model::{save_checkpoint, KoopmanModel};
use crate::rng::{derive_seed, tag, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Size(usize),
}

impl Serialize for BatchSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Size(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(BatchSize::Size(n as usize)),
            Raw::S(s) if s.eq_ignore_ascii_case("full") => Ok(BatchSize::Full),
            Raw::S(s) => Err(serde::de::Error::custom(format!("batch size must be a positive integer or \"full\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub factor: f64,
    /// Epochs without strict improvement before the rate is cut.
    pub patience: usize,
    pub min_lr: f64,
}

impl SchedulerConfig {
    /// A scheduler that never fires.
    pub fn constant() -> Self {
        SchedulerConfig {
            factor: 0.5,
            patience: usize::MAX,
            min_lr: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub adam: AdamConfig,
    pub scheduler: SchedulerConfig,
    pub seed: u64,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub regime: String,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if self.batch_size == BatchSize::Size(0) {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(Error::config("train.adam.lr", format!("must be positive, got {}", a.lr)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::config("train.adam", "betas must lie in [0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(Error::config("train.adam.eps", "must be positive"));
        }
        let s = &self.scheduler;
        if !(s.factor > 0.0 && s.factor < 1.0) {
            return Err(Error::config("train.scheduler.factor", format!("must lie in (0, 1), got {}", s.factor)));
        }
        if s.patience == 0 {
            return Err(Error::config("train.scheduler.patience", "must be at least 1"));
        }
        if !(s.min_lr >= 0.0 && s.min_lr <= a.lr) {
            return Err(Error::config("train.scheduler.min_lr", format!("must lie in [0, lr0], got {}", s.min_lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place. A non-finite gradient leaves
/// `params` and `state` untouched and names the offending block.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig, blocks: &[Block]) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != grads.len() || state.v.len() != grads.len() {
        return Err(Error::dim("adam state", params.len(), grads.len()));
    }
    check_finite(blocks, grads, "gradient")?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Reduce-on-plateau state. The window restarts after every cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub lr: f64,
    pub best: Option<f64>,
    pub since_best: usize,
}

impl Plateau {
    pub fn new(lr: f64) -> Self {
        Plateau {
            lr,
            best: None,
            since_best: 0,
        }
    }

    /// Records one epoch total and returns the learning rate for the next epoch.
    pub fn observe(&mut self, total: f64, cfg: &SchedulerConfig) -> f64 {
        match self.best {
            Some(b) if !(total < b) => {
                self.since_best += 1;
                if self.since_best >= cfg.patience {
                    self.lr = (self.lr * cfg.factor).max(cfg.min_lr);
                    self.since_best = 0;
                }
            }
            _ => {
                self.best = Some(total);
                self.since_best = 0;
            }
        }
        self.lr
    }
}

/// Replays `history` from `lr0` and returns the resulting rate.
pub fn plateau_scheduler(history: &[f64], lr0: f64, cfg: &SchedulerConfig) -> f64 {
    let mut p = Plateau::new(lr0);
    for &h in history {
        p.observe(h, cfg);
    }
    p.lr
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossReport,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub shards: usize,
}

pub const RUN_LOG_HEADER: &str = "epoch,lr,phys_lin,phys_rec,data_lin,data_rec,alt_lin,total";

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(RUN_LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            let l = &r.loss;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch, r.lr, l.phys_lin, l.phys_rec, l.data_lin, l.data_rec, l.alt_lin, l.total
            ));
        }
        s
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss.total).collect()
    }
}

/// Datasets a run trains on.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub system: &'a System,
    pub colloc: Option<&'a CollocationSet>,
    pub traj: Option<&'a TrajectorySet>,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub adam: AdamState,
    pub plateau: Plateau,
    pub log: RunLog,
}

/// Where and how often a run writes checkpoints.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub dir: Option<PathBuf>,
    pub config_hash: String,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const STATE_FILE: &str = "train_state.json";
pub const LOG_FILE: &str = "runlog.csv";

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub struct Trainer<'a> {
    pub model: KoopmanModel,
    pub state: TrainState,
    cfg: TrainConfig,
    data: TrainData<'a>,
    shards: usize,
    out: Output,
}

impl<'a> Trainer<'a> {
    pub fn new(model: KoopmanModel, data: TrainData<'a>, cfg: TrainConfig, shards: usize) -> Result<Self> {
        let n = model.num_trainable();
        let state = TrainState {
            epoch: 0,
            adam: AdamState::new(n),
            plateau: Plateau::new(cfg.adam.lr),
            log: RunLog {
                rows: Vec::new(),
                shards: shards.max(1),
            },
        };
        Self::resume(model, state, data, cfg, shards)
    }

    pub fn resume(model: KoopmanModel, state: TrainState, data: TrainData<'a>, cfg: TrainConfig, shards: usize) -> Result<Self> {
        cfg.validate()?;
        cfg.weights.check_datasets(data.colloc.is_some(), data.traj.is_some())?;
        if let Some(c) = data.colloc {
            c.validate()?;
        }
        if let Some(t) = data.traj {
            t.validate()?;
        }
        if state.adam.m.len() != model.num_trainable() {
            return Err(Error::dim("optimizer state", model.num_trainable(), state.adam.m.len()));
        }
        Ok(Trainer {
            model,
            state,
            cfg,
            data,
            shards: shards.max(1),
            out: Output::default(),
        })
    }

    pub fn with_output(mut self, out: Output) -> Self {
        self.out = out;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.cfg.epochs
    }

    fn colloc(&self) -> Option<&'a CollocationSet> {
        self.data.colloc.filter(|_| self.cfg.weights.needs_collocations())
    }

    fn traj(&self) -> Option<&'a TrajectorySet> {
        self.data.traj.filter(|_| self.cfg.weights.needs_trajectories())
    }

    /// Steps per epoch: enough for the larger dataset, counting one
    /// trajectory as `p + 1` samples.
    pub fn steps_per_epoch(&self) -> usize {
        let b = match self.cfg.batch_size {
            BatchSize::Full => return 1,
            BatchSize::Size(b) => b,
        };
        let nc = self.colloc().map_or(0, |c| c.len());
        let nt = self.traj().map_or(0, |t| t.count() * (t.steps() + 1));
        nc.div_ceil(b).max(nt.div_ceil(b)).max(1)
    }

    fn step(&mut self, prob: &Problem, lr: f64) -> Result<LossReport> {
        let (rep, grad) = loss_and_grad(&self.model, prob, self.shards)?;
        if let Some((name, _)) = rep.terms().iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Numeric { term: (*name).into() });
        }
        let mut theta = self.model.flatten();
        let g = grad.flatten(&self.model);
        adam_step(&mut theta, &g, &mut self.state.adam, lr, &self.cfg.adam, &self.model.blocks())?;
        self.model.assign(&theta)?;
        Ok(rep)
    }

    /// Full-dataset objective at the current parameters.
    pub fn evaluate(&self) -> Result<LossReport> {
        let sys = effective_system(&self.model, self.data.system)?;
        // trainable physical parameters change the rhs at every collocation
        let refreshed = match self.colloc() {
            Some(c) if self.model.trainable_phys().next().is_some() => {
                Some(CollocationSet { kind: c.kind, states: c.states.clone(), rhs: sys.rhs(c.states.view())?, meta: c.meta.clone() })
            }
            _ => None,
        };
        let colloc = refreshed.as_ref().or(self.colloc());
        total_objective(&self.model, &sys, colloc, self.traj(), &self.cfg.weights)
    }

    /// Runs one epoch and appends its log row.
    pub fn epoch(&mut self) -> Result<LogRow> {
        let lr = self.state.plateau.lr;
        let epoch = self.state.epoch + 1;
        let w = self.cfg.weights;
        let total = match self.cfg.batch_size {
            // the single step sees the parameters the epoch started with
            BatchSize::Full => {
                let prob = Problem {
                    system: self.data.system,
                    colloc: self.colloc().map(CollocBatch::from),
                    traj: self.traj().map(TrajBatch::from),
                    weights: w,
                };
                self.step(&prob, lr)?
            }
            BatchSize::Size(_) => {
                let steps = self.steps_per_epoch();
                let mut rng = Stream::derived(derive_seed(self.cfg.seed, tag::SHUFFLE), epoch as u64);
                let colloc = self.colloc().map(|c| {
                    let mut idx: Vec<usize> = (0..c.len()).collect();
                    rng.shuffle(&mut idx);
                    c.select(&idx)
                });
                let traj = self.traj().map(|t| {
                    let mut idx: Vec<usize> = (0..t.count()).collect();
                    rng.shuffle(&mut idx);
                    t.select(&idx)
                });
                for s in 0..steps {
                    let cb = colloc.as_ref().and_then(|c| {
                        let (lo, hi) = (c.len() * s / steps, c.len() * (s + 1) / steps);
                        (hi > lo).then(|| CollocBatch {
                            states: c.states.slice(ndarray::s![lo..hi, ..]),
                            rhs: c.rhs.slice(ndarray::s![lo..hi, ..]),
                        })
                    });
                    let tb = traj.as_ref().and_then(|t| {
                        let (lo, hi) = (t.count() * s / steps, t.count() * (s + 1) / steps);
                        (hi > lo).then(|| TrajBatch {
                            states: t.states.slice(ndarray::s![lo..hi, .., ..]),
                            dt: t.dt,
                        })
                    });
                    // a step with one side empty only trains the other side's terms
                    let mut sw = w;
                    if cb.is_none() {
                        sw.phys_lin = 0.0;
                        sw.phys_rec = 0.0;
                        sw.alt_lin = 0.0;
                    }
                    if tb.is_none() {
                        sw.data_lin = 0.0;
                        sw.data_rec = 0.0;
                    }
                    if sw.validate().is_err() {
                        continue;
                    }
                    let prob = Problem {
                        system: self.data.system,
                        colloc: cb,
                        traj: tb,
                        weights: sw,
                    };
                    self.step(&prob, lr)?;
                }
                self.evaluate()?
            }
        };
        if !total.total.is_finite() {
            return Err(Error::Numeric { term: "total".into() });
        }
        self.state.plateau.observe(total.total, &self.cfg.scheduler);
        self.state.epoch = epoch;
        let row = LogRow { epoch, lr, loss: total };
        self.state.log.rows.push(row);
        if self.cfg.checkpoint_every > 0 && epoch % self.cfg.checkpoint_every == 0 {
            self.checkpoint()?;
        }
        Ok(row)
    }

    /// Runs up to `n` more epochs (stopping at the configured total).
    pub fn run_epochs(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            if self.is_done() {
                break;
            }
            self.epoch()?;
        }
        Ok(())
    }

    /// Writes model checkpoint, optimizer state and run log (if an output
    /// directory is set). Each file is replaced atomically.
    pub fn checkpoint(&self) -> Result<()> {
        let Some(dir) = &self.out.dir else { return Ok(()) };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = dir.join("checkpoint.json.tmp");
        save_checkpoint(&self.model, &self.out.config_hash, &tmp)?;
        let ck = dir.join(CHECKPOINT_FILE);
        fs::rename(&tmp, &ck).map_err(|e| Error::io(&ck, e))?;
        let state = serde_json::to_string(&self.state).expect("train state serializes");
        write_atomic(&dir.join(STATE_FILE), state.as_bytes())?;
        write_atomic(&dir.join(LOG_FILE), self.state.log.to_csv().as_bytes())
    }

    pub fn finish(self) -> (KoopmanModel, RunLog) {
        (self.model, self.state.log)
    }
}

/// Reads optimizer state written by [`Trainer::checkpoint`].
pub fn read_train_state(path: &Path) -> Result<TrainState> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| crate::model::json_error(&text, e))
}

/// Trains for `cfg.epochs` epochs and writes the final checkpoint.
pub fn train(model: KoopmanModel, data: TrainData, cfg: TrainConfig, shards: usize, out: Output) -> Result<(KoopmanModel, RunLog)> {
    let mut t = Trainer::new(model, data, cfg, shards)?.with_output(out);
    let res = t.run_epochs(usize::MAX);
    res?;
    t.checkpoint()?;
    Ok(t.finish())
}
