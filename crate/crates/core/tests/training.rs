use pikoop::datagen::{CollocationSet, TrajectorySet};
use pikoop::dynamics::System;
use pikoop::experiment::{preset, Datasets, ExperimentConfig};
use pikoop::model::{init_model, load_checkpoint, KoopmanModel};
use pikoop::training::*;
use pikoop::Error;

struct Setup {
    cfg: ExperimentConfig,
    sys: System,
    colloc: Option<CollocationSet>,
    traj: Option<TrajectorySet>,
}

impl Setup {
    fn new(name: &str, colloc: usize, traj: usize, epochs: usize) -> Setup {
        let mut cfg = preset(name).unwrap().with_counts(Some(colloc), Some(traj));
        cfg.train.epochs = epochs;
        let sys = cfg.system.build().unwrap();
        let ds = Datasets::generate(&cfg, false).unwrap();
        Setup { cfg, sys, colloc: ds.colloc, traj: ds.traj }
    }

    fn data(&self) -> TrainData<'_> {
        TrainData { system: &self.sys, colloc: self.colloc.as_ref(), traj: self.traj.as_ref() }
    }

    fn model(&self) -> KoopmanModel {
        init_model(&self.cfg.arch, self.cfg.train.seed).unwrap()
    }

    fn run(&self, shards: usize) -> (KoopmanModel, RunLog) {
        let out = Output { dir: None, config_hash: String::new() };
        train(self.model(), self.data(), self.cfg.train.clone(), shards, out).unwrap()
    }
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let s = Setup::new("unknown-params", 64, 16, 25);
    let (m1, l1) = s.run(1);
    let (m2, l2) = s.run(1);
    assert_eq!(m1, m2);
    assert_eq!(l1.to_csv(), l2.to_csv());
    assert_eq!(l1.rows.len(), 25);
}

#[test]
fn minibatch_runs_are_bitwise_identical() {
    let mut s = Setup::new("unknown-params", 50, 7, 6);
    s.cfg.train.batch_size = BatchSize::Size(16);
    let (m1, l1) = s.run(2);
    let (m2, l2) = s.run(2);
    assert_eq!(m1, m2);
    assert_eq!(l1, l2);
}

#[test]
fn different_seeds_differ() {
    let mut s = Setup::new("simple-ode-linear", 40, 0, 3);
    let (a, _) = s.run(1);
    s.cfg.train.seed += 1;
    let (b, _) = s.run(1);
    assert_ne!(a, b);
}

#[test]
fn steps_per_epoch_covers_larger_set() {
    let mut s = Setup::new("unknown-params", 100, 10, 1);
    s.cfg.train.batch_size = BatchSize::Size(32);
    let t = Trainer::new(s.model(), s.data(), s.cfg.train.clone(), 1).unwrap();
    // 100 collocations -> 4 batches; 10 trajectories x 11 snapshots -> 4 batches
    assert_eq!(t.steps_per_epoch(), 4);
    s.cfg.train.batch_size = BatchSize::Size(10);
    let t = Trainer::new(s.model(), s.data(), s.cfg.train.clone(), 1).unwrap();
    assert_eq!(t.steps_per_epoch(), 11);
    s.cfg.train.batch_size = BatchSize::Full;
    let t = Trainer::new(s.model(), s.data(), s.cfg.train.clone(), 1).unwrap();
    assert_eq!(t.steps_per_epoch(), 1);
}

#[test]
fn resume_reproduces_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Setup::new("unknown-params", 48, 12, 30);
    s.cfg.train.batch_size = BatchSize::Size(20);
    let (straight, log) = s.run(1);

    let mut half = s.cfg.train.clone();
    half.epochs = 13;
    let out = Output { dir: Some(dir.path().to_path_buf()), config_hash: "h".into() };
    train(s.model(), s.data(), half, 1, out).unwrap();

    let model = load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let state = read_train_state(&dir.path().join(STATE_FILE)).unwrap();
    assert_eq!(state.epoch, 13);
    let mut t = Trainer::resume(model, state, s.data(), s.cfg.train.clone(), 1).unwrap();
    t.run_epochs(usize::MAX).unwrap();
    let (resumed, log2) = t.finish();
    assert_eq!(straight, resumed);
    assert_eq!(log.to_csv(), log2.to_csv());
}

#[test]
fn periodic_checkpoints_track_progress() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Setup::new("simple-ode-linear", 30, 0, 12);
    s.cfg.train.checkpoint_every = 5;
    let out = Output { dir: Some(dir.path().to_path_buf()), config_hash: "abc".into() };
    let mut t = Trainer::new(s.model(), s.data(), s.cfg.train.clone(), 1).unwrap().with_output(out);
    t.run_epochs(7).unwrap();
    let state = read_train_state(&dir.path().join(STATE_FILE)).unwrap();
    assert_eq!(state.epoch, 5);
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(!dir.path().join("checkpoint.json.tmp").exists());
}

#[test]
fn shard_count_changes_rounding_only() {
    let s = Setup::new("unknown-params", 60, 15, 10);
    let (a, la) = s.run(1);
    let (b, lb) = s.run(4);
    let (ta, tb) = (la.totals(), lb.totals());
    for (x, y) in ta.iter().zip(&tb) {
        assert!((x - y).abs() <= 1e-10 * x.abs(), "{x} vs {y}");
    }
    let (fa, fb) = (a.flatten(), b.flatten());
    let diff = fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-9, "{diff}");
    assert_eq!(lb.shards, 4);
}

#[test]
fn full_batch_logs_pre_step_objective() {
    let s = Setup::new("unknown-params", 40, 10, 3);
    let mut t = Trainer::new(s.model(), s.data(), s.cfg.train.clone(), 1).unwrap();
    let before = t.evaluate().unwrap();
    let row = t.epoch().unwrap();
    for ((name, a), (_, b)) in row.loss.terms().iter().zip(before.terms()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{name}: {a} vs {b}");
    }
    assert_eq!(row.lr, s.cfg.train.adam.lr);
}

#[test]
fn flat_loss_triggers_plateau_decay() {
    // zero rhs and L = 0: the objective stays exactly 0
    let mut s = Setup::new("simple-ode-linear", 20, 0, 12);
    s.cfg.train.weights = pikoop::losses::LossWeights::new(1.0, 0.0, 0.0, 0.0);
    s.cfg.train.scheduler = SchedulerConfig { factor: 0.5, patience: 3, min_lr: 1e-6 };
    let zero = s.colloc.as_ref().map(|c| {
        let mut c = c.clone();
        c.rhs.fill(0.0);
        c
    });
    let data = TrainData { system: &s.sys, colloc: zero.as_ref(), traj: None };
    let mut t = Trainer::new(s.model(), data, s.cfg.train.clone(), 1).unwrap();
    t.run_epochs(12).unwrap();
    let lrs: Vec<f64> = t.state.log.rows.iter().map(|r| r.lr).collect();
    assert!(t.state.log.totals().iter().all(|&v| v == 0.0));
    assert_eq!(lrs[..4], [1e-4; 4]);
    // the window restarts after each decay
    assert_eq!(lrs[4..7], [5e-5; 3]);
    assert_eq!(lrs[7..10], [2.5e-5; 3]);
    assert_eq!(lrs[10..12], [1.25e-5; 2]);
}

#[test]
fn physics_training_reduces_loss() {
    let mut s = Setup::new("simple-ode-linear", 200, 0, 1500);
    s.cfg.train.adam = AdamConfig::with_lr(3e-3);
    let (_, log) = s.run(1);
    let t = log.totals();
    assert!(t[t.len() - 1] < 1e-2 * t[0], "{} -> {}", t[0], t[t.len() - 1]);
}

#[test]
fn divergence_is_reported() {
    let mut s = Setup::new("simple-ode-linear", 30, 0, 300);
    s.cfg.train.adam = AdamConfig::with_lr(1e150);
    let out = Output { dir: None, config_hash: String::new() };
    match train(s.model(), s.data(), s.cfg.train.clone(), 1, out) {
        Err(Error::Numeric { .. }) | Err(Error::Divergence { .. }) => {}
        other => panic!("expected a numeric failure, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn missing_dataset_is_a_config_error() {
    let s = Setup::new("unknown-params", 20, 5, 1);
    let data = TrainData { system: &s.sys, colloc: s.colloc.as_ref(), traj: None };
    let err = Trainer::new(s.model(), data, s.cfg.train.clone(), 1).err().unwrap();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "datasets.trajectories"), "{err}");
}

#[test]
fn optimizer_state_must_match_model() {
    let s = Setup::new("simple-ode-linear", 20, 0, 2);
    let mut t = Trainer::new(s.model(), s.data(), s.cfg.train.clone(), 1).unwrap();
    t.run_epochs(1).unwrap();
    let mut state = t.state.clone();
    state.adam = AdamState::new(3);
    assert!(Trainer::resume(s.model(), state, s.data(), s.cfg.train.clone(), 1).is_err());
}
