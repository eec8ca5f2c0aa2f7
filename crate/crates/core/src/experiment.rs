//! Experiment presets, JSON configs with dotted overrides, and dataset
//! materialization.
//!
//! A config is a JSON object whose `preset` field names one of
//! [`PRESETS`]; every other field is merged over the preset (explicit
//! values win) and the result is parsed into an [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::datagen::{
    file_sha256, gen_trajectories, read_dataset, sample_box_collocations, sample_colehopf_snapshots,
    sample_harmonic_collocations, write_dataset, Bounds, CoefScheme, CollocationSet, Dataset, DerivativeMode, IcSampler,
    TrajectorySet,
};
use crate::analysis::Metric;
use crate::dynamics::{OdeSystem, PdeSystem, System};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{Architecture, PhysParamSpec};
use crate::rng::derive_seed;
use crate::solvers::SpectralGrid;
use crate::training::{AdamConfig, BatchSize, SchedulerConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SimpleOdeLinear,
    SimpleOdeNonlinear,
    Heat,
    Burgers,
    Colehopf,
    UnknownParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Physics,
    Data,
    Hybrid,
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "physics" => Ok(Regime::Physics),
            "data" => Ok(Regime::Data),
            "hybrid" => Ok(Regime::Hybrid),
            _ => Err(Error::config("regime", format!("expected physics, data or hybrid, got `{s}`"))),
        }
    }
}

impl Experiment {
    /// Loss weights of a training regime for this experiment.
    pub fn regime_weights(self, regime: Regime) -> LossWeights {
        let w1 = match self {
            Experiment::Heat => 0.0001,
            Experiment::Colehopf => 0.01,
            _ => 1.0,
        };
        match regime {
            Regime::Physics => LossWeights::new(w1, 1.0, 0.0, 0.0),
            Regime::Data => LossWeights::new(0.0, 0.0, 1.0, 1.0),
            Regime::Hybrid => LossWeights::new(w1, 1.0, 1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    FixedPoint { mu: f64, lambda: f64 },
    Heat { n: usize },
    Burgers { n: usize, nu: f64 },
}

impl SystemSpec {
    pub fn build(&self) -> Result<System> {
        Ok(match *self {
            SystemSpec::FixedPoint { mu, lambda } => System::Ode(OdeSystem::fixed_point(mu, lambda)),
            SystemSpec::Heat { n } => System::Pde(PdeSystem::Heat, SpectralGrid::new(n)?),
            SystemSpec::Burgers { n, nu } => {
                let sys = PdeSystem::Burgers { nu };
                sys.validate()?;
                System::Pde(sys, SpectralGrid::new(n)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CollocSpec {
    Box {
        count: usize,
        bounds: Bounds,
    },
    Harmonic {
        count: usize,
        kmax: usize,
        #[serde(default)]
        scheme: CoefScheme,
        #[serde(default)]
        derivative: DerivativeMode,
    },
    ColeHopf {
        count: usize,
        modes: usize,
        t_lo: f64,
        t_hi: f64,
    },
}

impl CollocSpec {
    pub fn count(&self) -> usize {
        match *self {
            CollocSpec::Box { count, .. } | CollocSpec::Harmonic { count, .. } | CollocSpec::ColeHopf { count, .. } => count,
        }
    }

    fn set_count(&mut self, n: usize) {
        match self {
            CollocSpec::Box { count, .. } | CollocSpec::Harmonic { count, .. } | CollocSpec::ColeHopf { count, .. } => *count = n,
        }
    }

    pub fn generate(&self, sys: &System, seed: u64) -> Result<CollocationSet> {
        match (self, sys) {
            (CollocSpec::Box { count, bounds }, System::Ode(o)) => sample_box_collocations(o, bounds, *count, seed),
            (CollocSpec::Harmonic { count, kmax, scheme, derivative }, System::Pde(p, g)) => {
                sample_harmonic_collocations(p, g, *kmax, *count, seed, *scheme, *derivative)
            }
            (CollocSpec::ColeHopf { count, modes, t_lo, t_hi }, System::Pde(_, g)) => {
                Ok(sample_colehopf_snapshots(g, *modes, *count, 1, (*t_lo, *t_hi), 0.01, 1, seed)?.collocations)
            }
            _ => Err(Error::config("data.colloc.kind", "does not match the system kind")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajSpec {
    Simulated {
        count: usize,
        dt: f64,
        p: usize,
        ic: IcSampler,
    },
    ColeHopf {
        count: usize,
        modes: usize,
        t_lo: f64,
        t_hi: f64,
        dt: f64,
        p: usize,
    },
}

impl TrajSpec {
    pub fn count(&self) -> usize {
        match *self {
            TrajSpec::Simulated { count, .. } | TrajSpec::ColeHopf { count, .. } => count,
        }
    }

    fn set_count(&mut self, n: usize) {
        match self {
            TrajSpec::Simulated { count, .. } | TrajSpec::ColeHopf { count, .. } => *count = n,
        }
    }

    pub fn generate(&self, sys: &System, seed: u64) -> Result<TrajectorySet> {
        match (self, sys) {
            (TrajSpec::Simulated { count, dt, p, ic }, _) => gen_trajectories(sys, ic, *count, *dt, *p, seed),
            (TrajSpec::ColeHopf { count, modes, t_lo, t_hi, dt, p }, System::Pde(_, g)) => {
                Ok(sample_colehopf_snapshots(g, *modes, 1, *count, (*t_lo, *t_hi), *dt, *p, seed)?.trajectories)
            }
            _ => Err(Error::config("data.traj.kind", "Cole-Hopf trajectories need a PDE system")),
        }
    }
}

/// A held-out trajectory set used by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    pub name: String,
    pub traj: TrajSpec,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Master seed for every generated dataset.
    pub seed: u64,
    pub colloc: Option<CollocSpec>,
    pub traj: Option<TrajSpec>,
    #[serde(default)]
    pub test: Vec<TestSpec>,
}

/// Ground-truth generator eigenvalues used by `eigs` for matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExactSpectrum {
    None,
    Values { re: Vec<f64> },
    /// `-k²` for `k = 1..=kmax`, each listed once.
    NegSquares { kmax: usize },
}

impl ExactSpectrum {
    pub fn values(&self) -> Vec<f64> {
        match self {
            ExactSpectrum::None => Vec::new(),
            ExactSpectrum::Values { re } => re.clone(),
            ExactSpectrum::NegSquares { kmax } => (1..=*kmax).map(|k| -((k * k) as f64)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub experiment: Experiment,
    pub regime: Regime,
    pub system: SystemSpec,
    pub data: DataSpec,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub exact: ExactSpectrum,
}

pub const PRESETS: &[&str] = &["simple-ode-linear", "simple-ode-nonlinear", "heat", "burgers", "colehopf", "unknown-params"];

/// Dataset-only presets accepted by `gen`, mapped to `(experiment preset, role)`.
pub const DATASET_PRESETS: &[(&str, &str, &str)] = &[
    ("ode-collocations", "simple-ode-linear", "colloc"),
    ("ode-trajectories", "simple-ode-linear", "traj"),
    ("heat-collocations", "heat", "colloc"),
    ("heat-trajectories", "heat", "traj"),
    ("burgers-harmonic", "burgers", "colloc"),
    ("burgers-bell", "burgers", "traj"),
    ("colehopf-collocations", "colehopf", "colloc"),
    ("colehopf-trajectories", "colehopf", "traj"),
];

fn box_ic() -> IcSampler {
    IcSampler::Box { bounds: Bounds::square(-1.0, 1.0) }
}

fn ode_preset(name: &str, experiment: Experiment, arch: Architecture, regime: Regime, colloc: usize, traj: usize) -> ExperimentConfig {
    ExperimentConfig {
        preset: name.into(),
        experiment,
        regime,
        system: SystemSpec::FixedPoint { mu: -0.1, lambda: -1.0 },
        data: DataSpec {
            seed: 0,
            colloc: Some(CollocSpec::Box { count: colloc, bounds: Bounds::square(-1.0, 1.0) }),
            traj: Some(TrajSpec::Simulated { count: traj, dt: 0.1, p: 10, ic: box_ic() }),
            test: vec![TestSpec {
                name: "box".into(),
                traj: TrajSpec::Simulated { count: 1000, dt: 1e-3, p: 10_000, ic: box_ic() },
                metric: Metric::Mae,
            }],
        },
        arch,
        train: TrainConfig {
            weights: experiment.regime_weights(regime),
            epochs: 50_000,
            batch_size: BatchSize::Full,
            adam: AdamConfig::with_lr(1e-4),
            scheduler: SchedulerConfig::constant(),
            seed: 0,
            checkpoint_every: 5000,
            regime: String::new(),
        },
        exact: ExactSpectrum::None,
    }
}

/// Full-scale configuration of a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let mut cfg = match name {
        "simple-ode-linear" => {
            let mut c = ode_preset(name, Experiment::SimpleOdeLinear, Architecture::linear_decoder(2, &[50], 3), Regime::Physics, 1000, 1000);
            c.exact = ExactSpectrum::Values { re: vec![-0.1, -0.2, -1.0] };
            c
        }
        "simple-ode-nonlinear" => {
            let mut c = ode_preset(name, Experiment::SimpleOdeNonlinear, Architecture::nonlinear_decoder(2, &[50], 2), Regime::Physics, 1000, 1000);
            c.exact = ExactSpectrum::Values { re: vec![-0.1, -1.0] };
            c
        }
        "unknown-params" => {
            let mut arch = Architecture::nonlinear_decoder(2, &[50], 2);
            arch.phys = ["mu", "lambda"]
                .iter()
                .map(|n| PhysParamSpec { name: (*n).into(), trainable: true, init: None })
                .collect();
            let mut c = ode_preset(name, Experiment::UnknownParams, arch, Regime::Hybrid, 500, 500);
            c.exact = ExactSpectrum::Values { re: vec![-0.1, -1.0] };
            c
        }
        "heat" => {
            let n = 64;
            let mut arch = Architecture::linear_decoder(n, &[], n);
            arch.encoder_bias = false;
            let kmax = n / 2 - 1;
            let harmonic = IcSampler::Harmonic { kmax, scheme: CoefScheme::Taper1 };
            ExperimentConfig {
                preset: name.into(),
                experiment: Experiment::Heat,
                regime: Regime::Hybrid,
                system: SystemSpec::Heat { n },
                data: DataSpec {
                    seed: 0,
                    colloc: Some(CollocSpec::Harmonic { count: 1000, kmax, scheme: CoefScheme::Taper1, derivative: DerivativeMode::Analytic }),
                    traj: Some(TrajSpec::Simulated { count: 1000, dt: 0.01, p: 5, ic: harmonic.clone() }),
                    test: vec![TestSpec {
                        name: "harmonic".into(),
                        traj: TrajSpec::Simulated { count: 1000, dt: 1e-3, p: 10, ic: harmonic },
                        metric: Metric::Mse,
                    }],
                },
                arch,
                train: TrainConfig {
                    weights: Experiment::Heat.regime_weights(Regime::Hybrid),
                    epochs: 100_000,
                    batch_size: BatchSize::Size(128),
                    adam: AdamConfig::with_lr(0.01),
                    scheduler: SchedulerConfig { factor: 0.5, patience: 5000, min_lr: 1e-6 },
                    seed: 0,
                    checkpoint_every: 1000,
                    regime: String::new(),
                },
                exact: ExactSpectrum::NegSquares { kmax },
            }
        }
        "burgers" => {
            let n = 128;
            let harmonic = IcSampler::Harmonic { kmax: 10, scheme: CoefScheme::Taper1 };
            ExperimentConfig {
                preset: name.into(),
                experiment: Experiment::Burgers,
                regime: Regime::Hybrid,
                system: SystemSpec::Burgers { n, nu: 0.01 },
                data: DataSpec {
                    seed: 0,
                    colloc: Some(CollocSpec::Harmonic { count: 80_000, kmax: 10, scheme: CoefScheme::Taper1, derivative: DerivativeMode::Analytic }),
                    traj: Some(TrajSpec::Simulated { count: 1024, dt: 0.1, p: 20, ic: IcSampler::bell() }),
                    test: vec![
                        TestSpec {
                            name: "harmonic".into(),
                            traj: TrajSpec::Simulated { count: 100, dt: 0.1, p: 20, ic: harmonic },
                            metric: Metric::Mse,
                        },
                        TestSpec {
                            name: "bell".into(),
                            traj: TrajSpec::Simulated { count: 100, dt: 0.1, p: 20, ic: IcSampler::bell() },
                            metric: Metric::Mse,
                        },
                    ],
                },
                arch: Architecture::nonlinear_decoder(n, &[512, 512], 128),
                train: TrainConfig {
                    weights: Experiment::Burgers.regime_weights(Regime::Hybrid),
                    epochs: 500,
                    batch_size: BatchSize::Size(128),
                    adam: AdamConfig::with_lr(1e-4),
                    scheduler: SchedulerConfig { factor: 0.5, patience: 20, min_lr: 1e-7 },
                    seed: 0,
                    checkpoint_every: 10,
                    regime: String::new(),
                },
                exact: ExactSpectrum::None,
            }
        }
        "colehopf" => {
            let n = 512;
            let modes = 10;
            let traj = TrajSpec::ColeHopf { count: 1000, modes, t_lo: 0.0, t_hi: 0.1, dt: 0.02, p: 5 };
            ExperimentConfig {
                preset: name.into(),
                experiment: Experiment::Colehopf,
                regime: Regime::Hybrid,
                system: SystemSpec::Burgers { n, nu: 1.0 },
                data: DataSpec {
                    seed: 0,
                    colloc: Some(CollocSpec::ColeHopf { count: 1000, modes, t_lo: 0.0, t_hi: 0.1 }),
                    traj: Some(traj),
                    test: vec![TestSpec {
                        name: "colehopf".into(),
                        traj: TrajSpec::ColeHopf { count: 100, modes, t_lo: 0.0, t_hi: 0.1, dt: 0.02, p: 5 },
                        metric: Metric::Mse,
                    }],
                },
                arch: Architecture::nonlinear_decoder(n, &[512, 512], modes),
                train: TrainConfig {
                    weights: Experiment::Colehopf.regime_weights(Regime::Hybrid),
                    epochs: 100_000,
                    batch_size: BatchSize::Size(128),
                    adam: AdamConfig::with_lr(0.01),
                    scheduler: SchedulerConfig { factor: 0.5, patience: 5000, min_lr: 1e-6 },
                    seed: 0,
                    checkpoint_every: 1000,
                    regime: String::new(),
                },
                exact: ExactSpectrum::NegSquares { kmax: modes },
            }
        }
        other => {
            return Err(Error::config("preset", format!("unknown preset `{other}`; expected one of {}", PRESETS.join(", "))));
        }
    };
    cfg.train.regime = regime_name(cfg.regime).into();
    Ok(cfg)
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Physics => "physics",
        Regime::Data => "data",
        Regime::Hybrid => "hybrid",
    }
}

impl ExperimentConfig {
    /// Switches to `regime` and its preset loss weights.
    pub fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self.train.weights = self.experiment.regime_weights(regime);
        self.train.regime = regime_name(regime).into();
        self
    }

    /// Sets the collocation and trajectory counts; 0 drops the dataset.
    pub fn with_counts(mut self, colloc: Option<usize>, traj: Option<usize>) -> Self {
        if let Some(n) = colloc {
            if n == 0 {
                self.data.colloc = None;
            } else if let Some(c) = &mut self.data.colloc {
                c.set_count(n);
            }
        }
        if let Some(n) = traj {
            if n == 0 {
                self.data.traj = None;
            } else if let Some(t) = &mut self.data.traj {
                t.set_count(n);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sys = self.system.build()?;
        self.arch.validate()?;
        if self.arch.input_dim != sys.state_dim() {
            return Err(Error::config("arch.input_dim", format!("{} does not match the state dimension {}", self.arch.input_dim, sys.state_dim())));
        }
        for p in &self.arch.phys {
            if !sys.param_names().contains(&p.name.as_str()) {
                return Err(Error::config("arch.phys", format!("`{}` is not a parameter of the system", p.name)));
            }
        }
        self.train.validate()?;
        self.train.weights.check_datasets(self.data.colloc.is_some(), self.data.traj.is_some())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Resolves a user config: the preset named in `preset` (and the
    /// regime in `regime`, if given) is the base and every other field of
    /// `user` overrides it.
    pub fn resolve(user: &Value) -> Result<ExperimentConfig> {
        let obj = user.as_object().ok_or_else(|| Error::config("", "config must be a JSON object"))?;
        let name = obj
            .get("preset")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::config("preset", "missing preset name"))?;
        let mut base = preset(name)?;
        if let Some(r) = obj.get("regime") {
            let r = r.as_str().ok_or_else(|| Error::config("regime", "must be a string"))?;
            base = base.with_regime(r.parse()?);
        }
        let mut merged = serde_json::to_value(&base).expect("config serializes");
        merge(&mut merged, user);
        from_value(merged)
    }

    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let v: Value = serde_json::from_str(text).map_err(|e| crate::model::json_error(text, e))?;
        Self::resolve(&v)
    }
}

/// Parses a fully merged config, reporting the JSON path of any error.
pub fn from_value(v: Value) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(v).map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))
}

/// Deep merge: objects merge key by key, everything else is replaced.
pub fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Applies `key=value` with a dotted key. The value is parsed as JSON and
/// taken as a string if that fails. Numeric path segments index arrays.
pub fn apply_override(target: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("override", format!("`{spec}` is not of the form key=value")))?;
    if key.is_empty() {
        return Err(Error::config("override", "empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = target;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if let Value::Array(items) = cur {
            let idx: usize = part
                .parse()
                .map_err(|_| Error::config(key, format!("`{part}` is not an array index")))?;
            let len = items.len();
            let slot = items
                .get_mut(idx)
                .ok_or_else(|| Error::config(key, format!("index {idx} out of range (len {len})")))?;
            if last {
                *slot = value;
                return Ok(());
            }
            cur = slot;
            continue;
        }
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let map = cur.as_object_mut().expect("object");
        if last {
            map.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = map.entry((*part).to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Training and held-out datasets of one experiment.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub colloc: Option<CollocationSet>,
    pub traj: Option<TrajectorySet>,
    pub test: Vec<(TestSpec, TrajectorySet)>,
}

/// Stream seeds of the dataset roles.
pub fn role_seed(master: u64, role: &str) -> u64 {
    let tag = role.bytes().fold(0u64, |h, b| h.wrapping_mul(0x100_0000_01b3) ^ u64::from(b));
    derive_seed(master, tag)
}

impl Datasets {
    /// Generates the training sets, and the test sets when `with_test`.
    pub fn generate(cfg: &ExperimentConfig, with_test: bool) -> Result<Datasets> {
        let sys = cfg.system.build()?;
        let seed = cfg.data.seed;
        let colloc = cfg.data.colloc.as_ref().map(|c| c.generate(&sys, role_seed(seed, "colloc"))).transpose()?;
        let traj = cfg.data.traj.as_ref().map(|t| t.generate(&sys, role_seed(seed, "traj"))).transpose()?;
        let test = if with_test { Self::generate_tests(cfg)? } else { Vec::new() };
        Ok(Datasets { colloc, traj, test })
    }

    pub fn generate_tests(cfg: &ExperimentConfig) -> Result<Vec<(TestSpec, TrajectorySet)>> {
        let sys = cfg.system.build()?;
        cfg.data
            .test
            .iter()
            .map(|t| Ok((t.clone(), t.traj.generate(&sys, role_seed(cfg.data.seed, &format!("test.{}", t.name)))?)))
            .collect()
    }
}

/// One file listed in a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub role: String,
    pub file: String,
    pub kind: String,
    pub seed: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| crate::model::json_error(&text, e))
    }

    pub fn by_role(&self) -> BTreeMap<&str, &ManifestEntry> {
        self.files.iter().map(|f| (f.role.as_str(), f)).collect()
    }
}

fn kind_name(d: &Dataset) -> String {
    format!("{:?}", d.kind())
}

/// Writes every dataset as a PIKD file plus `manifest.json` into `dir`.
pub fn write_datasets(dir: &Path, sets: &Datasets, config_hash: &str) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries: Vec<(String, Dataset)> = Vec::new();
    if let Some(c) = &sets.colloc {
        entries.push(("colloc".into(), c.clone().into()));
    }
    if let Some(t) = &sets.traj {
        entries.push(("traj".into(), t.clone().into()));
    }
    for (spec, t) in &sets.test {
        entries.push((format!("test.{}", spec.name), t.clone().into()));
    }
    let mut manifest = Manifest { config_hash: config_hash.into(), files: Vec::new() };
    for (role, d) in entries {
        let file = format!("{role}.pikd");
        let path = dir.join(&file);
        write_dataset(&path, &d)?;
        let seed = match &d {
            Dataset::Collocations(c) => c.meta.seed,
            Dataset::Trajectories(t) => t.meta.seed,
        };
        manifest.files.push(ManifestEntry { role, file, kind: kind_name(&d), seed, sha256: file_sha256(&path)? });
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads the datasets listed in `dir/manifest.json`, verifying hashes.
pub fn read_datasets(dir: &Path, cfg: &ExperimentConfig) -> Result<(Datasets, Manifest)> {
    let manifest = Manifest::read(dir)?;
    let mut sets = Datasets { colloc: None, traj: None, test: Vec::new() };
    for f in &manifest.files {
        let path = dir.join(&f.file);
        let got = file_sha256(&path)?;
        if got != f.sha256 {
            return Err(Error::config(format!("manifest.{}", f.role), format!("hash mismatch for {}", path.display())));
        }
        match (f.role.as_str(), read_dataset(&path)?) {
            ("colloc", Dataset::Collocations(c)) => sets.colloc = Some(c),
            ("traj", Dataset::Trajectories(t)) => sets.traj = Some(t),
            (role, Dataset::Trajectories(t)) if role.starts_with("test.") => {
                let name = &role[5..];
                if let Some(spec) = cfg.data.test.iter().find(|s| s.name == name) {
                    sets.test.push((spec.clone(), t));
                }
            }
            (role, _) => return Err(Error::config(format!("manifest.{role}"), "dataset kind does not fit its role")),
        }
    }
    Ok((sets, manifest))
}
