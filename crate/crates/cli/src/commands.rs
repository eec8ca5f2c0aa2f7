use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use pikoop::analysis::{
    decoder_modes, discrete_eigs, eig, eigen_match, eigenfunction_values, predict_rollout, spectrum_csv, trajectory_errors,
    Metric,
};
use pikoop::datagen::TrajectorySet;
use pikoop::experiment::{
    apply_override, from_value, read_datasets, write_datasets, Datasets, ExperimentConfig, DATASET_PRESETS, MANIFEST_FILE,
};
use pikoop::losses::{shards_from_env, LossReport};
use pikoop::model::{init_model, load_checkpoint, DecoderKind, KoopmanModel};
use pikoop::training::{read_train_state, Output, TrainData, Trainer, CHECKPOINT_FILE, STATE_FILE};
use pikoop::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ConfigArgs;

pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<()> {
    io(path, fs::write(path, text))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = io(path, fs::read_to_string(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Config { field: path.display().to_string(), message: e.to_string() })
}

fn set_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs.filter(|&n| n > 0) {
        // only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Preset, then config file, then `--override`s, then count flags.
fn load_config(args: &ConfigArgs, preset_name: Option<&str>) -> Result<ExperimentConfig> {
    let mut user = match &args.config {
        Some(p) => read_json(p)?,
        None => Value::Object(Default::default()),
    };
    let obj = user
        .as_object_mut()
        .ok_or_else(|| Error::Config { field: "config".into(), message: "must be a JSON object".into() })?;
    if let Some(name) = preset_name {
        obj.insert("preset".into(), Value::String(name.into()));
    }
    if let Some(r) = &args.regime {
        obj.insert("regime".into(), Value::String(r.clone()));
        // the regime's weights win over weights from the file
        if let Some(train) = obj.get_mut("train").and_then(Value::as_object_mut) {
            train.remove("weights");
        }
    }
    if !obj.contains_key("preset") {
        return Err(Error::Config { field: "preset".into(), message: "give --preset or a config with a `preset` field".into() });
    }
    let base = ExperimentConfig::resolve(&user)?;
    let mut v = serde_json::to_value(&base).expect("config serializes");
    for o in &args.overrides {
        apply_override(&mut v, o)?;
    }
    Ok(from_value(v)?.with_counts(args.colloc, args.snap))
}

pub fn gen(args: &ConfigArgs, seed: Option<u64>, out: &Path, jobs: Option<usize>, with_test: bool) -> Result<()> {
    set_jobs(jobs);
    let requested = args.preset.as_deref();
    let dataset_preset = requested.and_then(|p| DATASET_PRESETS.iter().find(|(name, _, _)| *name == p));
    let mut cfg = load_config(args, dataset_preset.map(|(_, exp, _)| *exp).or(requested))?;
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    if let Some((_, _, role)) = dataset_preset {
        if *role == "colloc" {
            cfg.data.traj = None;
        } else {
            cfg.data.colloc = None;
        }
    }
    cfg.system.build()?;
    let sets = Datasets::generate(&cfg, with_test)?;
    io(out, fs::create_dir_all(out))?;
    let manifest = write_datasets(out, &sets, &cfg.hash())?;
    write(&out.join(CONFIG_FILE), &cfg.to_json_pretty())?;
    for f in &manifest.files {
        println!("{:<16} {:<24} {}", f.role, f.kind, f.sha256);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub preset: String,
    pub regime: String,
    pub config_hash: String,
    pub seed: u64,
    pub epochs: usize,
    pub shards: usize,
    pub final_lr: f64,
    pub final_loss: LossReport,
    /// Eigenvalues of L as `[re, im]`.
    pub eigenvalues: Vec<[f64; 2]>,
    pub phys: BTreeMap<String, f64>,
    pub datasets: Vec<(String, String)>,
}

fn progress_every(epochs: usize) -> usize {
    (epochs / 20).max(1)
}

pub fn train(args: &ConfigArgs, seed: Option<u64>, out: &Path, data: Option<&Path>, resume: bool, jobs: Option<usize>) -> Result<()> {
    set_jobs(jobs);
    let config_path = out.join(CONFIG_FILE);
    let cfg = if resume {
        // the saved config is the base; only the epoch budget may change
        let saved = from_value(read_json(&config_path)?)?;
        let mut v = serde_json::to_value(&saved).expect("config serializes");
        for o in &args.overrides {
            apply_override(&mut v, o)?;
        }
        let cfg = from_value(v)?;
        let mut same = cfg.clone();
        same.train.epochs = saved.train.epochs;
        if same != saved || args.preset.is_some() || args.config.is_some() || seed.is_some() {
            return Err(Error::Config { field: "resume".into(), message: "only train.epochs may change when resuming".into() });
        }
        cfg
    } else {
        let mut cfg = load_config(args, args.preset.as_deref())?;
        if let Some(s) = seed {
            cfg.train.seed = s;
        }
        cfg
    };
    cfg.validate()?;
    let hash = cfg.hash();
    io(out, fs::create_dir_all(out))?;
    write(&config_path, &cfg.to_json_pretty())?;
    let (sets, manifest) = match data {
        Some(dir) => read_datasets(dir, &cfg)?,
        None => {
            let dir = out.join("data");
            let sets = Datasets::generate(&cfg, false)?;
            let manifest = write_datasets(&dir, &sets, &hash)?;
            (sets, manifest)
        }
    };
    write(&out.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    let system = cfg.system.build()?;
    let train_data = TrainData { system: &system, colloc: sets.colloc.as_ref(), traj: sets.traj.as_ref() };
    let shards = shards_from_env();
    let output = Output { dir: Some(out.to_path_buf()), config_hash: hash.clone() };
    let mut trainer = if resume {
        let model = load_checkpoint(&out.join(CHECKPOINT_FILE))?;
        let state = read_train_state(&out.join(STATE_FILE))?;
        Trainer::resume(model, state, train_data, cfg.train.clone(), shards)?
    } else {
        Trainer::new(init_model(&cfg.arch, cfg.train.seed)?, train_data, cfg.train.clone(), shards)?
    }
    .with_output(output);
    let every = progress_every(cfg.train.epochs);
    while !trainer.is_done() {
        let row = trainer.epoch()?;
        if row.epoch % every == 0 || row.epoch == 1 {
            eprintln!("epoch {:>7}/{} lr {:.3e} total {:.6e}", row.epoch, cfg.train.epochs, row.lr, row.loss.total);
        }
    }
    trainer.checkpoint()?;
    let spectrum = eig(trainer.model.l.view())?;
    let state = &trainer.state;
    let last = state.log.rows.last().copied();
    let summary = Summary {
        preset: cfg.preset.clone(),
        regime: cfg.train.regime.clone(),
        config_hash: hash,
        seed: cfg.train.seed,
        epochs: state.epoch,
        shards,
        final_lr: state.plateau.lr,
        final_loss: last.map(|r| r.loss).unwrap_or_default(),
        eigenvalues: spectrum.values.iter().map(|c| [c.re, c.im]).collect(),
        phys: trainer.model.phys.iter().map(|p| (p.name.clone(), p.value)).collect(),
        datasets: manifest.files.iter().map(|f| (f.role.clone(), f.sha256.clone())).collect(),
    };
    write(&out.join(SUMMARY_FILE), &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    println!("{}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config { field: what.into(), message: format!("`{t}` is not a number") })
        })
        .collect()
}

fn run_config(run: &Path) -> Result<ExperimentConfig> {
    from_value(read_json(&run.join(CONFIG_FILE))?)
}

pub fn eigs(run: Option<&Path>, checkpoint: Option<&Path>, exact: Option<&str>, discrete: Option<f64>, grid: usize, out: Option<&Path>) -> Result<()> {
    let (ck, cfg) = match (run, checkpoint) {
        (Some(r), _) => (r.join(CHECKPOINT_FILE), Some(run_config(r)?)),
        (None, Some(c)) => (c.to_path_buf(), None),
        (None, None) => return Err(Error::Config { field: "eigs".into(), message: "give --run or --checkpoint".into() }),
    };
    let out: PathBuf = out.map(Path::to_path_buf).or_else(|| run.map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("."));
    io(&out, fs::create_dir_all(&out))?;
    let model = load_checkpoint(&ck)?;
    let spectrum = eig(model.l.view())?;
    write(&out.join("eigs.csv"), &spectrum_csv(&spectrum))?;
    let exact: Vec<f64> = match (exact, &cfg) {
        (Some(s), _) => parse_list(s, "exact")?,
        (None, Some(c)) => c.exact.values(),
        (None, None) => Vec::new(),
    };
    for (k, v) in spectrum.values.iter().enumerate() {
        println!("{k:>4} {:>+14.6e} {:>+14.6e}i  residual {:.2e}", v.re, v.im, spectrum.residuals[k]);
    }
    if !exact.is_empty() {
        let exact: Vec<Complex64> = exact.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        let m = eigen_match(&spectrum.values, &exact);
        write(&out.join("match.csv"), &m.to_csv())?;
        for p in &m.pairs {
            println!("exact {:>+10.4} found {:>+12.6}{:+.6}i  |d| {:.3e}", p.exact.re, p.found.re, p.found.im, p.distance);
        }
    }
    if let Some(dt) = discrete {
        let d = discrete_eigs(&spectrum.values, dt)?;
        let mut s = String::from("index,re,im\n");
        for (k, v) in d.iter().enumerate() {
            s.push_str(&format!("{k},{},{}\n", v.re, v.im));
        }
        write(&out.join("eigs_discrete.csv"), &s)?;
    }
    if grid > 0 {
        write_eigenfunctions(&model, &spectrum, grid, &out)?;
    }
    Ok(())
}

fn write_eigenfunctions(model: &KoopmanModel, spectrum: &pikoop::analysis::Spectrum, grid: usize, out: &Path) -> Result<()> {
    if model.state_dim() == 2 {
        let n = grid.max(2);
        let mut pts = ndarray::Array2::zeros((n * n, 2));
        for i in 0..n {
            for j in 0..n {
                pts[[i * n + j, 0]] = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                pts[[i * n + j, 1]] = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
            }
        }
        for k in 0..spectrum.len() {
            let vals = eigenfunction_values(model, spectrum, k, pts.view())?;
            let mut s = String::from("x1,x2,re,im\n");
            for (r, v) in pts.rows().into_iter().zip(&vals) {
                s.push_str(&format!("{},{},{},{}\n", r[0], r[1], v.re, v.im));
            }
            write(&out.join(format!("eigenfunction_{k}.csv")), &s)?;
        }
    } else if model.arch.decoder == DecoderKind::LinearNoBias {
        let modes = decoder_modes(model, spectrum)?;
        let n = model.state_dim();
        for k in 0..spectrum.len().min(grid) {
            let mut s = String::from("x,re,im\n");
            for i in 0..n {
                let x = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let v = modes[[i, k]];
                s.push_str(&format!("{x},{},{}\n", v.re, v.im));
            }
            write(&out.join(format!("mode_{k}.csv")), &s)?;
        }
    }
    Ok(())
}

fn parse_metric(s: &str) -> Result<Metric> {
    match s {
        "mae" => Ok(Metric::Mae),
        "mse" => Ok(Metric::Mse),
        _ => Err(Error::Config { field: "metric".into(), message: format!("expected mae or mse, got `{s}`") }),
    }
}

fn test_sets(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<Vec<(pikoop::experiment::TestSpec, TrajectorySet)>> {
    match data {
        Some(dir) => Ok(read_datasets(dir, cfg)?.0.test),
        None => Datasets::generate_tests(cfg),
    }
}

pub fn eval(run: &Path, data: Option<&Path>, only: Option<&str>, metric: Option<&str>, steps: Option<usize>, dt: Option<f64>, jobs: Option<usize>) -> Result<()> {
    set_jobs(jobs);
    let mut cfg = run_config(run)?;
    let metric = metric.map(parse_metric).transpose()?;
    if let Some(name) = only {
        cfg.data.test.retain(|t| t.name == name);
        if cfg.data.test.is_empty() {
            return Err(Error::Config { field: "test".into(), message: format!("no test set named `{name}`") });
        }
    }
    for t in &mut cfg.data.test {
        use pikoop::experiment::TrajSpec;
        match &mut t.traj {
            TrajSpec::Simulated { p, dt: d, .. } | TrajSpec::ColeHopf { p, dt: d, .. } => {
                if let Some(s) = steps {
                    *p = s;
                }
                if let Some(x) = dt {
                    *d = x;
                }
            }
        }
        if let Some(m) = metric {
            t.metric = m;
        }
    }
    let model = load_checkpoint(&run.join(CHECKPOINT_FILE))?;
    for (spec, set) in test_sets(&cfg, data)? {
        let curve = trajectory_errors(&model, &set, spec.metric)?;
        write(&run.join(format!("errors_{}.csv", spec.name)), &curve.to_csv())?;
        println!("{:<12} {:?} n={} steps={} mean={:.6e}", spec.name, spec.metric, curve.n, curve.steps.len(), curve.average());
    }
    Ok(())
}

pub fn predict(run: &Path, x0: Option<&str>, test: Option<&str>, index: usize, dt: f64, steps: usize, out: Option<&Path>) -> Result<()> {
    let model = load_checkpoint(&run.join(CHECKPOINT_FILE))?;
    let x0: Vec<f64> = match (x0, test) {
        (Some(s), _) => parse_list(s, "x0")?,
        (None, Some(name)) => {
            let mut cfg = run_config(run)?;
            cfg.data.test.retain(|t| t.name == name);
            let sets = Datasets::generate_tests(&cfg)?;
            let (_, set) = sets
                .into_iter()
                .next()
                .ok_or_else(|| Error::Config { field: "test".into(), message: format!("no test set named `{name}`") })?;
            if index >= set.count() {
                return Err(Error::Config { field: "index".into(), message: format!("{index} >= {}", set.count()) });
            }
            set.states.slice(ndarray::s![index, 0, ..]).to_vec()
        }
        (None, None) => return Err(Error::Config { field: "predict".into(), message: "give --x0 or --test".into() }),
    };
    let snaps = predict_rollout(&model, &x0, dt, steps)?;
    let d = x0.len();
    let mut s = String::from("step,t");
    for k in 0..d {
        s.push_str(&format!(",x{k}"));
    }
    s.push('\n');
    for j in 0..snaps.len() {
        s.push_str(&format!("{j},{}", snaps.time(j)));
        for v in snaps.state(j) {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| run.join("predict.csv"));
    write(&path, &s)?;
    println!("{}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct Report {
    summary: Summary,
    max_residual: Option<f64>,
    matches: Vec<[f64; 3]>,
    errors: BTreeMap<String, f64>,
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = io(path, fs::read_to_string(path))?;
    Ok(text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|t| t.parse().unwrap_or(f64::NAN)).collect())
        .collect())
}

pub fn report(run: &Path) -> Result<()> {
    let summary: Summary = serde_json::from_value(read_json(&run.join(SUMMARY_FILE))?)
        .map_err(|e| Error::Config { field: SUMMARY_FILE.into(), message: e.to_string() })?;
    let eigs = run.join("eigs.csv");
    let max_residual = if eigs.exists() { read_csv_rows(&eigs)?.iter().map(|r| r[3]).reduce(f64::max) } else { None };
    let m = run.join("match.csv");
    let matches = if m.exists() { read_csv_rows(&m)?.iter().map(|r| [r[0], r[2], r[4]]).collect() } else { Vec::new() };
    let mut errors = BTreeMap::new();
    let mut entries: Vec<PathBuf> = io(run, fs::read_dir(run))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if let Some(test) = name.strip_prefix("errors_").and_then(|n| n.strip_suffix(".csv")) {
            let rows = read_csv_rows(&p)?;
            let avg = rows.iter().map(|r| r[1]).sum::<f64>() / rows.len().max(1) as f64;
            errors.insert(test.to_string(), avg);
        }
    }
    println!("preset {} regime {} seed {} epochs {}", summary.preset, summary.regime, summary.seed, summary.epochs);
    println!("final total loss {:.6e} (lr {:.3e})", summary.final_loss.total, summary.final_lr);
    for (name, v) in &summary.phys {
        println!("{name} = {v:.6}");
    }
    for [e, f, d] in &matches {
        println!("exact {e:+.4} found {f:+.6} |d| {d:.3e}");
    }
    for (name, v) in &errors {
        println!("test {name}: mean error {v:.6e}");
    }
    let rep = Report { summary, max_residual, matches, errors };
    write(&run.join("report.json"), &serde_json::to_string_pretty(&rep).expect("report serializes"))
}
