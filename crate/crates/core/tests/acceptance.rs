//! Acceptance criteria, one PASS/FAIL line each.
//!
//! C6 always runs. C1-C5 train models for minutes to hours on one core and
//! run only with `PIKOOP_ACCEPTANCE=full`; otherwise they print SKIP.
//! `PIKOOP_THREADS` sets the loss shard count for them.

use std::io::Write;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use pikoop::analysis::{eig, eigen_match, eigenvalues, expm, trajectory_errors};
use pikoop::datagen::{
    cole_hopf_u, gen_trajectories, read_dataset, sample_box_collocations, sample_colehopf_coefficients, write_dataset, Bounds, IcSampler,
};
use pikoop::diffengine::{mlp_eval, mlp_jvp_eval, objective_gradient, Activation, MlpParams, MlpSpec};
use pikoop::dynamics::{OdeSystem, PdeSystem, System};
use pikoop::experiment::{preset, CollocSpec, Datasets, ExactSpectrum, ExperimentConfig, SystemSpec, TrajSpec};
use pikoop::losses::{data_terms, physics_terms, shards_from_env, KoopmanObjective, LossWeights, Problem};
use pikoop::model::{init_model, load_checkpoint, save_checkpoint, Architecture, ExactModel, KoopmanModel, PhysParamSpec};
use pikoop::rng::Stream;
use pikoop::solvers::{integrate_pde, spectral_derivative, stable_substeps, SpectralGrid};
use pikoop::training::{train, Output, RunLog, TrainData};

// Written past the test harness capture, on their own lines.
fn line(id: &str, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "\n{verdict} {id}: {}", detail.as_ref()).unwrap();
    out.flush().unwrap();
}

fn note(text: String) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "\n  {text}").unwrap();
}

fn full() -> bool {
    std::env::var("PIKOOP_ACCEPTANCE").is_ok_and(|v| v == "full")
}

fn skip(id: &str, what: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "\nSKIP {id}: {what} (set PIKOOP_ACCEPTANCE=full)").unwrap();
}

fn run(cfg: &ExperimentConfig) -> (KoopmanModel, RunLog) {
    let sys = cfg.system.build().unwrap();
    let d = Datasets::generate(cfg, false).unwrap();
    let data = TrainData { system: &sys, colloc: d.colloc.as_ref(), traj: d.traj.as_ref() };
    let model = init_model(&cfg.arch, cfg.train.seed).unwrap();
    let out = Output { dir: None, config_hash: cfg.hash() };
    train(model, data, cfg.train.clone(), shards_from_env(), out).unwrap()
}

fn real(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&r| Complex64::new(r, 0.0)).collect()
}

fn fmt_eigs(v: &[Complex64]) -> String {
    let parts: Vec<String> = v.iter().map(|c| if c.im == 0.0 { format!("{:.4}", c.re) } else { format!("{:.4}{:+.4}i", c.re, c.im) }).collect();
    format!("[{}]", parts.join(", "))
}

/// Trains `name` for seeds 0..10 and counts runs whose spectrum matches
/// `exact` within `tol`, printing one detail line per seed.
fn eigen_recovery(id: &str, name: &str, tol: f64, need: usize) {
    let mut ok = 0;
    for seed in 0..10 {
        let mut cfg = preset(name).unwrap();
        cfg.train.seed = seed;
        let exact = real(&cfg.exact.values());
        let start = std::time::Instant::now();
        let (model, _) = run(&cfg);
        let secs = start.elapsed().as_secs_f64();
        let found = eigenvalues(model.l.view()).unwrap();
        let m = eigen_match(&found, &exact);
        let worst = m.pairs.iter().map(|p| p.distance).fold(0.0, f64::max);
        let pass = m.unmatched_exact.is_empty() && worst <= tol;
        ok += usize::from(pass);
        note(format!("{id} seed {seed}: eigenvalues {} worst distance {worst:.2e} in {secs:.0}s {}", fmt_eigs(&found), if pass { "ok" } else { "miss" }));
    }
    line(id, ok >= need, format!("{name}: {ok}/10 seeds within ±{tol} (need {need})"));
    assert!(ok >= need);
}

#[test]
fn c1_linear_decoder_eigenvalues() {
    if !full() {
        return skip("C1", "simple-ode-linear eigenvalues, 10 seeds x 50000 epochs");
    }
    eigen_recovery("C1", "simple-ode-linear", 0.01, 8);
}

#[test]
fn c2_nonlinear_decoder_eigenvalues() {
    if !full() {
        return skip("C2", "simple-ode-nonlinear eigenvalues, 10 seeds x 50000 epochs");
    }
    eigen_recovery("C2", "simple-ode-nonlinear", 0.02, 7);
}

#[test]
fn c3_unknown_parameter_recovery() {
    if !full() {
        return skip("C3", "unknown-params (500, 500), 10 initializations");
    }
    let mut ok = 0;
    for seed in 0..10 {
        let mut cfg = preset("unknown-params").unwrap().with_counts(Some(500), Some(500));
        cfg.train.seed = seed;
        let init = init_model(&cfg.arch, seed).unwrap();
        let (model, _) = run(&cfg);
        let (mu, lambda) = (model.phys_value("mu").unwrap(), model.phys_value("lambda").unwrap());
        let pass = (mu + 0.1).abs() <= 0.005 && (lambda + 1.0).abs() <= 0.05;
        ok += usize::from(pass);
        note(format!(
            "C3 seed {seed}: init (mu, lambda) = ({:.3}, {:.3}) -> ({mu:.4}, {lambda:.4}) eigenvalues {} {}",
            init.phys_value("mu").unwrap(),
            init.phys_value("lambda").unwrap(),
            fmt_eigs(&eigenvalues(model.l.view()).unwrap()),
            if pass { "ok" } else { "miss" }
        ));
    }
    line("C3", ok >= 8, format!("unknown-params: {ok}/10 initializations with |mu+0.1| <= 0.005 and |lambda+1| <= 0.05 (need 8)"));
    assert!(ok >= 8);
}

/// The heat preset on a 32-point grid.
fn small_heat() -> ExperimentConfig {
    let mut cfg = preset("heat").unwrap();
    let (n, kmax) = (32, 15);
    cfg.system = SystemSpec::Heat { n };
    cfg.arch.input_dim = n;
    cfg.arch.latent_dim = n;
    if let Some(CollocSpec::Harmonic { count, kmax: k, .. }) = &mut cfg.data.colloc {
        *count = 500;
        *k = kmax;
    }
    if let Some(TrajSpec::Simulated { count, ic: IcSampler::Harmonic { kmax: k, .. }, .. }) = &mut cfg.data.traj {
        *count = 200;
        *k = kmax;
    }
    cfg.data.test.clear();
    cfg.exact = ExactSpectrum::NegSquares { kmax: 8 };
    cfg.train.epochs = 20_000;
    cfg
}

#[test]
fn c4_heat_spectrum_small_grid() {
    if !full() {
        return skip("C4", "heat n=32 hybrid, 20000 epochs");
    }
    let cfg = small_heat();
    cfg.validate().unwrap();
    let (model, _) = run(&cfg);
    let found = eigenvalues(model.l.view()).unwrap();
    let m = eigen_match(&found, &real(&cfg.exact.values()));
    let mut worst: f64 = 0.0;
    for p in &m.pairs {
        let rel = p.distance / p.exact.norm();
        worst = worst.max(rel);
        note(format!("C4 exact {:>5} found {:.4}{:+.4}i rel {rel:.3e}", p.exact.re, p.found.re, p.found.im));
    }
    let pass = m.unmatched_exact.is_empty() && worst <= 0.10;
    line("C4", pass, format!("heat n=32: worst relative error over k=1..8 is {worst:.3e} (need <= 0.10)"));
    assert!(pass);
}

/// The Burgers preset on a 64-point grid.
fn small_burgers() -> ExperimentConfig {
    let mut cfg = preset("burgers").unwrap();
    let n = 64;
    cfg.system = SystemSpec::Burgers { n, nu: 0.01 };
    cfg.arch.input_dim = n;
    cfg.arch.latent_dim = n;
    cfg = cfg.with_counts(Some(8000), Some(128));
    cfg.train.epochs = 200;
    cfg
}

#[test]
fn c5_burgers_generalization() {
    if !full() {
        return skip("C5", "burgers n=64 hybrid vs data-only, 200 epochs each");
    }
    let start = std::time::Instant::now();
    let hybrid = small_burgers();
    let data_only = small_burgers().with_regime(pikoop::experiment::Regime::Data);
    let tests = Datasets::generate_tests(&hybrid).unwrap();
    let mse = |cfg: &ExperimentConfig| -> Vec<(String, f64)> {
        let (model, _) = run(cfg);
        tests
            .iter()
            .map(|(spec, set)| (spec.name.clone(), trajectory_errors(&model, set, spec.metric).unwrap().average()))
            .collect()
    };
    let h = mse(&hybrid);
    let d = mse(&data_only);
    let get = |v: &[(String, f64)], k: &str| v.iter().find(|(n, _)| n == k).unwrap().1;
    let (hh, dh) = (get(&h, "harmonic"), get(&d, "harmonic"));
    let (hb, db) = (get(&h, "bell"), get(&d, "bell"));
    let pass_h = hh <= dh / 3.0;
    let pass_b = hb <= 1.5 * db;
    let secs = start.elapsed().as_secs_f64();
    let pass_t = secs <= 3600.0;
    line(
        "C5",
        pass_h && pass_b && pass_t,
        format!("burgers n=64 in {secs:.0}s (need <= 3600s): harmonic MSE hybrid {hh:.3e} vs data {dh:.3e} (ratio {:.3}, need <= 1/3); bell MSE hybrid {hb:.3e} vs data {db:.3e} (ratio {:.3}, need <= 1.5)", hh / dh, hb / db),
    );
    assert!(pass_h && pass_b && pass_t);
}

// C6: property suites.

fn random_net(seed: u64) -> (KoopmanModel, LossWeights) {
    let mut rng = Stream::new(seed);
    let hidden = 2 + rng.below(5);
    let latent = 1 + rng.below(3);
    let mut arch = if rng.below(2) == 0 {
        Architecture::linear_decoder(2, &[hidden], latent)
    } else {
        Architecture::nonlinear_decoder(2, &[hidden], latent)
    };
    if rng.below(3) == 0 {
        arch.phys = vec![PhysParamSpec { name: "lambda".into(), trainable: true, init: Some(-0.8) }];
    }
    let mut model = init_model(&arch, seed).unwrap();
    model.l.mapv_inplace(|_| rng.uniform(-0.5, 0.5));
    let mut pick = || if rng.below(4) == 0 { 0.0 } else { rng.uniform(0.2, 2.0) };
    let mut w = LossWeights::new(pick(), pick(), pick(), pick());
    w.alt_lin = pick();
    if w.validate().is_err() {
        w.phys_lin = 1.0;
    }
    (model, w)
}

fn gradient_check() -> f64 {
    let sys = System::Ode(OdeSystem::fixed_point(-0.1, -1.0));
    let colloc = sample_box_collocations(&OdeSystem::fixed_point(-0.1, -1.0), &Bounds::square(-1.0, 1.0), 12, 1).unwrap();
    let traj = gen_trajectories(&sys, &IcSampler::Box { bounds: Bounds::square(-1.0, 1.0) }, 3, 0.1, 3, 2).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (model, w) = random_net(seed);
        let obj = KoopmanObjective {
            model: model.clone(),
            problem: Problem { system: &sys, colloc: Some((&colloc).into()), traj: Some((&traj).into()), weights: w },
            shards: 1,
        };
        let theta = model.flatten();
        let g = objective_gradient(&obj, &theta).unwrap().gradient;
        let h = 1e-5;
        for i in 0..theta.len() {
            let (mut p, mut m) = (theta.clone(), theta.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (objective_gradient(&obj, &p).unwrap().value - objective_gradient(&obj, &m).unwrap().value) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

fn jvp_check() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = Stream::new(100 + seed);
        let spec = MlpSpec::new(vec![3, 7, 5, 2], Activation::Elu, true).unwrap();
        let mut params = MlpParams::zeros(&spec);
        let vals: Vec<f64> = (0..params.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        params.assign_from(&vals);
        let x = Array2::from_shape_fn((4, 3), |_| rng.uniform(-1.5, 1.5));
        let v = Array2::from_shape_fn((4, 3), |_| rng.uniform(-1.0, 1.0));
        let dual = mlp_jvp_eval(&spec, &params, x.view(), v.view()).unwrap();
        let h = 1e-5;
        let fd = (mlp_eval(&spec, &params, (&x + &(h * &v)).view()).unwrap() - mlp_eval(&spec, &params, (&x - &(h * &v)).view()).unwrap()) / (2.0 * h);
        worst = worst.max((&dual.tangent - &fd).iter().fold(0.0f64, |m, d| m.max(d.abs())));
    }
    worst
}

fn spectral_check() -> f64 {
    let mut worst: f64 = 0.0;
    for n in [16, 32, 64] {
        let grid = SpectralGrid::new(n).unwrap();
        for k in 1..n / 2 {
            let kf = k as f64;
            let u: Vec<f64> = grid.nodes().iter().map(|x| (kf * x).sin()).collect();
            let d1 = spectral_derivative(&grid, &u, 1).unwrap();
            let d2 = spectral_derivative(&grid, &u, 2).unwrap();
            for (i, x) in grid.nodes().iter().enumerate() {
                // scale by k^order so every mode is checked at unit size
                worst = worst.max((d1[i] - kf * (kf * x).cos()).abs() / kf);
                worst = worst.max((d2[i] + kf * kf * (kf * x).sin()).abs() / (kf * kf));
            }
        }
    }
    worst
}

fn random_matrix(n: usize, seed: u64, scale: f64) -> Array2<f64> {
    let mut rng = Stream::new(seed);
    Array2::from_shape_fn((n, n), |_| rng.uniform(-scale, scale))
}

fn expm_semigroup_check() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let a = random_matrix(6, seed, 1.0);
        let (s, t) = (0.37, 0.81);
        let lhs = expm(a.view(), s + t).unwrap();
        let rhs = expm(a.view(), s).unwrap().dot(&expm(a.view(), t).unwrap());
        let scale = lhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        worst = worst.max((&lhs - &rhs).iter().fold(0.0f64, |m, d| m.max(d.abs())) / scale);
    }
    worst
}

/// Determinant by Gaussian elimination with partial pivoting.
fn det_oracle(mut a: Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[[i, c]].abs().total_cmp(&a[[j, c]].abs())).unwrap();
        if p != c {
            for k in 0..n {
                a.swap([p, k], [c, k]);
            }
            det = -det;
        }
        det *= a[[c, c]];
        for r in c + 1..n {
            let f = a[[r, c]] / a[[c, c]];
            for k in c..n {
                a[[r, k]] -= f * a[[c, k]];
            }
        }
    }
    det
}

fn eig_checks() -> (f64, f64) {
    let (mut identity, mut residual): (f64, f64) = (0.0, 0.0);
    for seed in 0..20 {
        let n = 2 + (seed as usize % 7);
        let a = random_matrix(n, 1000 + seed, 1.0);
        let s = eig(a.view()).unwrap();
        let trace: Complex64 = s.values.iter().sum();
        let prod: Complex64 = s.values.iter().product();
        identity = identity.max((trace.re - a.diag().sum()).abs()).max(trace.im.abs());
        let d = det_oracle(a.clone());
        identity = identity.max((prod.re - d).abs() / d.abs().max(1.0)).max(prod.im.abs() / d.abs().max(1.0));
        let norm = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for r in s.residuals.iter().chain(&s.left_residuals) {
            residual = residual.max(r / norm);
        }
    }
    (identity, residual)
}

fn heat_decay_check() -> f64 {
    let grid = SpectralGrid::new(32).unwrap();
    let mut worst: f64 = 0.0;
    for k in [1usize, 3, 7] {
        let kf = k as f64;
        let u0: Vec<f64> = grid.nodes().iter().map(|x| (kf * x).cos() + 0.5 * (kf * x).sin()).collect();
        let (dt, steps) = (0.01, 20);
        let sub = stable_substeps(&PdeSystem::Heat, &grid, &u0, dt);
        let run = integrate_pde(&PdeSystem::Heat, &grid, &u0, dt, steps, sub).unwrap();
        let decay = (-kf * kf * dt * steps as f64).exp();
        for (a, b) in run.state(steps).iter().zip(&u0) {
            worst = worst.max((a - decay * b).abs());
        }
    }
    worst
}

fn burgers_mass_check() -> f64 {
    let grid = SpectralGrid::new(64).unwrap();
    let sys = PdeSystem::Burgers { nu: 0.01 };
    let u0: Vec<f64> = grid.nodes().iter().map(|x| (-x * x / (2.0 * 0.3f64 * 0.3)).exp() + 0.2 * (2.0 * x).sin()).collect();
    let sub = stable_substeps(&sys, &grid, &u0, 0.1);
    let run = integrate_pde(&sys, &grid, &u0, 0.1, 20, sub).unwrap();
    let mean = |j: usize| run.state(j).mean().unwrap();
    (0..=20).map(|j| (mean(j) - mean(0)).abs()).fold(0.0, f64::max)
}

fn colehopf_residual_check() -> f64 {
    let mut rng = Stream::new(9);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let c = sample_colehopf_coefficients(10, &mut rng);
        for _ in 0..20 {
            let x = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
            let t = rng.uniform(0.0, 0.1);
            let u_at = |x: f64, t: f64| cole_hopf_u(&c, x, t).unwrap();
            // fourth-order central differences; modes up to k = 10 make
            // second-order stencils too coarse for the tolerance
            let d5 = |f: &dyn Fn(f64) -> f64, h: f64| (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
            let ut = d5(&|e| u_at(x, t + e).0, 1e-4);
            let ux_fd = d5(&|e| u_at(x + e, t).0, 1e-3);
            let uxx_fd = d5(&|e| u_at(x + e, t).1, 1e-3);
            let (u, ux, uxx) = u_at(x, t);
            worst = worst.max((ut + u * ux - uxx).abs()).max((ux - ux_fd).abs()).max((uxx - uxx_fd).abs());
        }
    }
    worst
}

fn exact_oracle_checks() -> (f64, f64) {
    let ode = OdeSystem::fixed_point(-0.1, -1.0);
    let m = ExactModel::fixed_point(-0.1, -1.0).unwrap();
    let colloc = sample_box_collocations(&ode, &Bounds::square(-1.0, 1.0), 1000, 5).unwrap();
    let traj = gen_trajectories(&System::Ode(ode), &IcSampler::Box { bounds: Bounds::square(-1.0, 1.0) }, 50, 0.1, 10, 6).unwrap();
    (physics_terms(&m, &colloc).unwrap().0, data_terms(&m, &traj).unwrap().0)
}

fn round_trip_checks() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let mut model = init_model(&preset("unknown-params").unwrap().arch, 4).unwrap();
    model.l = random_matrix(2, 5, 1.0) * 1e-3 / 7.0;
    let ck = dir.path().join("ck.json");
    save_checkpoint(&model, "h", &ck).unwrap();
    let same_model = load_checkpoint(&ck).unwrap() == model;
    let bits = |m: &KoopmanModel| m.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same_bits = bits(&load_checkpoint(&ck).unwrap()) == bits(&model);

    let grid_sys = System::Pde(PdeSystem::Burgers { nu: 0.01 }, SpectralGrid::new(32).unwrap());
    let t = gen_trajectories(&grid_sys, &IcSampler::bell(), 3, 0.1, 4, 8).unwrap();
    let path = dir.path().join("t.pikd");
    write_dataset(&path, &t.clone().into()).unwrap();
    let back = read_dataset(&path).unwrap();
    let same_data = back == t.into();
    same_model && same_bits && same_data
}

fn determinism_check() -> bool {
    let mut cfg = preset("unknown-params").unwrap().with_counts(Some(100), Some(20));
    cfg.train.epochs = 50;
    let (a, la) = run(&cfg);
    let (b, lb) = run(&cfg);
    a == b && la.to_csv() == lb.to_csv() && la.rows.len() == 50
}

#[test]
fn c6_property_suites() {
    let start = std::time::Instant::now();
    let mut all = true;
    let mut check = |id: &str, pass: bool, detail: String| {
        line(id, pass, detail);
        all &= pass;
    };

    let g = gradient_check();
    check("C6.grad", g <= 1e-4, format!("objective gradient vs central differences over 20 random nets: max rel err {g:.2e} (need <= 1e-4)"));
    let j = jvp_check();
    check("C6.jvp", j <= 1e-6, format!("mlp_jvp vs finite differences: max abs err {j:.2e} (need <= 1e-6)"));
    let s = spectral_check();
    check("C6.spectral", s <= 1e-10, format!("spectral derivatives on pure modes: max err {s:.2e} (need <= 1e-10)"));
    let e = expm_semigroup_check();
    check("C6.expm", e <= 1e-10, format!("expm semigroup: max rel err {e:.2e} (need <= 1e-10)"));
    let (id, res) = eig_checks();
    check("C6.eig", id <= 1e-8 && res <= 1e-8, format!("eig trace/det identities {id:.2e}, residuals {res:.2e} (need <= 1e-8)"));
    let h = heat_decay_check();
    check("C6.heat", h <= 1e-6, format!("heat solver vs analytic decay: max err {h:.2e} (need <= 1e-6)"));
    let b = burgers_mass_check();
    check("C6.mass", b <= 1e-8, format!("Burgers mass drift: {b:.2e} (need <= 1e-8)"));
    let c = colehopf_residual_check();
    check("C6.colehopf", c <= 1e-6, format!("Cole-Hopf PDE residual: {c:.2e} (need <= 1e-6)"));
    let (pl, dl) = exact_oracle_checks();
    check("C6.oracle", pl <= 1e-20 && dl <= 1e-12, format!("exact encoder: physics linearity {pl:.2e} (need <= 1e-20), data linearity {dl:.2e} (need <= 1e-12)"));
    check("C6.roundtrip", round_trip_checks(), "checkpoint and PIKD round trips are bit-exact".into());
    check("C6.determinism", determinism_check(), "two seeded 50-epoch runs give identical models and logs".into());

    let secs = start.elapsed().as_secs_f64();
    line("C6", all && secs < 120.0, format!("property suites in {secs:.1}s (need < 120s)"));
    assert!(all && secs < 120.0);
}

#[test]
fn burgers_mean_is_the_zero_mode() {
    // the mass check above relies on the grid mean being the k = 0 coefficient
    let grid = SpectralGrid::new(16).unwrap();
    let u: Vec<f64> = grid.nodes().iter().map(|x| 0.7 + x.sin()).collect();
    let m = ndarray::Array1::from(u).mean_axis(Axis(0)).unwrap().into_scalar();
    assert!((m - 0.7).abs() < 1e-15);
}
