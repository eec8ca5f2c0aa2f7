use ndarray::{array, Array2};
use pikoop::datagen::{gen_trajectories, sample_box_collocations, sample_harmonic_collocations, Bounds, CoefScheme, CollocationSet, DerivativeMode, IcSampler, TrajectorySet};
use pikoop::diffengine::{objective_gradient, Objective};
use pikoop::dynamics::{OdeSystem, PdeSystem, System};
use pikoop::losses::*;
use pikoop::model::{init_model, Architecture, ExactModel, KoopmanModel, PhysParamSpec};
use pikoop::rng::Stream;
use pikoop::solvers::SpectralGrid;
use pikoop::Error;
use proptest::prelude::*;

fn ode() -> System {
    System::Ode(OdeSystem::fixed_point(-0.1, -1.0))
}

fn box_colloc(n: usize, seed: u64) -> CollocationSet {
    sample_box_collocations(&OdeSystem::fixed_point(-0.1, -1.0), &Bounds::square(-1.0, 1.0), n, seed).unwrap()
}

fn ode_traj(count: usize, p: usize, seed: u64) -> TrajectorySet {
    let ic = IcSampler::Box { bounds: Bounds::square(-1.0, 1.0) };
    gen_trajectories(&ode(), &ic, count, 0.1, p, seed).unwrap()
}

fn randomize_l(model: &mut KoopmanModel, seed: u64, scale: f64) {
    let mut rng = Stream::new(seed);
    model.l.mapv_inplace(|_| rng.uniform(-scale, scale));
}

#[test]
fn exact_oracle_physics_linearity_vanishes() {
    let m = ExactModel::fixed_point(-0.1, -1.0).unwrap();
    let (lin, rec) = physics_terms(&m, &box_colloc(500, 3)).unwrap();
    assert!(lin <= 1e-20, "linearity {lin}");
    assert!(rec <= 1e-28, "recon {rec}");
}

#[test]
fn exact_oracle_data_linearity_vanishes() {
    let m = ExactModel::fixed_point(-0.1, -1.0).unwrap();
    let (lin, rec) = data_terms(&m, &ode_traj(20, 30, 4)).unwrap();
    assert!(lin <= 1e-12, "data linearity {lin}");
    assert!(rec <= 1e-24);
}

#[test]
fn exact_oracle_alt_linearity_vanishes() {
    let m = ExactModel::fixed_point(-0.1, -1.0).unwrap();
    let v = alt_decoder_linearity(&m, &ode(), &box_colloc(500, 5)).unwrap();
    assert!(v <= 1e-18, "alt {v}");
}

#[test]
fn zero_rhs_and_zero_l_give_zero_linearity() {
    let model = init_model(&Architecture::linear_decoder(2, &[6], 3), 1).unwrap();
    let mut c = box_colloc(40, 2);
    c.rhs.fill(0.0);
    assert_eq!(physics_terms(&model, &c).unwrap().0, 0.0);
}

#[test]
fn zero_l_data_linearity_is_encoder_drift() {
    let model = init_model(&Architecture::nonlinear_decoder(2, &[5], 3), 7).unwrap();
    let t = ode_traj(6, 4, 9);
    let (lin, _) = data_terms(&model, &t).unwrap();
    let z0 = model.encode(t.at(0)).unwrap();
    let mut want = 0.0;
    for j in 0..=4 {
        want += (&z0 - &model.encode(t.at(j)).unwrap()).mapv(|v| v * v).sum();
    }
    want /= (6 * 5) as f64;
    assert!((lin - want).abs() <= 1e-14 * want.max(1.0));
}

#[test]
fn total_is_weighted_sum_bit_exact() {
    let mut model = init_model(&Architecture::nonlinear_decoder(2, &[5], 3), 11).unwrap();
    randomize_l(&mut model, 1, 0.5);
    let (c, t) = (box_colloc(30, 1), ode_traj(5, 3, 2));
    let w = LossWeights { phys_lin: 0.3, phys_rec: 1.7, data_lin: 0.25, data_rec: 2.0, alt_lin: 0.5 };
    let r = total_objective(&model, &ode(), Some(&c), Some(&t), &w).unwrap();
    let want = w.phys_lin * r.phys_lin + w.phys_rec * r.phys_rec + w.data_lin * r.data_lin + w.data_rec * r.data_rec + w.alt_lin * r.alt_lin;
    assert_eq!(r.total, want);
}

#[test]
fn weight_validation() {
    assert!(LossWeights::new(0.0, 0.0, 0.0, 0.0).validate().is_err());
    assert!(LossWeights::new(-1.0, 1.0, 0.0, 0.0).validate().is_err());
    assert!(LossWeights::new(0.0001, 1.0, 0.0, 0.0).validate().is_ok());
    assert!(LossWeights::new(0.0, 0.0, 1.0, 1.0).validate().is_ok());
}

#[test]
fn regimes_require_their_datasets() {
    let model = init_model(&Architecture::linear_decoder(2, &[4], 3), 1).unwrap();
    let c = box_colloc(10, 1);
    let physics_only = LossWeights::new(0.0001, 1.0, 0.0, 0.0);
    let data_only = LossWeights::new(0.0, 0.0, 1.0, 1.0);
    assert!(total_objective(&model, &ode(), Some(&c), None, &physics_only).is_ok());
    assert!(matches!(total_objective(&model, &ode(), Some(&c), None, &data_only), Err(Error::Config { .. })));
    assert!(matches!(total_objective(&model, &ode(), None, None, &physics_only), Err(Error::Config { .. })));
}

#[test]
fn zero_weight_matches_omitted_dataset() {
    let mut model = init_model(&Architecture::nonlinear_decoder(2, &[5], 3), 3).unwrap();
    randomize_l(&mut model, 3, 0.5);
    let (c, t) = (box_colloc(30, 1), ode_traj(5, 3, 2));
    let w = LossWeights::new(1.0, 1.0, 0.0, 0.0);
    let with = total_objective(&model, &ode(), Some(&c), Some(&t), &w).unwrap();
    let without = total_objective(&model, &ode(), Some(&c), None, &w).unwrap();
    assert_eq!(with, without);
    assert_eq!(with.data_lin, 0.0);
    let sys = ode();
    let a = loss_and_grad(&model, &Problem { system: &sys, colloc: Some((&c).into()), traj: Some((&t).into()), weights: w }, 1).unwrap();
    let b = loss_and_grad(&model, &Problem { system: &sys, colloc: Some((&c).into()), traj: None, weights: w }, 1).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.flatten(&model), b.1.flatten(&model));
}

#[test]
fn gradient_path_agrees_with_value_path() {
    let mut model = init_model(&Architecture::nonlinear_decoder(2, &[5], 3), 5).unwrap();
    randomize_l(&mut model, 5, 0.5);
    let (c, t) = (box_colloc(25, 1), ode_traj(4, 5, 2));
    let w = LossWeights { phys_lin: 1.0, phys_rec: 1.0, data_lin: 1.0, data_rec: 1.0, alt_lin: 1.0 };
    let sys = ode();
    let value = total_objective(&model, &sys, Some(&c), Some(&t), &w).unwrap();
    let prob = Problem { system: &sys, colloc: Some((&c).into()), traj: Some((&t).into()), weights: w };
    let (rep, _) = loss_and_grad(&model, &prob, 1).unwrap();
    for ((name, a), (_, b)) in value.terms().iter().zip(rep.terms()) {
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12), "{name}: {a} vs {b}");
    }
}

#[test]
fn shards_are_deterministic_and_close() {
    let mut model = init_model(&Architecture::nonlinear_decoder(2, &[6], 3), 8).unwrap();
    randomize_l(&mut model, 8, 0.4);
    let (c, t) = (box_colloc(37, 1), ode_traj(7, 4, 2));
    let sys = ode();
    let w = LossWeights { phys_lin: 1.0, phys_rec: 1.0, data_lin: 1.0, data_rec: 1.0, alt_lin: 0.5 };
    let prob = Problem { system: &sys, colloc: Some((&c).into()), traj: Some((&t).into()), weights: w };
    let one = loss_and_grad(&model, &prob, 1).unwrap();
    let three = loss_and_grad(&model, &prob, 3).unwrap();
    let three_again = loss_and_grad(&model, &prob, 3).unwrap();
    assert_eq!(three.0, three_again.0);
    assert_eq!(three.1.flatten(&model), three_again.1.flatten(&model));
    assert!((one.0.total - three.0.total).abs() <= 1e-12 * one.0.total);
    for (a, b) in one.1.flatten(&model).iter().zip(three.1.flatten(&model)) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
    // more shards than rows
    let big = loss_and_grad(&model, &prob, 64).unwrap();
    assert!((one.0.total - big.0.total).abs() <= 1e-12 * one.0.total);
}

#[test]
fn permutation_invariance() {
    let mut model = init_model(&Architecture::nonlinear_decoder(2, &[5], 3), 2).unwrap();
    randomize_l(&mut model, 2, 0.5);
    let (c, t) = (box_colloc(40, 1), ode_traj(9, 3, 2));
    let mut idx: Vec<usize> = (0..40).collect();
    Stream::new(1).shuffle(&mut idx);
    let mut tidx: Vec<usize> = (0..9).collect();
    Stream::new(2).shuffle(&mut tidx);
    let w = LossWeights { phys_lin: 1.0, phys_rec: 1.0, data_lin: 1.0, data_rec: 1.0, alt_lin: 1.0 };
    let a = total_objective(&model, &ode(), Some(&c), Some(&t), &w).unwrap();
    let b = total_objective(&model, &ode(), Some(&c.select(&idx)), Some(&t.select(&tidx)), &w).unwrap();
    for ((_, x), (_, y)) in a.terms().iter().zip(b.terms()) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
    }
}

#[test]
fn linear_encoder_scale_property() {
    let arch = Architecture::linear_decoder(2, &[], 3);
    let mut model = init_model(&arch, 4).unwrap();
    randomize_l(&mut model, 4, 0.5);
    let c = box_colloc(50, 6);
    let (base, _) = physics_terms(&model, &c).unwrap();
    for alpha in [0.5, 2.0, -3.0] {
        let mut scaled = model.clone();
        let last = scaled.encoder.params.layers.last_mut().unwrap();
        last.weight.mapv_inplace(|v| v * alpha);
        if let Some(b) = last.bias.as_mut() {
            b.mapv_inplace(|v| v * alpha);
        }
        let (lin, _) = physics_terms(&scaled, &c).unwrap();
        let want = alpha * alpha * base;
        assert!((lin - want).abs() <= 1e-12 * want, "alpha {alpha}");
    }
}

#[test]
fn identity_autoencoder_reconstructs() {
    let mut arch = Architecture::linear_decoder(2, &[], 2);
    arch.encoder_bias = false;
    let mut model = init_model(&arch, 1).unwrap();
    model.encoder.params.layers[0].weight = Array2::eye(2);
    model.decoder.params.layers[0].weight = Array2::eye(2);
    let (_, rec) = physics_terms(&model, &box_colloc(30, 1)).unwrap();
    assert_eq!(rec, 0.0);
}

#[test]
fn dimension_mismatch_is_reported() {
    let model = init_model(&Architecture::linear_decoder(3, &[4], 3), 1).unwrap();
    assert!(matches!(physics_terms(&model, &box_colloc(5, 1)), Err(Error::Dimension { .. })));
}

/// Max relative error between the analytic gradient and central
/// differences, with a floor on the denominator for tiny entries.
fn fd_check(obj: &KoopmanObjective, eps: f64) -> f64 {
    let theta = obj.model.flatten();
    let g = objective_gradient(obj, &theta).unwrap().gradient;
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let mut tp = theta.clone();
        tp[i] += eps;
        let mut tm = theta.clone();
        tm[i] -= eps;
        let fd = (obj.evaluate(&tp).unwrap().value - obj.evaluate(&tm).unwrap().value) / (2.0 * eps);
        let err = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn full_ode_objective_gradient_on_small_net() {
    let sys = ode();
    let mut model = init_model(&Architecture::nonlinear_decoder(2, &[4], 3), 21).unwrap();
    randomize_l(&mut model, 21, 0.5);
    let c = box_colloc(12, 3);
    let w = LossWeights::new(1.0, 1.0, 0.0, 0.0);
    let obj = KoopmanObjective { model, problem: Problem { system: &sys, colloc: Some((&c).into()), traj: None, weights: w }, shards: 1 };
    let err = fd_check(&obj, 1e-5);
    assert!(err <= 1e-4, "max rel err {err}");
}

fn arch_for(kind: u8, hidden: usize, latent: usize) -> Architecture {
    match kind {
        0 => Architecture::linear_decoder(2, &[hidden], latent),
        1 => Architecture::nonlinear_decoder(2, &[hidden], latent),
        _ => Architecture::nonlinear_decoder(2, &[hidden, hidden], latent),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn gradients_match_central_differences(
        seed in 0u64..10_000,
        kind in 0u8..3,
        hidden in 2usize..5,
        latent in 1usize..4,
        mask in 1u8..32,
        trainable in any::<bool>(),
    ) {
        let mut arch = arch_for(kind, hidden, latent);
        if trainable {
            arch.phys = vec![
                PhysParamSpec { name: "mu".into(), trainable: true, init: Some(-0.2) },
                PhysParamSpec { name: "lambda".into(), trainable: true, init: Some(-0.7) },
            ];
        }
        let mut model = init_model(&arch, seed).unwrap();
        randomize_l(&mut model, seed, 0.6);
        let w = LossWeights {
            phys_lin: f64::from(mask & 1),
            phys_rec: f64::from((mask >> 1) & 1),
            data_lin: f64::from((mask >> 2) & 1) * 0.7,
            data_rec: f64::from((mask >> 3) & 1) * 1.3,
            alt_lin: f64::from((mask >> 4) & 1) * 0.5,
        };
        let sys = ode();
        let c = box_colloc(8, seed);
        let t = ode_traj(3, 3, seed);
        let obj = KoopmanObjective {
            model,
            problem: Problem { system: &sys, colloc: Some((&c).into()), traj: Some((&t).into()), weights: w },
            shards: 1,
        };
        let err = fd_check(&obj, 1e-5);
        prop_assert!(err <= 1e-4, "max rel err {}", err);
    }
}

#[test]
fn pde_objective_gradient_with_trainable_viscosity() {
    let g = SpectralGrid::new(8).unwrap();
    let sys = System::Pde(PdeSystem::Burgers { nu: 0.1 }, g.clone());
    let c = sample_harmonic_collocations(&PdeSystem::Burgers { nu: 0.1 }, &g, 2, 6, 4, CoefScheme::Taper1, DerivativeMode::Analytic).unwrap();
    let t = gen_trajectories(&sys, &IcSampler::Harmonic { kmax: 2, scheme: CoefScheme::Taper1 }, 3, 0.05, 2, 5).unwrap();
    let mut arch = Architecture::nonlinear_decoder(8, &[5], 3);
    arch.phys = vec![PhysParamSpec { name: "nu".into(), trainable: true, init: Some(0.2) }];
    let mut model = init_model(&arch, 9).unwrap();
    randomize_l(&mut model, 9, 0.5);
    let w = LossWeights { phys_lin: 1.0, phys_rec: 1.0, data_lin: 1.0, data_rec: 1.0, alt_lin: 1.0 };
    let obj = KoopmanObjective { model, problem: Problem { system: &sys, colloc: Some((&c).into()), traj: Some((&t).into()), weights: w }, shards: 2 };
    let err = fd_check(&obj, 1e-5);
    assert!(err <= 1e-4, "max rel err {err}");
}

#[test]
fn heat_linear_autoencoder_gradient() {
    let g = SpectralGrid::new(8).unwrap();
    let sys = System::Pde(PdeSystem::Heat, g.clone());
    let c = sample_harmonic_collocations(&PdeSystem::Heat, &g, 3, 10, 2, CoefScheme::Taper1, DerivativeMode::Analytic).unwrap();
    let mut arch = Architecture::linear_decoder(8, &[], 8);
    arch.encoder_bias = false;
    let mut model = init_model(&arch, 2).unwrap();
    randomize_l(&mut model, 2, 1.0);
    let w = LossWeights::new(0.0001, 1.0, 0.0, 0.0);
    let obj = KoopmanObjective { model, problem: Problem { system: &sys, colloc: Some((&c).into()), traj: None, weights: w }, shards: 1 };
    let err = fd_check(&obj, 1e-5);
    assert!(err <= 1e-4, "max rel err {err}");
}

#[test]
fn diagonal_generator_gradient_is_diagonal() {
    let mut arch = Architecture::linear_decoder(2, &[4], 3);
    arch.diagonal_l = true;
    let mut model = init_model(&arch, 2).unwrap();
    model.l = Array2::from_diag(&array![-0.1, -0.3, 0.2]);
    let sys = ode();
    let (c, t) = (box_colloc(10, 1), ode_traj(3, 3, 1));
    let w = LossWeights { phys_lin: 1.0, phys_rec: 1.0, data_lin: 1.0, data_rec: 1.0, alt_lin: 0.0 };
    let obj = KoopmanObjective { model, problem: Problem { system: &sys, colloc: Some((&c).into()), traj: Some((&t).into()), weights: w }, shards: 1 };
    let err = fd_check(&obj, 1e-5);
    assert!(err <= 1e-4, "max rel err {err}");
}

#[test]
fn nonfinite_loss_names_the_term() {
    let sys = ode();
    let mut model = init_model(&Architecture::linear_decoder(2, &[4], 3), 2).unwrap();
    model.l[[0, 0]] = f64::NAN;
    let c = box_colloc(10, 1);
    let obj = KoopmanObjective { model: model.clone(), problem: Problem { system: &sys, colloc: Some((&c).into()), traj: None, weights: LossWeights::new(1.0, 1.0, 0.0, 0.0) }, shards: 1 };
    match objective_gradient(&obj, &model.flatten()) {
        Err(Error::Numeric { term }) => assert_eq!(term, "phys_lin"),
        r => panic!("expected numeric error, got {:?}", r.map(|e| e.value)),
    }
}
