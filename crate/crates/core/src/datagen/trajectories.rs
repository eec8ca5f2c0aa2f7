use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::harmonic::{check_kmax, harmonic_ic};
use super::{item_seed, Bounds, CoefScheme, DatasetKind, DatasetMeta, TrajectorySet};
use crate::dynamics::System;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::solvers::{integrate_ode, integrate_pde, stable_substeps, SpectralGrid};

/// Largest internal RK4 step for ODE trajectories.
const ODE_MAX_STEP: f64 = 1e-3;

/// Distribution of initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ic", rename_all = "snake_case")]
pub enum IcSampler {
    /// Random trigonometric sum up to mode `kmax`.
    Harmonic { kmax: usize, scheme: CoefScheme },
    /// `exp(-x²/(2σ²))` with `σ ~ Uniform(sigma_lo, sigma_hi)`.
    Bell { sigma_lo: f64, sigma_hi: f64 },
    /// Uniform in a box (ODE only).
    Box { bounds: Bounds },
}

impl IcSampler {
    pub fn bell() -> Self {
        IcSampler::Bell { sigma_lo: 0.1, sigma_hi: 1.0 }
    }
}

/// Unnormalized Gaussian with unit peak at `x = 0`; `sigma` is the
/// standard deviation.
pub fn bell_curve(grid: &SpectralGrid, sigma: f64) -> Vec<f64> {
    grid.nodes().iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect()
}

/// Simulates `count` trajectories with snapshots at `0, dt, …, p·dt`.
pub fn gen_trajectories(sys: &System, ic: &IcSampler, count: usize, dt: f64, p: usize, seed: u64) -> Result<TrajectorySet> {
    if count == 0 {
        return Err(Error::Empty("trajectory count must be at least 1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("dt", format!("must be positive, got {dt}")));
    }
    if p == 0 {
        return Err(Error::config("p", "need at least one step"));
    }
    let d = sys.state_dim();
    let kind = match (sys, ic) {
        (System::Ode(_), IcSampler::Box { bounds }) => {
            bounds.validate(2)?;
            DatasetKind::OdeTrajectories
        }
        (System::Pde(_, grid), IcSampler::Harmonic { kmax, .. }) => {
            check_kmax(grid, *kmax)?;
            DatasetKind::HarmonicTrajectories
        }
        (System::Pde(..), IcSampler::Bell { sigma_lo, sigma_hi }) => {
            if !(0.0 < *sigma_lo && sigma_lo < sigma_hi) {
                return Err(Error::config("ic.sigma", "need 0 < sigma_lo < sigma_hi"));
            }
            DatasetKind::BellTrajectories
        }
        _ => return Err(Error::config("ic", "initial-condition sampler does not fit the system")),
    };
    let runs: Vec<Result<Vec<f64>>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let s = item_seed(seed, i);
            let snaps = match (sys, ic) {
                (System::Ode(ode), IcSampler::Box { bounds }) => {
                    let x0 = bounds.sample(&mut Stream::new(s));
                    let sub = (dt / ODE_MAX_STEP).ceil().max(1.0) as usize;
                    integrate_ode(ode, [x0[0], x0[1]], dt, p, sub)
                }
                (System::Pde(pde, grid), _) => {
                    let u0 = match ic {
                        IcSampler::Harmonic { kmax, scheme } => harmonic_ic(grid, *kmax, *scheme, s),
                        IcSampler::Bell { sigma_lo, sigma_hi } => {
                            bell_curve(grid, Stream::new(s).uniform(*sigma_lo, *sigma_hi))
                        }
                        IcSampler::Box { .. } => unreachable!(),
                    };
                    let sub = stable_substeps(pde, grid, &u0, dt);
                    integrate_pde(pde, grid, &u0, dt, p, sub)
                }
                _ => unreachable!(),
            };
            snaps
                .map(|sn| sn.states.into_raw_vec_and_offset().0)
                .map_err(|e| Error::Trajectory { index: i, source: Box::new(e) })
        })
        .collect();
    // first failure by index, independent of scheduling
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut states = Array3::zeros((count, p + 1, d));
    for (i, run) in runs.into_iter().enumerate() {
        states
            .slice_mut(ndarray::s![i, .., ..])
            .assign(&ndarray::ArrayView2::from_shape((p + 1, d), &run).expect("trajectory shape"));
    }
    Ok(TrajectorySet {
        kind,
        dt,
        states,
        meta: DatasetMeta::new(
            seed,
            serde_json::json!({ "system": system_meta(sys), "ic": ic, "count": count, "dt": dt, "p": p }),
        ),
    })
}

pub(crate) fn system_meta(sys: &System) -> serde_json::Value {
    match sys {
        System::Ode(o) => serde_json::json!({ "ode": o }),
        System::Pde(p, g) => serde_json::json!({ "pde": p, "grid_n": g.n() }),
    }
}
