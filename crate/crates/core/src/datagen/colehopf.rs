//! Exact Burgers solutions (unit viscosity) from heat-equation solutions
//! through `u = -2 v_x / v`.

use std::f64::consts::PI;

use ndarray::Array3;

use super::trajectories::system_meta;
use super::{item_seed, par_rows, CollocationSet, DatasetKind, DatasetMeta, TrajectorySet};
use crate::dynamics::{PdeSystem, System};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, tag, Stream};
use crate::solvers::SpectralGrid;

const C0: f64 = 1.0 / (2.0 * PI);

fn check(c: &[f64]) -> Result<()> {
    let sum: f64 = c.iter().map(|v| v.abs()).sum();
    if !(sum < C0) {
        return Err(Error::Positivity { sum });
    }
    Ok(())
}

/// `v` and its first three `x`-derivatives; `c[k-1]` multiplies `cos(kx)`.
fn v_derivs(c: &[f64], x: f64, t: f64) -> [f64; 4] {
    let mut out = [C0, 0.0, 0.0, 0.0];
    for (i, &ck) in c.iter().enumerate() {
        let k = (i + 1) as f64;
        let e = ck * (-k * k * t).exp();
        let (s, co) = (k * x).sin_cos();
        out[0] += e * co;
        out[1] -= e * k * s;
        out[2] -= e * k * k * co;
        out[3] += e * k * k * k * s;
    }
    out
}

/// `v(x, t) = 1/(2π) + Σ_k C_k cos(kx) e^{-k² t}`, a heat-equation solution.
pub fn cole_hopf_v(c: &[f64], x: f64, t: f64) -> Result<f64> {
    check(c)?;
    Ok(v_derivs(c, x, t)[0])
}

/// `(u, u_x, u_xx)` with `u = -2 v_x / v`, all from closed-form
/// derivatives of `v`.
pub fn cole_hopf_u(c: &[f64], x: f64, t: f64) -> Result<(f64, f64, f64)> {
    check(c)?;
    Ok(u_unchecked(c, x, t))
}

fn u_unchecked(c: &[f64], x: f64, t: f64) -> (f64, f64, f64) {
    let [v, vx, vxx, vxxx] = v_derivs(c, x, t);
    let w = vx / v;
    let u = -2.0 * w;
    let ux = 2.0 * w * w - 2.0 * vxx / v;
    let uxx = 6.0 * vx * vxx / (v * v) - 2.0 * vxxx / v - 4.0 * w * w * w;
    (u, ux, uxx)
}

/// `C_k = α C̃_k / Σ|C̃_j| / (2π)` with `C̃_k ~ Uniform(-1, 1)` and
/// `α ~ Uniform(0, 1)`, so `Σ|C_k| = α/(2π) < 1/(2π)`.
pub fn sample_colehopf_coefficients(modes: usize, rng: &mut Stream) -> Vec<f64> {
    let raw: Vec<f64> = (0..modes).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let alpha = rng.unit();
    let total: f64 = raw.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return vec![0.0; modes];
    }
    raw.iter().map(|v| alpha * v / total * C0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColeHopfSnapshots {
    pub collocations: CollocationSet,
    pub trajectories: TrajectorySet,
}

/// Collocations at random times `t ~ Uniform(t_range)` with right-hand side
/// `-u u_x + u_xx`, and trajectories starting at a random time with
/// `p + 1` snapshots spaced `dt`.
#[allow(clippy::too_many_arguments)]
pub fn sample_colehopf_snapshots(
    grid: &SpectralGrid,
    modes: usize,
    n_colloc: usize,
    n_traj: usize,
    t_range: (f64, f64),
    dt: f64,
    p: usize,
    seed: u64,
) -> Result<ColeHopfSnapshots> {
    if modes == 0 {
        return Err(Error::config("modes", "need at least one mode"));
    }
    if n_colloc == 0 || n_traj == 0 {
        return Err(Error::Empty("Cole-Hopf sample counts must be at least 1".into()));
    }
    if !(t_range.0 >= 0.0 && t_range.0 < t_range.1) {
        return Err(Error::config("t_range", "need 0 <= lo < hi"));
    }
    if !(dt > 0.0) || p == 0 {
        return Err(Error::config("dt", "need dt > 0 and p >= 1"));
    }
    let n = grid.n();
    let nodes = grid.nodes();
    let field = |c: &[f64], t: f64, with_rhs: bool| {
        let mut row = Vec::with_capacity(if with_rhs { 2 * n } else { n });
        let mut rhs = Vec::new();
        for &x in nodes {
            let (u, ux, uxx) = u_unchecked(c, x, t);
            row.push(u);
            if with_rhs {
                rhs.push(-u * ux + uxx);
            }
        }
        row.extend(rhs);
        row
    };
    let both = par_rows(n_colloc, 2 * n, |i| {
        let mut rng = Stream::new(item_seed(seed, i));
        let c = sample_colehopf_coefficients(modes, &mut rng);
        let t = rng.uniform(t_range.0, t_range.1);
        Ok(field(&c, t, true))
    })?;
    let traj_seed = derive_seed(seed, tag::SAMPLE);
    let flat = par_rows(n_traj, (p + 1) * n, |i| {
        let mut rng = Stream::new(item_seed(traj_seed, i));
        let c = sample_colehopf_coefficients(modes, &mut rng);
        let t0 = rng.uniform(t_range.0, t_range.1);
        Ok((0..=p).flat_map(|j| field(&c, t0 + j as f64 * dt, false)).collect())
    })?;
    let states = Array3::from_shape_vec((n_traj, p + 1, n), flat.into_raw_vec_and_offset().0).expect("shape");
    let sys = System::Pde(PdeSystem::Burgers { nu: 1.0 }, grid.clone());
    let params = serde_json::json!({
        "system": system_meta(&sys), "modes": modes, "n_colloc": n_colloc, "n_traj": n_traj,
        "t_range": [t_range.0, t_range.1], "dt": dt, "p": p,
    });
    Ok(ColeHopfSnapshots {
        collocations: CollocationSet {
            kind: DatasetKind::ColeHopfCollocations,
            states: both.slice(ndarray::s![.., ..n]).to_owned(),
            rhs: both.slice(ndarray::s![.., n..]).to_owned(),
            meta: DatasetMeta::new(seed, params.clone()),
        },
        trajectories: TrajectorySet {
            kind: DatasetKind::ColeHopfTrajectories,
            dt,
            states,
            meta: DatasetMeta::new(seed, params),
        },
    })
}
