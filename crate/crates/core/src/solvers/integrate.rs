//! Classical RK4 time stepping for the ODE and the periodic PDEs.

use ndarray::{Array2, ArrayView1};
use super::grid::SpectralGrid;
use crate::dynamics::{OdeSystem, PdeSystem};
use crate::error::{Error, Result};

/// States at `t0, t0 + dt, …, t0 + p·dt`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    pub t0: f64,
    pub dt: f64,
    pub states: Array2<f64>,
}

impl Snapshots {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    pub fn state(&self, j: usize) -> ArrayView1<'_, f64> {
        self.states.row(j)
    }
}

fn check_step(dt: f64, steps: usize, substeps: usize) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("dt", format!("must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::config("steps", "must be at least 1"));
    }
    if substeps == 0 {
        return Err(Error::config("substeps", "must be at least 1"));
    }
    Ok(())
}

/// Generic RK4 over a state vector; records every output step.
fn rk4<F>(x0: &[f64], dt: f64, steps: usize, substeps: usize, mut rhs: F) -> Result<Array2<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let d = x0.len();
    let h = dt / substeps as f64;
    let mut out = Array2::zeros((steps + 1, d));
    out.row_mut(0).assign(&ArrayView1::from(x0));
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for step in 1..=steps {
        for _ in 0..substeps {
            rhs(&x, &mut k1);
            for i in 0..d {
                tmp[i] = x[i] + 0.5 * h * k1[i];
            }
            rhs(&tmp, &mut k2);
            for i in 0..d {
                tmp[i] = x[i] + 0.5 * h * k2[i];
            }
            rhs(&tmp, &mut k3);
            for i in 0..d {
                tmp[i] = x[i] + h * k3[i];
            }
            rhs(&tmp, &mut k4);
            for i in 0..d {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        out.row_mut(step).assign(&ArrayView1::from(&x));
    }
    Ok(out)
}

/// RK4 with `substeps` internal steps per output step of size `dt`.
pub fn integrate_ode(sys: &OdeSystem, x0: [f64; 2], dt: f64, steps: usize, substeps: usize) -> Result<Snapshots> {
    check_step(dt, steps, substeps)?;
    let states = rk4(&x0, dt, steps, substeps, |x, out| {
        let f = sys.eval([x[0], x[1]]);
        out[0] = f[0];
        out[1] = f[1];
    })?;
    Ok(Snapshots { t0: 0.0, dt, states })
}

/// Smallest substep count keeping explicit RK4 inside its stability region:
/// `δt·ν·(n/2)² ≤ 1` for diffusion and `δt·max|u₀|·(n/2) ≤ 1/2` for
/// advection (Burgers only).
pub fn stable_substeps(sys: &PdeSystem, grid: &SpectralGrid, u0: &[f64], dt: f64) -> usize {
    let kmax = grid.n() as f64 / 2.0;
    let mut limit = 1.0 / (sys.viscosity() * kmax * kmax);
    if let PdeSystem::Burgers { .. } = sys {
        let umax = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if umax > 0.0 {
            limit = limit.min(0.5 / (umax * kmax));
        }
    }
    (dt / limit).ceil().max(1.0) as usize
}

fn pde_rhs_dealiased(sys: &PdeSystem, grid: &SpectralGrid, u: &[f64], out: &mut [f64]) {
    let u_hat = grid.to_spectrum(u);
    let mut r_hat = u_hat.clone();
    grid.apply_derivative(&mut r_hat, 2);
    if let PdeSystem::Burgers { nu } = *sys {
        let adv = grid.dealiased_advection(&u_hat);
        for (r, a) in r_hat.iter_mut().zip(adv) {
            *r = *r * nu - a;
        }
    }
    let r: Vec<f64> = grid.from_spectrum(r_hat);
    out.copy_from_slice(&r);
}

/// RK4 in time on the pseudo-spectral right-hand side. Burgers' quadratic
/// term is formed on a zero-padded grid and truncated (dealiased).
pub fn integrate_pde(
    sys: &PdeSystem,
    grid: &SpectralGrid,
    u0: &[f64],
    dt: f64,
    steps: usize,
    substeps: usize,
) -> Result<Snapshots> {
    check_step(dt, steps, substeps)?;
    sys.validate()?;
    grid.check_len(u0.len(), "initial condition")?;
    let states = rk4(u0, dt, steps, substeps, |u, out| pde_rhs_dealiased(sys, grid, u, out))?;
    Ok(Snapshots { t0: 0.0, dt, states })
}
