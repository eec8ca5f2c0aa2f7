//! Right-hand sides of the benchmark systems.
//!
//! * `FixedPoint2D`: `ẋ₁ = μx₁`, `ẋ₂ = λ(x₂ − x₁²)`, which has the exact
//!   three-dimensional Koopman invariant subspace returned by
//!   [`exact_invariant_subspace`].
//! * `Heat`: `u_t = u_xx` on a periodic grid.
//! * `Burgers`: `u_t = −u u_x + ν u_xx` on a periodic grid.
//!
//! Every system also provides the vector-Jacobian products of its
//! right-hand side with respect to the state and to its physical
//! parameters, which the losses need when the decoder output is fed back
//! into `f` or when `μ`, `λ`, `ν` are trained.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::SpectralGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeSystem {
    pub mu: f64,
    pub lambda: f64,
}

impl OdeSystem {
    pub fn fixed_point(mu: f64, lambda: f64) -> Self {
        OdeSystem { mu, lambda }
    }

    /// The slow-manifold regime `λ < μ < 0`.
    pub fn is_stable_regime(&self) -> bool {
        self.lambda < self.mu && self.mu < 0.0
    }

    #[inline]
    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        [self.mu * x[0], self.lambda * (x[1] - x[0] * x[0])]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PdeSystem {
    Heat,
    Burgers { nu: f64 },
}

impl PdeSystem {
    pub fn validate(&self) -> Result<()> {
        if let PdeSystem::Burgers { nu } = *self {
            if !(nu.is_finite() && nu > 0.0) {
                return Err(Error::config("system.nu", format!("viscosity must be finite and positive, got {nu}")));
            }
        }
        Ok(())
    }

    pub fn viscosity(&self) -> f64 {
        match *self {
            PdeSystem::Heat => 1.0,
            PdeSystem::Burgers { nu } => nu,
        }
    }
}

/// `f` per row for the two-dimensional fixed-point system.
pub fn ode_rhs(sys: &OdeSystem, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != 2 {
        return Err(Error::dim("ode state", "(_, 2)", format!("{:?}", x.dim())));
    }
    let mut out = Array2::zeros(x.dim());
    for (row, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
        let f = sys.eval([row[0], row[1]]);
        o[0] = f[0];
        o[1] = f[1];
    }
    Ok(out)
}

/// `u_t` for one grid function.
pub fn pde_rhs_single(sys: &PdeSystem, grid: &SpectralGrid, u: &[f64]) -> Result<Vec<f64>> {
    grid.check_len(u.len(), "pde state")?;
    let mut s = grid.to_spectrum(u);
    let out = match *sys {
        PdeSystem::Heat => {
            grid.apply_derivative(&mut s, 2);
            grid.from_spectrum(s)
        }
        PdeSystem::Burgers { nu } => {
            let mut s1 = s.clone();
            grid.apply_derivative(&mut s1, 1);
            grid.apply_derivative(&mut s, 2);
            let ux = grid.from_spectrum(s1);
            let uxx = grid.from_spectrum(s);
            u.iter()
                .zip(&ux)
                .zip(&uxx)
                .map(|((u, ux), uxx)| -u * ux + nu * uxx)
                .collect()
        }
    };
    Ok(out)
}

/// `u_t` per row.
pub fn pde_rhs(sys: &PdeSystem, grid: &SpectralGrid, u: ArrayView2<f64>) -> Result<Array2<f64>> {
    grid.check_len(u.ncols(), "pde state width")?;
    let mut out = Array2::zeros(u.dim());
    for (row, mut o) in u.rows().into_iter().zip(out.rows_mut()) {
        let r = pde_rhs_single(sys, grid, &row.to_vec())?;
        o.assign(&ndarray::ArrayView1::from(&r));
    }
    Ok(out)
}

/// Closed-form Koopman eigenpairs of the fixed-point system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantSubspace {
    pub mu: f64,
    pub lambda: f64,
    pub b: f64,
}

impl InvariantSubspace {
    /// `(μ, 2μ, λ)`
    pub fn eigenvalues(&self) -> [f64; 3] {
        [self.mu, 2.0 * self.mu, self.lambda]
    }

    /// `(x₁, x₁², x₂ − b x₁²)`
    pub fn eigenfunctions(&self, x: [f64; 2]) -> [f64; 3] {
        [x[0], x[0] * x[0], x[1] - self.b * x[0] * x[0]]
    }

    /// Gradients of the three eigenfunctions.
    pub fn gradients(&self, x: [f64; 2]) -> [[f64; 2]; 3] {
        [[1.0, 0.0], [2.0 * x[0], 0.0], [-2.0 * self.b * x[0], 1.0]]
    }

    pub fn eigenfunction(&self, k: usize) -> impl Fn([f64; 2]) -> f64 + '_ {
        move |x| self.eigenfunctions(x)[k]
    }

    /// Exact state at time `t` from `x0`.
    pub fn flow(&self, x0: [f64; 2], t: f64) -> [f64; 2] {
        let phi = self.eigenfunctions(x0);
        let p_mu = phi[0] * (self.mu * t).exp();
        let p_2mu = phi[1] * (2.0 * self.mu * t).exp();
        let p_l = phi[2] * (self.lambda * t).exp();
        [p_mu, p_l + self.b * p_2mu]
    }
}

/// `b = λ/(λ − 2μ)` and the triple `(μ, 2μ, λ)`.
pub fn exact_invariant_subspace(mu: f64, lambda: f64) -> Result<InvariantSubspace> {
    let denom = lambda - 2.0 * mu;
    if denom == 0.0 {
        return Err(Error::Singular(format!("λ = 2μ ({lambda} = 2·{mu})")));
    }
    Ok(InvariantSubspace {
        mu,
        lambda,
        b: lambda / denom,
    })
}

/// A system plus its grid, as seen by the losses.
#[derive(Debug, Clone, PartialEq)]
pub enum System {
    Ode(OdeSystem),
    Pde(PdeSystem, SpectralGrid),
}

impl System {
    pub fn state_dim(&self) -> usize {
        match self {
            System::Ode(_) => 2,
            System::Pde(_, g) => g.n(),
        }
    }

    /// Names of the physical parameters, in a fixed order.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            System::Ode(_) => &["mu", "lambda"],
            System::Pde(PdeSystem::Heat, _) => &[],
            System::Pde(PdeSystem::Burgers { .. }, _) => &["nu"],
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            System::Ode(s) => vec![s.mu, s.lambda],
            System::Pde(PdeSystem::Heat, _) => vec![],
            System::Pde(PdeSystem::Burgers { nu }, _) => vec![*nu],
        }
    }

    pub fn with_param(&self, name: &str, value: f64) -> Result<System> {
        let mut s = self.clone();
        match (&mut s, name) {
            (System::Ode(o), "mu") => o.mu = value,
            (System::Ode(o), "lambda") => o.lambda = value,
            (System::Pde(PdeSystem::Burgers { nu }, _), "nu") => *nu = value,
            _ => return Err(Error::config("phys_params", format!("system has no parameter `{name}`"))),
        }
        Ok(s)
    }

    pub fn rhs(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            System::Ode(s) => ode_rhs(s, x),
            System::Pde(p, g) => pde_rhs(p, g, x),
        }
    }

    /// `(∂f/∂x)ᵀ g` per row.
    pub fn rhs_state_vjp(&self, x: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.dim() != g.dim() {
            return Err(Error::dim("rhs cotangent", format!("{:?}", x.dim()), format!("{:?}", g.dim())));
        }
        let mut out = Array2::zeros(x.dim());
        match self {
            System::Ode(s) => {
                for ((xr, gr), mut o) in x.rows().into_iter().zip(g.rows()).zip(out.rows_mut()) {
                    o[0] = s.mu * gr[0] - 2.0 * s.lambda * xr[0] * gr[1];
                    o[1] = s.lambda * gr[1];
                }
            }
            System::Pde(p, grid) => {
                for ((xr, gr), mut o) in x.rows().into_iter().zip(g.rows()).zip(out.rows_mut()) {
                    let gv = gr.to_vec();
                    // D2 is symmetric, D1 skew-symmetric on the grid
                    let d2g = grid.derivative(&gv, 2)?;
                    let v: Vec<f64> = match *p {
                        PdeSystem::Heat => d2g,
                        PdeSystem::Burgers { nu } => {
                            let u = xr.to_vec();
                            let ux = grid.derivative(&u, 1)?;
                            let ug: Vec<f64> = u.iter().zip(&gv).map(|(a, b)| a * b).collect();
                            let d1ug = grid.derivative(&ug, 1)?;
                            (0..u.len())
                                .map(|i| -gv[i] * ux[i] + d1ug[i] + nu * d2g[i])
                                .collect()
                        }
                    };
                    o.assign(&ndarray::ArrayView1::from(&v));
                }
            }
        }
        Ok(out)
    }

    /// `Σ_rows (∂f/∂θ)ᵀ g`, one entry per physical parameter.
    pub fn rhs_param_vjp(&self, x: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            System::Ode(_) => {
                let mut out = [0.0; 2];
                for (xr, gr) in x.rows().into_iter().zip(g.rows()) {
                    out[0] += xr[0] * gr[0];
                    out[1] += (xr[1] - xr[0] * xr[0]) * gr[1];
                }
                Ok(out.to_vec())
            }
            System::Pde(PdeSystem::Heat, _) => Ok(vec![]),
            System::Pde(PdeSystem::Burgers { .. }, grid) => {
                let mut acc = 0.0;
                for (xr, gr) in x.rows().into_iter().zip(g.rows()) {
                    let d2 = grid.derivative(&xr.to_vec(), 2)?;
                    acc += d2.iter().zip(gr.iter()).map(|(a, b)| a * b).sum::<f64>();
                }
                Ok(vec![acc])
            }
        }
    }
}

/// Mean over rows, used by conservation checks.
pub fn spatial_mean(u: ArrayView2<f64>) -> ndarray::Array1<f64> {
    u.mean_axis(Axis(1)).expect("non-empty grid")
}
