use serde::{Deserialize, Serialize};

use super::{item_seed, par_rows, CollocationSet, DatasetKind, DatasetMeta};
use crate::dynamics::{pde_rhs_single, PdeSystem};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::solvers::SpectralGrid;

/// Distribution of the random Fourier coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefScheme {
    /// `a_k, b_k ~ Uniform(-1, 1) / (k + 1)`
    #[default]
    Taper1,
    /// `a_k, b_k ~ Uniform(-1, 1)`
    Flat,
}

/// How collocation right-hand sides are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeMode {
    /// Closed-form derivatives of the trigonometric sum.
    #[default]
    Analytic,
    /// Spectral differentiation on the grid.
    Spectral,
}

/// `u(x) = Σ_{k=0}^{kmax} a_k cos(kx) + b_k sin(kx)`
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicFunction {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl HarmonicFunction {
    pub fn sample(kmax: usize, scheme: CoefScheme, rng: &mut Stream) -> Self {
        let mut a = Vec::with_capacity(kmax + 1);
        let mut b = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            let taper = match scheme {
                CoefScheme::Taper1 => 1.0 / (k as f64 + 1.0),
                CoefScheme::Flat => 1.0,
            };
            a.push(rng.uniform(-1.0, 1.0) * taper);
            b.push(rng.uniform(-1.0, 1.0) * taper);
        }
        HarmonicFunction { a, b }
    }

    pub fn kmax(&self) -> usize {
        self.a.len() - 1
    }

    /// `(u, u_x, u_xx)` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let (mut u, mut ux, mut uxx) = (0.0, 0.0, 0.0);
        for k in 0..self.a.len() {
            let kf = k as f64;
            let (s, c) = (kf * x).sin_cos();
            u += self.a[k] * c + self.b[k] * s;
            ux += kf * (self.b[k] * c - self.a[k] * s);
            uxx -= kf * kf * (self.a[k] * c + self.b[k] * s);
        }
        (u, ux, uxx)
    }

    /// Values and derivatives on the grid, using a precomputed table.
    fn on_table(&self, table: &TrigTable) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = table.n;
        let (mut u, mut ux, mut uxx) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for k in 0..self.a.len() {
            let kf = k as f64;
            let (ak, bk) = (self.a[k], self.b[k]);
            let (cos, sin) = (&table.cos[k * n..(k + 1) * n], &table.sin[k * n..(k + 1) * n]);
            for j in 0..n {
                let m = ak * cos[j] + bk * sin[j];
                u[j] += m;
                ux[j] += kf * (bk * cos[j] - ak * sin[j]);
                uxx[j] -= kf * kf * m;
            }
        }
        (u, ux, uxx)
    }

    pub fn on_grid(&self, grid: &SpectralGrid) -> Vec<f64> {
        self.on_table(&TrigTable::new(grid, self.kmax())).0
    }
}

struct TrigTable {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl TrigTable {
    fn new(grid: &SpectralGrid, kmax: usize) -> Self {
        let n = grid.n();
        let mut cos = Vec::with_capacity((kmax + 1) * n);
        let mut sin = Vec::with_capacity((kmax + 1) * n);
        for k in 0..=kmax {
            for &x in grid.nodes() {
                let (s, c) = (k as f64 * x).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        TrigTable { n, cos, sin }
    }
}

pub(crate) fn check_kmax(grid: &SpectralGrid, kmax: usize) -> Result<()> {
    if kmax + 1 > grid.n() / 2 {
        return Err(Error::config(
            "kmax",
            format!("mode {kmax} aliases on a {}-point grid (need kmax <= {})", grid.n(), grid.n() / 2 - 1),
        ));
    }
    Ok(())
}

/// Grid values of a random harmonic function for item `i`.
pub(crate) fn harmonic_ic(grid: &SpectralGrid, kmax: usize, scheme: CoefScheme, seed: u64) -> Vec<f64> {
    HarmonicFunction::sample(kmax, scheme, &mut Stream::new(seed)).on_grid(grid)
}

/// Random trigonometric sums on the grid with their PDE right-hand side.
pub fn sample_harmonic_collocations(
    sys: &PdeSystem,
    grid: &SpectralGrid,
    kmax: usize,
    n: usize,
    seed: u64,
    scheme: CoefScheme,
    mode: DerivativeMode,
) -> Result<CollocationSet> {
    if n == 0 {
        return Err(Error::Empty("collocation count must be at least 1".into()));
    }
    sys.validate()?;
    check_kmax(grid, kmax)?;
    let table = TrigTable::new(grid, kmax);
    let d = grid.n();
    let both = par_rows(n, 2 * d, |i| {
        let h = HarmonicFunction::sample(kmax, scheme, &mut Stream::new(item_seed(seed, i)));
        let (u, ux, uxx) = h.on_table(&table);
        let rhs = match mode {
            DerivativeMode::Spectral => pde_rhs_single(sys, grid, &u)?,
            DerivativeMode::Analytic => match *sys {
                PdeSystem::Heat => uxx,
                PdeSystem::Burgers { nu } => (0..d).map(|j| -u[j] * ux[j] + nu * uxx[j]).collect(),
            },
        };
        let mut row = u;
        row.extend(rhs);
        Ok(row)
    })?;
    Ok(CollocationSet {
        kind: DatasetKind::HarmonicCollocations,
        states: both.slice(ndarray::s![.., ..d]).to_owned(),
        rhs: both.slice(ndarray::s![.., d..]).to_owned(),
        meta: DatasetMeta::new(
            seed,
            serde_json::json!({ "system": sys, "grid_n": d, "kmax": kmax, "n": n, "scheme": scheme, "derivatives": mode }),
        ),
    })
}
