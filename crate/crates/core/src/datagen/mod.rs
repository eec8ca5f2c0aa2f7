//! Dataset generation: collocation points, simulated trajectories and
//! Cole-Hopf snapshots, plus the PIKD binary container.
//!
//! Every generator is a pure function of its parameters and a master seed.
//! Item `i` draws from its own stream seeded with `splitmix(seed ^ i)`, so
//! the output does not depend on how the work is split across threads.

mod colehopf;
mod format;
mod harmonic;
mod trajectories;

pub use colehopf::{cole_hopf_u, cole_hopf_v, sample_colehopf_coefficients, sample_colehopf_snapshots, ColeHopfSnapshots};
pub use format::{file_sha256, read_collocations, read_dataset, read_trajectories, write_dataset, Dataset, MAGIC, VERSION};
pub use harmonic::{sample_harmonic_collocations, CoefScheme, DerivativeMode, HarmonicFunction};
pub use trajectories::{bell_curve, gen_trajectories, IcSampler};

use ndarray::{s, Array2, Array3, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ode_rhs, OdeSystem};
use crate::error::{Error, Result};
use crate::rng::{splitmix, Stream};
use crate::solvers::Snapshots;

/// Dataset kind codes stored in PIKD files. Trajectory kinds are `>= 100`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    BoxCollocations,
    HarmonicCollocations,
    ColeHopfCollocations,
    OdeTrajectories,
    HarmonicTrajectories,
    BellTrajectories,
    ColeHopfTrajectories,
}

impl DatasetKind {
    pub fn code(self) -> u64 {
        match self {
            DatasetKind::BoxCollocations => 1,
            DatasetKind::HarmonicCollocations => 2,
            DatasetKind::ColeHopfCollocations => 3,
            DatasetKind::OdeTrajectories => 101,
            DatasetKind::HarmonicTrajectories => 102,
            DatasetKind::BellTrajectories => 103,
            DatasetKind::ColeHopfTrajectories => 104,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        Some(match code {
            1 => DatasetKind::BoxCollocations,
            2 => DatasetKind::HarmonicCollocations,
            3 => DatasetKind::ColeHopfCollocations,
            101 => DatasetKind::OdeTrajectories,
            102 => DatasetKind::HarmonicTrajectories,
            103 => DatasetKind::BellTrajectories,
            104 => DatasetKind::ColeHopfTrajectories,
            _ => return None,
        })
    }

    pub fn is_trajectory(self) -> bool {
        self.code() >= 100
    }
}

/// Provenance stored with every dataset: the seed and the generator
/// parameters as a JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub params: serde_json::Value,
}

impl DatasetMeta {
    pub fn new(seed: u64, params: serde_json::Value) -> Self {
        DatasetMeta { seed, params }
    }
}

/// States paired with the right-hand side evaluated at them.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub kind: DatasetKind,
    pub states: Array2<f64>,
    pub rhs: Array2<f64>,
    pub meta: DatasetMeta,
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.dim() != self.rhs.dim() {
            return Err(Error::dim("collocation rhs", format!("{:?}", self.states.dim()), format!("{:?}", self.rhs.dim())));
        }
        if self.states.iter().chain(self.rhs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric { term: "collocation set".into() });
        }
        Ok(())
    }

    /// Rows `idx` as a new set (same kind and metadata).
    pub fn select(&self, idx: &[usize]) -> CollocationSet {
        CollocationSet {
            kind: self.kind,
            states: self.states.select(ndarray::Axis(0), idx),
            rhs: self.rhs.select(ndarray::Axis(0), idx),
            meta: self.meta.clone(),
        }
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> CollocationSet {
        let n = n.min(self.len());
        CollocationSet {
            kind: self.kind,
            states: self.states.slice(s![..n, ..]).to_owned(),
            rhs: self.rhs.slice(s![..n, ..]).to_owned(),
            meta: self.meta.clone(),
        }
    }
}

/// `count` trajectories of `p + 1` snapshots each, spaced `dt` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub kind: DatasetKind,
    pub dt: f64,
    /// `count × (p+1) × d`
    pub states: Array3<f64>,
    pub meta: DatasetMeta,
}

impl TrajectorySet {
    pub fn count(&self) -> usize {
        self.states.dim().0
    }

    /// Number of steps `p` (snapshots minus one).
    pub fn steps(&self) -> usize {
        self.states.dim().1 - 1
    }

    pub fn dim(&self) -> usize {
        self.states.dim().2
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Snapshot `j` of every trajectory, one per row.
    pub fn at(&self, j: usize) -> ArrayView2<'_, f64> {
        self.states.slice(s![.., j, ..])
    }

    pub fn snapshots(&self, i: usize) -> Snapshots {
        Snapshots {
            t0: 0.0,
            dt: self.dt,
            states: self.states.slice(s![i, .., ..]).to_owned(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> TrajectorySet {
        TrajectorySet {
            kind: self.kind,
            dt: self.dt,
            states: self.states.select(ndarray::Axis(0), idx),
            meta: self.meta.clone(),
        }
    }

    pub fn head(&self, n: usize) -> TrajectorySet {
        let n = n.min(self.count());
        TrajectorySet {
            kind: self.kind,
            dt: self.dt,
            states: self.states.slice(s![..n, .., ..]).to_owned(),
            meta: self.meta.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", format!("must be positive, got {}", self.dt)));
        }
        if self.states.dim().1 == 0 {
            return Err(Error::Empty("trajectory set has no snapshots".into()));
        }
        if self.states.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { term: "trajectory set".into() });
        }
        Ok(())
    }
}

/// Seed of item `i` under `master`.
pub fn item_seed(master: u64, i: usize) -> u64 {
    splitmix(master ^ i as u64)
}

/// Stacks per-item rows produced in parallel (order preserved).
pub(crate) fn par_rows<F>(count: usize, width: usize, f: F) -> Result<Array2<f64>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
{
    let rows: Vec<Result<Vec<f64>>> = (0..count).into_par_iter().map(f).collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((count, width));
    for (mut dst, row) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(out)
}

/// Axis-aligned box `[lo_k, hi_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn square(lo: f64, hi: f64) -> Self {
        Bounds { lo: vec![lo; 2], hi: vec![hi; 2] }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.lo.len() != dim || self.hi.len() != dim {
            return Err(Error::dim("bounds", dim, self.lo.len().max(self.hi.len())));
        }
        for k in 0..dim {
            if !(self.lo[k].is_finite() && self.hi[k].is_finite() && self.lo[k] < self.hi[k]) {
                return Err(Error::config(format!("bounds[{k}]"), "need finite lo < hi"));
            }
        }
        Ok(())
    }

    pub(crate) fn sample(&self, rng: &mut Stream) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(&lo, &hi)| rng.uniform(lo, hi)).collect()
    }
}

/// States uniform in `bounds`, right-hand side from the ODE.
pub fn sample_box_collocations(sys: &OdeSystem, bounds: &Bounds, n: usize, seed: u64) -> Result<CollocationSet> {
    if n == 0 {
        return Err(Error::Empty("collocation count must be at least 1".into()));
    }
    bounds.validate(2)?;
    let states = par_rows(n, 2, |i| Ok(bounds.sample(&mut Stream::new(item_seed(seed, i)))))?;
    let rhs = ode_rhs(sys, states.view())?;
    Ok(CollocationSet {
        kind: DatasetKind::BoxCollocations,
        states,
        rhs,
        meta: DatasetMeta::new(
            seed,
            serde_json::json!({ "mu": sys.mu, "lambda": sys.lambda, "bounds": bounds, "n": n }),
        ),
    })
}
