//! Analytics of the learned latent generator: matrix exponential,
//! eigendecomposition, eigenfunctions, rollouts and error statistics.

mod eig;
mod expm;
mod linalg;

pub use eig::{eig, eigenvalues, Spectrum};
pub use expm::{expm, expm_backward, expm_traced, ExpmTrace};
pub use linalg::det;

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::datagen::TrajectorySet;
use crate::error::{Error, Result};
use crate::model::{Autoencoder, DecoderKind, KoopmanModel};
use crate::solvers::Snapshots;

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("dt", format!("must be positive, got {dt}")));
    }
    Ok(())
}

/// `e^{μ Δt}` for each generator eigenvalue `μ`.
pub fn discrete_eigs(values: &[Complex64], dt: f64) -> Result<Vec<Complex64>> {
    check_dt(dt)?;
    Ok(values.iter().map(|mu| (mu * dt).exp()).collect())
}

/// `φ_k(x) = w_kᵀ φ(x)` with `w_k` the k-th left eigenvector, so that
/// `d/dt φ_k = μ_k φ_k` whenever the latent state obeys `ż = L z`.
pub fn eigenfunction_values<M: Autoencoder + ?Sized>(
    model: &M,
    spectrum: &Spectrum,
    k: usize,
    points: ArrayView2<f64>,
) -> Result<Vec<Complex64>> {
    if k >= spectrum.len() {
        return Err(Error::dim("eigenfunction index", format!("< {}", spectrum.len()), k));
    }
    let z = model.encode(points)?;
    if z.ncols() != spectrum.left.nrows() {
        return Err(Error::dim("spectrum size", z.ncols(), spectrum.left.nrows()));
    }
    let w = spectrum.left.column(k);
    Ok(z.rows()
        .into_iter()
        .map(|row| row.iter().zip(w.iter()).map(|(&zi, &wi)| wi * zi).sum())
        .collect())
}

/// Decoder image `C v_k` of every right eigenvector (columns), for models
/// with a linear decoder.
pub fn decoder_modes(model: &KoopmanModel, spectrum: &Spectrum) -> Result<Array2<Complex64>> {
    if model.arch.decoder != DecoderKind::LinearNoBias {
        return Err(Error::config("arch.decoder", "decoder modes need a linear decoder"));
    }
    let c = &model.decoder.params.layers[0].weight;
    let cc = c.mapv(|v| Complex64::new(v, 0.0));
    Ok(cc.dot(&spectrum.right))
}

/// Rolls every row of `x0` forward: `z_{j+1} = e^{LΔt} z_j`, decoded at
/// each step. Output is `count × (steps+1) × d`.
pub fn predict_batch<M: Autoencoder + ?Sized>(model: &M, x0: ArrayView2<f64>, dt: f64, steps: usize) -> Result<Array3<f64>> {
    check_dt(dt)?;
    if steps == 0 {
        return Err(Error::config("steps", "must be at least 1"));
    }
    let k = expm(model.generator(), dt)?;
    let kt = k.t();
    let mut z = model.encode(x0)?;
    let d = model.state_dim();
    let mut out = Array3::zeros((x0.nrows(), steps + 1, d));
    for j in 0..=steps {
        if j > 0 {
            z = z.dot(&kt);
        }
        let x = model.decode(z.view())?;
        out.slice_mut(ndarray::s![.., j, ..]).assign(&x);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { term: "rollout".into() });
    }
    Ok(out)
}

/// Single-trajectory rollout from `x0`.
pub fn predict_rollout<M: Autoencoder + ?Sized>(model: &M, x0: &[f64], dt: f64, steps: usize) -> Result<Snapshots> {
    let x = ArrayView2::from_shape((1, x0.len()), x0).expect("row");
    let states = predict_batch(model, x, dt, steps)?.index_axis_move(ndarray::Axis(0), 0);
    Ok(Snapshots { t0: 0.0, dt, states })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mae,
    Mse,
}

/// Per-step error statistics across a population of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub metric: Metric,
    /// Step indices `1..=p`.
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n: usize,
}

impl ErrorCurve {
    /// Mean of the per-step means.
    pub fn average(&self) -> f64 {
        self.mean.iter().sum::<f64>() / self.mean.len() as f64
    }

    /// CSV with header `step,mean,std,n`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,mean,std,n\n");
        for i in 0..self.steps.len() {
            s.push_str(&format!("{},{},{},{}\n", self.steps[i], self.mean[i], self.std[i], self.n));
        }
        s
    }
}

/// Rolls each test trajectory out from its first state with the set's `dt`
/// and compares steps `1..=p` with the stored states. The per-trajectory
/// error at a step is the mean over state components.
pub fn trajectory_errors<M: Autoencoder + ?Sized>(model: &M, test: &TrajectorySet, metric: Metric) -> Result<ErrorCurve> {
    if test.is_empty() {
        return Err(Error::Empty("test set has no trajectories".into()));
    }
    if test.dim() != model.state_dim() {
        return Err(Error::dim("test trajectories", model.state_dim(), test.dim()));
    }
    let p = test.steps();
    let pred = predict_batch(model, test.at(0), test.dt, p)?;
    let n = test.count();
    let d = test.dim() as f64;
    let (mut mean, mut std) = (Vec::with_capacity(p), Vec::with_capacity(p));
    for j in 1..=p {
        let errs: Vec<f64> = (0..n)
            .map(|i| {
                let diff = &pred.slice(ndarray::s![i, j, ..]) - &test.states.slice(ndarray::s![i, j, ..]);
                match metric {
                    Metric::Mae => diff.iter().map(|v| v.abs()).sum::<f64>() / d,
                    Metric::Mse => diff.iter().map(|v| v * v).sum::<f64>() / d,
                }
            })
            .collect();
        let m = errs.iter().sum::<f64>() / n as f64;
        let var = errs.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / n as f64;
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(ErrorCurve {
        metric,
        steps: (1..=p).collect(),
        mean,
        std,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPair {
    pub exact: Complex64,
    pub found: Complex64,
    pub found_index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchReport {
    /// In processing order (increasing `|exact|`).
    pub pairs: Vec<EigenPair>,
    pub unmatched_exact: Vec<Complex64>,
    pub unmatched_found: Vec<usize>,
}

impl MatchReport {
    /// CSV with header `exact_re,exact_im,found_re,found_im,distance`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("exact_re,exact_im,found_re,found_im,distance\n");
        for p in &self.pairs {
            s.push_str(&format!("{},{},{},{},{}\n", p.exact.re, p.exact.im, p.found.re, p.found.im, p.distance));
        }
        s
    }
}

/// Greedy nearest-neighbour matching without replacement. Exact values are
/// taken in increasing modulus (stable for ties); distance ties go to the
/// smaller found index.
pub fn eigen_match(found: &[Complex64], exact: &[Complex64]) -> MatchReport {
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| exact[a].norm().total_cmp(&exact[b].norm()));
    let mut used = vec![false; found.len()];
    let mut report = MatchReport::default();
    for i in order {
        let best = (0..found.len())
            .filter(|&j| !used[j])
            .min_by(|&a, &b| (found[a] - exact[i]).norm().total_cmp(&(found[b] - exact[i]).norm()).then(a.cmp(&b)));
        match best {
            Some(j) => {
                used[j] = true;
                report.pairs.push(EigenPair {
                    exact: exact[i],
                    found: found[j],
                    found_index: j,
                    distance: (found[j] - exact[i]).norm(),
                });
            }
            None => report.unmatched_exact.push(exact[i]),
        }
    }
    report.unmatched_found = (0..found.len()).filter(|&j| !used[j]).collect();
    report
}

/// CSV with header `index,re,im,residual`.
pub fn spectrum_csv(spectrum: &Spectrum) -> String {
    let mut s = String::from("index,re,im,residual\n");
    for (k, v) in spectrum.values.iter().enumerate() {
        s.push_str(&format!("{k},{},{},{}\n", v.re, v.im, spectrum.residuals[k]));
    }
    s
}
