//! Loss terms and their gradients.
//!
//! | term       | weight | data          | value                                      |
//! |------------|--------|---------------|--------------------------------------------|
//! | `phys_lin` | ω₁     | collocations  | mean ‖L φ(x) − ∇φ(x)·f(x)‖²                |
//! | `phys_rec` | ω₂     | collocations  | mean ‖x − ψ(φ(x))‖²                        |
//! | `data_lin` | ω₃     | trajectories  | mean over (i, j) of ‖e^{L jΔt} φ(x₀) − φ(x_j)‖² |
//! | `data_rec` | ω₄     | trajectories  | mean over (i, j) of ‖x_j − ψ(φ(x_j))‖²     |
//! | `alt_lin`  | ω₅     | collocations  | mean ‖∇ψ(z)·Lz − f(ψ(z))‖², z = φ(x)       |
//!
//! Terms with zero weight are skipped entirely and reported as 0.
//!
//! The data term is evaluated as repeated application of `K = e^{LΔt}`,
//! so only one matrix exponential (and its reverse sweep) is needed per
//! evaluation.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::analysis::{expm, expm_backward, expm_traced};
use crate::datagen::{CollocationSet, TrajectorySet};
use crate::diffengine::{Block, Evaluation, Objective};
use crate::dynamics::System;
use crate::error::{Error, Result};
use crate::model::{Autoencoder, KoopmanModel, ModelGrad};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub phys_lin: f64,
    pub phys_rec: f64,
    pub data_lin: f64,
    pub data_rec: f64,
    #[serde(default)]
    pub alt_lin: f64,
}

impl LossWeights {
    pub fn new(phys_lin: f64, phys_rec: f64, data_lin: f64, data_rec: f64) -> Self {
        LossWeights {
            phys_lin,
            phys_rec,
            data_lin,
            data_rec,
            alt_lin: 0.0,
        }
    }

    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("phys_lin", self.phys_lin),
            ("phys_rec", self.phys_rec),
            ("data_lin", self.data_lin),
            ("data_rec", self.data_rec),
            ("alt_lin", self.alt_lin),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.named() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!("weights.{name}"), format!("must be finite and >= 0, got {w}")));
            }
        }
        if self.named().iter().all(|(_, w)| *w == 0.0) {
            return Err(Error::config("weights", "at least one weight must be positive"));
        }
        Ok(())
    }

    pub fn needs_collocations(&self) -> bool {
        self.phys_lin > 0.0 || self.phys_rec > 0.0 || self.alt_lin > 0.0
    }

    pub fn needs_trajectories(&self) -> bool {
        self.data_lin > 0.0 || self.data_rec > 0.0
    }

    /// Checks that every active term has its dataset.
    pub fn check_datasets(&self, has_colloc: bool, has_traj: bool) -> Result<()> {
        self.validate()?;
        if self.needs_collocations() && !has_colloc {
            return Err(Error::config("datasets.collocations", "physics weights are nonzero but no collocations were given"));
        }
        if self.needs_trajectories() && !has_traj {
            return Err(Error::config("datasets.trajectories", "data weights are nonzero but no trajectories were given"));
        }
        Ok(())
    }
}

/// Per-term means and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub phys_lin: f64,
    pub phys_rec: f64,
    pub data_lin: f64,
    pub data_rec: f64,
    pub alt_lin: f64,
    pub total: f64,
}

impl LossReport {
    fn with_total(mut self, w: &LossWeights) -> Self {
        self.total = w.phys_lin * self.phys_lin
            + w.phys_rec * self.phys_rec
            + w.data_lin * self.data_lin
            + w.data_rec * self.data_rec
            + w.alt_lin * self.alt_lin;
        self
    }

    fn add(&self, o: &LossReport) -> LossReport {
        LossReport {
            phys_lin: self.phys_lin + o.phys_lin,
            phys_rec: self.phys_rec + o.phys_rec,
            data_lin: self.data_lin + o.data_lin,
            data_rec: self.data_rec + o.data_rec,
            alt_lin: self.alt_lin + o.alt_lin,
            total: 0.0,
        }
    }

    pub fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("phys_lin", self.phys_lin),
            ("phys_rec", self.phys_rec),
            ("data_lin", self.data_lin),
            ("data_rec", self.data_rec),
            ("alt_lin", self.alt_lin),
        ]
    }
}

fn sum_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn check_cols(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dim(what, want, got));
    }
    Ok(())
}

/// `(linearity, reconstruction)` means over the collocation set.
pub fn physics_terms<M: Autoencoder + ?Sized>(model: &M, colloc: &CollocationSet) -> Result<(f64, f64)> {
    check_cols("collocation states", colloc.dim(), model.state_dim())?;
    let n = colloc.len() as f64;
    let dual = model.encode_jvp(colloc.states.view(), colloc.rhs.view())?;
    let r = dual.primal.dot(&model.generator().t()) - &dual.tangent;
    let rec = model.decode(dual.primal.view())? - &colloc.states;
    Ok((sum_sq(&r) / n, sum_sq(&rec) / n))
}

/// `(linearity, reconstruction)` means over all (trajectory, j) pairs,
/// `j = 0..=p`, using `e^{L jΔt}` directly for every `j`.
pub fn data_terms<M: Autoencoder + ?Sized>(model: &M, traj: &TrajectorySet) -> Result<(f64, f64)> {
    traj.validate()?;
    check_cols("trajectory states", traj.dim(), model.state_dim())?;
    let (count, len, _) = traj.states.dim();
    let pairs = (count * len) as f64;
    let z0 = model.encode(traj.at(0))?;
    let (mut lin, mut rec) = (0.0, 0.0);
    for j in 0..len {
        let zj = model.encode(traj.at(j))?;
        if j > 0 {
            let k = expm(model.generator(), j as f64 * traj.dt)?;
            lin += sum_sq(&(z0.dot(&k.t()) - &zj));
        }
        rec += sum_sq(&(model.decode(zj.view())? - traj.at(j)));
    }
    Ok((lin / pairs, rec / pairs))
}

/// Mean ‖∇ψ(z)·Lz − f(ψ(z))‖² with `z = φ(x)`.
pub fn alt_decoder_linearity<M: Autoencoder + ?Sized>(model: &M, sys: &System, colloc: &CollocationSet) -> Result<f64> {
    check_cols("collocation states", colloc.dim(), model.state_dim())?;
    let z = model.encode(colloc.states.view())?;
    let v = z.dot(&model.generator().t());
    let dual = model.decode_jvp(z.view(), v.view())?;
    let f = sys.rhs(dual.primal.view())?;
    Ok(sum_sq(&(dual.tangent - f)) / colloc.len() as f64)
}

/// Weighted objective; zero-weight terms are not evaluated.
pub fn total_objective<M: Autoencoder + ?Sized>(
    model: &M,
    sys: &System,
    colloc: Option<&CollocationSet>,
    traj: Option<&TrajectorySet>,
    w: &LossWeights,
) -> Result<LossReport> {
    w.check_datasets(colloc.is_some(), traj.is_some())?;
    let mut r = LossReport::default();
    if w.phys_lin > 0.0 || w.phys_rec > 0.0 {
        let (lin, rec) = physics_terms(model, colloc.unwrap())?;
        r.phys_lin = if w.phys_lin > 0.0 { lin } else { 0.0 };
        r.phys_rec = if w.phys_rec > 0.0 { rec } else { 0.0 };
    }
    if w.needs_trajectories() {
        let (lin, rec) = data_terms(model, traj.unwrap())?;
        r.data_lin = if w.data_lin > 0.0 { lin } else { 0.0 };
        r.data_rec = if w.data_rec > 0.0 { rec } else { 0.0 };
    }
    if w.alt_lin > 0.0 {
        r.alt_lin = alt_decoder_linearity(model, sys, colloc.unwrap())?;
    }
    Ok(r.with_total(w))
}

/// The system with the model's physical parameters substituted.
pub fn effective_system(model: &KoopmanModel, base: &System) -> Result<System> {
    let mut sys = base.clone();
    for p in &model.phys {
        sys = sys.with_param(&p.name, p.value)?;
    }
    Ok(sys)
}

/// Borrowed collocation rows.
#[derive(Debug, Clone, Copy)]
pub struct CollocBatch<'a> {
    pub states: ArrayView2<'a, f64>,
    pub rhs: ArrayView2<'a, f64>,
}

impl<'a> From<&'a CollocationSet> for CollocBatch<'a> {
    fn from(c: &'a CollocationSet) -> Self {
        CollocBatch {
            states: c.states.view(),
            rhs: c.rhs.view(),
        }
    }
}

/// Borrowed trajectories (`count × (p+1) × d`).
#[derive(Debug, Clone, Copy)]
pub struct TrajBatch<'a> {
    pub states: ArrayView3<'a, f64>,
    pub dt: f64,
}

impl<'a> From<&'a TrajectorySet> for TrajBatch<'a> {
    fn from(t: &'a TrajectorySet) -> Self {
        TrajBatch {
            states: t.states.view(),
            dt: t.dt,
        }
    }
}

/// Everything a gradient evaluation needs besides the model.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub system: &'a System,
    pub colloc: Option<CollocBatch<'a>>,
    pub traj: Option<TrajBatch<'a>>,
    pub weights: LossWeights,
}

fn phys_index(sys: &System, model: &KoopmanModel) -> Vec<Option<usize>> {
    model
        .phys
        .iter()
        .map(|p| sys.param_names().iter().position(|n| *n == p.name))
        .collect()
}

fn add_phys(grad: &mut ModelGrad, idx: &[Option<usize>], model: &KoopmanModel, g: &[f64]) {
    for (i, p) in model.phys.iter().enumerate() {
        if let (true, Some(k)) = (p.trainable, idx[i]) {
            grad.phys[i] += g[k];
        }
    }
}

/// Collocation terms on rows `[lo, hi)` with means taken over `n_total`.
fn colloc_part(
    model: &KoopmanModel,
    sys: &System,
    batch: CollocBatch,
    n_total: usize,
    w: &LossWeights,
    grad: &mut ModelGrad,
) -> Result<LossReport> {
    let x = batch.states;
    let n = n_total as f64;
    let mut rep = LossReport::default();
    let trainable_phys = model.trainable_phys().next().is_some();
    let pidx = phys_index(sys, model);
    let mut gz = Array2::zeros((x.nrows(), model.latent_dim()));
    let (z, enc_trace, g_zdot) = if w.phys_lin > 0.0 {
        let f_owned;
        let f = if trainable_phys {
            f_owned = sys.rhs(x)?;
            f_owned.view()
        } else {
            batch.rhs
        };
        let (dual, trace) = model.encoder.jvp(x, f)?;
        let r = dual.primal.dot(&model.l.t()) - &dual.tangent;
        rep.phys_lin = sum_sq(&r);
        let g_r = r * (2.0 * w.phys_lin / n);
        grad.l += &g_r.t().dot(&dual.primal);
        gz += &g_r.dot(&model.l);
        (dual.primal, trace, Some(-g_r))
    } else {
        let (z, trace) = model.encoder.forward(x)?;
        (z, trace, None)
    };
    if w.phys_rec > 0.0 {
        let (xh, dtrace) = model.decoder.forward(z.view())?;
        let e = xh - x;
        rep.phys_rec = sum_sq(&e);
        let g_e = e * (2.0 * w.phys_rec / n);
        let cot = model.decoder.backward(&dtrace, g_e.view(), None, &mut grad.decoder, true).unwrap();
        gz += &cot.primal;
    }
    if w.alt_lin > 0.0 {
        let v = z.dot(&model.l.t());
        let (dual, dtrace) = model.decoder.jvp(z.view(), v.view())?;
        let f = sys.rhs(dual.primal.view())?;
        let r = dual.tangent - f;
        rep.alt_lin = sum_sq(&r);
        let g_r = r * (2.0 * w.alt_lin / n);
        let g_f = -&g_r;
        let g_xh = sys.rhs_state_vjp(dual.primal.view(), g_f.view())?;
        if trainable_phys {
            add_phys(grad, &pidx, model, &sys.rhs_param_vjp(dual.primal.view(), g_f.view())?);
        }
        let cot = model
            .decoder
            .backward(&dtrace, g_xh.view(), Some(g_r.view()), &mut grad.decoder, true)
            .unwrap();
        let g_v = cot.tangent.unwrap();
        grad.l += &g_v.t().dot(&z);
        gz += &g_v.dot(&model.l);
        gz += &cot.primal;
    }
    let want_input = trainable_phys && g_zdot.is_some();
    let cot = model
        .encoder
        .backward(&enc_trace, gz.view(), g_zdot.as_ref().map(|g| g.view()), &mut grad.encoder, want_input);
    if let Some(c) = cot {
        if let Some(g_f) = c.tangent {
            add_phys(grad, &pidx, model, &sys.rhs_param_vjp(x, g_f.view())?);
        }
    }
    Ok(rep)
}

/// Trajectory terms on a slice of trajectories with means over
/// `pairs_total` (trajectory, j) pairs.
fn traj_part(
    model: &KoopmanModel,
    batch: TrajBatch,
    k: Option<&Array2<f64>>,
    pairs_total: usize,
    w: &LossWeights,
    grad: &mut ModelGrad,
    g_k: &mut Array2<f64>,
) -> Result<LossReport> {
    let (count, len, d) = batch.states.dim();
    let m = model.latent_dim();
    let pairs = pairs_total as f64;
    let mut rep = LossReport::default();
    // snapshot-major rows: row j*count + i holds x_i(t_j)
    let mut x = Array2::zeros((len * count, d));
    for j in 0..len {
        x.slice_mut(s![j * count..(j + 1) * count, ..]).assign(&batch.states.slice(s![.., j, ..]));
    }
    let (z, trace) = model.encoder.forward(x.view())?;
    let mut gz = Array2::<f64>::zeros((len * count, m));
    if w.data_lin > 0.0 {
        let k = k.expect("K computed when data_lin > 0");
        let mut p_all = Array3::<f64>::zeros((len, count, m));
        p_all.index_axis_mut(Axis(0), 0).assign(&z.slice(s![0..count, ..]));
        let mut g_p = Array3::<f64>::zeros((len, count, m));
        for j in 1..len {
            let pj = p_all.index_axis(Axis(0), j - 1).dot(&k.t());
            let r = &pj - &z.slice(s![j * count..(j + 1) * count, ..]);
            rep.data_lin += sum_sq(&r);
            let g_r = r * (2.0 * w.data_lin / pairs);
            gz.slice_mut(s![j * count..(j + 1) * count, ..]).scaled_add(-1.0, &g_r);
            g_p.index_axis_mut(Axis(0), j).assign(&g_r);
            p_all.index_axis_mut(Axis(0), j).assign(&pj);
        }
        for j in (1..len).rev() {
            let gpj = g_p.index_axis(Axis(0), j).to_owned();
            *g_k += &gpj.t().dot(&p_all.index_axis(Axis(0), j - 1));
            let back = gpj.dot(k);
            let mut prev = g_p.index_axis_mut(Axis(0), j - 1);
            prev += &back;
        }
        let mut g0 = gz.slice_mut(s![0..count, ..]);
        g0 += &g_p.index_axis(Axis(0), 0);
    }
    if w.data_rec > 0.0 {
        let (xh, dtrace) = model.decoder.forward(z.view())?;
        let e = xh - &x;
        rep.data_rec = sum_sq(&e);
        let g_e = e * (2.0 * w.data_rec / pairs);
        let cot = model.decoder.backward(&dtrace, g_e.view(), None, &mut grad.decoder, true).unwrap();
        gz += &cot.primal;
    }
    model.encoder.backward(&trace, gz.view(), None, &mut grad.encoder, false);
    Ok(rep)
}

/// Splits `0..n` into `shards` contiguous ranges (some possibly empty).
fn ranges(n: usize, shards: usize) -> Vec<(usize, usize)> {
    (0..shards).map(|s| (n * s / shards, n * (s + 1) / shards)).collect()
}

/// Pairwise reduction in index order.
fn reduce<T: Clone>(mut items: Vec<T>, add: impl Fn(&T, &T) -> T) -> T {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        for pair in items.chunks(2) {
            next.push(if pair.len() == 2 { add(&pair[0], &pair[1]) } else { pair[0].clone() });
        }
        items = next;
    }
    items.pop().expect("at least one shard")
}

/// Weighted loss and its exact gradient.
///
/// Work is split into `shards` contiguous pieces evaluated on scoped
/// threads and combined by a fixed pairwise tree, so the result depends on
/// the shard count but not on scheduling.
pub fn loss_and_grad(model: &KoopmanModel, prob: &Problem, shards: usize) -> Result<(LossReport, ModelGrad)> {
    let w = &prob.weights;
    w.check_datasets(prob.colloc.is_some(), prob.traj.is_some())?;
    let shards = shards.max(1);
    let sys = if model.phys.is_empty() { prob.system.clone() } else { effective_system(model, prob.system)? };
    let d = model.state_dim();
    let colloc = prob.colloc.filter(|_| w.needs_collocations());
    let traj = prob.traj.filter(|_| w.needs_trajectories());
    if let Some(c) = &colloc {
        check_cols("collocation states", c.states.ncols(), d)?;
        if c.rhs.dim() != c.states.dim() {
            return Err(Error::dim("collocation rhs", format!("{:?}", c.states.dim()), format!("{:?}", c.rhs.dim())));
        }
        if c.states.nrows() == 0 {
            return Err(Error::Empty("collocation batch is empty".into()));
        }
    }
    let mut k_trace = None;
    if let Some(t) = &traj {
        check_cols("trajectory states", t.states.dim().2, d)?;
        if t.states.dim().0 == 0 || t.states.dim().1 == 0 {
            return Err(Error::Empty("trajectory batch is empty".into()));
        }
        if !(t.dt > 0.0) {
            return Err(Error::config("dt", format!("must be positive, got {}", t.dt)));
        }
        if w.data_lin > 0.0 {
            k_trace = Some(expm_traced(model.l.view(), t.dt)?);
        }
    }
    let k = k_trace.as_ref().map(|(k, _)| k);
    let n_c = colloc.map_or(0, |c| c.states.nrows());
    let (n_t, len) = traj.map_or((0, 0), |t| (t.states.dim().0, t.states.dim().1));
    let rc = ranges(n_c, shards);
    let rt = ranges(n_t, shards);
    let m = model.latent_dim();
    let run = |s: usize| -> Result<(LossReport, ModelGrad, Array2<f64>)> {
        let mut grad = model.zero_grad();
        let mut g_k = Array2::zeros((m, m));
        let mut rep = LossReport::default();
        if let Some(c) = &colloc {
            let (lo, hi) = rc[s];
            if hi > lo {
                let b = CollocBatch {
                    states: c.states.slice(s![lo..hi, ..]),
                    rhs: c.rhs.slice(s![lo..hi, ..]),
                };
                rep = rep.add(&colloc_part(model, &sys, b, n_c, w, &mut grad)?);
            }
        }
        if let Some(t) = &traj {
            let (lo, hi) = rt[s];
            if hi > lo {
                let b = TrajBatch {
                    states: t.states.slice(s![lo..hi, .., ..]),
                    dt: t.dt,
                };
                rep = rep.add(&traj_part(model, b, k, n_t * len, w, &mut grad, &mut g_k)?);
            }
        }
        Ok((rep, grad, g_k))
    };
    let parts: Vec<(LossReport, ModelGrad, Array2<f64>)> = if shards == 1 {
        vec![run(0)?]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..shards).map(|s| scope.spawn(move || run(s))).collect();
            handles.into_iter().map(|h| h.join().expect("loss shard panicked")).collect::<Result<Vec<_>>>()
        })?
    };
    let (sums, mut grad, g_k) = reduce(parts, |a, b| {
        let mut g = a.1.clone();
        g.add_assign(&b.1);
        (a.0.add(&b.0), g, &a.2 + &b.2)
    });
    if let Some((_, tr)) = &k_trace {
        grad.l += &expm_backward(tr, g_k.view());
    }
    if model.arch.diagonal_l {
        let diag = grad.l.diag().to_owned();
        grad.l = Array2::from_diag(&diag);
    }
    let nc = n_c.max(1) as f64;
    let np = (n_t * len).max(1) as f64;
    let rep = LossReport {
        phys_lin: sums.phys_lin / nc,
        phys_rec: sums.phys_rec / nc,
        data_lin: sums.data_lin / np,
        data_rec: sums.data_rec / np,
        alt_lin: sums.alt_lin / nc,
        total: 0.0,
    }
    .with_total(w);
    Ok((rep, grad))
}

/// A [`Problem`] bound to a model layout, usable with
/// [`objective_gradient`](crate::diffengine::objective_gradient).
pub struct KoopmanObjective<'a> {
    pub model: KoopmanModel,
    pub problem: Problem<'a>,
    pub shards: usize,
}

impl Objective for KoopmanObjective<'_> {
    fn blocks(&self) -> Vec<Block> {
        self.model.blocks()
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        let mut m = self.model.clone();
        m.assign(theta)?;
        let (rep, grad) = loss_and_grad(&m, &self.problem, self.shards)?;
        Ok(Evaluation {
            value: rep.total,
            terms: rep.terms().to_vec(),
            gradient: grad.flatten(&m),
        })
    }
}

/// Shard count from `PIKOOP_THREADS` (default 1).
pub fn shards_from_env() -> usize {
    std::env::var("PIKOOP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
