//! Dense feed-forward networks with exact first- and second-order derivatives.
//!
//! Batches are row-major: one sample per row. A layer computes
//! `a = h_prev · Wᵀ + b`, `h = σ(a)`; the final layer is always the identity.
//! Directional derivatives are propagated alongside the primal values
//! (`s = u_prev · Wᵀ`, `u = σ'(a) ⊙ s`), and [`mlp_backward`] runs the
//! reverse sweep over both streams, which is what lets a loss containing
//! `∇φ(x)·v` be differentiated with respect to the weights.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::elu::elu_all;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Identity,
}

/// Layer widths, hidden activation and per-layer bias flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub bias: Vec<bool>,
}

impl MlpSpec {
    /// Same bias flag on every layer.
    pub fn new(widths: Vec<usize>, activation: Activation, bias: bool) -> Result<Self> {
        let layers = widths.len().saturating_sub(1);
        let spec = MlpSpec {
            widths,
            activation,
            bias: vec![bias; layers],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A single affine map `input -> output`.
    pub fn linear(input: usize, output: usize, bias: bool) -> Result<Self> {
        MlpSpec::new(vec![input, output], Activation::Identity, bias)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::config(
                "widths",
                format!("need at least 2 widths, got {}", self.widths.len()),
            ));
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("widths[{i}]"), "width must be positive"));
        }
        if self.bias.len() != self.widths.len() - 1 {
            return Err(Error::config(
                "bias",
                format!("expected {} flags, got {}", self.widths.len() - 1, self.bias.len()),
            ));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn is_hidden(&self, layer: usize) -> bool {
        layer + 1 < self.num_layers() && self.activation == Activation::Elu
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = (0..spec.num_layers())
            .map(|l| Layer {
                weight: Array2::zeros((spec.widths[l + 1], spec.widths[l])),
                bias: spec.bias[l].then(|| Array1::zeros(spec.widths[l + 1])),
            })
            .collect();
        MlpParams { layers }
    }

    /// Checks shapes against `spec`; the error names the first bad layer.
    pub fn check(&self, spec: &MlpSpec, name: &str) -> Result<()> {
        if self.layers.len() != spec.num_layers() {
            return Err(Error::Shape {
                layer: name.to_string(),
                expected: format!("{} layers", spec.num_layers()),
                found: format!("{} layers", self.layers.len()),
            });
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let want = (spec.widths[l + 1], spec.widths[l]);
            if layer.weight.dim() != want {
                return Err(Error::Shape {
                    layer: format!("{name}.{l}.weight"),
                    expected: format!("{want:?}"),
                    found: format!("{:?}", layer.weight.dim()),
                });
            }
            match (&layer.bias, spec.bias[l]) {
                (Some(b), true) if b.len() == want.0 => {}
                (None, false) => {}
                (b, _) => {
                    return Err(Error::Shape {
                        layer: format!("{name}.{l}.bias"),
                        expected: if spec.bias[l] { format!("[{}]", want.0) } else { "none".into() },
                        found: b.as_ref().map_or("none".into(), |b| format!("[{}]", b.len())),
                    })
                }
            }
            let finite = layer.weight.iter().all(|v| v.is_finite())
                && layer.bias.iter().flatten().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Numeric {
                    term: format!("{name}.{l}"),
                });
            }
        }
        Ok(())
    }

    /// Number of scalars.
    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.as_ref().map_or(0, |b| b.len()))
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            if let (Some(x), Some(y)) = (a.bias.as_mut(), b.bias.as_ref()) {
                *x += y;
            }
        }
    }

    /// Appends every scalar in layer order (weight row-major, then bias).
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.weight.iter());
            if let Some(b) = &l.bias {
                out.extend(b.iter());
            }
        }
    }

    /// Inverse of [`flatten_into`](Self::flatten_into); returns scalars consumed.
    pub fn assign_from(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = src[k];
                k += 1;
            }
            if let Some(b) = &mut l.bias {
                for v in b.iter_mut() {
                    *v = src[k];
                    k += 1;
                }
            }
        }
        k
    }
}

/// Primal values `h` with tangents `u = ∂h/∂x · v`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBatch {
    pub primal: Array2<f64>,
    pub tangent: Array2<f64>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    input: Array2<f64>,
    tangent_in: Option<Array2<f64>>,
    // σ'(a), σ''(a) and the pre-activation tangent s; hidden layers only
    d1: Option<Array2<f64>>,
    d2: Option<Array2<f64>>,
    s: Option<Array2<f64>>,
}

/// Everything the reverse sweep needs from a forward or JVP pass.
#[derive(Debug, Clone)]
pub struct Trace {
    layers: Vec<LayerTrace>,
}

impl Trace {
    pub fn is_dual(&self) -> bool {
        self.layers.first().is_some_and(|l| l.tangent_in.is_some())
    }
}

fn check_input(spec: &MlpSpec, x: &ArrayView2<f64>, what: &str) -> Result<()> {
    if x.ncols() != spec.input_dim() {
        return Err(Error::dim(
            what,
            format!("(_, {})", spec.input_dim()),
            format!("{:?}", x.dim()),
        ));
    }
    Ok(())
}

fn affine(h: &ArrayView2<f64>, layer: &Layer) -> Array2<f64> {
    let mut a = h.dot(&layer.weight.t());
    if let Some(b) = &layer.bias {
        a += b;
    }
    a
}

fn check_params(spec: &MlpSpec, params: &MlpParams) -> Result<()> {
    if params.layers.len() != spec.num_layers() {
        return Err(Error::dim(
            "mlp parameters",
            format!("{} layers", spec.num_layers()),
            format!("{} layers", params.layers.len()),
        ));
    }
    Ok(())
}

/// Output only, nothing cached.
pub fn mlp_eval(spec: &MlpSpec, params: &MlpParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_input(spec, &x, "mlp input")?;
    check_params(spec, params)?;
    let mut h = x.to_owned();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut a = affine(&h.view(), layer);
        if spec.is_hidden(l) {
            a.mapv_inplace(|v| elu_all(v).0);
        }
        h = a;
    }
    Ok(h)
}

/// Forward pass returning outputs and the cache for [`mlp_backward`].
pub fn mlp_forward(spec: &MlpSpec, params: &MlpParams, x: ArrayView2<f64>) -> Result<(Array2<f64>, Trace)> {
    check_input(spec, &x, "mlp input")?;
    check_params(spec, params)?;
    let mut traces = Vec::with_capacity(params.layers.len());
    let mut h = x.to_owned();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut a = affine(&h.view(), layer);
        let d1 = if spec.is_hidden(l) {
            let mut d1 = Array2::zeros(a.dim());
            Zip::from(&mut a).and(&mut d1).for_each(|a, d| {
                let (v, g, _) = elu_all(*a);
                *a = v;
                *d = g;
            });
            Some(d1)
        } else {
            None
        };
        traces.push(LayerTrace {
            input: h,
            tangent_in: None,
            d1,
            d2: None,
            s: None,
        });
        h = a;
    }
    Ok((h, Trace { layers: traces }))
}

fn jvp_impl(
    spec: &MlpSpec,
    params: &MlpParams,
    x: ArrayView2<f64>,
    v: ArrayView2<f64>,
    keep: bool,
) -> Result<(DualBatch, Option<Trace>)> {
    check_input(spec, &x, "mlp input")?;
    check_params(spec, params)?;
    if v.dim() != x.dim() {
        return Err(Error::dim("jvp tangent", format!("{:?}", x.dim()), format!("{:?}", v.dim())));
    }
    let mut traces = Vec::new();
    let mut h = x.to_owned();
    let mut u = v.to_owned();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut a = affine(&h.view(), layer);
        let s = u.dot(&layer.weight.t());
        if spec.is_hidden(l) {
            let mut un = Array2::zeros(a.dim());
            if keep {
                let mut d1 = Array2::zeros(a.dim());
                let mut d2 = Array2::zeros(a.dim());
                Zip::from(&mut a)
                    .and(&mut un)
                    .and(&mut d1)
                    .and(&mut d2)
                    .and(&s)
                    .for_each(|a, un, d1, d2, &s| {
                        let (v, g, gg) = elu_all(*a);
                        *a = v;
                        *un = g * s;
                        *d1 = g;
                        *d2 = gg;
                    });
                traces.push(LayerTrace {
                    input: h,
                    tangent_in: Some(u),
                    d1: Some(d1),
                    d2: Some(d2),
                    s: Some(s),
                });
            } else {
                Zip::from(&mut a).and(&mut un).and(&s).for_each(|a, un, &s| {
                    let (v, g, _) = elu_all(*a);
                    *a = v;
                    *un = g * s;
                });
            }
            h = a;
            u = un;
        } else {
            if keep {
                traces.push(LayerTrace {
                    input: h,
                    tangent_in: Some(u),
                    d1: None,
                    d2: None,
                    s: None,
                });
            }
            h = a;
            u = s;
        }
    }
    let trace = keep.then_some(Trace { layers: traces });
    Ok((DualBatch { primal: h, tangent: u }, trace))
}

/// Jacobian-vector product `∂φ/∂x(x) · v` per row, plus the cache.
pub fn mlp_jvp(
    spec: &MlpSpec,
    params: &MlpParams,
    x: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<(DualBatch, Trace)> {
    let (d, t) = jvp_impl(spec, params, x, v, true)?;
    Ok((d, t.expect("trace requested")))
}

/// Like [`mlp_jvp`] without keeping a cache.
pub fn mlp_jvp_eval(spec: &MlpSpec, params: &MlpParams, x: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<DualBatch> {
    Ok(jvp_impl(spec, params, x, v, false)?.0)
}

/// Cotangents with respect to the network inputs.
#[derive(Debug, Clone)]
pub struct InputCotangents {
    pub primal: Array2<f64>,
    pub tangent: Option<Array2<f64>>,
}

/// Reverse sweep.
///
/// `g_out` is the cotangent of the primal output, `g_tan` that of the
/// tangent output (only meaningful for a JVP trace). Parameter gradients are
/// accumulated into `grads`. When `want_input` is set the cotangents of the
/// input and of the input tangent are returned.
pub fn mlp_backward(
    _spec: &MlpSpec,
    params: &MlpParams,
    trace: &Trace,
    g_out: ArrayView2<f64>,
    g_tan: Option<ArrayView2<f64>>,
    grads: &mut MlpParams,
    want_input: bool,
) -> Option<InputCotangents> {
    debug_assert!(g_tan.is_none() || trace.is_dual());
    let mut gh = g_out.to_owned();
    let mut gu = g_tan.map(|g| g.to_owned());
    for l in (0..params.layers.len()).rev() {
        let lt = &trace.layers[l];
        let layer = &params.layers[l];
        let (ga, gs) = match &lt.d1 {
            Some(d1) => {
                let mut ga = gh;
                ga *= d1;
                let gs = gu.map(|mut gu| {
                    if let (Some(d2), Some(s)) = (&lt.d2, &lt.s) {
                        Zip::from(&mut ga)
                            .and(&gu)
                            .and(s)
                            .and(d2)
                            .for_each(|ga, &gu, &s, &d2| *ga += gu * s * d2);
                    }
                    gu *= d1;
                    gu
                });
                (ga, gs)
            }
            None => (gh, gu),
        };
        let gl = &mut grads.layers[l];
        gl.weight += &ga.t().dot(&lt.input);
        if let (Some(gs), Some(tin)) = (&gs, &lt.tangent_in) {
            gl.weight += &gs.t().dot(tin);
        }
        if let Some(gb) = &mut gl.bias {
            *gb += &ga.sum_axis(Axis(0));
        }
        if l == 0 && !want_input {
            return None;
        }
        gh = ga.dot(&layer.weight);
        gu = gs.map(|gs| gs.dot(&layer.weight));
    }
    Some(InputCotangents {
        primal: gh,
        tangent: gu,
    })
}

/// Owned spec + parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        let params = MlpParams::zeros(&spec);
        Mlp { spec, params }
    }

    pub fn eval(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        mlp_eval(&self.spec, &self.params, x)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Trace)> {
        mlp_forward(&self.spec, &self.params, x)
    }

    pub fn jvp(&self, x: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<(DualBatch, Trace)> {
        mlp_jvp(&self.spec, &self.params, x, v)
    }

    pub fn jvp_eval(&self, x: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<DualBatch> {
        mlp_jvp_eval(&self.spec, &self.params, x, v)
    }

    pub fn backward(
        &self,
        trace: &Trace,
        g_out: ArrayView2<f64>,
        g_tan: Option<ArrayView2<f64>>,
        grads: &mut MlpParams,
        want_input: bool,
    ) -> Option<InputCotangents> {
        mlp_backward(&self.spec, &self.params, trace, g_out, g_tan, grads, want_input)
    }
}
