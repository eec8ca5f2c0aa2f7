//! Matrix exponential by scaling and squaring with a degree-12 Taylor
//! polynomial, plus its exact reverse-mode derivative.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

const DEGREE: usize = 12;

fn norm1(a: &ArrayView2<f64>) -> f64 {
    a.columns().into_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Intermediates of one `expm` evaluation, enough to run it backwards.
#[derive(Debug, Clone)]
pub struct ExpmTrace {
    scale: f64,
    b: Array2<f64>,
    /// Horner iterates `R_12 = I, …, R_0 = T(B)`.
    horner: Vec<Array2<f64>>,
    /// Squaring inputs `S_0 = T(B), …, S_{s-1}`.
    squares: Vec<Array2<f64>>,
}

fn check_square(a: &ArrayView2<f64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::dim("expm argument", format!("square matrix ({r}x{r})"), format!("{r}x{c}")));
    }
    Ok(r)
}

fn run(a: ArrayView2<f64>, t: f64, keep: bool) -> Result<(Array2<f64>, Option<ExpmTrace>)> {
    let n = check_square(&a)?;
    if !t.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { term: "expm argument".into() });
    }
    let at_norm = norm1(&a) * t.abs();
    let mut s = 0u32;
    while at_norm / 2f64.powi(s as i32) > 0.5 {
        s += 1;
    }
    let scale = t / 2f64.powi(s as i32);
    let b = a.mapv(|v| v * scale);
    let eye = Array2::<f64>::eye(n);
    let mut r = eye.clone();
    let mut horner = Vec::new();
    for k in (1..=DEGREE).rev() {
        if keep {
            horner.push(r.clone());
        }
        let mut next = b.dot(&r);
        next.mapv_inplace(|v| v / k as f64);
        next += &eye;
        r = next;
    }
    let mut squares = Vec::new();
    for _ in 0..s {
        let sq = r.dot(&r);
        if keep {
            squares.push(std::mem::replace(&mut r, sq));
        } else {
            r = sq;
        }
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { term: "expm (overflow)".into() });
    }
    let trace = keep.then(|| ExpmTrace { scale, b, horner, squares });
    Ok((r, trace))
}

/// `e^{A t}`. Relative error is at the level of a few ulps times the
/// number of squarings.
pub fn expm(a: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
    Ok(run(a, t, false)?.0)
}

/// `e^{A t}` together with the trace needed by [`expm_backward`].
pub fn expm_traced(a: ArrayView2<f64>, t: f64) -> Result<(Array2<f64>, ExpmTrace)> {
    let (r, tr) = run(a, t, true)?;
    Ok((r, tr.expect("trace requested")))
}

/// Given the cotangent of `K = expm(A, t)` returns the cotangent of `A`.
/// Exact for the polynomial that `expm` actually evaluates.
pub fn expm_backward(trace: &ExpmTrace, g_k: ArrayView2<f64>) -> Array2<f64> {
    let mut g = g_k.to_owned();
    for s in trace.squares.iter().rev() {
        // K' = S S  =>  gS = gK' Sᵀ + Sᵀ gK'
        g = g.dot(&s.t()) + s.t().dot(&g);
    }
    let mut g_b = Array2::zeros(trace.b.dim());
    // horner[i] is R_{12-i}; step k maps R_k to R_{k-1} = I + B R_k / k
    for (i, r_old) in trace.horner.iter().enumerate().rev() {
        let k = (DEGREE - i) as f64;
        g_b += &(g.dot(&r_old.t()) / k);
        g = trace.b.t().dot(&g) / k;
    }
    g_b * trace.scale
}
