//! Exponential linear unit with alpha = 1 and its first two derivatives.
//!
//! At the kink `a = 0` the value and first derivative are continuous; the
//! second derivative jumps from 1 to 0 and is taken as 0 there.

#[inline]
pub fn elu(a: f64) -> f64 {
    if a > 0.0 {
        a
    } else {
        a.exp_m1()
    }
}

#[inline]
pub fn elu_d1(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        a.exp()
    }
}

#[inline]
pub fn elu_d2(a: f64) -> f64 {
    if a >= 0.0 {
        0.0
    } else {
        a.exp()
    }
}

/// `(elu, elu_d1, elu_d2)` from a single transcendental evaluation.
#[inline]
pub(crate) fn elu_all(a: f64) -> (f64, f64, f64) {
    if a > 0.0 {
        (a, 1.0, 0.0)
    } else {
        let em1 = a.exp_m1();
        let e = em1 + 1.0;
        (em1, e, if a == 0.0 { 0.0 } else { e })
    }
}
