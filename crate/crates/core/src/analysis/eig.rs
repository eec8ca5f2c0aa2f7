//! Eigendecomposition of a real nonsymmetric matrix: balancing, Householder
//! reduction to Hessenberg form, Francis double-shift QR for the
//! eigenvalues, inverse iteration for right and left eigenvectors.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use super::linalg::{to_complex, ComplexLu};
use crate::error::{Error, Result};
use crate::rng::Stream;

const MAX_DIM: usize = 1024;

/// Eigenvalues with paired right (`L v = μ v`) and left (`wᵀ L = μ wᵀ`)
/// eigenvectors stored as columns, each of unit 2-norm.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<Complex64>,
    pub right: Array2<Complex64>,
    pub left: Array2<Complex64>,
    /// `‖L v − μ v‖ / ‖v‖` per pair.
    pub residuals: Vec<f64>,
    /// `‖Lᵀ w − μ w‖ / ‖w‖` per pair.
    pub left_residuals: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn balance(a: &mut Array2<f64>) {
    const RADIX: f64 = 2.0;
    let n = a.nrows();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let (mut r, mut c) = (0.0, 0.0);
            for j in 0..n {
                if j != i {
                    c += a[[j, i]].abs();
                    r += a[[i, j]].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= RADIX * RADIX;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= RADIX * RADIX;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                for j in 0..n {
                    a[[i, j]] /= f;
                    a[[j, i]] *= f;
                }
            }
        }
    }
}

fn hessenberg(a: &mut Array2<f64>) {
    let n = a.nrows();
    for k in 0..n.saturating_sub(2) {
        let norm = (k + 1..n).map(|i| a[[i, k]] * a[[i, k]]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[[k + 1, k]] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k + 1..n).map(|i| a[[i, k]]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        for j in k..n {
            let w: f64 = v.iter().enumerate().map(|(i, vi)| vi * a[[k + 1 + i, j]]).sum();
            let f = 2.0 * w / vv;
            for (i, vi) in v.iter().enumerate() {
                a[[k + 1 + i, j]] -= f * vi;
            }
        }
        for i in 0..n {
            let w: f64 = v.iter().enumerate().map(|(j, vj)| a[[i, k + 1 + j]] * vj).sum();
            let f = 2.0 * w / vv;
            for (j, vj) in v.iter().enumerate() {
                a[[i, k + 1 + j]] -= f * vj;
            }
        }
        a[[k + 1, k]] = alpha;
        for i in k + 2..n {
            a[[i, k]] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalues of an upper Hessenberg matrix (destroyed).
fn hqr(a: &mut Array2<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    let mut wr = vec![Complex64::new(0.0, 0.0); n];
    let eps = f64::EPSILON;
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[[i, j]].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let mut total_its = 0usize;
    while nn >= 0 {
        let mut its = 0usize;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l > 0 {
                let mut s = a[[l - 1, l - 1]].abs() + a[[l, l]].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[[l, l - 1]].abs() <= eps * s {
                    a[[l, l - 1]] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[[nu, nu]];
            if l == nu {
                wr[nu] = Complex64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let mut y = a[[nu - 1, nu - 1]];
            let mut w = a[[nu, nu - 1]] * a[[nu - 1, nu]];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[nu - 1] = Complex64::new(x + z, 0.0);
                    wr[nu] = wr[nu - 1];
                    if z != 0.0 {
                        wr[nu] = Complex64::new(x - w / z, 0.0);
                    }
                } else {
                    wr[nu - 1] = Complex64::new(x + p, z);
                    wr[nu] = Complex64::new(x + p, -z);
                }
                nn -= 2;
                break;
            }
            if total_its >= 30 * n {
                return Err(Error::Convergence {
                    remaining: (0..=nu).collect(),
                });
            }
            if its > 0 && its % 10 == 0 {
                // exceptional shift
                t += x;
                for i in 0..=nu {
                    a[[i, i]] -= x;
                }
                let s = a[[nu, nu - 1]].abs() + a[[nu - 1, nu - 2]].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            total_its += 1;
            let (mut p, mut q, mut r);
            let mut m = nu - 2;
            loop {
                let z = a[[m, m]];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[[m + 1, m]] + a[[m, m + 1]];
                q = a[[m + 1, m + 1]] - z - rr - ss;
                r = a[[m + 2, m + 1]];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[[m, m - 1]].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[[m - 1, m - 1]].abs() + z.abs() + a[[m + 1, m + 1]].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m..nu - 1 {
                a[[i + 2, i]] = 0.0;
                if i != m {
                    a[[i + 2, i - 1]] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[[k, k - 1]];
                    q = a[[k + 1, k - 1]];
                    r = 0.0;
                    if k + 1 != nu {
                        r = a[[k + 2, k - 1]];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[[k, k - 1]] = -a[[k, k - 1]];
                        }
                    } else {
                        a[[k, k - 1]] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[[k, j]] + q * a[[k + 1, j]];
                        if k + 1 != nu {
                            pp += r * a[[k + 2, j]];
                            a[[k + 2, j]] -= pp * z;
                        }
                        a[[k + 1, j]] -= pp * y;
                        a[[k, j]] -= pp * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for i in l..=mmin {
                        let mut pp = x * a[[i, k]] + y * a[[i, k + 1]];
                        if k + 1 != nu {
                            pp += z * a[[i, k + 2]];
                            a[[i, k + 2]] -= pp * r;
                        }
                        a[[i, k + 1]] -= pp * q;
                        a[[i, k]] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr)
}

/// Eigenvalues only, ordered by decreasing real part then decreasing
/// imaginary part.
pub fn eigenvalues(l: ArrayView2<f64>) -> Result<Vec<Complex64>> {
    let (n, c) = l.dim();
    if n != c {
        return Err(Error::dim("eig argument", "square matrix", format!("{n}x{c}")));
    }
    if n > MAX_DIM {
        return Err(Error::dim("eig argument", format!("size <= {MAX_DIM}"), n));
    }
    if l.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { term: "eig argument".into() });
    }
    let mut a = l.to_owned();
    balance(&mut a);
    hessenberg(&mut a);
    let mut vals = hqr(&mut a)?;
    vals.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(vals)
}

fn cnorm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn normalize(v: &mut [Complex64]) {
    let norm = cnorm(v);
    // phase: make the largest component real and positive
    let big = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()).then(b.0.cmp(&a.0)))
        .map(|(_, c)| *c)
        .unwrap_or(Complex64::new(1.0, 0.0));
    let phase = if big.norm() > 0.0 { big.conj() / big.norm() } else { Complex64::new(1.0, 0.0) };
    for c in v.iter_mut() {
        *c = *c * phase / norm;
    }
}

fn residual(a: &Array2<f64>, mu: Complex64, v: &[Complex64]) -> f64 {
    let n = v.len();
    let mut r = 0.0;
    for i in 0..n {
        let mut acc = -mu * v[i];
        for j in 0..n {
            acc += v[j] * a[[i, j]];
        }
        r += acc.norm_sqr();
    }
    r.sqrt() / cnorm(v)
}

/// Inverse iteration for every eigenvalue of `a`; members of a cluster of
/// (numerically) equal eigenvalues are orthogonalized against each other.
fn vectors(a: &Array2<f64>, values: &[Complex64], salt: u64) -> (Array2<Complex64>, Vec<f64>) {
    let n = a.nrows();
    let anorm = a
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let scale = if anorm > 0.0 { anorm } else { 1.0 };
    let floor = f64::EPSILON * scale;
    let cluster_tol = 1e-10 * scale.max(1.0);
    let mut out = Array2::zeros((n, n));
    let mut res = vec![0.0; n];
    let base = to_complex(a);
    let mut done: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    for (k, &mu) in values.iter().enumerate() {
        let conj_of = (mu.im < 0.0).then(|| values[..k].iter().position(|&p| p == mu.conj())).flatten();
        let v = if let Some(p) = conj_of {
            done[p].iter().map(|c| c.conj()).collect()
        } else {
            let mut m = base.clone();
            for i in 0..n {
                m[i * n + i] -= mu;
            }
            let lu = ComplexLu::new(m, n, floor);
            let mates: Vec<usize> = (0..k).filter(|&j| (values[j] - mu).norm() <= cluster_tol).collect();
            let mut rng = Stream::new(salt ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let orth = |y: &mut Vec<Complex64>| {
                for &j in &mates {
                    let u: &Vec<Complex64> = &done[j];
                    let dot: Complex64 = u.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum();
                    for (yi, ui) in y.iter_mut().zip(u) {
                        *yi -= dot * ui;
                    }
                }
            };
            let mut v: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.uniform(-1.0, 1.0), 0.0)).collect();
            orth(&mut v);
            normalize(&mut v);
            for it in 0..8 {
                let mut y = lu.solve(&v);
                orth(&mut y);
                if cnorm(&y) == 0.0 || !cnorm(&y).is_finite() {
                    break;
                }
                normalize(&mut y);
                v = y;
                if it >= 1 && residual(a, mu, &v) <= 1e-13 * scale.max(1.0) {
                    break;
                }
            }
            v
        };
        res[k] = residual(a, mu, &v);
        for i in 0..n {
            out[[i, k]] = v[i];
        }
        done.push(v);
    }
    (out, res)
}

/// Full eigendecomposition of `l`.
pub fn eig(l: ArrayView2<f64>) -> Result<Spectrum> {
    let values = eigenvalues(l)?;
    let a = l.to_owned();
    let (right, residuals) = vectors(&a, &values, 0x5249_4748_5400);
    let at = a.t().to_owned();
    let (left, left_residuals) = vectors(&at, &values, 0x4c45_4654_0000);
    Ok(Spectrum {
        values,
        right,
        left,
        residuals,
        left_residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::linalg::det;
    use ndarray::array;

    fn random(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = Stream::new(seed);
        Array2::from_shape_simple_fn((n, n), || rng.uniform(-1.0, 1.0))
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn diagonal() {
        let s = eig(array![[2.0, 0.0], [0.0, 3.0]].view()).unwrap();
        assert_eq!(s.values, vec![Complex64::new(3.0, 0.0), Complex64::new(2.0, 0.0)]);
        assert!(s.residuals.iter().all(|&r| r <= 1e-14));
    }

    #[test]
    fn rotation_generator() {
        let s = eig(array![[0.0, -1.0], [1.0, 0.0]].view()).unwrap();
        assert!(close(s.values[0], Complex64::new(0.0, 1.0), 1e-15));
        assert!(close(s.values[1], Complex64::new(0.0, -1.0), 1e-15));
        assert!(s.residuals.iter().all(|&r| r <= 1e-14));
        for i in 0..2 {
            assert_eq!(s.right[[i, 1]], s.right[[i, 0]].conj());
        }
    }

    #[test]
    fn zero_matrix() {
        let s = eig(Array2::zeros((4, 4)).view()).unwrap();
        assert!(s.values.iter().all(|v| v.norm() == 0.0));
        // distinct basis vectors despite the fourfold eigenvalue
        for a in 0..4 {
            for b in 0..a {
                let dot: Complex64 = (0..4).map(|i| s.right[[i, a]].conj() * s.right[[i, b]]).sum();
                assert!(dot.norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn trace_and_determinant() {
        for (n, seed) in [(3, 1), (5, 2), (8, 3), (16, 4), (16, 5)] {
            let a = random(n, seed);
            let s = eig(a.view()).unwrap();
            let sum: Complex64 = s.values.iter().sum();
            let prod: Complex64 = s.values.iter().product();
            let tr = a.diag().sum();
            let d = det(a.view()).unwrap();
            assert!((sum.re - tr).abs() <= 1e-8 * tr.abs().max(1.0) && sum.im.abs() <= 1e-8);
            assert!((prod.re - d).abs() <= 1e-8 * d.abs() && prod.im.abs() <= 1e-8 * d.abs());
            assert!(s.residuals.iter().chain(&s.left_residuals).all(|&r| r <= 1e-8), "{:?}", s.residuals);
        }
    }

    #[test]
    fn conjugate_pairs() {
        let s = eig(random(9, 17).view()).unwrap();
        for v in &s.values {
            if v.im != 0.0 {
                assert!(s.values.iter().any(|w| *w == v.conj()));
            }
        }
    }

    #[test]
    fn left_vectors_are_biorthogonal() {
        let a = array![[-1.0, 0.3, 0.0], [0.0, -2.0, 0.5], [0.1, 0.0, -4.0]];
        let s = eig(a.view()).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let dot: Complex64 = (0..3).map(|i| s.left[[i, j]] * s.right[[i, k]]).sum();
                if j != k {
                    assert!(dot.norm() <= 1e-6);
                } else {
                    assert!(dot.norm() > 0.1);
                }
            }
        }
    }

    #[test]
    fn graded_heat_like_spectrum() {
        let vals: Vec<f64> = (0..32).map(|k| -((k / 2) as f64).powi(2)).collect();
        let q = random(32, 8);
        let l = &q.dot(&Array2::from_diag(&ndarray::Array1::from(vals.clone()))) .dot(&inverse(&q));
        let s = eig(l.view()).unwrap();
        let mut want = vals.clone();
        want.sort_by(|a, b| b.total_cmp(a));
        for (got, w) in s.values.iter().zip(&want) {
            assert!((got.re - w).abs() <= 1e-6 * w.abs().max(1.0), "{got} vs {w}");
        }
        assert!(s.residuals.iter().all(|&r| r <= 1e-8));
    }

    fn inverse(a: &Array2<f64>) -> Array2<f64> {
        let n = a.nrows();
        let lu = ComplexLu::new(to_complex(a), n, 0.0);
        let mut out = Array2::zeros((n, n));
        for j in 0..n {
            let mut e = vec![Complex64::new(0.0, 0.0); n];
            e[j] = Complex64::new(1.0, 0.0);
            for (i, v) in lu.solve(&e).into_iter().enumerate() {
                out[[i, j]] = v.re;
            }
        }
        out
    }
}
