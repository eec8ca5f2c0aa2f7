//! Small dense LU helpers (real and complex).

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Determinant by LU with partial pivoting.
pub fn det(a: ArrayView2<f64>) -> Result<f64> {
    let (n, c) = a.dim();
    if n != c {
        return Err(Error::dim("det argument", "square matrix", format!("{n}x{c}")));
    }
    let mut m = a.to_owned();
    let mut d = 1.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[[i, k]].abs().total_cmp(&m[[j, k]].abs())).unwrap();
        if m[[p, k]] == 0.0 {
            return Ok(0.0);
        }
        if p != k {
            for j in 0..n {
                m.swap([k, j], [p, j]);
            }
            d = -d;
        }
        let piv = m[[k, k]];
        d *= piv;
        for i in k + 1..n {
            let f = m[[i, k]] / piv;
            for j in k + 1..n {
                m[[i, j]] -= f * m[[k, j]];
            }
        }
    }
    Ok(d)
}

/// LU factors of a complex matrix; tiny pivots are replaced by `floor`
/// so that nearly singular shifted systems (inverse iteration) stay solvable.
pub(crate) struct ComplexLu {
    lu: Vec<Complex64>,
    perm: Vec<usize>,
    n: usize,
}

impl ComplexLu {
    pub(crate) fn new(mut lu: Vec<Complex64>, n: usize, floor: f64) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| lu[i * n + k].norm().total_cmp(&lu[j * n + k].norm())).unwrap();
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            if lu[k * n + k].norm() < floor {
                lu[k * n + k] = Complex64::new(floor, 0.0);
            }
            let piv = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / piv;
                lu[i * n + k] = f;
                if f != Complex64::new(0.0, 0.0) {
                    for j in k + 1..n {
                        let u = lu[k * n + j];
                        lu[i * n + j] -= f * u;
                    }
                }
            }
        }
        ComplexLu { lu, perm, n }
    }

    pub(crate) fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[i * n + j];
                x[i] = x[i] - l * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = self.lu[i * n + j];
                x[i] = x[i] - u * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }
}

pub(crate) fn to_complex(a: &Array2<f64>) -> Vec<Complex64> {
    a.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}
