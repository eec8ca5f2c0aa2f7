use std::f64::consts::PI;

use num_complex::Complex64;

use super::fft::Fft;
use crate::error::{Error, Result};

/// Periodic grid on `[-π, π)` with `n` nodes `x_j = -π + 2πj/n`.
#[derive(Debug, Clone)]
pub struct SpectralGrid {
    n: usize,
    nodes: Vec<f64>,
    wavenumbers: Vec<f64>,
    fft: Fft,
    fine: Fft,
}

impl PartialEq for SpectralGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl SpectralGrid {
    /// `n` must be a power of two and at least 8.
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::config("grid.n", format!("{n} is not a power of two >= 8")));
        }
        let h = 2.0 * PI / n as f64;
        let nodes = (0..n).map(|j| -PI + h * j as f64).collect();
        // DFT layout: 0, 1, ..., n/2-1, -n/2, ..., -1
        let wavenumbers = (0..n)
            .map(|j| if j < n / 2 { j as f64 } else { j as f64 - n as f64 })
            .collect();
        Ok(SpectralGrid {
            n,
            nodes,
            wavenumbers,
            fft: Fft::new(n),
            fine: Fft::new(2 * n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub(crate) fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.n {
            return Err(Error::dim(what, self.n, len));
        }
        Ok(())
    }

    pub fn to_spectrum(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        buf
    }

    pub fn from_spectrum(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.fft.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Multiplies a spectrum by `(ik)^order`, zeroing the Nyquist mode for
    /// odd orders.
    pub fn apply_derivative(&self, spec: &mut [Complex64], order: usize) {
        let nyq = self.n / 2;
        for (j, c) in spec.iter_mut().enumerate() {
            let k = self.wavenumbers[j];
            *c *= match order {
                0 => Complex64::new(1.0, 0.0),
                1 => Complex64::new(0.0, k),
                2 => Complex64::new(-k * k, 0.0),
                _ => Complex64::new(0.0, -k * k * k),
            };
            if order % 2 == 1 && j == nyq {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Spectral derivative of order 1, 2 or 3.
    pub fn derivative(&self, u: &[f64], order: usize) -> Result<Vec<f64>> {
        if !(1..=3).contains(&order) {
            return Err(Error::UnsupportedOrder(order));
        }
        self.check_len(u.len(), "spectral derivative input")?;
        let mut s = self.to_spectrum(u);
        self.apply_derivative(&mut s, order);
        Ok(self.from_spectrum(s))
    }

    /// Galerkin-truncated product `u · u_x` from spectra of `u`, computed on
    /// a zero-padded grid of `2n` points (alias-free for quadratic terms)
    /// and truncated back to `|k| < n/2`.
    pub(crate) fn dealiased_advection(&self, u_hat: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let m = 2 * n;
        let nyq = n / 2;
        let mut u_f = vec![Complex64::new(0.0, 0.0); m];
        let mut ux_f = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..n {
            if j == nyq {
                continue;
            }
            let k = self.wavenumbers[j];
            let dst = if j < nyq { j } else { m - (n - j) };
            u_f[dst] = u_hat[j];
            ux_f[dst] = u_hat[j] * Complex64::new(0.0, k);
        }
        // Keep the Nyquist content of u itself in the product (it is not in
        // the derivative): split it evenly between ±n/2 on the fine grid.
        let half = u_hat[nyq] * 0.5;
        u_f[nyq] = half;
        u_f[m - nyq] = half;
        self.fine.inverse(&mut u_f);
        self.fine.inverse(&mut ux_f);
        // inverse() divides by m while the coarse convention divides by n
        let scale = m as f64 / n as f64;
        let mut prod: Vec<Complex64> = u_f
            .iter()
            .zip(&ux_f)
            .map(|(a, b)| Complex64::new(a.re * scale * b.re * scale, 0.0))
            .collect();
        self.fine.forward(&mut prod);
        let inv = n as f64 / m as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            if j == nyq {
                continue;
            }
            let src = if j < nyq { j } else { m - (n - j) };
            out[j] = prod[src] * inv;
        }
        out
    }
}

/// Spectral derivative of `u` on `grid`.
pub fn spectral_derivative(grid: &SpectralGrid, u: &[f64], order: usize) -> Result<Vec<f64>> {
    grid.derivative(u, order)
}
