//! Periodic pseudo-spectral differentiation and explicit time integration.

mod fft;
mod grid;
mod integrate;

pub use fft::Fft;
pub use grid::{spectral_derivative, SpectralGrid};
pub use integrate::{integrate_ode, integrate_pde, stable_substeps, Snapshots};
