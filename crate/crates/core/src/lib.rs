//! Scale-invariant diffusion in DCT frequency space.
//!
//! The forward process attenuates each frequency mode `k` by
//! `exp(-k² λ(t) / 2)` and injects Gaussian noise shaped by the dataset
//! variance spectrum `S₀(k)`, so fine scales are erased before coarse ones
//! while the per-mode variance stays at `S₀`. This crate holds the pure
//! numerical pieces:
//!
//! - [`spectral`]: DCT-II / DCT-III pair, frequency grid, radial binning.
//! - [`spectrum`]: per-mode variance estimation and the regularized power law.
//! - [`schedule`]: λ(t) families, per-mode DDPM coefficients, SNR and
//!   effective resolution.
//! - [`ddpm`]: forward marginals, exact posterior, ancestral sampling,
//!   prediction-target algebra and analytic denoisers.
//! - [`sde`]: continuous-time drift/diffusion, score wrapper and the
//!   Euler–Maruyama, probability-flow and predictor–corrector samplers.
//! - [`ising`]: Wolff cluster Monte Carlo, exhaustive enumeration for small
//!   lattices, ground-truth forward initialization.
//! - [`observables`]: connected four-point correlator, paired bootstrap,
//!   antialiased bicubic reference and radial spectrum reports.
//!
//! Everything here is `no_std` + `alloc`; file formats, configuration and the
//! command line live in the `skild` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod ddpm;
mod error;
mod field;
pub mod ising;
mod linalg;
pub mod observables;
pub mod schedule;
pub mod sde;
pub mod seed;
pub mod spectral;
pub mod spectrum;

pub use error::{Error, Result};
pub use field::{PixelField, Shape, SpectralField};
