//! Numerical laboratory for extension-based spectral multipliers.
//!
//! The crate is organized around a one-dimensional "vertical" diffusion on
//! (0, ∞) that is killed at the origin.  Its hitting-time Laplace transform
//! K(y, λ) plays the role of a Poisson-type extension kernel; weighted
//! quadratures of K and ∂_y K produce bounded spectral multipliers Φ(λ),
//! which are then applied on flat tori either through the Fourier transform
//! or through a discrete Schrödinger eigenbasis.  A Monte Carlo layer
//! reconstructs the same operators from their conditional-expectation
//! (Gundy–Varopoulos) representations, and a probing layer searches for
//! L^p-norm ratios to compare against the proven bounds.
//!
//! Module map:
//! - [`quad`]: adaptive Gauss–Kronrod quadrature on finite and half-infinite
//!   intervals (shared by everything below).
//! - [`special`]: Gamma, MacDonald functions K_s via their integral
//!   representation, and weighted L² pairings of MacDonald functions.
//! - [`diffusion`]: the vertical diffusion (closed-form and tabulated
//!   coefficient families), scale/speed data, Green functions, and the
//!   kernel K(y, λ).
//! - [`multiplier`]: multiplier symbols Φ built from the extension kernel or
//!   from Stieltjes-type integrals of a complex measure, plus the constant
//!   zoo (p*, Burkholder, cotangent, asymptotic one-sided constants).
//! - [`torus`]: grids, fields, FFT-based symbol operators, Riesz and
//!   Beurling–Ahlfors symbols, Schrödinger eigensolver path, extension
//!   fields U_f and their PDE residual.
//! - [`montecarlo`]: Euler–Maruyama simulation of the vertical diffusion and
//!   the horizontal torus motion, conditional-expectation estimators for the
//!   multiplier operators, Feynman–Kac and occupation-time checks.
//! - [`probe`]: L^p norms on torus grids, randomized lower-bound probing of
//!   operator norms, and the bound-verification suite.

pub mod diffusion;
pub mod error;
pub mod montecarlo;
pub mod multiplier;
pub mod probe;
pub mod quad;
pub mod special;
pub mod torus;

pub use error::{Error, Result};
