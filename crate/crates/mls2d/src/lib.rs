//! Numerical laboratory for the 2D Maxwell–Lorentz system with an extended,
//! rotating charged particle.
//!
//! The model couples a vector wave field to a rigid charge distribution ρ in
//! the Coulomb gauge.  The state is Y = (A, Π, q, p) with the angular
//! velocity slaved to the field,
//!
//! ```text
//! ω(t) = (M + ⟨A(·,t), Jϱ(· − q)⟩) / I,      ϱ(x) = x ρ(x),
//! ```
//!
//! and the particle obeys m q̇ = p − ⟨A, ρ(· − q)⟩.  The crate provides
//!
//! * admissible charge densities with vanishing moments up to order 4
//!   ([`density`]),
//! * a periodic pseudospectral grid with solenoidal projection, weighted
//!   norms, energy and symplectic form ([`grid`]),
//! * the Fourier-integral kernel engine — the v- and λ-dependent scalars and
//!   2×2 matrices κ, P, Q, F, S, U, R, f, h with denominators
//!   D̂₀ = k² − (v·k)² and D̂(λ) = (i v·k + λ)² + k², including Plemelj
//!   boundary values on the continuous spectrum ([`kernels`]),
//! * closed-form traveling–rotating solitons, the tangent frame of the
//!   solitary manifold and the symplectic Gram matrix Ω(v) ([`soliton`]),
//! * the linearized generator, its quadratic Hamiltonian and the symplectic
//!   orthogonal projection onto the manifold ([`linearized`]),
//! * the reduced resolvent matrix L(λ), the spectral (Wiener-type) condition
//!   scan and inverse Fourier–Laplace time responses ([`resolvent`]),
//! * a nonlinear integrator with conservation monitors ([`dynamics`]), and
//! * experiment drivers with power-law fitting ([`harness`]).
//!
//! Fourier convention: F[f](k) = ∫ f(x) e^{−ik·x} dx with inverse
//! (2π)^{−2} ∫ e^{ik·x}; consequently ϱ̂ = i∇_k ρ̂ and every k-space pairing
//! carries a factor (2π)^{−2}.

pub mod book;
pub mod config;
pub mod density;
pub mod dynamics;
pub mod grid;
pub mod harness;
pub mod kernels;
pub mod linearized;
pub mod quad;
pub mod resolvent;
pub mod soliton;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("Newton iteration did not converge: {0}")]
    Newton(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
