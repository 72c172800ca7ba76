//! Numerical laboratory for one-dimensional random block Schrödinger
//! operators: finite-box diagonalization, Prüfer-phase machinery,
//! eigenfunction correlators, Lyapunov exponents, almost-sure spectra and
//! the transfer-operator (Kunz–Souillard style) contraction program.
//!
//! The lattice operator acts on `ℓ²(ℤ)` as
//! `(H u)(n) = u(n+1) + u(n-1) + V(n) u(n)` where the potential is built
//! from i.i.d. block couplings: site `n = αk + i` (block `k`, offset
//! `0 ≤ i < α`) carries `V(n) = f_i ω_k + V₀(n)` with a fixed positive
//! profile `f` and a deterministic background `V₀`.

pub mod correlator;
pub mod error;
pub mod experiment;
pub mod hamiltonian;
pub mod ksoperator;
pub mod lyapunov;
pub mod model;
pub mod prufer;
pub mod spectrum;

pub use error::Error;
