//! Simulator and verification laboratory for nonlinear plasma echoes in the
//! Vlasov-Poisson system near a homogeneous equilibrium.
//!
//! The crate works in glide coordinates `(z, v) = (x - tv, v)`, where free
//! transport is static and the density is read off the distribution as
//! `rho(t, k) = f(t, k, kt)`.

pub mod cascade;
pub mod cli;
pub mod error;
pub mod history;
pub mod io;
pub mod norms;
pub mod quad;
pub mod report;
pub mod scenario;
pub mod suite;
pub mod vlasov;
pub mod volterra;

pub use error::{LabError, Result};
pub use num_complex::Complex64 as C64;
