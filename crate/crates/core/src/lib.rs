//! Lieb-Robinson bounds for spin-boson lattice models.
//!
//! The crate is organised bottom-up:
//!
//! - [`lattice`]: idealised lattice geometries and the geometric factor a0.
//! - [`crystal`]: trapped-ion equilibrium, Coulomb couplings, the quadratic
//!   matrix Q, normal modes and effective spin-spin couplings.
//! - [`propagator`]: the free-boson symplectic propagator W(t, t0).
//! - [`bounds`]: every Lieb-Robinson bound as an explicit function of
//!   distance and time, plus cone-front extraction.
//! - [`exactsim`]: exact truncated-Fock dynamics for N <= 3 used as the
//!   brute-force oracle.

pub mod bounds;
pub mod constants;
pub mod crystal;
pub mod error;
pub mod exactsim;
pub mod lattice;
pub mod linalg;
pub mod propagator;

pub use error::{Error, Result};
