//! Simulation engine for gauge networks: truncated-Hilbert-space states made of
//! per-patch wavefunctions joined by connection matrices.
//!
//! The crate is organized bottom-up:
//!
//! - [`lattice`]: hypercubic lattices, patch covers, and paths between patches.
//! - [`fock`]: exact full-Hilbert-space machinery used as oracle (bases, sparse
//!   operators, Krylov propagation, free-fermion correlation matrices).
//! - [`network`]: the gauge-network data structure and its algebra (truncation
//!   maps, expectation strings, gauge transformations, consistency residuals,
//!   serialization).
//! - [`construction`]: builders that produce networks from wavefunctions,
//!   quench protocols, analytic states, and matrix product states.
//! - [`dynamics`]: effective Hamiltonians and the norm- and
//!   consistency-preserving Runge-Kutta integrator.

pub mod construction;
pub mod dynamics;
pub mod fock;
pub mod lattice;
pub mod linalg;
pub mod network;

pub use linalg::{CMat, CVec};
