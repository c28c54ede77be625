//! Constructors that build gauge networks from concrete wavefunctions.
//!
//! Four families live here:
//! - [`images`]: image lists for operator strings (with a movable split
//!   point) and for k-point product families, fed into truncation maps.
//! - [`quench`]: basis-state sets grown by closing under patch bond terms
//!   and merging neighbor snapshots, for quench initial networks.
//! - [`analytic`]: closed-form networks (coherent products, determinant
//!   states, purified mixtures, concentric singlet pairs).
//! - [`mps`]: matrix-product states, their simultaneous canonical form, and
//!   the exact network a canonical MPS induces.

pub mod analytic;
pub mod images;
pub mod mps;
pub mod quench;

use thiserror::Error;

use crate::fock::FockError;
use crate::lattice::LatticeError;
use crate::linalg::LinalgError;
use crate::network::NetworkError;

#[derive(Debug, Error)]
pub enum ConstructionError {
    #[error("operator string is empty")]
    EmptyOps,
    #[error("split point 2*m0 = {half} outside 1..={max} for a string of length {len}")]
    BadMidpoint { half: usize, len: usize, max: usize },
    #[error(
        "string entries {pos} and {next} sit on non-adjacent patches {i} and {j}; \
         insert explicit identity entries along a connecting path"
    )]
    NonAdjacent { pos: usize, next: usize, i: usize, j: usize },
    #[error("patch index {patch} out of range for {n} patches")]
    PatchOutOfRange { patch: usize, n: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("image family would hold {total} vectors, over the cap of {cap}")]
    TooManyImages { total: usize, cap: usize },
    #[error("orbital rows are not orthonormal (residual {residual:.3e})")]
    NotOrthonormal { residual: f64 },
    #[error("pair state needs an even site count, got {n}")]
    OddSites { n: usize },
    #[error("observable {base:?} is not available for this model")]
    UnsupportedObservable { base: String },
    #[error("quench growth needs two-site bond patches, found a patch of {len} sites")]
    NeedsBondPatches { len: usize },
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub use analytic::{qgn_coherent, qgn_mixed_aligned, qgn_rainbow, qgn_slater, slater_state};
pub use images::{default_half_midpoint, images_for_k_point, images_for_string};
pub use mps::{load_mps, mps_to_qgn, read_mps, save_mps, write_mps, MpsState};
pub use quench::{qgn_from_quench, quench_basis_sets, quench_network_automorphisms};
