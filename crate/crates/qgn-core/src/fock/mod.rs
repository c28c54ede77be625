//! Exact full-Hilbert-space machinery: basis enumeration, sparse operators
//! with explicit fermion sign conventions, model Hamiltonians, and bitstring
//! actions reused by the network constructors.
//!
//! Conventions, fixed once here and relied on everywhere else:
//!
//! - Occupation bitstrings: bit `i` of a `u64` is the occupation of site `i`.
//!   Basis states are sorted ascending as integers.
//! - Fermion kets are ordered `|n_0 n_1 ...> = (c†_0)^{n_0} (c†_1)^{n_1} ... |0>`,
//!   so annihilating site `i` picks up `(-1)^(sum of occupations below i)`.
//! - Spin-1/2: bit value 0 is "up" (`sigma^z` eigenvalue +1); `sigma^x` flips
//!   the bit. A second, x-diagonal convention for quench states lives in the
//!   `*_xbasis` actions: there bit 0 is the +1 eigenstate of `sigma^x`.

mod evolve;

pub use evolve::{
    correlation_matrix, exact_evolve, exact_evolve_dense, exact_evolve_krylov,
    free_fermion_evolve, hopping_matrix, CorrelationMatrix, KrylovConfig,
};

use crate::linalg::{CMat, CVec, LinalgError};
use num_complex::Complex64 as C64;
use std::collections::HashMap;
use thiserror::Error;

pub type FullState = CVec;

#[derive(Debug, Error)]
pub enum FockError {
    #[error("particle-number sector is only defined for fermion bases")]
    SectorForSpin,
    #[error("sector {sector} out of range for {n_sites} sites")]
    InvalidSector { sector: usize, n_sites: usize },
    #[error("basis of {n_sites} sites exceeds the supported maximum of 28")]
    TooManySites { n_sites: usize },
    #[error("site {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },
    #[error("operation requires a {expected} basis")]
    KindMismatch { expected: &'static str },
    #[error("operator is not Hermitian (residual {residual:.3e})")]
    NotHermitian { residual: f64 },
    #[error("subspace propagation failed to reach tolerance {tol:.1e} (smallest substep {substep:.3e})")]
    NoConvergence { tol: f64, substep: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("action produced state {state:#x} outside the basis")]
    StateOutsideBasis { state: u64 },
    #[error("model Hamiltonians require two-site bond patches")]
    NeedsBondPatches,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Spin,
    Fermion,
}

/// Enumerated many-body basis of occupation bitstrings.
#[derive(Debug, Clone)]
pub struct Basis {
    kind: BasisKind,
    n_sites: usize,
    sector: Option<usize>,
    states: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl Basis {
    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn sector(&self) -> Option<usize> {
        self.sector
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn state(&self, idx: usize) -> u64 {
        self.states[idx]
    }

    pub fn index_of(&self, state: u64) -> Option<usize> {
        self.index.get(&state).copied()
    }

    /// One-hot state vector for a basis bitstring.
    pub fn one_hot(&self, state: u64) -> Result<CVec, FockError> {
        let idx = self.index_of(state).ok_or(FockError::StateOutsideBasis { state })?;
        let mut v = CVec::zeros(self.len());
        v[idx] = C64::new(1.0, 0.0);
        Ok(v)
    }
}

/// Enumerates all `n`-bit strings with exactly `k` bits set, ascending.
fn sector_states(n: usize, k: usize) -> Vec<u64> {
    if k == 0 {
        return vec![0];
    }
    if k > n {
        return Vec::new();
    }
    let limit = 1u64 << n;
    let mut out = Vec::new();
    let mut s = (1u64 << k) - 1;
    while s < limit {
        out.push(s);
        let c = s & s.wrapping_neg();
        let r = s + c;
        s = (((r ^ s) >> 2) / c) | r;
    }
    out
}

pub fn build_basis(kind: BasisKind, n_sites: usize, sector: Option<usize>) -> Result<Basis, FockError> {
    if n_sites == 0 || n_sites > 28 {
        return Err(FockError::TooManySites { n_sites });
    }
    let states = match (kind, sector) {
        (BasisKind::Spin, Some(_)) => return Err(FockError::SectorForSpin),
        (BasisKind::Spin, None) | (BasisKind::Fermion, None) => (0..(1u64 << n_sites)).collect(),
        (BasisKind::Fermion, Some(k)) => {
            if k > n_sites {
                return Err(FockError::InvalidSector { sector: k, n_sites });
            }
            sector_states(n_sites, k)
        }
    };
    let index = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    Ok(Basis { kind, n_sites, sector, states, index })
}

/// Parity sign from occupations strictly below `site`.
fn jw_sign(state: u64, site: usize) -> f64 {
    let below = state & ((1u64 << site) - 1);
    if below.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// c_site |state>, or None when the site is empty.
pub fn jw_annihilate(state: u64, site: usize) -> Option<(u64, f64)> {
    let bit = 1u64 << site;
    if state & bit == 0 {
        None
    } else {
        Some((state & !bit, jw_sign(state, site)))
    }
}

/// c†_site |state>, or None when the site is occupied.
pub fn jw_create(state: u64, site: usize) -> Option<(u64, f64)> {
    let bit = 1u64 << site;
    if state & bit != 0 {
        None
    } else {
        Some((state | bit, jw_sign(state, site)))
    }
}

/// Compressed-sparse-row complex operator between two enumerated bases.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<C64>,
    hermitian: bool,
}

impl SparseOperator {
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, C64)>,
    ) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            if prev == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                prev = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        SparseOperator { nrows, ncols, indptr, indices, data, hermitian: false }
    }

    pub fn identity(n: usize) -> Self {
        let triplets = (0..n).map(|i| (i, i, C64::new(1.0, 0.0))).collect();
        let mut op = Self::from_triplets(n, n, triplets);
        op.hermitian = true;
        op
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn hermitian(&self) -> bool {
        self.hermitian
    }

    /// Marks the operator Hermitian after verifying A = A†.
    pub fn into_hermitian_checked(mut self, tol: f64) -> Result<Self, FockError> {
        let residual = self.hermiticity_residual();
        if residual > tol {
            return Err(FockError::NotHermitian { residual });
        }
        self.hermitian = true;
        Ok(self)
    }

    /// max |A_rc - conj(A_cr)|; exact (walks all stored entries both ways).
    pub fn hermiticity_residual(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let dag = self.dagger();
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            let a = &self.indices[self.indptr[r]..self.indptr[r + 1]];
            let av = &self.data[self.indptr[r]..self.indptr[r + 1]];
            let b = &dag.indices[dag.indptr[r]..dag.indptr[r + 1]];
            let bv = &dag.data[dag.indptr[r]..dag.indptr[r + 1]];
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                if j >= b.len() || (i < a.len() && a[i] < b[j]) {
                    worst = worst.max(av[i].norm());
                    i += 1;
                } else if i >= a.len() || b[j] < a[i] {
                    worst = worst.max(bv[j].norm());
                    j += 1;
                } else {
                    worst = worst.max((av[i] - bv[j]).norm());
                    i += 1;
                    j += 1;
                }
            }
        }
        worst
    }

    pub fn apply(&self, v: &CVec) -> CVec {
        assert_eq!(v.len(), self.ncols, "operator/state dimension mismatch");
        let mut out = CVec::zeros(self.nrows);
        for r in 0..self.nrows {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * v[self.indices[k]];
            }
            out[r] = acc;
        }
        out
    }

    /// A† v without materializing the adjoint.
    pub fn apply_dagger(&self, v: &CVec) -> CVec {
        assert_eq!(v.len(), self.nrows, "operator/state dimension mismatch");
        let mut out = CVec::zeros(self.ncols);
        for r in 0..self.nrows {
            let vr = v[r];
            for k in self.indptr[r]..self.indptr[r + 1] {
                out[self.indices[k]] += self.data[k].conj() * vr;
            }
        }
        out
    }

    pub fn dagger(&self) -> SparseOperator {
        let triplets = self
            .iter_triplets()
            .map(|(r, c, v)| (c, r, v.conj()))
            .collect();
        let mut out = Self::from_triplets(self.ncols, self.nrows, triplets);
        out.hermitian = self.hermitian;
        out
    }

    /// Stored entry at (row, col), or zero.
    pub fn get(&self, row: usize, col: usize) -> C64 {
        let cols = &self.indices[self.indptr[row]..self.indptr[row + 1]];
        match cols.binary_search(&col) {
            Ok(k) => self.data[self.indptr[row] + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn iter_triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.data[k]))
        })
    }

    pub fn add(&self, other: &SparseOperator) -> SparseOperator {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut triplets: Vec<(usize, usize, C64)> = self.iter_triplets().collect();
        triplets.extend(other.iter_triplets());
        let mut out = Self::from_triplets(self.nrows, self.ncols, triplets);
        out.hermitian = self.hermitian && other.hermitian;
        out
    }

    pub fn scale(&self, factor: C64) -> SparseOperator {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= factor;
        }
        out.hermitian = self.hermitian && factor.im == 0.0;
        out
    }

    /// Sparse-sparse product self * other.
    pub fn matmul(&self, other: &SparseOperator) -> SparseOperator {
        assert_eq!(self.ncols, other.nrows, "operator product dimension mismatch");
        let mut triplets = Vec::new();
        for r in 0..self.nrows {
            let mut row: std::collections::BTreeMap<usize, C64> = std::collections::BTreeMap::new();
            for k in self.indptr[r]..self.indptr[r + 1] {
                let mid = self.indices[k];
                let left = self.data[k];
                for k2 in other.indptr[mid]..other.indptr[mid + 1] {
                    *row.entry(other.indices[k2]).or_insert(C64::new(0.0, 0.0)) +=
                        left * other.data[k2];
                }
            }
            triplets.extend(row.into_iter().map(|(c, v)| (r, c, v)));
        }
        Self::from_triplets(self.nrows, other.ncols, triplets)
    }

    pub fn to_dense(&self) -> CMat {
        let mut out = CMat::zeros((self.nrows, self.ncols));
        for (r, c, v) in self.iter_triplets() {
            out[(r, c)] += v;
        }
        out
    }

    /// <v|A|v>.
    pub fn expectation(&self, v: &CVec) -> C64 {
        let av = self.apply(v);
        v.iter().zip(av.iter()).map(|(a, b)| a.conj() * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FermionMode {
    Create,
    Annihilate,
}

/// Fermion ladder operator with the Jordan-Wigner string convention above.
///
/// On a fixed-number sector the operator is rectangular, mapping into the
/// adjacent sector (an empty target sector yields a 0-row operator).
pub fn fermion_op(basis: &Basis, site: usize, mode: FermionMode) -> Result<SparseOperator, FockError> {
    if basis.kind != BasisKind::Fermion {
        return Err(FockError::KindMismatch { expected: "fermion" });
    }
    if site >= basis.n_sites {
        return Err(FockError::SiteOutOfRange { site, n_sites: basis.n_sites });
    }
    let target = match basis.sector {
        None => basis.clone(),
        Some(k) => {
            let tk = match mode {
                FermionMode::Annihilate => k.checked_sub(1),
                FermionMode::Create => {
                    if k + 1 > basis.n_sites {
                        None
                    } else {
                        Some(k + 1)
                    }
                }
            };
            match tk {
                Some(tk) => build_basis(BasisKind::Fermion, basis.n_sites, Some(tk))?,
                None => Basis {
                    kind: BasisKind::Fermion,
                    n_sites: basis.n_sites,
                    sector: None,
                    states: Vec::new(),
                    index: HashMap::new(),
                },
            }
        }
    };
    let mut triplets = Vec::new();
    for (col, &s) in basis.states.iter().enumerate() {
        let hit = match mode {
            FermionMode::Annihilate => jw_annihilate(s, site),
            FermionMode::Create => jw_create(s, site),
        };
        if let Some((s2, sign)) = hit {
            if let Some(row) = target.index_of(s2) {
                triplets.push((row, col, C64::new(sign, 0.0)));
            }
        }
    }
    Ok(SparseOperator::from_triplets(target.len(), basis.len(), triplets))
}

/// n_site = c†_site c_site (diagonal).
pub fn number_op(basis: &Basis, site: usize) -> Result<SparseOperator, FockError> {
    if basis.kind != BasisKind::Fermion {
        return Err(FockError::KindMismatch { expected: "fermion" });
    }
    if site >= basis.n_sites {
        return Err(FockError::SiteOutOfRange { site, n_sites: basis.n_sites });
    }
    let bit = 1u64 << site;
    let triplets = basis
        .states
        .iter()
        .enumerate()
        .filter(|(_, &s)| s & bit != 0)
        .map(|(i, _)| (i, i, C64::new(1.0, 0.0)))
        .collect();
    let mut op = SparseOperator::from_triplets(basis.len(), basis.len(), triplets);
    op.hermitian = true;
    Ok(op)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

/// Pauli operator on a spin basis (z-diagonal convention; bit 0 is "up").
pub fn pauli_op(basis: &Basis, site: usize, axis: PauliAxis) -> Result<SparseOperator, FockError> {
    if basis.kind != BasisKind::Spin {
        return Err(FockError::KindMismatch { expected: "spin" });
    }
    if site >= basis.n_sites {
        return Err(FockError::SiteOutOfRange { site, n_sites: basis.n_sites });
    }
    let bit = 1u64 << site;
    let mut triplets = Vec::with_capacity(basis.len());
    for (col, &s) in basis.states.iter().enumerate() {
        match axis {
            PauliAxis::Z => {
                let sign = if s & bit == 0 { 1.0 } else { -1.0 };
                triplets.push((col, col, C64::new(sign, 0.0)));
            }
            PauliAxis::X => {
                let row = basis.index_of(s ^ bit).expect("flip stays in full spin basis");
                triplets.push((row, col, C64::new(1.0, 0.0)));
            }
            PauliAxis::Y => {
                let row = basis.index_of(s ^ bit).expect("flip stays in full spin basis");
                let amp = if s & bit == 0 { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) };
                triplets.push((row, col, amp));
            }
        }
    }
    let mut op = SparseOperator::from_triplets(basis.len(), basis.len(), triplets);
    op.hermitian = true;
    Ok(op)
}

/// A patch- or site-local operator expressed by its action on occupation
/// bitstrings; the shared currency between the exact oracle and the
/// truncated-network constructors.
pub struct LocalAction {
    name: String,
    branches: Box<dyn Fn(u64) -> Vec<(u64, C64)> + Send + Sync>,
}

impl std::fmt::Debug for LocalAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalAction").field("name", &self.name).finish()
    }
}

impl LocalAction {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(u64) -> Vec<(u64, C64)> + Send + Sync + 'static,
    ) -> Self {
        LocalAction { name: name.into(), branches: Box::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn apply_bits(&self, state: u64) -> Vec<(u64, C64)> {
        (self.branches)(state)
    }

    /// Materializes the action as a square sparse operator on `basis`.
    pub fn to_sparse(&self, basis: &Basis) -> Result<SparseOperator, FockError> {
        let mut triplets = Vec::new();
        for (col, &s) in basis.states().iter().enumerate() {
            for (s2, amp) in self.apply_bits(s) {
                if amp == C64::new(0.0, 0.0) {
                    continue;
                }
                let row = basis.index_of(s2).ok_or(FockError::StateOutsideBasis { state: s2 })?;
                triplets.push((row, col, amp));
            }
        }
        Ok(SparseOperator::from_triplets(basis.len(), basis.len(), triplets))
    }
}

/// Canonical name for a site-resolved observable ("n3", "sx0", ...).
pub fn site_op_name(base: &str, site: usize) -> String {
    format!("{base}{site}")
}

/// Fermion bond term -c†_i c_j - c†_j c_i + v n_i n_j.
pub fn fermi_patch_action(i: usize, j: usize, v: f64) -> LocalAction {
    LocalAction::new("H", move |s| {
        let mut out = Vec::with_capacity(2);
        let (bi, bj) = (1u64 << i, 1u64 << j);
        if v != 0.0 && s & bi != 0 && s & bj != 0 {
            out.push((s, C64::new(v, 0.0)));
        }
        // hop j -> i
        if let Some((s1, sign1)) = jw_annihilate(s, j) {
            if let Some((s2, sign2)) = jw_create(s1, i) {
                out.push((s2, C64::new(-sign1 * sign2, 0.0)));
            }
        }
        // hop i -> j
        if let Some((s1, sign1)) = jw_annihilate(s, i) {
            if let Some((s2, sign2)) = jw_create(s1, j) {
                out.push((s2, C64::new(-sign1 * sign2, 0.0)));
            }
        }
        out
    })
}

/// Occupation number of one site (diagonal).
pub fn number_action(site: usize) -> LocalAction {
    let name = site_op_name("n", site);
    LocalAction::new(name, move |s| {
        if s & (1u64 << site) != 0 {
            vec![(s, C64::new(1.0, 0.0))]
        } else {
            Vec::new()
        }
    })
}

/// c_site with the Jordan-Wigner string.
pub fn annihilate_action(site: usize) -> LocalAction {
    let name = site_op_name("c", site);
    LocalAction::new(name, move |s| {
        jw_annihilate(s, site).map(|(s2, sign)| (s2, C64::new(sign, 0.0))).into_iter().collect()
    })
}

/// c†_site with the Jordan-Wigner string.
pub fn create_action(site: usize) -> LocalAction {
    let name = site_op_name("cdag", site);
    LocalAction::new(name, move |s| {
        jw_create(s, site).map(|(s2, sign)| (s2, C64::new(sign, 0.0))).into_iter().collect()
    })
}

/// Spin bond term -sigma^z_i sigma^z_j - f (sigma^x_i + sigma^x_j), written in
/// the x-diagonal basis (bit 0 = sigma^x eigenvalue +1), where the exchange
/// part flips both bits and the field part is diagonal.
pub fn ising_patch_action_xbasis(i: usize, j: usize, field_per_site: f64) -> LocalAction {
    LocalAction::new("H", move |s| {
        let (bi, bj) = (1u64 << i, 1u64 << j);
        let xi = if s & bi == 0 { 1.0 } else { -1.0 };
        let xj = if s & bj == 0 { 1.0 } else { -1.0 };
        vec![
            (s, C64::new(-field_per_site * (xi + xj), 0.0)),
            (s ^ bi ^ bj, C64::new(-1.0, 0.0)),
        ]
    })
}

/// sigma^x of one site in the x-diagonal basis (diagonal +-1).
pub fn pauli_x_action_xbasis(site: usize) -> LocalAction {
    let name = site_op_name("sx", site);
    LocalAction::new(name, move |s| {
        let val = if s & (1u64 << site) == 0 { 1.0 } else { -1.0 };
        vec![(s, C64::new(val, 0.0))]
    })
}

/// sigma^y of one site in the x-diagonal basis (bit flip with -+i phase).
pub fn pauli_y_action_xbasis(site: usize) -> LocalAction {
    let name = site_op_name("sy", site);
    LocalAction::new(name, move |s| {
        let bit = 1u64 << site;
        let amp = if s & bit == 0 { C64::new(0.0, -1.0) } else { C64::new(0.0, 1.0) };
        vec![(s ^ bit, amp)]
    })
}

/// sigma^z of one site in the x-diagonal basis (pure bit flip).
pub fn pauli_z_action_xbasis(site: usize) -> LocalAction {
    let name = site_op_name("sz", site);
    LocalAction::new(name, move |s| vec![(s ^ (1u64 << site), C64::new(1.0, 0.0))])
}

/// Lattice models with their bond-term parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    /// Nearest-neighbor hopping with repulsion strength `v`.
    Fermi { v: f64 },
    /// Transverse-field exchange with field strength `h`.
    Ising { h: f64 },
}

impl Model {
    /// Per-site transverse-field share such that the bond terms sum to the
    /// full Hamiltonian on a periodic hypercubic lattice of `ndims` axes
    /// (each site belongs to 2*ndims bonds).
    pub fn ising_field_share(h: f64, ndims: usize) -> f64 {
        h / (2.0 * ndims as f64)
    }

    /// The bitstring action of one bond term, in the representation the
    /// quench machinery uses (fermions: occupation basis; spins: x-diagonal).
    pub fn patch_action(&self, i: usize, j: usize, ndims: usize) -> LocalAction {
        match *self {
            Model::Fermi { v } => fermi_patch_action(i, j, v),
            Model::Ising { h } => ising_patch_action_xbasis(i, j, Self::ising_field_share(h, ndims)),
        }
    }
}

/// One Hermitian bond operator per patch, aligned with `graph.patches()`.
/// Summing them reproduces the full lattice Hamiltonian.
///
/// Spins are materialized in the standard z-diagonal convention here (the
/// x-diagonal form used by the quench constructors is related by a fixed
/// one-site rotation and carries identical spectra).
pub fn build_local_hamiltonians(
    model: Model,
    graph: &crate::lattice::PatchGraph,
    basis: &Basis,
) -> Result<Vec<SparseOperator>, FockError> {
    if graph.patches().iter().any(|p| p.len() != 2) {
        return Err(FockError::NeedsBondPatches);
    }
    if basis.n_sites() != graph.n_sites() {
        return Err(FockError::DimensionMismatch(format!(
            "basis covers {} sites, patch graph {}",
            basis.n_sites(),
            graph.n_sites()
        )));
    }
    let mut out = Vec::with_capacity(graph.n_patches());
    match model {
        Model::Fermi { v } => {
            if basis.kind() != BasisKind::Fermion {
                return Err(FockError::KindMismatch { expected: "fermion" });
            }
            for patch in graph.patches() {
                let action = fermi_patch_action(patch[0], patch[1], v);
                let op = action.to_sparse(basis)?.into_hermitian_checked(0.0)?;
                out.push(op);
            }
        }
        Model::Ising { h } => {
            if basis.kind() != BasisKind::Spin {
                return Err(FockError::KindMismatch { expected: "spin" });
            }
            let f = Model::ising_field_share(h, graph.ndims());
            for patch in graph.patches() {
                let (i, j) = (patch[0], patch[1]);
                let (bi, bj) = (1u64 << i, 1u64 << j);
                let mut triplets = Vec::with_capacity(3 * basis.len());
                for (col, &s) in basis.states().iter().enumerate() {
                    let zi = if s & bi == 0 { 1.0 } else { -1.0 };
                    let zj = if s & bj == 0 { 1.0 } else { -1.0 };
                    triplets.push((col, col, C64::new(-zi * zj, 0.0)));
                    let row_i = basis.index_of(s ^ bi).expect("flip stays in spin basis");
                    triplets.push((row_i, col, C64::new(-f, 0.0)));
                    let row_j = basis.index_of(s ^ bj).expect("flip stays in spin basis");
                    triplets.push((row_j, col, C64::new(-f, 0.0)));
                }
                let mut op = SparseOperator::from_triplets(basis.len(), basis.len(), triplets);
                op.hermitian = true;
                out.push(op);
            }
        }
    }
    Ok(out)
}

/// Sum of the per-patch bond operators.
pub fn total_hamiltonian(local: &[SparseOperator]) -> SparseOperator {
    assert!(!local.is_empty());
    let mut acc = local[0].clone();
    for op in &local[1..] {
        acc = acc.add(op);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_nn_patch_graph, LatticeSpec};
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn basis_counts_match_binomials_and_powers() {
        assert_eq!(build_basis(BasisKind::Fermion, 4, Some(2)).unwrap().len(), 6);
        assert_eq!(build_basis(BasisKind::Spin, 4, None).unwrap().len(), 16);
        assert_eq!(build_basis(BasisKind::Fermion, 22, Some(11)).unwrap().len(), 705432);
    }

    #[test]
    fn basis_states_sorted_and_lookup_bijective() {
        let b = build_basis(BasisKind::Fermion, 6, Some(3)).unwrap();
        for w in b.states().windows(2) {
            assert!(w[0] < w[1]);
        }
        for (i, &s) in b.states().iter().enumerate() {
            assert_eq!(b.index_of(s), Some(i));
        }
        assert_eq!(b.index_of(0b111000), Some(b.len() - 1));
    }

    #[test]
    fn sector_for_spin_rejected() {
        assert!(matches!(
            build_basis(BasisKind::Spin, 3, Some(1)),
            Err(FockError::SectorForSpin)
        ));
    }

    #[test]
    fn annihilate_site1_on_11_gives_minus_10() {
        // |11> has both sites occupied; removing site 1 crosses site 0's fermion.
        let b2 = build_basis(BasisKind::Fermion, 2, Some(2)).unwrap();
        let c1 = fermion_op(&b2, 1, FermionMode::Annihilate).unwrap();
        let v = b2.one_hot(0b11).unwrap();
        let out = c1.apply(&v);
        let b1 = build_basis(BasisKind::Fermion, 2, Some(1)).unwrap();
        let idx10 = b1.index_of(0b01).unwrap(); // |10> = site 0 occupied
        assert_abs_diff_eq!(out[idx10].re, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn create_site0_on_01_gives_plus_11() {
        let b1 = build_basis(BasisKind::Fermion, 2, Some(1)).unwrap();
        let cdag0 = fermion_op(&b1, 0, FermionMode::Create).unwrap();
        let v = b1.one_hot(0b10).unwrap(); // |01> = site 1 occupied
        let out = cdag0.apply(&v);
        let b2 = build_basis(BasisKind::Fermion, 2, Some(2)).unwrap();
        assert_abs_diff_eq!(out[b2.index_of(0b11).unwrap()].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn anticommutator_c0_cdag0_is_identity() {
        let b = build_basis(BasisKind::Fermion, 2, None).unwrap();
        let a = fermion_op(&b, 0, FermionMode::Annihilate).unwrap();
        let ad = fermion_op(&b, 0, FermionMode::Create).unwrap();
        let anti = a.matmul(&ad).add(&ad.matmul(&a));
        let diff = anti.add(&SparseOperator::identity(b.len()).scale(c(-1.0, 0.0)));
        assert!(diff.to_dense().iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn all_pairwise_anticommutators_on_six_sites() {
        let b = build_basis(BasisKind::Fermion, 6, None).unwrap();
        let ops: Vec<_> = (0..6)
            .map(|i| fermion_op(&b, i, FermionMode::Annihilate).unwrap())
            .collect();
        let dags: Vec<_> = (0..6)
            .map(|i| fermion_op(&b, i, FermionMode::Create).unwrap())
            .collect();
        for i in 0..6 {
            for j in 0..6 {
                let cc = ops[i].matmul(&ops[j]).add(&ops[j].matmul(&ops[i]));
                assert!(cc.to_dense().iter().all(|z| z.norm() < 1e-14), "{{c_{i}, c_{j}}} != 0");
                let ccd = ops[i].matmul(&dags[j]).add(&dags[j].matmul(&ops[i]));
                let expect = if i == j { 1.0 } else { 0.0 };
                let dense = ccd.to_dense();
                for r in 0..dense.nrows() {
                    for s in 0..dense.ncols() {
                        let want = if r == s { expect } else { 0.0 };
                        assert!((dense[(r, s)] - c(want, 0.0)).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn pauli_examples_and_algebra() {
        let b1 = build_basis(BasisKind::Spin, 1, None).unwrap();
        let z = pauli_op(&b1, 0, PauliAxis::Z).unwrap();
        let up = b1.one_hot(0).unwrap();
        assert_abs_diff_eq!(z.apply(&up)[0].re, 1.0, epsilon = 1e-15);

        let b2 = build_basis(BasisKind::Spin, 2, None).unwrap();
        let x1 = pauli_op(&b2, 1, PauliAxis::X).unwrap();
        // |up down> = bit of site1 set -> state 0b10
        let v = b2.one_hot(0b10).unwrap();
        let out = x1.apply(&v);
        assert_abs_diff_eq!(out[b2.index_of(0b00).unwrap()].re, 1.0, epsilon = 1e-15);

        let x = pauli_op(&b1, 0, PauliAxis::X).unwrap();
        let y = pauli_op(&b1, 0, PauliAxis::Y).unwrap();
        let xy = x.matmul(&y).to_dense();
        let z_dense = z.to_dense();
        for r in 0..2 {
            for s in 0..2 {
                assert!((xy[(r, s)] - c(0.0, 1.0) * z_dense[(r, s)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn fermi_bond_matrix_on_one_particle_pair() {
        let lat = LatticeSpec::uniform(vec![2], false).unwrap();
        let g = build_nn_patch_graph(&lat).unwrap();
        let b = build_basis(BasisKind::Fermion, 2, Some(1)).unwrap();
        let h = build_local_hamiltonians(Model::Fermi { v: 0.0 }, &g, &b).unwrap();
        assert_eq!(h.len(), 1);
        let dense = h[0].to_dense();
        // basis {|10>, |01>} (integers 1, 2)
        assert_abs_diff_eq!(dense[(0, 0)].re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dense[(0, 1)].re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dense[(1, 0)].re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dense[(1, 1)].re, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn fermi_bond_on_doubly_occupied_pair_is_pure_interaction() {
        let lat = LatticeSpec::uniform(vec![2], false).unwrap();
        let g = build_nn_patch_graph(&lat).unwrap();
        let b = build_basis(BasisKind::Fermion, 2, Some(2)).unwrap();
        let h = build_local_hamiltonians(Model::Fermi { v: 1.0 }, &g, &b).unwrap();
        let dense = h[0].to_dense();
        assert_eq!(dense.dim(), (1, 1));
        assert_abs_diff_eq!(dense[(0, 0)].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ising_bond_terms_sum_to_full_hamiltonian() {
        let lat = LatticeSpec::uniform(vec![3, 3], true).unwrap();
        let g = build_nn_patch_graph(&lat).unwrap();
        let b = build_basis(BasisKind::Spin, 9, None).unwrap();
        let h = 3.0;
        let local = build_local_hamiltonians(Model::Ising { h }, &g, &b).unwrap();
        let total = total_hamiltonian(&local);
        // Direct assembly: -sum_bonds z_i z_j - h sum_i x_i
        let mut direct = pauli_op(&b, 0, PauliAxis::X).unwrap().scale(c(-h, 0.0));
        for i in 1..9 {
            direct = direct.add(&pauli_op(&b, i, PauliAxis::X).unwrap().scale(c(-h, 0.0)));
        }
        for patch in g.patches() {
            let zz = pauli_op(&b, patch[0], PauliAxis::Z)
                .unwrap()
                .matmul(&pauli_op(&b, patch[1], PauliAxis::Z).unwrap());
            direct = direct.add(&zz.scale(c(-1.0, 0.0)));
        }
        let diff = total.add(&direct.scale(c(-1.0, 0.0)));
        assert!(diff.to_dense().iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn patch_actions_match_sparse_hamiltonians_for_fermi() {
        let lat = LatticeSpec::uniform(vec![4], true).unwrap();
        let g = build_nn_patch_graph(&lat).unwrap();
        let b = build_basis(BasisKind::Fermion, 4, Some(2)).unwrap();
        let built = build_local_hamiltonians(Model::Fermi { v: 0.7 }, &g, &b).unwrap();
        for (patch, op) in g.patches().iter().zip(&built) {
            let action = Model::Fermi { v: 0.7 }.patch_action(patch[0], patch[1], g.ndims());
            let from_action = action.to_sparse(&b).unwrap();
            let diff = op.add(&from_action.scale(c(-1.0, 0.0)));
            assert!(diff.to_dense().iter().all(|z| z.norm() < 1e-15));
        }
    }

    #[test]
    fn xbasis_pauli_actions_obey_onsite_algebra() {
        // sigma^x sigma^y = i sigma^z on one site, in the x-diagonal encoding.
        let b = build_basis(BasisKind::Spin, 1, None).unwrap();
        let x = pauli_x_action_xbasis(0).to_sparse(&b).unwrap();
        let y = pauli_y_action_xbasis(0).to_sparse(&b).unwrap();
        let z = pauli_z_action_xbasis(0).to_sparse(&b).unwrap();
        let xy = x.matmul(&y).to_dense();
        let zd = z.to_dense();
        for r in 0..2 {
            for s in 0..2 {
                assert!((xy[(r, s)] - c(0.0, 1.0) * zd[(r, s)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn hermiticity_check_flags_asymmetry() {
        let bad = SparseOperator::from_triplets(2, 2, vec![(0, 1, c(1.0, 0.0))]);
        assert!(bad.hermiticity_residual() > 0.9);
        assert!(bad.into_hermitian_checked(1e-12).is_err());
    }
}
