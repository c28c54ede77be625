//! Closed-form networks built without any time evolution.
//!
//! - Coherent products: one-dimensional patches whose operator tables hold
//!   the coherent amplitudes directly, so no ambient space is needed at all.
//! - Determinant states: every patch shares the basis {psi, psi_a}, where
//!   psi_a drops orbital a. All connections are the identity and every
//!   quadratic correlation comes out exact.
//! - Purified up/down mixture: two sites plus one ancilla qubit that the
//!   patches never cover; tracing it out leaves the classical mixture.
//! - Concentric singlet pairs: sites i and n-1-i form singlets; a 1-point
//!   family over all single-site Paulis captures every pair correlation.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::fock::{
    build_basis, fermion_op, number_op, pauli_op, site_op_name, Basis, BasisKind, FermionMode,
    FockError, PauliAxis, SparseOperator,
};
use crate::lattice::{build_single_site_patch_graph, LatticeSpec, PatchGraph, PathStyle};
use crate::linalg::{dag, max_abs, CMat, CVec};
use crate::network::{
    qgn_from_truncation, PatchOpSource, Qgn, TruncationMap, TruncationMapSet,
};

use super::images::images_for_k_point;
use super::ConstructionError;

fn det_small(m: &CMat) -> C64 {
    let n = m.nrows();
    let mut a = m.to_owned();
    let mut det = C64::new(1.0, 0.0);
    for k in 0..n {
        let mut piv = k;
        let mut best = a[(k, k)].norm();
        for r in k + 1..n {
            let v = a[(r, k)].norm();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return C64::new(0.0, 0.0);
        }
        if piv != k {
            for c in 0..n {
                a.swap((piv, c), (k, c));
            }
            det = -det;
        }
        let akk = a[(k, k)];
        det *= akk;
        for r in k + 1..n {
            let f = a[(r, k)] / akk;
            for c in k + 1..n {
                let akc = a[(k, c)];
                a[(r, c)] -= f * akc;
            }
        }
    }
    det
}

/// Amplitudes of the determinant state with orbital rows `phi` on `basis`:
/// the coefficient of each occupation pattern is the determinant of the
/// orbital columns it selects (zero off the particle-number sector).
pub fn slater_state(basis: &Basis, phi: &CMat) -> Result<CVec, ConstructionError> {
    if basis.kind() != BasisKind::Fermion {
        return Err(FockError::KindMismatch { expected: "fermion" }.into());
    }
    let n = basis.n_sites();
    if phi.ncols() != n {
        return Err(ConstructionError::Dimension(format!(
            "orbital matrix has {} columns, lattice has {n} sites",
            phi.ncols()
        )));
    }
    let nf = phi.nrows();
    let mut out = CVec::zeros(basis.len());
    let mut cols: Vec<usize> = Vec::with_capacity(nf);
    let mut sub = CMat::zeros((nf, nf));
    for (idx, &s) in basis.states().iter().enumerate() {
        if s.count_ones() as usize != nf {
            continue;
        }
        cols.clear();
        for site in 0..n {
            if s & (1u64 << site) != 0 {
                cols.push(site);
            }
        }
        for (c, &site) in cols.iter().enumerate() {
            for r in 0..nf {
                sub[(r, c)] = phi[(r, site)];
            }
        }
        out[idx] = det_small(&sub);
    }
    Ok(out)
}

/// Network for a filled-orbital determinant state. Every patch carries the
/// same (1 + n_f)-dimensional basis {psi, psi_a}, so chi = 1 + n_f, all
/// connections are the identity, and c/cdag/n tables make quadratic
/// correlations exact.
pub fn qgn_slater(graph: &PatchGraph, phi: &CMat) -> Result<Qgn, ConstructionError> {
    let n = graph.n_sites();
    if phi.ncols() != n {
        return Err(ConstructionError::Dimension(format!(
            "orbital matrix has {} columns, patch graph covers {n} sites",
            phi.ncols()
        )));
    }
    let nf = phi.nrows();
    let gram = phi.dot(&dag(phi));
    let eye: CMat = Array2::eye(nf);
    let residual = max_abs(&(&gram - &eye));
    if residual > 1e-10 {
        return Err(ConstructionError::NotOrthonormal { residual });
    }

    let basis = build_basis(BasisKind::Fermion, n, None)?;
    let psi = slater_state(&basis, phi)?;
    let mut q = CMat::zeros((1 + nf, basis.len()));
    for (c, v) in psi.iter().enumerate() {
        q[(0, c)] = v.conj();
    }
    for a in 0..nf {
        let mut reduced = CMat::zeros((nf - 1, n));
        let mut rr = 0;
        for r in 0..nf {
            if r == a {
                continue;
            }
            for c in 0..n {
                reduced[(rr, c)] = phi[(r, c)];
            }
            rr += 1;
        }
        let dropped = slater_state(&basis, &reduced)?;
        for (c, v) in dropped.iter().enumerate() {
            q[(a + 1, c)] = v.conj();
        }
    }
    let maps = TruncationMapSet::new(
        (0..graph.n_patches()).map(|_| TruncationMap::Dense(q.clone())).collect(),
    )?;

    let mut named: Vec<(usize, String, SparseOperator)> = Vec::new();
    for (p, patch) in graph.patches().iter().enumerate() {
        for &site in patch {
            named.push((p, site_op_name("c", site), fermion_op(&basis, site, FermionMode::Annihilate)?));
            named.push((p, site_op_name("cdag", site), fermion_op(&basis, site, FermionMode::Create)?));
            named.push((p, site_op_name("n", site), number_op(&basis, site)?));
        }
    }
    let sources: Vec<(usize, PatchOpSource)> = named
        .iter()
        .map(|(p, name, op)| (*p, PatchOpSource::Sparse(name.as_str(), op)))
        .collect();
    Ok(qgn_from_truncation(graph, &maps, &psi, None, &sources)?)
}

/// Network for the even classical mixture of the two aligned two-site
/// product states, purified by one hidden ancilla qubit:
/// (|up up> |0> + |down down> |1>) / sqrt(2). The patches cover only the two
/// visible sites; with `extended` the shared basis also includes the
/// ancilla's x and y images (chi = 4 instead of 2), which changes nothing
/// observable but exercises a larger table.
pub fn qgn_mixed_aligned(extended: bool) -> Result<Qgn, ConstructionError> {
    let lattice = LatticeSpec::uniform(vec![2], false)?;
    let graph = build_single_site_patch_graph(&lattice, PathStyle::Snake)?;
    let basis = build_basis(BasisKind::Spin, 3, None)?;
    let s = 1.0 / f64::sqrt(2.0);
    let mut psi = CVec::zeros(basis.len());
    psi[basis.index_of(0b000).unwrap()] = C64::new(s, 0.0);
    psi[basis.index_of(0b111).unwrap()] = C64::new(s, 0.0);

    let mut images = vec![psi.clone(), pauli_op(&basis, 2, PauliAxis::Z)?.apply(&psi)];
    if extended {
        images.push(pauli_op(&basis, 2, PauliAxis::X)?.apply(&psi));
        images.push(pauli_op(&basis, 2, PauliAxis::Y)?.apply(&psi));
    }
    let per_patch = vec![images.clone(), images];
    let maps = crate::network::truncation_maps_from_images(&per_patch)?;

    let mut named: Vec<(usize, String, SparseOperator)> = Vec::new();
    for site in 0..2 {
        for (axis, tag) in [(PauliAxis::X, "sx"), (PauliAxis::Y, "sy"), (PauliAxis::Z, "sz")] {
            named.push((site, site_op_name(tag, site), pauli_op(&basis, site, axis)?));
        }
    }
    let sources: Vec<(usize, PatchOpSource)> = named
        .iter()
        .map(|(p, name, op)| (*p, PatchOpSource::Sparse(name.as_str(), op)))
        .collect();
    Ok(qgn_from_truncation(&graph, &maps, &psi, None, &sources)?)
}

/// Network for concentric singlet pairs on an even number of sites: sites i
/// and n-1-i share (|up down> - |down up>) / sqrt(2). Built from the 1-point
/// family over all single-site Paulis, so every connection is the identity
/// and chi = 1 + 3n/2.
pub fn qgn_rainbow(graph: &PatchGraph) -> Result<Qgn, ConstructionError> {
    let n = graph.n_sites();
    if n == 0 || n % 2 != 0 {
        return Err(ConstructionError::OddSites { n });
    }
    let basis = build_basis(BasisKind::Spin, n, None)?;
    let s = 1.0 / f64::sqrt(2.0);
    let mut psi = CVec::zeros(basis.len());
    for (idx, &state) in basis.states().iter().enumerate() {
        let mut amp = 1.0;
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let bi = state & (1u64 << i) != 0;
            let bj = state & (1u64 << j) != 0;
            amp *= match (bi, bj) {
                (false, true) => s,
                (true, false) => -s,
                _ => 0.0,
            };
            if amp == 0.0 {
                break;
            }
        }
        psi[idx] = C64::new(amp, 0.0);
    }

    let mut named: Vec<(usize, String, SparseOperator)> = Vec::new();
    for (p, patch) in graph.patches().iter().enumerate() {
        for &site in patch {
            for (axis, tag) in [(PauliAxis::X, "sx"), (PauliAxis::Y, "sy"), (PauliAxis::Z, "sz")] {
                named.push((p, site_op_name(tag, site), pauli_op(&basis, site, axis)?));
            }
        }
    }
    let mut gens: Vec<SparseOperator> = Vec::with_capacity(3 * n);
    for site in 0..n {
        for axis in [PauliAxis::X, PauliAxis::Y, PauliAxis::Z] {
            gens.push(pauli_op(&basis, site, axis)?);
        }
    }
    let gen_refs: Vec<&SparseOperator> = gens.iter().collect();
    let images = images_for_k_point(graph.n_patches(), &psi, &gen_refs, 1)?;
    let maps = crate::network::truncation_maps_from_images(&images)?;
    let sources: Vec<(usize, PatchOpSource)> = named
        .iter()
        .map(|(p, name, op)| (*p, PatchOpSource::Sparse(name.as_str(), op)))
        .collect();
    Ok(qgn_from_truncation(graph, &maps, &psi, None, &sources)?)
}

/// Network for a product of coherent states with amplitudes `thetas`, one
/// per site. Each patch is one-dimensional and its tables carry the
/// amplitudes directly: b -> theta, bdag -> conj(theta), n -> |theta|^2.
pub fn qgn_coherent(graph: &PatchGraph, thetas: &[C64]) -> Result<Qgn, ConstructionError> {
    if thetas.len() != graph.n_sites() {
        return Err(ConstructionError::Dimension(format!(
            "{} amplitudes for {} sites",
            thetas.len(),
            graph.n_sites()
        )));
    }
    let one = C64::new(1.0, 0.0);
    let mut psis = Vec::with_capacity(graph.n_patches());
    let mut tables = Vec::with_capacity(graph.n_patches());
    for patch in graph.patches() {
        let mut table: BTreeMap<String, CMat> = BTreeMap::new();
        for &site in patch {
            let th = thetas[site];
            table.insert(site_op_name("b", site), Array2::from_elem((1, 1), th));
            table.insert(site_op_name("bdag", site), Array2::from_elem((1, 1), th.conj()));
            table.insert(
                site_op_name("n", site),
                Array2::from_elem((1, 1), C64::new(th.norm_sqr(), 0.0)),
            );
        }
        psis.push(Array1::from_elem(1, one));
        tables.push(table);
    }
    let edges = graph
        .edges()
        .map(|(i, j)| ((i, j), Array2::from_elem((1, 1), one)))
        .collect();
    Ok(Qgn::new(graph.clone(), psis, tables, edges)?)
}
