//! Quench initial networks grown from a single basis state.
//!
//! Every patch starts from the same product bitstring. Growth alternates two
//! moves until each patch holds at least `min_chi` states or nothing changes
//! any more:
//!
//! 1. close each patch's set under the bitstring branches of its own bond
//!    term (fermions: swap the two occupations when they differ; spins in
//!    the x-diagonal representation: the three flip masks of the bond), and
//!    under the single-site flips the spin observables need;
//! 2. checkpoint, then merge each patch's set with simultaneous snapshots of
//!    its neighbors' sets.
//!
//! The resulting sets index basis states, so the truncation maps are pure
//! row selections and every connection is a 0/1 partial permutation.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;

use crate::dynamics::NetworkAutomorphism;
use crate::fock::{
    number_action, pauli_x_action_xbasis, pauli_y_action_xbasis, pauli_z_action_xbasis, Basis,
    BasisKind, FockError, LocalAction, Model,
};
use crate::lattice::{LatticeSpec, PatchGraph};
use crate::network::{
    qgn_from_truncation, truncation_maps_from_basis_sets, PatchOpSource, Qgn,
};

use super::ConstructionError;

fn bond_sites(graph: &PatchGraph, p: usize) -> Result<(usize, usize), ConstructionError> {
    let patch = graph.patch(p);
    if patch.len() != 2 {
        return Err(ConstructionError::NeedsBondPatches { len: patch.len() });
    }
    Ok((patch[0], patch[1]))
}

fn closure_states(model: Model, s: u64, i: usize, j: usize, out: &mut Vec<u64>) {
    let bi = 1u64 << i;
    let bj = 1u64 << j;
    match model {
        Model::Fermi { .. } => {
            if (s & bi != 0) != (s & bj != 0) {
                out.push(s ^ bi ^ bj);
            }
        }
        Model::Ising { .. } => {
            out.push(s ^ bi);
            out.push(s ^ bj);
            out.push(s ^ bi ^ bj);
        }
    }
}

/// Grows per-patch sets of basis states from `initial` until every patch
/// holds at least `min_chi` of them (or growth saturates first), and returns
/// them as sorted basis-index lists ready for row-selection truncation maps.
pub fn quench_basis_sets(
    model: Model,
    graph: &PatchGraph,
    basis: &Basis,
    initial: u64,
    min_chi: usize,
) -> Result<Vec<Vec<usize>>, ConstructionError> {
    let expected = match model {
        Model::Fermi { .. } => BasisKind::Fermion,
        Model::Ising { .. } => BasisKind::Spin,
    };
    if basis.kind() != expected {
        let name = if expected == BasisKind::Fermion { "fermion" } else { "spin" };
        return Err(FockError::KindMismatch { expected: name }.into());
    }
    if basis.n_sites() != graph.n_sites() {
        return Err(ConstructionError::Dimension(format!(
            "basis covers {} sites, patch graph {}",
            basis.n_sites(),
            graph.n_sites()
        )));
    }
    if basis.index_of(initial).is_none() {
        return Err(FockError::StateOutsideBasis { state: initial }.into());
    }
    let n_patches = graph.n_patches();
    let mut bonds = Vec::with_capacity(n_patches);
    for p in 0..n_patches {
        bonds.push(bond_sites(graph, p)?);
    }

    let mut sets: Vec<BTreeSet<u64>> =
        (0..n_patches).map(|_| BTreeSet::from([initial])).collect();
    let mut scratch = Vec::new();
    loop {
        loop {
            let mut changed = false;
            for (p, &(i, j)) in bonds.iter().enumerate() {
                scratch.clear();
                for &s in &sets[p] {
                    closure_states(model, s, i, j, &mut scratch);
                }
                for &s in &scratch {
                    changed |= sets[p].insert(s);
                }
            }
            if !changed {
                break;
            }
        }
        if sets.iter().all(|t| t.len() >= min_chi) {
            break;
        }
        let snapshot: Vec<Vec<u64>> =
            sets.iter().map(|t| t.iter().copied().collect()).collect();
        let mut grew = false;
        for p in 0..n_patches {
            for &q in graph.patch_neighbors(p) {
                for &s in &snapshot[q] {
                    grew |= sets[p].insert(s);
                }
            }
        }
        if !grew {
            break;
        }
    }

    let mut out = Vec::with_capacity(n_patches);
    for set in &sets {
        let mut indices = Vec::with_capacity(set.len());
        for &s in set {
            indices.push(
                basis
                    .index_of(s)
                    .ok_or(FockError::StateOutsideBasis { state: s })?,
            );
        }
        out.push(indices);
    }
    Ok(out)
}

fn observable_action(model: Model, base: &str, site: usize) -> Result<LocalAction, ConstructionError> {
    match (model, base) {
        (Model::Fermi { .. }, "n") => Ok(number_action(site)),
        (Model::Ising { .. }, "sx") => Ok(pauli_x_action_xbasis(site)),
        (Model::Ising { .. }, "sy") => Ok(pauli_y_action_xbasis(site)),
        (Model::Ising { .. }, "sz") => Ok(pauli_z_action_xbasis(site)),
        _ => Err(ConstructionError::UnsupportedObservable { base: base.to_string() }),
    }
}

/// Builds the full quench network: row-selection truncation maps from
/// [`quench_basis_sets`], the one-hot initial state, the bond term "H" on
/// every patch, and the requested per-site observables on every patch that
/// contains the site.
pub fn qgn_from_quench(
    model: Model,
    graph: &PatchGraph,
    basis: &Basis,
    initial: u64,
    min_chi: usize,
    obs_bases: &[&str],
) -> Result<Qgn, ConstructionError> {
    let sets = quench_basis_sets(model, graph, basis, initial, min_chi)?;
    let maps = truncation_maps_from_basis_sets(basis.len(), &sets)?;
    let psi = basis.one_hot(initial)?;

    let mut actions: Vec<(usize, LocalAction)> = Vec::new();
    for p in 0..graph.n_patches() {
        let (i, j) = bond_sites(graph, p)?;
        actions.push((p, model.patch_action(i, j, graph.ndims())));
        for base in obs_bases {
            for site in [i, j] {
                actions.push((p, observable_action(model, base, site)?));
            }
        }
    }
    let sources: Vec<(usize, PatchOpSource)> = actions
        .iter()
        .map(|(p, act)| (*p, PatchOpSource::Action(act)))
        .collect();
    Ok(qgn_from_truncation(graph, &maps, &psi, Some(basis), &sources)?)
}

fn permute_state_bits(s: u64, site_map: &[usize]) -> u64 {
    let mut out = 0u64;
    for (i, &target) in site_map.iter().enumerate() {
        if s & (1u64 << i) != 0 {
            out |= 1u64 << target;
        }
    }
    out
}

/// Candidate exact symmetries of a quench-built network: compositions of
/// translations along periodic axes, permutations of axes with equal extent
/// and boundary, and per-axis reflections. A candidate is kept when it fixes
/// the initial bitstring and maps every patch's basis set onto another's.
///
/// These are candidates only; the evolution verifies each one bitwise
/// against the actual network data before relying on it. In particular,
/// fermionic networks usually fail that check because relabeling sites
/// reorders occupied modes and changes matrix-element signs.
pub fn quench_network_automorphisms(
    lattice: &LatticeSpec,
    graph: &PatchGraph,
    basis: &Basis,
    sets: &[Vec<usize>],
    initial: u64,
) -> Vec<NetworkAutomorphism> {
    let ndims = lattice.ndims();
    let dims = lattice.dims();
    let periodic = lattice.periodic();
    let n_sites = lattice.num_sites();

    let axis_perms: Vec<Vec<usize>> = (0..ndims).permutations(ndims)
        .filter(|perm| {
            perm.iter()
                .enumerate()
                .all(|(a, &b)| dims[a] == dims[b] && periodic[a] == periodic[b])
        })
        .collect();
    let radix: Vec<usize> =
        (0..ndims).map(|a| if periodic[a] { dims[a] } else { 1 }).collect();
    let n_shifts: usize = radix.iter().product();

    let mut site_maps: BTreeSet<Vec<usize>> = BTreeSet::new();
    for axis_perm in &axis_perms {
        for refl in 0..(1usize << ndims) {
            for mut code in 0..n_shifts {
                let mut shift = vec![0usize; ndims];
                for (a, &r) in radix.iter().enumerate() {
                    shift[a] = code % r;
                    code /= r;
                }
                let map: Vec<usize> = (0..n_sites)
                    .map(|site| {
                        let coords = lattice.site_coords(site);
                        let mut c: Vec<usize> =
                            (0..ndims).map(|a| coords[axis_perm[a]]).collect();
                        for a in 0..ndims {
                            if refl & (1 << a) != 0 {
                                c[a] = dims[a] - 1 - c[a];
                            }
                            if periodic[a] {
                                c[a] = (c[a] + shift[a]) % dims[a];
                            }
                        }
                        lattice.site_index(&c)
                    })
                    .collect();
                site_maps.insert(map);
            }
        }
    }

    let identity: Vec<usize> = (0..n_sites).collect();
    let patch_lookup: BTreeMap<Vec<usize>, usize> = graph
        .patches()
        .iter()
        .enumerate()
        .map(|(p, sites)| {
            let mut s = sites.clone();
            s.sort_unstable();
            (s, p)
        })
        .collect();

    let mut out = Vec::new();
    'candidates: for map in &site_maps {
        if *map == identity || permute_state_bits(initial, map) != initial {
            continue;
        }
        let mut patch_map = Vec::with_capacity(graph.n_patches());
        for sites in graph.patches() {
            let mut mapped: Vec<usize> = sites.iter().map(|&s| map[s]).collect();
            mapped.sort_unstable();
            match patch_lookup.get(&mapped) {
                Some(&q) => patch_map.push(q),
                None => continue 'candidates,
            }
        }
        let mut index_perms = Vec::with_capacity(sets.len());
        for (p, set) in sets.iter().enumerate() {
            let target = &sets[patch_map[p]];
            let mut perm = Vec::with_capacity(set.len());
            for &idx in set {
                let mapped_state = permute_state_bits(basis.state(idx), map);
                let Some(mapped_idx) = basis.index_of(mapped_state) else {
                    continue 'candidates;
                };
                let Ok(pos) = target.binary_search(&mapped_idx) else {
                    continue 'candidates;
                };
                perm.push(pos);
            }
            index_perms.push(perm);
        }
        out.push(NetworkAutomorphism { patch_map, index_perms });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_basis, site_op_name, total_hamiltonian, SparseOperator};
    use crate::lattice::{build_nn_patch_graph, LatticeSpec};
    use crate::network::{expectation_string, mean_local_expectation, OperatorString};
    use num_complex::Complex64 as C64;

    fn chain_bond_graph(n: usize) -> PatchGraph {
        let lattice = LatticeSpec::uniform(vec![n], false).unwrap();
        build_nn_patch_graph(&lattice).unwrap()
    }

    fn set_sizes(sets: &[Vec<usize>]) -> Vec<usize> {
        sets.iter().map(|s| s.len()).collect()
    }

    #[test]
    fn fermi_chain_sets_grow_in_checkpointed_layers() {
        let graph = chain_bond_graph(6);
        let basis = build_basis(BasisKind::Fermion, 6, Some(3)).unwrap();
        let model = Model::Fermi { v: 1.0 };
        let initial = 0b010101u64;

        let first = quench_basis_sets(model, &graph, &basis, initial, 2).unwrap();
        assert_eq!(set_sizes(&first), vec![2, 2, 2, 2, 2]);
        for (p, set) in first.iter().enumerate() {
            let (i, j) = (graph.patch(p)[0], graph.patch(p)[1]);
            let swapped = initial ^ (1 << i) ^ (1 << j);
            let want: Vec<usize> = {
                let mut v = vec![
                    basis.index_of(initial).unwrap(),
                    basis.index_of(swapped).unwrap(),
                ];
                v.sort_unstable();
                v
            };
            assert_eq!(set, &want);
        }

        let second = quench_basis_sets(model, &graph, &basis, initial, 3).unwrap();
        assert_eq!(set_sizes(&second), vec![3, 4, 4, 4, 3]);
        for (a, b) in first.iter().zip(&second) {
            assert!(a.iter().all(|idx| b.contains(idx)));
        }
        for set in &second {
            for &idx in set {
                assert_eq!(basis.state(idx).count_ones(), 3);
            }
        }

        let saturated = quench_basis_sets(model, &graph, &basis, initial, 10_000).unwrap();
        assert_eq!(set_sizes(&saturated), vec![20; 5]);
    }

    #[test]
    fn ising_bond_closure_is_the_four_flip_masks() {
        let graph = chain_bond_graph(4);
        let basis = build_basis(BasisKind::Spin, 4, None).unwrap();
        let model = Model::Ising { h: 3.0 };

        let sets = quench_basis_sets(model, &graph, &basis, 0, 4).unwrap();
        assert_eq!(set_sizes(&sets), vec![4, 4, 4]);
        for (p, set) in sets.iter().enumerate() {
            let (i, j) = (graph.patch(p)[0], graph.patch(p)[1]);
            let mut want: Vec<usize> = [0u64, 1 << i, 1 << j, (1 << i) | (1 << j)]
                .iter()
                .map(|&s| basis.index_of(s).unwrap())
                .collect();
            want.sort_unstable();
            assert_eq!(set, &want);
        }

        let saturated = quench_basis_sets(model, &graph, &basis, 0, 10_000).unwrap();
        assert_eq!(set_sizes(&saturated), vec![16, 16, 16]);
    }

    #[test]
    fn saturated_fermi_quench_network_matches_dense_energy() {
        let graph = chain_bond_graph(6);
        let basis = build_basis(BasisKind::Fermion, 6, Some(3)).unwrap();
        let model = Model::Fermi { v: 1.0 };
        let initial = 0b010101u64;
        let qgn = qgn_from_quench(model, &graph, &basis, initial, 10_000, &["n"]).unwrap();
        assert_eq!(qgn.max_chi(), 20);

        let locals =
            crate::fock::build_local_hamiltonians(model, &graph, &basis).unwrap();
        let psi = basis.one_hot(initial).unwrap();
        let exact = total_hamiltonian(&locals).expectation(&psi);
        let mut energy = C64::new(0.0, 0.0);
        for p in 0..graph.n_patches() {
            let string = OperatorString::from_ops(&[(p, "H")]).unwrap();
            energy += expectation_string(&qgn, &string).unwrap();
        }
        assert!((energy - exact).norm() < 1e-10, "{energy} vs {exact}");

        let mut total_n = 0.0;
        for site in 0..6 {
            let val = mean_local_expectation(&qgn, "n", site).unwrap();
            total_n += val.re;
            let occ = f64::from(u8::from(initial & (1 << site) != 0));
            assert!((val.re - occ).abs() < 1e-12);
            assert!(val.im.abs() < 1e-13);
        }
        assert!((total_n - 3.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_ising_quench_network_reports_product_state_observables() {
        let graph = chain_bond_graph(4);
        let basis = build_basis(BasisKind::Spin, 4, None).unwrap();
        let model = Model::Ising { h: 3.0 };
        let qgn =
            qgn_from_quench(model, &graph, &basis, 0, 4, &["sx", "sy", "sz"]).unwrap();
        assert_eq!(qgn.max_chi(), 4);

        for site in 0..4 {
            let sx = mean_local_expectation(&qgn, "sx", site).unwrap();
            let sy = mean_local_expectation(&qgn, "sy", site).unwrap();
            let sz = mean_local_expectation(&qgn, "sz", site).unwrap();
            assert!((sx - C64::new(1.0, 0.0)).norm() < 1e-12);
            assert!(sy.norm() < 1e-12);
            assert!(sz.norm() < 1e-12);
        }

        // Energy against the same bond terms materialized as full-space
        // operators; the sets all contain the initial state, so the t = 0
        // energy is exact even at this small chi.
        let psi = basis.one_hot(0).unwrap();
        let mut exact = C64::new(0.0, 0.0);
        let mut network = C64::new(0.0, 0.0);
        for p in 0..graph.n_patches() {
            let (i, j) = (graph.patch(p)[0], graph.patch(p)[1]);
            let act = model.patch_action(i, j, graph.ndims());
            let sparse: SparseOperator = act.to_sparse(&basis).unwrap();
            exact += sparse.expectation(&psi);
            let string = OperatorString::from_ops(&[(p, "H")]).unwrap();
            network += expectation_string(&qgn, &string).unwrap();
        }
        assert!((network - exact).norm() < 1e-12, "{network} vs {exact}");

        let unknown = qgn_from_quench(model, &graph, &basis, 0, 2, &["n"]);
        assert!(matches!(
            unknown,
            Err(ConstructionError::UnsupportedObservable { .. })
        ));
    }

    #[test]
    fn site_names_follow_the_shared_convention() {
        let graph = chain_bond_graph(4);
        let basis = build_basis(BasisKind::Spin, 4, None).unwrap();
        let qgn =
            qgn_from_quench(Model::Ising { h: 3.0 }, &graph, &basis, 0, 2, &["sz"]).unwrap();
        assert!(qgn.op(0, &site_op_name("sz", 0)).is_some());
        assert!(qgn.op(0, &site_op_name("sz", 1)).is_some());
        assert!(qgn.op(0, &site_op_name("sz", 2)).is_none());
    }
}
