//! Truncation maps: per-patch isometries from the full Hilbert space onto the
//! span of a patch's image vectors, and the network builder that compresses a
//! full wavefunction plus operators through them.
//!
//! Two representations coexist. `Dense` maps come from an SVD of arbitrary
//! image vectors. `Select` maps pick out a subset of basis states; they arise
//! when every image is supported on a closed set of occupation bitstrings, and
//! they keep huge full spaces tractable because compressing through them only
//! gathers entries.

use super::{NetworkError, Qgn};
use crate::fock::{Basis, LocalAction, SparseOperator};
use crate::lattice::PatchGraph;
use crate::linalg::{dag, svd_thin, CMat, CVec};
use num_complex::Complex64 as C64;

#[derive(Debug, Clone)]
pub enum TruncationMap {
    /// chi x N matrix with orthonormal rows.
    Dense(CMat),
    /// Rows are basis unit vectors: row a of Q is e_{rows[a]}^T.
    Select { dim_full: usize, rows: Vec<usize> },
}

impl TruncationMap {
    pub fn chi(&self) -> usize {
        match self {
            TruncationMap::Dense(q) => q.nrows(),
            TruncationMap::Select { rows, .. } => rows.len(),
        }
    }

    pub fn dim_full(&self) -> usize {
        match self {
            TruncationMap::Dense(q) => q.ncols(),
            TruncationMap::Select { dim_full, .. } => *dim_full,
        }
    }

    /// Q v.
    pub fn apply(&self, v: &CVec) -> CVec {
        match self {
            TruncationMap::Dense(q) => q.dot(v),
            TruncationMap::Select { rows, .. } => {
                CVec::from(rows.iter().map(|&r| v[r]).collect::<Vec<_>>())
            }
        }
    }

    /// Q† w, embedding a patch vector back into the full space.
    pub fn apply_dagger(&self, w: &CVec) -> CVec {
        match self {
            TruncationMap::Dense(q) => {
                let mut out = CVec::zeros(q.ncols());
                for (a, wa) in w.iter().enumerate() {
                    for (c, oc) in out.iter_mut().enumerate() {
                        *oc += q[(a, c)].conj() * wa;
                    }
                }
                out
            }
            TruncationMap::Select { dim_full, rows } => {
                let mut out = CVec::zeros(*dim_full);
                for (a, &r) in rows.iter().enumerate() {
                    out[r] = w[a];
                }
                out
            }
        }
    }

    /// Q A Q† for a full-space operator.
    pub fn sandwich_sparse(&self, op: &SparseOperator) -> CMat {
        match self {
            TruncationMap::Dense(q) => {
                let chi = q.nrows();
                let n = q.ncols();
                // columns of A Q† are A applied to the conjugated rows of Q
                let mut aqd = CMat::zeros((n, chi));
                for b in 0..chi {
                    let col = CVec::from((0..n).map(|c| q[(b, c)].conj()).collect::<Vec<_>>());
                    let acol = op.apply(&col);
                    for r in 0..n {
                        aqd[(r, b)] = acol[r];
                    }
                }
                q.dot(&aqd)
            }
            TruncationMap::Select { rows, .. } => {
                let chi = rows.len();
                let mut out = CMat::zeros((chi, chi));
                for (a, &ra) in rows.iter().enumerate() {
                    for (b, &rb) in rows.iter().enumerate() {
                        out[(a, b)] = op.get(ra, rb);
                    }
                }
                out
            }
        }
    }

    /// Q A Q† for a bitstring action, without materializing A.
    pub fn sandwich_action(&self, basis: &Basis, act: &LocalAction) -> Result<CMat, NetworkError> {
        match self {
            TruncationMap::Select { rows, .. } => {
                let chi = rows.len();
                let mut pos = std::collections::HashMap::with_capacity(chi);
                for (a, &r) in rows.iter().enumerate() {
                    pos.insert(r, a);
                }
                let mut out = CMat::zeros((chi, chi));
                for (b, &rb) in rows.iter().enumerate() {
                    for (s2, amp) in act.apply_bits(basis.state(rb)) {
                        let Some(r2) = basis.index_of(s2) else {
                            return Err(NetworkError::Fock(
                                crate::fock::FockError::StateOutsideBasis { state: s2 },
                            ));
                        };
                        if let Some(&a) = pos.get(&r2) {
                            out[(a, b)] += amp;
                        }
                    }
                }
                Ok(out)
            }
            TruncationMap::Dense(_) => {
                let op = act.to_sparse(basis)?;
                Ok(self.sandwich_sparse(&op))
            }
        }
    }

    /// Q_self Q_other†, the connection between two patches.
    pub fn overlap(&self, other: &TruncationMap) -> CMat {
        match (self, other) {
            (TruncationMap::Dense(qi), TruncationMap::Dense(qj)) => qi.dot(&dag(qj)),
            (TruncationMap::Select { rows: ri, .. }, TruncationMap::Select { rows: rj, .. }) => {
                let mut out = CMat::zeros((ri.len(), rj.len()));
                let mut pos = std::collections::HashMap::with_capacity(rj.len());
                for (b, &r) in rj.iter().enumerate() {
                    pos.insert(r, b);
                }
                for (a, &r) in ri.iter().enumerate() {
                    if let Some(&b) = pos.get(&r) {
                        out[(a, b)] = C64::new(1.0, 0.0);
                    }
                }
                out
            }
            (TruncationMap::Dense(qi), TruncationMap::Select { rows: rj, .. }) => {
                let mut out = CMat::zeros((qi.nrows(), rj.len()));
                for a in 0..qi.nrows() {
                    for (b, &r) in rj.iter().enumerate() {
                        out[(a, b)] = qi[(a, r)];
                    }
                }
                out
            }
            (TruncationMap::Select { rows: ri, .. }, TruncationMap::Dense(qj)) => {
                let mut out = CMat::zeros((ri.len(), qj.nrows()));
                for (a, &r) in ri.iter().enumerate() {
                    for b in 0..qj.nrows() {
                        out[(a, b)] = qj[(b, r)].conj();
                    }
                }
                out
            }
        }
    }

    /// max |Q Q† - 1|; identically zero for selection maps.
    pub fn orthonormality_residual(&self) -> f64 {
        match self {
            TruncationMap::Select { .. } => 0.0,
            TruncationMap::Dense(q) => {
                let g = q.dot(&dag(q));
                let mut worst = 0.0f64;
                for a in 0..g.nrows() {
                    for b in 0..g.ncols() {
                        let want = if a == b { 1.0 } else { 0.0 };
                        worst = worst.max((g[(a, b)] - C64::new(want, 0.0)).norm());
                    }
                }
                worst
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TruncationMapSet {
    maps: Vec<TruncationMap>,
    dim_full: usize,
}

impl TruncationMapSet {
    pub fn new(maps: Vec<TruncationMap>) -> Result<Self, NetworkError> {
        let Some(first) = maps.first() else {
            return Err(NetworkError::EmptyImages { patch: 0 });
        };
        let dim_full = first.dim_full();
        for (p, m) in maps.iter().enumerate() {
            if m.dim_full() != dim_full {
                return Err(NetworkError::Dimension(format!(
                    "truncation map {p} acts on dimension {}, expected {dim_full}",
                    m.dim_full()
                )));
            }
        }
        Ok(TruncationMapSet { maps, dim_full })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn dim_full(&self) -> usize {
        self.dim_full
    }

    pub fn map(&self, p: usize) -> &TruncationMap {
        &self.maps[p]
    }

    pub fn maps(&self) -> &[TruncationMap] {
        &self.maps
    }

    pub fn chi(&self, p: usize) -> usize {
        self.maps[p].chi()
    }
}

/// Relative singular-value cutoff deciding the rank of an image span.
const RANK_TOL: f64 = 1e-10;

/// Orthonormalizes each patch's image vectors into a truncation map.
///
/// The rank is the number of singular values above `1e-10` times the largest,
/// so linearly dependent images never inflate a patch dimension.
pub fn truncation_maps_from_images(images: &[Vec<CVec>]) -> Result<TruncationMapSet, NetworkError> {
    let mut maps = Vec::with_capacity(images.len());
    for (p, set) in images.iter().enumerate() {
        if set.is_empty() {
            return Err(NetworkError::EmptyImages { patch: p });
        }
        let n = set[0].len();
        for v in set {
            if v.len() != n {
                return Err(NetworkError::Dimension(format!(
                    "images on patch {p} have mixed lengths"
                )));
            }
        }
        // columns are the images
        let mut a = CMat::zeros((n, set.len()));
        for (c, v) in set.iter().enumerate() {
            for r in 0..n {
                a[(r, c)] = v[r];
            }
        }
        let (u, s, _vt) = svd_thin(&a)?;
        let smax = s.first().copied().unwrap_or(0.0);
        if smax <= 0.0 {
            return Err(NetworkError::ZeroImages { patch: p });
        }
        let rank = s.iter().take_while(|&&x| x > RANK_TOL * smax).count();
        if rank == 0 {
            return Err(NetworkError::ZeroImages { patch: p });
        }
        // Q rows are the conjugated leading left singular vectors
        let mut q = CMat::zeros((rank, n));
        for a_row in 0..rank {
            for c in 0..n {
                q[(a_row, c)] = u[(c, a_row)].conj();
            }
        }
        maps.push(TruncationMap::Dense(q));
    }
    TruncationMapSet::new(maps)
}

/// Selection truncation maps from per-patch sets of basis-state indices.
/// Indices are deduplicated and sorted ascending.
pub fn truncation_maps_from_basis_sets(
    dim_full: usize,
    sets: &[Vec<usize>],
) -> Result<TruncationMapSet, NetworkError> {
    let mut maps = Vec::with_capacity(sets.len());
    for (p, set) in sets.iter().enumerate() {
        if set.is_empty() {
            return Err(NetworkError::EmptyImages { patch: p });
        }
        let mut rows = set.clone();
        rows.sort_unstable();
        rows.dedup();
        if let Some(&bad) = rows.iter().find(|&&r| r >= dim_full) {
            return Err(NetworkError::Dimension(format!(
                "basis index {bad} out of range for dimension {dim_full} on patch {p}"
            )));
        }
        maps.push(TruncationMap::Select { dim_full, rows });
    }
    TruncationMapSet::new(maps)
}

/// Named full-space operators to compress onto one patch.
pub enum PatchOpSource<'a> {
    Sparse(&'a str, &'a SparseOperator),
    Action(&'a LocalAction),
}

/// Compresses a full wavefunction and per-patch operators through truncation
/// maps into a network over `graph`.
///
/// Guarantees checked here: each compressed patch state keeps unit norm (the
/// full state must lie in every patch span) and every connection maps the
/// neighbor state onto the patch state to 1e-12.
pub fn qgn_from_truncation(
    graph: &PatchGraph,
    maps: &TruncationMapSet,
    psi: &CVec,
    basis: Option<&Basis>,
    ops: &[(usize, PatchOpSource<'_>)],
) -> Result<Qgn, NetworkError> {
    if maps.len() != graph.n_patches() {
        return Err(NetworkError::PatchCountMismatch {
            expected: graph.n_patches(),
            got: maps.len(),
        });
    }
    if psi.len() != maps.dim_full() {
        return Err(NetworkError::Dimension(format!(
            "state length {} vs truncation domain {}",
            psi.len(),
            maps.dim_full()
        )));
    }
    let full_norm = crate::linalg::vec_norm(psi);
    if (full_norm - 1.0).abs() > 1e-9 {
        return Err(NetworkError::Dimension(format!(
            "full state norm {full_norm} is not 1"
        )));
    }

    let mut psis = Vec::with_capacity(graph.n_patches());
    for p in 0..graph.n_patches() {
        let local = maps.map(p).apply(psi);
        let norm = crate::linalg::vec_norm(&local);
        if (norm - 1.0).abs() > 1e-9 {
            return Err(NetworkError::TruncationLostState { patch: p, norm });
        }
        psis.push(local);
    }

    let mut op_tables: Vec<std::collections::BTreeMap<String, CMat>> =
        vec![Default::default(); graph.n_patches()];
    for (p, source) in ops {
        let (name, mat) = match source {
            PatchOpSource::Sparse(name, op) => {
                if op.nrows() != maps.dim_full() || op.ncols() != maps.dim_full() {
                    return Err(NetworkError::Dimension(format!(
                        "operator {name:?} on patch {p} is {}x{}, expected the full dimension {}",
                        op.nrows(),
                        op.ncols(),
                        maps.dim_full()
                    )));
                }
                (name.to_string(), maps.map(*p).sandwich_sparse(op))
            }
            PatchOpSource::Action(act) => {
                let basis = basis.ok_or_else(|| {
                    NetworkError::Dimension(
                        "bitstring actions require the basis to be supplied".into(),
                    )
                })?;
                if basis.len() != maps.dim_full() {
                    return Err(NetworkError::Dimension(format!(
                        "basis size {} vs truncation domain {}",
                        basis.len(),
                        maps.dim_full()
                    )));
                }
                (act.name().to_string(), maps.map(*p).sandwich_action(basis, act)?)
            }
        };
        op_tables[*p].insert(name, mat);
    }

    let mut edges = std::collections::BTreeMap::new();
    for (i, j) in graph.edges() {
        edges.insert((i, j), maps.map(i).overlap(maps.map(j)));
    }

    let qgn = Qgn::new(graph.clone(), psis, op_tables, edges)?;
    let residual = qgn.consistency_residuals().vpsi;
    if residual > 1e-12 {
        return Err(NetworkError::Inconsistent { residual });
    }
    Ok(qgn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_basis, number_action, pauli_op, BasisKind, PauliAxis};
    use crate::lattice::{build_single_site_patch_graph, LatticeSpec, PathStyle};
    use crate::linalg::{eigh, vec_norm};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> CVec {
        CVec::from(
            (0..n)
                .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect::<Vec<_>>(),
        )
    }

    fn normalized(v: CVec) -> CVec {
        let n = vec_norm(&v);
        v.mapv(|z| z / n)
    }

    #[test]
    fn single_image_gives_rank_one_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = normalized(random_vec(16, &mut rng));
        let maps = truncation_maps_from_images(&[vec![psi.clone()]]).unwrap();
        assert_eq!(maps.chi(0), 1);
        assert!(maps.map(0).orthonormality_residual() < 1e-10);
        let local = maps.map(0).apply(&psi);
        assert!((vec_norm(&local) - 1.0).abs() < 1e-10);
        // projector reproduces the state
        let back = maps.map(0).apply_dagger(&local);
        let diff: f64 = back.iter().zip(psi.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        assert!(diff.sqrt() < 1e-10);
    }

    #[test]
    fn entangled_pair_needs_two_dimensions_on_one_site() {
        // (|00> + |11>)/sqrt(2); images {psi, z_0 psi} span a 2d space.
        let basis = build_basis(BasisKind::Spin, 2, None).unwrap();
        let mut psi = CVec::zeros(4);
        psi[0] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        psi[3] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let z0 = pauli_op(&basis, 0, PauliAxis::Z).unwrap();
        let images = vec![vec![psi.clone(), z0.apply(&psi)]];
        let maps = truncation_maps_from_images(&images).unwrap();
        assert_eq!(maps.chi(0), 2);
        assert!(maps.map(0).orthonormality_residual() < 1e-10);
    }

    #[test]
    fn dependent_images_do_not_inflate_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = normalized(random_vec(12, &mut rng));
        let b = normalized(random_vec(12, &mut rng));
        let combo = a.mapv(|z| z * c(0.3, 0.1)) + &b.mapv(|z| z * c(-0.2, 0.7));
        let images = vec![vec![a.clone(), b.clone(), combo, a.clone()]];
        let maps = truncation_maps_from_images(&images).unwrap();
        assert_eq!(maps.chi(0), 2);
    }

    #[test]
    fn svd_rank_matches_gram_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let m = rng.random_range(1..6);
            let reps = rng.random_range(0..3);
            let mut set: Vec<CVec> = (0..m).map(|_| normalized(random_vec(20, &mut rng))).collect();
            for _ in 0..reps {
                let pick = rng.random_range(0..set.len());
                let dup = set[pick].mapv(|z| z * c(1.5, -0.5));
                set.push(dup);
            }
            let maps = truncation_maps_from_images(&[set.clone()]).unwrap();

            // independent oracle: rank of the Gram matrix
            let k = set.len();
            let mut gram = CMat::zeros((k, k));
            for i in 0..k {
                for j in 0..k {
                    gram[(i, j)] = set[i].iter().zip(set[j].iter()).map(|(a, b)| a.conj() * b).sum();
                }
            }
            let (w, _) = eigh(&gram).unwrap();
            let wmax = w.iter().cloned().fold(0.0f64, f64::max);
            let gram_rank = w.iter().filter(|&&x| x > 1e-10 * wmax.max(1e-300)).count();
            assert_eq!(maps.chi(0), gram_rank);
        }
    }

    #[test]
    fn selection_maps_are_exact_isometries_with_boolean_overlaps() {
        let sets = vec![vec![0, 2, 5], vec![2, 3, 5, 7]];
        let maps = truncation_maps_from_basis_sets(8, &sets).unwrap();
        assert_eq!(maps.chi(0), 3);
        assert_eq!(maps.chi(1), 4);
        assert_eq!(maps.map(0).orthonormality_residual(), 0.0);
        let v = maps.map(0).overlap(maps.map(1));
        // shared indices 2 and 5 connect; everything else is zero
        let mut ones = 0;
        for a in 0..3 {
            for b in 0..4 {
                let z = v[(a, b)];
                assert!(z == c(0.0, 0.0) || z == c(1.0, 0.0));
                if z == c(1.0, 0.0) {
                    ones += 1;
                }
            }
        }
        assert_eq!(ones, 2);
    }

    #[test]
    fn dense_and_selection_sandwiches_agree() {
        let basis = build_basis(BasisKind::Fermion, 3, None).unwrap();
        let act = number_action(1);
        let rows = vec![1usize, 3, 6];
        let select = TruncationMap::Select { dim_full: 8, rows: rows.clone() };
        // equivalent dense map
        let mut q = CMat::zeros((3, 8));
        for (a, &r) in rows.iter().enumerate() {
            q[(a, r)] = c(1.0, 0.0);
        }
        let dense = TruncationMap::Dense(q);
        let a1 = select.sandwich_action(&basis, &act).unwrap();
        let a2 = dense.sandwich_action(&basis, &act).unwrap();
        let a3 = select.sandwich_sparse(&act.to_sparse(&basis).unwrap());
        for r in 0..3 {
            for s in 0..3 {
                assert!((a1[(r, s)] - a2[(r, s)]).norm() < 1e-14);
                assert!((a1[(r, s)] - a3[(r, s)]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn compressed_network_reproduces_expectations_in_span() {
        // 2-site product state, single-site patches, number operator per patch.
        let lat = LatticeSpec::uniform(vec![2], false).unwrap();
        let graph = build_single_site_patch_graph(&lat, PathStyle::Snake).unwrap();
        let basis = build_basis(BasisKind::Fermion, 2, None).unwrap();
        let mut psi = CVec::zeros(4);
        psi[0b01] = c(1.0, 0.0); // site 0 occupied
        let n0 = number_action(0);
        let n1 = number_action(1);
        let images = vec![
            vec![psi.clone(), n0.to_sparse(&basis).unwrap().apply(&psi)],
            vec![psi.clone(), n1.to_sparse(&basis).unwrap().apply(&psi)],
        ];
        let maps = truncation_maps_from_images(&images).unwrap();
        let qgn = qgn_from_truncation(
            &graph,
            &maps,
            &psi,
            Some(&basis),
            &[(0, PatchOpSource::Action(&n0)), (1, PatchOpSource::Action(&n1))],
        )
        .unwrap();
        let res = qgn.consistency_residuals();
        assert!(res.vpsi < 1e-12);
        assert!(res.sv_excess < 1e-9);
        let v0 = qgn.op(0, "n0").unwrap();
        let e0 = qgn.psi(0).iter().enumerate().fold(c(0.0, 0.0), |acc, (a, pa)| {
            acc + pa.conj()
                * v0.row(a).iter().zip(qgn.psi(0).iter()).map(|(m, p)| m * p).sum::<C64>()
        });
        assert!((e0 - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn truncation_that_loses_the_state_is_rejected() {
        let lat = LatticeSpec::uniform(vec![2], false).unwrap();
        let graph = build_single_site_patch_graph(&lat, PathStyle::Snake).unwrap();
        let mut psi = CVec::zeros(4);
        psi[0] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        psi[3] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        // selection keeps only one of the two support states on patch 1
        let maps = truncation_maps_from_basis_sets(4, &[vec![0, 3], vec![0]]).unwrap();
        let err = qgn_from_truncation(&graph, &maps, &psi, None, &[]);
        assert!(matches!(err, Err(NetworkError::TruncationLostState { patch: 1, .. })));
    }
}
