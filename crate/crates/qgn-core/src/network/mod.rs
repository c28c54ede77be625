//! The gauge-network state: one wavefunction per patch, one connection per
//! patch-graph edge, and named operator tables per patch, together with
//! expectation evaluation, gauge transformations, self-consistency residuals,
//! and density-matrix reconstruction.
//!
//! Connections are stored once per undirected edge (i < j); the reverse
//! direction is the adjoint. Operator strings hop between patches through
//! connections, inserting breadth-first bridge segments automatically when
//! consecutive entries sit on non-adjacent patches.

pub mod io;
mod truncation;

pub use truncation::{
    qgn_from_truncation, truncation_maps_from_basis_sets, truncation_maps_from_images,
    PatchOpSource, TruncationMap, TruncationMapSet,
};

use crate::fock::FockError;
use crate::lattice::PatchGraph;
use crate::linalg::{dag, singular_values, unitarity_residual, CMat, CVec, LinalgError};
use num_complex::Complex64 as C64;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("expected {expected} per-patch items, got {got}")]
    PatchCountMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("operator {name:?} missing on patch {patch}")]
    UnknownOperator { patch: usize, name: String },
    #[error("patches {i} and {j} are not connected in the patch graph")]
    Disconnected { i: usize, j: usize },
    #[error("gauge matrix on patch {patch} is not unitary (residual {residual:.3e})")]
    NotUnitary { patch: usize, residual: f64 },
    #[error("network state violates connection consistency (residual {residual:.3e})")]
    Inconsistent { residual: f64 },
    #[error("patch {patch} state has norm {norm:.6} after truncation; the full state leaves the patch span")]
    TruncationLostState { patch: usize, norm: f64 },
    #[error("no images supplied for patch {patch}")]
    EmptyImages { patch: usize },
    #[error("images span a zero subspace on patch {patch}")]
    ZeroImages { patch: usize },
    #[error("operator string has no entries")]
    EmptyString,
    #[error("site {site} is not covered by any patch")]
    UncoveredSite { site: usize },
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One step of an operator string: a patch, and optionally a named operator
/// from that patch's table (`None` rides the connection through unchanged).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StringEntry {
    pub patch: usize,
    pub op: Option<String>,
}

/// An ordered product of patch-local operators, evaluated across connections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorString {
    entries: Vec<StringEntry>,
}

impl OperatorString {
    pub fn new(entries: Vec<StringEntry>) -> Result<Self, NetworkError> {
        if entries.is_empty() {
            return Err(NetworkError::EmptyString);
        }
        Ok(OperatorString { entries })
    }

    pub fn single(patch: usize, op: impl Into<String>) -> Self {
        OperatorString { entries: vec![StringEntry { patch, op: Some(op.into()) }] }
    }

    pub fn from_ops(ops: &[(usize, &str)]) -> Result<Self, NetworkError> {
        Self::new(
            ops.iter()
                .map(|&(patch, name)| StringEntry { patch, op: Some(name.to_string()) })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[StringEntry] {
        &self.entries
    }
}

/// Self-consistency diagnostics of a network state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyResiduals {
    /// max over directed edges of ||V_IJ psi_J - psi_I||.
    pub vpsi: f64,
    /// max over patch triangles of ||V_IJ V_JK - V_IK||_F.
    pub triangle: f64,
    /// max over edges of (largest singular value of V_IJ) - 1, floored at 0.
    pub sv_excess: f64,
}

#[derive(Debug, Clone)]
pub struct Qgn {
    graph: PatchGraph,
    psis: Vec<CVec>,
    ops: Vec<BTreeMap<String, CMat>>,
    edges: BTreeMap<(usize, usize), CMat>,
}

impl Qgn {
    /// Validates shapes only; consistency of the data is a separate,
    /// deliberately non-fatal diagnostic so that damaged networks can still
    /// be loaded and reported on.
    pub fn new(
        graph: PatchGraph,
        psis: Vec<CVec>,
        ops: Vec<BTreeMap<String, CMat>>,
        edges: BTreeMap<(usize, usize), CMat>,
    ) -> Result<Self, NetworkError> {
        let n = graph.n_patches();
        if psis.len() != n {
            return Err(NetworkError::PatchCountMismatch { expected: n, got: psis.len() });
        }
        if ops.len() != n {
            return Err(NetworkError::PatchCountMismatch { expected: n, got: ops.len() });
        }
        for (p, table) in ops.iter().enumerate() {
            let chi = psis[p].len();
            if chi == 0 {
                return Err(NetworkError::Dimension(format!("patch {p} has dimension 0")));
            }
            for (name, mat) in table {
                if mat.dim() != (chi, chi) {
                    return Err(NetworkError::Dimension(format!(
                        "operator {name:?} on patch {p} is {:?}, expected ({chi}, {chi})",
                        mat.dim()
                    )));
                }
            }
        }
        let graph_edges: std::collections::BTreeSet<(usize, usize)> = graph.edges().collect();
        let stored: std::collections::BTreeSet<(usize, usize)> = edges.keys().copied().collect();
        if graph_edges != stored {
            return Err(NetworkError::Dimension(
                "stored connections do not match the patch-graph edges".into(),
            ));
        }
        for (&(i, j), v) in &edges {
            if v.dim() != (psis[i].len(), psis[j].len()) {
                return Err(NetworkError::Dimension(format!(
                    "connection ({i}, {j}) is {:?}, expected ({}, {})",
                    v.dim(),
                    psis[i].len(),
                    psis[j].len()
                )));
            }
        }
        Ok(Qgn { graph, psis, ops, edges })
    }

    pub fn graph(&self) -> &PatchGraph {
        &self.graph
    }

    pub fn n_patches(&self) -> usize {
        self.psis.len()
    }

    pub fn chi(&self, p: usize) -> usize {
        self.psis[p].len()
    }

    pub fn max_chi(&self) -> usize {
        self.psis.iter().map(|v| v.len()).max().unwrap_or(0)
    }

    pub fn psi(&self, p: usize) -> &CVec {
        &self.psis[p]
    }

    pub fn op(&self, p: usize, name: &str) -> Option<&CMat> {
        self.ops[p].get(name)
    }

    pub fn op_table(&self, p: usize) -> &BTreeMap<String, CMat> {
        &self.ops[p]
    }

    /// Stored connection for an edge key (i < j).
    pub fn edge(&self, i: usize, j: usize) -> Option<&CMat> {
        self.edges.get(&(i, j))
    }

    pub fn edges(&self) -> &BTreeMap<(usize, usize), CMat> {
        &self.edges
    }

    /// V_{ij} ket for any adjacent ordered pair, materializing the adjoint
    /// direction on the fly.
    pub fn connection_apply(&self, i: usize, j: usize, ket: &CVec) -> Result<CVec, NetworkError> {
        if i == j {
            return Ok(ket.clone());
        }
        if i < j {
            let v = self.edges.get(&(i, j)).ok_or(NetworkError::Disconnected { i, j })?;
            Ok(v.dot(ket))
        } else {
            let v = self.edges.get(&(j, i)).ok_or(NetworkError::Disconnected { i, j })?;
            let tmp = ket.mapv(|z| z.conj());
            Ok(v.t().dot(&tmp).mapv(|z| z.conj()))
        }
    }

    /// row-vector times V_{from,to}.
    fn bra_times_connection(&self, bra: &CVec, from: usize, to: usize) -> Result<CVec, NetworkError> {
        if from < to {
            let v = self
                .edges
                .get(&(from, to))
                .ok_or(NetworkError::Disconnected { i: from, j: to })?;
            Ok(v.t().dot(bra))
        } else {
            let v = self
                .edges
                .get(&(to, from))
                .ok_or(NetworkError::Disconnected { i: from, j: to })?;
            let tmp = bra.mapv(|z| z.conj());
            Ok(v.dot(&tmp).mapv(|z| z.conj()))
        }
    }

    /// Contracts <psi_first | M_1 V .. M_k | psi_last> over resolved entries,
    /// bridging non-adjacent hops along stored breadth-first paths.
    fn eval_entries(&self, entries: &[(usize, Option<&CMat>)]) -> Result<C64, NetworkError> {
        let Some(&(p0, _)) = entries.first() else {
            return Err(NetworkError::EmptyString);
        };
        let mut bra = self.psis[p0].mapv(|z| z.conj());
        let mut cur = p0;
        for &(p, op) in entries {
            if p >= self.n_patches() {
                return Err(NetworkError::Dimension(format!(
                    "patch index {p} out of range for {} patches",
                    self.n_patches()
                )));
            }
            if p != cur {
                let path: Vec<usize> = if self.graph.are_adjacent(cur, p) {
                    vec![cur, p]
                } else {
                    let stored = self.graph.path(cur, p);
                    if stored.is_empty() {
                        return Err(NetworkError::Disconnected { i: cur, j: p });
                    }
                    stored.to_vec()
                };
                for hop in path.windows(2) {
                    bra = self.bra_times_connection(&bra, hop[0], hop[1])?;
                }
                cur = p;
            }
            if let Some(m) = op {
                if m.dim() != (bra.len(), bra.len()) {
                    return Err(NetworkError::Dimension(format!(
                        "operator on patch {p} is {:?}, expected ({}, {})",
                        m.dim(),
                        bra.len(),
                        bra.len()
                    )));
                }
                bra = m.t().dot(&bra);
            }
        }
        Ok(bra.iter().zip(self.psis[cur].iter()).map(|(a, b)| a * b).sum())
    }

    /// max over directed edges of ||V_IJ psi_J - psi_I||.
    pub fn vpsi_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (&(i, j), v) in &self.edges {
            let forward = v.dot(&self.psis[j]);
            let df: f64 = forward
                .iter()
                .zip(self.psis[i].iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum();
            worst = worst.max(df.sqrt());
            let back = dag(v).dot(&self.psis[i]);
            let db: f64 = back
                .iter()
                .zip(self.psis[j].iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum();
            worst = worst.max(db.sqrt());
        }
        worst
    }

    /// max over stored triangles of ||V_IJ V_JK - V_IK||_F (0 when the patch
    /// graph has no triangles, as in one dimension).
    pub fn triangle_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, j, k) in self.graph.triangles() {
            let vij = &self.edges[&(i, j)];
            let vjk = &self.edges[&(j, k)];
            let vik = &self.edges[&(i, k)];
            let prod = vij.dot(vjk);
            let d2: f64 = prod.iter().zip(vik.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
            worst = worst.max(d2.sqrt());
        }
        worst
    }

    /// Largest amount by which any connection singular value exceeds 1.
    pub fn sv_excess(&self) -> f64 {
        let mut worst = 0.0f64;
        for v in self.edges.values() {
            if let Ok(svs) = singular_values(v) {
                if let Some(&top) = svs.first() {
                    worst = worst.max(top - 1.0);
                }
            }
        }
        worst.max(0.0)
    }

    pub fn consistency_residuals(&self) -> ConsistencyResiduals {
        ConsistencyResiduals {
            vpsi: self.vpsi_residual(),
            triangle: self.triangle_residual(),
            sv_excess: self.sv_excess(),
        }
    }

    /// Frame update used by the integrator: psi -> U psi and
    /// V -> U_i V U_j^dagger, with the operator tables deliberately left
    /// untouched (they represent fixed physical operators in the original
    /// frame, not frame-dependent data).
    pub(crate) fn apply_frame_unitaries(&mut self, frames: &[CMat]) {
        debug_assert_eq!(frames.len(), self.psis.len());
        for (p, psi) in self.psis.iter_mut().enumerate() {
            *psi = frames[p].dot(&*psi);
        }
        for (&(i, j), v) in self.edges.iter_mut() {
            *v = frames[i].dot(&*v).dot(&dag(&frames[j]));
        }
    }
}

/// <string> on the network, propagating a bra across connections.
pub fn expectation_string(qgn: &Qgn, string: &OperatorString) -> Result<C64, NetworkError> {
    let mut resolved = Vec::with_capacity(string.entries().len());
    for e in string.entries() {
        if e.patch >= qgn.n_patches() {
            return Err(NetworkError::Dimension(format!(
                "patch index {} out of range for {} patches",
                e.patch,
                qgn.n_patches()
            )));
        }
        let m = match &e.op {
            None => None,
            Some(name) => Some(qgn.op(e.patch, name).ok_or_else(|| {
                NetworkError::UnknownOperator { patch: e.patch, name: name.clone() }
            })?),
        };
        resolved.push((e.patch, m));
    }
    qgn.eval_entries(&resolved)
}

/// <A B> - <A><B> for two named patch operators.
///
/// Requires the network to satisfy connection consistency to 1e-8, since the
/// subtraction is only meaningful when single-operator expectations are
/// frame-independent.
pub fn connected_two_point(
    qgn: &Qgn,
    a: (usize, &str),
    b: (usize, &str),
) -> Result<C64, NetworkError> {
    let residual = qgn.vpsi_residual();
    if residual > 1e-8 {
        return Err(NetworkError::Inconsistent { residual });
    }
    let joint = expectation_string(qgn, &OperatorString::from_ops(&[a, b])?)?;
    let ea = expectation_string(qgn, &OperatorString::single(a.0, a.1))?;
    let eb = expectation_string(qgn, &OperatorString::single(b.0, b.1))?;
    Ok(joint - ea * eb)
}

/// Average of <psi_P| A |psi_P> over every patch containing `site`, using the
/// operator named `base` followed by the site index.
pub fn mean_local_expectation(qgn: &Qgn, base: &str, site: usize) -> Result<C64, NetworkError> {
    let patches = qgn.graph().patches_containing(site);
    if patches.is_empty() {
        return Err(NetworkError::UncoveredSite { site });
    }
    let name = crate::fock::site_op_name(base, site);
    let mut acc = C64::new(0.0, 0.0);
    for &p in &patches {
        let m = qgn
            .op(p, &name)
            .ok_or_else(|| NetworkError::UnknownOperator { patch: p, name: name.clone() })?;
        let mpsi = m.dot(qgn.psi(p));
        let val: C64 = qgn.psi(p).iter().zip(mpsi.iter()).map(|(a, b)| a.conj() * b).sum();
        acc += val;
    }
    Ok(acc / C64::new(patches.len() as f64, 0.0))
}

/// Applies one unitary per patch: psi -> U psi, A -> U A U†, V_IJ -> U_I V_IJ U_J†.
pub fn gauge_transform(qgn: &Qgn, gauges: &[CMat]) -> Result<Qgn, NetworkError> {
    if gauges.len() != qgn.n_patches() {
        return Err(NetworkError::PatchCountMismatch {
            expected: qgn.n_patches(),
            got: gauges.len(),
        });
    }
    for (p, u) in gauges.iter().enumerate() {
        let chi = qgn.chi(p);
        if u.dim() != (chi, chi) {
            return Err(NetworkError::Dimension(format!(
                "gauge on patch {p} is {:?}, expected ({chi}, {chi})",
                u.dim()
            )));
        }
        let residual = unitarity_residual(u);
        if residual > 1e-10 {
            return Err(NetworkError::NotUnitary { patch: p, residual });
        }
    }
    let psis = (0..qgn.n_patches()).map(|p| gauges[p].dot(qgn.psi(p))).collect();
    let ops = (0..qgn.n_patches())
        .map(|p| {
            qgn.op_table(p)
                .iter()
                .map(|(name, a)| (name.clone(), gauges[p].dot(a).dot(&dag(&gauges[p]))))
                .collect()
        })
        .collect();
    let edges = qgn
        .edges()
        .iter()
        .map(|(&(i, j), v)| ((i, j), gauges[i].dot(v).dot(&dag(&gauges[j]))))
        .collect();
    Qgn::new(qgn.graph().clone(), psis, ops, edges)
}

/// Reconstructs the full density matrix from all Pauli-string expectations,
/// rho = 2^-n sum_P <P> P, with site `i` stored in bit `i` of the row index
/// and bit value 0 meaning spin up.
///
/// Each site's Pauli is taken from the first patch along the covering path
/// (or ascending patch order) that contains the site; needs the per-site
/// operator names "sx{i}", "sy{i}", "sz{i}" in the patch tables.
pub fn density_matrix_from_qgn(qgn: &Qgn) -> Result<CMat, NetworkError> {
    let n = qgn.graph().n_sites();
    if n > 8 {
        return Err(NetworkError::Dimension(format!(
            "density-matrix reconstruction supports at most 8 sites, got {n}"
        )));
    }
    let order: Vec<usize> = match qgn.graph().covering_path() {
        Some(path) => path.to_vec(),
        None => (0..qgn.n_patches()).collect(),
    };
    let mut site_patch = vec![usize::MAX; n];
    for &p in &order {
        for &s in qgn.graph().patch(p) {
            if site_patch[s] == usize::MAX {
                site_patch[s] = p;
            }
        }
    }
    // patches outside the order still cover their sites deterministically
    for p in 0..qgn.n_patches() {
        for &s in qgn.graph().patch(p) {
            if site_patch[s] == usize::MAX {
                site_patch[s] = p;
            }
        }
    }
    if let Some(site) = site_patch.iter().position(|&p| p == usize::MAX) {
        return Err(NetworkError::UncoveredSite { site });
    }

    let dim = 1usize << n;
    let mut rho = CMat::zeros((dim, dim));
    let axes = ["", "sx", "sy", "sz"];
    for code in 0..(4usize.pow(n as u32)) {
        let mus: Vec<usize> = (0..n).map(|s| (code >> (2 * s)) & 3).collect();
        let value = if code == 0 {
            C64::new(1.0, 0.0)
        } else {
            // per-patch product of the requested Paulis, in covering order
            let mut per_patch: Vec<(usize, CMat)> = Vec::new();
            for &p in &order {
                let mut prod: Option<CMat> = None;
                for &s in qgn.graph().patch(p) {
                    if mus[s] == 0 || site_patch[s] != p {
                        continue;
                    }
                    let name = crate::fock::site_op_name(axes[mus[s]], s);
                    let m = qgn.op(p, &name).ok_or_else(|| NetworkError::UnknownOperator {
                        patch: p,
                        name: name.clone(),
                    })?;
                    prod = Some(match prod {
                        None => m.clone(),
                        Some(acc) => acc.dot(m),
                    });
                }
                if let Some(m) = prod {
                    per_patch.push((p, m));
                }
            }
            let entries: Vec<(usize, Option<&CMat>)> =
                per_patch.iter().map(|(p, m)| (*p, Some(m))).collect();
            qgn.eval_entries(&entries)?
        };
        let weight = value / C64::new(dim as f64, 0.0);
        let mut flip = 0usize;
        for (s, &mu) in mus.iter().enumerate() {
            if mu == 1 || mu == 2 {
                flip |= 1 << s;
            }
        }
        for col in 0..dim {
            let mut phase = C64::new(1.0, 0.0);
            for (s, &mu) in mus.iter().enumerate() {
                let bit = (col >> s) & 1;
                phase *= match (mu, bit) {
                    (2, 0) => C64::new(0.0, 1.0),
                    (2, 1) => C64::new(0.0, -1.0),
                    (3, 0) => C64::new(1.0, 0.0),
                    (3, 1) => C64::new(-1.0, 0.0),
                    _ => C64::new(1.0, 0.0),
                };
            }
            rho[(col ^ flip, col)] += weight * phase;
        }
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_single_site_patch_graph, LatticeSpec, PathStyle};
    use crate::linalg::expm_minus_i;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn chain_graph(n: usize) -> PatchGraph {
        let lat = LatticeSpec::uniform(vec![n], false).unwrap();
        build_single_site_patch_graph(&lat, PathStyle::Snake).unwrap()
    }

    /// Two single-site patches sharing a maximally mixed-looking qubit pair:
    /// the compressed form of (|ud> + |du>)/sqrt(2) onto each site.
    fn updown_network() -> Qgn {
        let graph = chain_graph(2);
        let amp = std::f64::consts::FRAC_1_SQRT_2;
        let psi = CVec::from(vec![c(amp, 0.0), c(amp, 0.0)]);
        let sz = ndarray::arr2(&[[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]]);
        let mz = sz.mapv(|z| -z);
        let zero = CMat::zeros((2, 2));
        let mut t0 = BTreeMap::new();
        t0.insert("sz0".to_string(), sz.clone());
        t0.insert("sx0".to_string(), zero.clone());
        t0.insert("sy0".to_string(), zero.clone());
        let mut t1 = BTreeMap::new();
        // the two sites are anti-aligned in every branch
        t1.insert("sz1".to_string(), mz);
        t1.insert("sx1".to_string(), zero.clone());
        t1.insert("sy1".to_string(), zero);
        let mut edges = BTreeMap::new();
        edges.insert((0, 1), CMat::eye(2));
        Qgn::new(graph, vec![psi.clone(), psi], vec![t0, t1], edges).unwrap()
    }

    fn product_chain(n: usize, bits: &[u8]) -> Qgn {
        let graph = chain_graph(n);
        let mut psis = Vec::new();
        let mut tables = Vec::new();
        for &b in bits {
            psis.push(CVec::from(vec![c(1.0, 0.0)]));
            let mut t = BTreeMap::new();
            let occ = if b == 1 { 1.0 } else { 0.0 };
            t.insert(format!("n{}", tables.len()), ndarray::arr2(&[[c(occ, 0.0)]]));
            tables.push(t);
        }
        let mut edges = BTreeMap::new();
        for (i, j) in graph.edges() {
            edges.insert((i, j), CMat::eye(1));
        }
        Qgn::new(graph, psis, tables, edges).unwrap()
    }

    #[test]
    fn identity_string_evaluates_to_one() {
        let qgn = product_chain(4, &[1, 0, 1, 0]);
        let s = OperatorString::new(vec![
            StringEntry { patch: 0, op: None },
            StringEntry { patch: 3, op: None },
        ])
        .unwrap();
        let v = expectation_string(&qgn, &s).unwrap();
        assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn product_chain_occupations_and_bridging() {
        let qgn = product_chain(4, &[1, 0, 1, 0]);
        for (site, want) in [(0, 1.0), (1, 0.0), (2, 1.0), (3, 0.0)] {
            let v = mean_local_expectation(&qgn, "n", site).unwrap();
            assert_abs_diff_eq!(v.re, want, epsilon = 1e-15);
            assert!(v.im.abs() < 1e-15);
        }
        // non-adjacent two-point hops through the bridge automatically
        let s = OperatorString::from_ops(&[(0, "n0"), (3, "n3")]).unwrap();
        let v = expectation_string(&qgn, &s).unwrap();
        assert_abs_diff_eq!(v.re, 0.0, epsilon = 1e-15);
        let s2 = OperatorString::from_ops(&[(0, "n0"), (2, "n2")]).unwrap();
        assert_abs_diff_eq!(expectation_string(&qgn, &s2).unwrap().re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn anticorrelated_pair_expectations() {
        let qgn = updown_network();
        assert_abs_diff_eq!(
            expectation_string(&qgn, &OperatorString::single(0, "sz0")).unwrap().re,
            0.0,
            epsilon = 1e-15
        );
        let zz = OperatorString::from_ops(&[(0, "sz0"), (1, "sz1")]).unwrap();
        assert_abs_diff_eq!(expectation_string(&qgn, &zz).unwrap().re, -1.0, epsilon = 1e-15);
        let cc = connected_two_point(&qgn, (0, "sz0"), (1, "sz1")).unwrap();
        assert_abs_diff_eq!(cc.re, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn connected_two_point_vanishes_on_product_state() {
        let qgn = product_chain(3, &[1, 1, 0]);
        let v = connected_two_point(&qgn, (0, "n0"), (2, "n2")).unwrap();
        assert_abs_diff_eq!(v.re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn unknown_operator_is_reported() {
        let qgn = product_chain(2, &[1, 0]);
        let err = expectation_string(&qgn, &OperatorString::single(0, "sx0"));
        assert!(matches!(err, Err(NetworkError::UnknownOperator { patch: 0, .. })));
    }

    #[test]
    fn gauge_transform_preserves_expectations_and_residuals() {
        let qgn = updown_network();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let gauges: Vec<CMat> = (0..2)
            .map(|_| {
                let mut h = CMat::zeros((2, 2));
                for r in 0..2 {
                    for s in 0..2 {
                        h[(r, s)] = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                    }
                }
                let h = h.clone() + crate::linalg::dag(&h);
                expm_minus_i(&h, 1.0).unwrap()
            })
            .collect();
        let turned = gauge_transform(&qgn, &gauges).unwrap();
        let zz = OperatorString::from_ops(&[(0, "sz0"), (1, "sz1")]).unwrap();
        let before = expectation_string(&qgn, &zz).unwrap();
        let after = expectation_string(&turned, &zz).unwrap();
        assert!((before - after).norm() < 1e-12);
        let r0 = qgn.consistency_residuals();
        let r1 = turned.consistency_residuals();
        assert!(r0.vpsi < 1e-12 && r1.vpsi < 1e-12);
        assert!(r1.sv_excess < 1e-9);
    }

    #[test]
    fn non_unitary_gauge_rejected() {
        let qgn = product_chain(2, &[0, 0]);
        let bad = vec![CMat::eye(1).mapv(|z| z * c(2.0, 0.0)), CMat::eye(1)];
        assert!(matches!(
            gauge_transform(&qgn, &bad),
            Err(NetworkError::NotUnitary { patch: 0, .. })
        ));
    }

    #[test]
    fn perturbed_connection_shows_in_residuals() {
        let mut qgn = product_chain(3, &[1, 0, 1]);
        let v = qgn.edges.get_mut(&(0, 1)).unwrap();
        v[(0, 0)] += c(1e-3, 0.0);
        let res = qgn.consistency_residuals();
        assert!(res.vpsi > 5e-4 && res.vpsi < 5e-3, "vpsi {}", res.vpsi);
        assert!(res.sv_excess > 5e-4 && res.sv_excess < 5e-3);
    }

    #[test]
    fn density_matrix_of_product_state_is_projector() {
        // |up up>: needs all three Pauli names per site
        let graph = chain_graph(2);
        let mut psis = Vec::new();
        let mut tables = Vec::new();
        for site in 0..2 {
            psis.push(CVec::from(vec![c(1.0, 0.0)]));
            let mut t = BTreeMap::new();
            t.insert(format!("sx{site}"), ndarray::arr2(&[[c(0.0, 0.0)]]));
            t.insert(format!("sy{site}"), ndarray::arr2(&[[c(0.0, 0.0)]]));
            t.insert(format!("sz{site}"), ndarray::arr2(&[[c(1.0, 0.0)]]));
            tables.push(t);
        }
        let mut edges = BTreeMap::new();
        edges.insert((0, 1), CMat::eye(1));
        let qgn = Qgn::new(graph, psis, tables, edges).unwrap();
        let rho = density_matrix_from_qgn(&qgn).unwrap();
        for r in 0..4 {
            for s in 0..4 {
                let want = if r == 0 && s == 0 { 1.0 } else { 0.0 };
                assert!((rho[(r, s)] - c(want, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn density_matrix_of_anticorrelated_pair_is_even_mixture() {
        // sx = sy = 0 on both sites kills every coherence; the reconstruction
        // is the classical mixture of up-down and down-up.
        let qgn = updown_network();
        let rho = density_matrix_from_qgn(&qgn).unwrap();
        let trace: C64 = (0..4).map(|i| rho[(i, i)]).sum();
        assert_abs_diff_eq!(trace.re, 1.0, epsilon = 1e-13);
        // states 0b01 (site0 down) and 0b10 hold one half each
        assert_abs_diff_eq!(rho[(1, 1)].re, 0.5, epsilon = 1e-13);
        assert_abs_diff_eq!(rho[(2, 2)].re, 0.5, epsilon = 1e-13);
        assert!(rho[(0, 0)].norm() < 1e-13 && rho[(3, 3)].norm() < 1e-13);
        for r in 0..4 {
            for s in 0..4 {
                if r != s {
                    assert!(rho[(r, s)].norm() < 1e-13);
                }
            }
        }
    }
}
