//! Exact time evolution oracles: dense eigendecomposition for small spaces,
//! adaptive subspace (Lanczos) propagation for large sparse Hamiltonians, and
//! the quadratic-Hamiltonian correlation-matrix evolution.

use super::{Basis, BasisKind, FockError, SparseOperator};
use crate::lattice::LatticeSpec;
use crate::linalg::{dag, eigh, expm_minus_i, herm_residual, vec_norm, CMat, CVec};
use num_complex::Complex64 as C64;

/// Single-particle correlation matrix C_ij = <c†_i c_j>.
pub type CorrelationMatrix = CMat;

#[derive(Debug, Clone, Copy)]
pub struct KrylovConfig {
    /// Maximum subspace dimension per substep.
    pub dim: usize,
    /// Acceptance tolerance on the subspace-truncation estimate per substep.
    pub tol: f64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig { dim: 30, tol: 1e-12 }
    }
}

const DENSE_CUTOFF: usize = 512;

/// exp(-i H t) |state>, choosing dense eigendecomposition below dimension 512
/// and adaptive subspace propagation above.
///
/// `h` must be Hermitian; the flag is trusted when set and verified otherwise.
pub fn exact_evolve(state: &CVec, h: &SparseOperator, t: f64) -> Result<CVec, FockError> {
    check_square_hermitian(h, state.len())?;
    if h.nrows() < DENSE_CUTOFF {
        exact_evolve_dense(state, h, t)
    } else {
        exact_evolve_krylov(state, h, t, &KrylovConfig::default())
    }
}

fn check_square_hermitian(h: &SparseOperator, state_len: usize) -> Result<(), FockError> {
    if h.nrows() != h.ncols() || h.ncols() != state_len {
        return Err(FockError::DimensionMismatch(format!(
            "hamiltonian {}x{} applied to state of length {}",
            h.nrows(),
            h.ncols(),
            state_len
        )));
    }
    if !h.hermitian() {
        let residual = h.hermiticity_residual();
        if residual > 1e-10 {
            return Err(FockError::NotHermitian { residual });
        }
    }
    Ok(())
}

/// Propagation through the full eigendecomposition of the dense Hamiltonian.
pub fn exact_evolve_dense(state: &CVec, h: &SparseOperator, t: f64) -> Result<CVec, FockError> {
    check_square_hermitian(h, state.len())?;
    let (w, e) = eigh(&h.to_dense())?;
    let mut y = dag(&e).dot(state);
    for (k, yk) in y.iter_mut().enumerate() {
        let phase = C64::new(0.0, -w[k] * t).exp();
        *yk *= phase;
    }
    Ok(e.dot(&y))
}

/// Adaptive short-iterate subspace propagation with full reorthogonalization.
///
/// Each substep builds a tridiagonal reduction of H on the Krylov space of the
/// current state. A substep is accepted when the propagated coefficients agree
/// between the full subspace and the one-smaller subspace within the substep's
/// proportional share of `cfg.tol`; otherwise the substep is halved. Exact
/// subspace exhaustion (happy breakdown) is accepted unconditionally.
pub fn exact_evolve_krylov(
    state: &CVec,
    h: &SparseOperator,
    t: f64,
    cfg: &KrylovConfig,
) -> Result<CVec, FockError> {
    check_square_hermitian(h, state.len())?;
    let norm0 = vec_norm(state);
    if t == 0.0 || norm0 == 0.0 {
        return Ok(state.clone());
    }
    let total = t;
    let mut psi = state.clone();
    let mut done = 0.0f64;
    let mut sub = total;
    let mut rejects = 0u32;
    let mut steps = 0u64;
    while (total - done).abs() > 1e-15 * total.abs() {
        steps += 1;
        if steps > 1_000_000 {
            return Err(FockError::NoConvergence { tol: cfg.tol, substep: sub });
        }
        let rem = total - done;
        if sub.abs() > rem.abs() {
            sub = rem;
        }
        let budget = (cfg.tol * (sub / total).abs()).max(1e-16);
        match krylov_substep(&psi, h, sub, cfg, budget)? {
            Some((next, err)) => {
                psi = next;
                done += sub;
                if err < 0.01 * budget {
                    sub *= 2.0;
                }
            }
            None => {
                rejects += 1;
                if rejects > 200 {
                    return Err(FockError::NoConvergence { tol: cfg.tol, substep: sub });
                }
                sub *= 0.5;
            }
        }
    }
    Ok(psi)
}

/// One candidate substep; None when the truncation estimate exceeds `budget`,
/// otherwise the propagated state and the estimate.
fn krylov_substep(
    psi: &CVec,
    h: &SparseOperator,
    dt: f64,
    cfg: &KrylovConfig,
    budget: f64,
) -> Result<Option<(CVec, f64)>, FockError> {
    let n = psi.len();
    let beta0 = vec_norm(psi);
    let m_max = cfg.dim.max(2).min(n);
    let mut vs: Vec<CVec> = Vec::with_capacity(m_max);
    vs.push(psi.mapv(|z| z / beta0));
    let mut alphas: Vec<f64> = Vec::with_capacity(m_max);
    let mut betas: Vec<f64> = Vec::with_capacity(m_max);
    let mut happy = false;
    let scale = 1e-14 * beta0.max(1.0);
    for k in 0..m_max {
        let mut w = h.apply(&vs[k]);
        let ak: C64 = inner(&vs[k], &w);
        alphas.push(ak.re);
        // two full reorthogonalization passes keep the basis orthonormal
        for _ in 0..2 {
            for v in &vs {
                let ov = inner(v, &w);
                w.zip_mut_with(v, |wi, vi| *wi -= ov * vi);
            }
        }
        let bk = vec_norm(&w);
        if bk < scale {
            // the subspace is invariant: propagation inside it is exact
            happy = true;
            break;
        }
        if k + 1 == m_max {
            break;
        }
        betas.push(bk);
        vs.push(w.mapv(|z| z / bk));
    }
    let m = alphas.len();
    debug_assert_eq!(betas.len(), m - 1);
    let y_full = tridiag_propagate(&alphas, &betas, dt)?;
    let (accepted, err) = if happy || m == 1 {
        (true, 0.0)
    } else {
        let y_small = tridiag_propagate(&alphas[..m - 1], &betas[..m - 2], dt)?;
        let mut e2 = y_full[m - 1].norm_sqr();
        for j in 0..m - 1 {
            e2 += (y_full[j] - y_small[j]).norm_sqr();
        }
        let err = e2.sqrt();
        (err <= budget, err)
    };
    if !accepted {
        return Ok(None);
    }
    let mut out = CVec::zeros(n);
    for (j, v) in vs.iter().enumerate().take(m) {
        let coeff = y_full[j] * beta0;
        out.zip_mut_with(v, |oi, vi| *oi += coeff * vi);
    }
    Ok(Some((out, err)))
}

fn inner(a: &CVec, b: &CVec) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// First column of exp(-i T dt) for the real tridiagonal T.
fn tridiag_propagate(alphas: &[f64], betas: &[f64], dt: f64) -> Result<Vec<C64>, FockError> {
    let m = alphas.len();
    let mut tmat = CMat::zeros((m, m));
    for (k, &a) in alphas.iter().enumerate() {
        tmat[(k, k)] = C64::new(a, 0.0);
    }
    for (k, &b) in betas.iter().enumerate() {
        tmat[(k, k + 1)] = C64::new(b, 0.0);
        tmat[(k + 1, k)] = C64::new(b, 0.0);
    }
    let (w, e) = eigh(&tmat)?;
    let mut out = vec![C64::new(0.0, 0.0); m];
    for k in 0..m {
        let phase = C64::new(0.0, -w[k] * dt).exp() * e[(0, k)].conj();
        for (j, oj) in out.iter_mut().enumerate() {
            *oj += e[(j, k)] * phase;
        }
    }
    Ok(out)
}

/// Evolves a single-particle correlation matrix under the quadratic
/// Hamiltonian H = sum_ij h_ij c†_i c_j:  C(t) = W C(0) W† with W = exp(i h^T t).
pub fn free_fermion_evolve(
    h_single: &CMat,
    c0: &CorrelationMatrix,
    t: f64,
) -> Result<CorrelationMatrix, FockError> {
    let n = h_single.nrows();
    if h_single.ncols() != n || c0.dim() != (n, n) {
        return Err(FockError::DimensionMismatch(format!(
            "hopping matrix {:?} vs correlation matrix {:?}",
            h_single.dim(),
            c0.dim()
        )));
    }
    let residual = herm_residual(h_single);
    if residual > 1e-8 {
        return Err(FockError::NotHermitian { residual });
    }
    let ht = h_single.t().to_owned();
    let w = expm_minus_i(&ht, -t)?;
    Ok(w.dot(c0).dot(&dag(&w)))
}

/// Nearest-neighbor hopping matrix h_ij = -1 on lattice bonds.
pub fn hopping_matrix(lattice: &LatticeSpec) -> CMat {
    let n = lattice.num_sites();
    let mut h = CMat::zeros((n, n));
    for (i, j) in lattice.bonds() {
        h[(i, j)] = C64::new(-1.0, 0.0);
        h[(j, i)] = C64::new(-1.0, 0.0);
    }
    h
}

/// C_ij = <state| c†_i c_j |state> on a fermion basis.
pub fn correlation_matrix(basis: &Basis, state: &CVec) -> Result<CorrelationMatrix, FockError> {
    if basis.kind() != BasisKind::Fermion {
        return Err(FockError::KindMismatch { expected: "fermion" });
    }
    if state.len() != basis.len() {
        return Err(FockError::DimensionMismatch(format!(
            "state length {} vs basis size {}",
            state.len(),
            basis.len()
        )));
    }
    let n = basis.n_sites();
    // phi_j = c_j |state>, indexed by the lowered bitstring itself
    let mut lowered: Vec<std::collections::HashMap<u64, C64>> = vec![Default::default(); n];
    for (idx, &s) in basis.states().iter().enumerate() {
        let amp = state[idx];
        if amp == C64::new(0.0, 0.0) {
            continue;
        }
        for (j, low) in lowered.iter_mut().enumerate() {
            if let Some((s2, sign)) = super::jw_annihilate(s, j) {
                *low.entry(s2).or_insert(C64::new(0.0, 0.0)) += amp * sign;
            }
        }
    }
    let mut c = CMat::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for (s, &ai) in &lowered[i] {
                if let Some(&aj) = lowered[j].get(s) {
                    acc += ai.conj() * aj;
                }
            }
            c[(i, j)] = acc;
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{
        build_basis, build_local_hamiltonians, total_hamiltonian, BasisKind, Model,
    };
    use crate::lattice::build_nn_patch_graph;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn chain_hamiltonian(n: usize, sector: usize, v: f64, periodic: bool) -> (Basis, SparseOperator) {
        let lat = LatticeSpec::uniform(vec![n], periodic).unwrap();
        let g = build_nn_patch_graph(&lat).unwrap();
        let basis = build_basis(BasisKind::Fermion, n, Some(sector)).unwrap();
        let local = build_local_hamiltonians(Model::Fermi { v }, &g, &basis).unwrap();
        let h = total_hamiltonian(&local);
        (basis, h)
    }

    fn random_sparse_hermitian(n: usize, per_row: usize, rng: &mut ChaCha8Rng) -> SparseOperator {
        let mut triplets = Vec::new();
        for r in 0..n {
            triplets.push((r, r, c(rng.random::<f64>() - 0.5, 0.0)));
            for _ in 0..per_row {
                let col = rng.random_range(0..n);
                let val = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                triplets.push((r, col, val));
                triplets.push((col, r, val.conj()));
            }
        }
        SparseOperator::from_triplets(n, n, triplets)
            .into_hermitian_checked(1e-14)
            .unwrap()
    }

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> CVec {
        let raw: Vec<C64> =
            (0..n).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let v = CVec::from(raw);
        let norm = vec_norm(&v);
        v.mapv(|z| z / norm)
    }

    #[test]
    fn zero_time_is_identity() {
        let (basis, h) = chain_hamiltonian(4, 2, 0.3, false);
        let psi = basis.one_hot(0b0101).unwrap();
        let out = exact_evolve(&psi, &h, 0.0).unwrap();
        assert!(psi.iter().zip(out.iter()).all(|(a, b)| (a - b).norm() < 1e-15));
        let out_k = exact_evolve_krylov(&psi, &h, 0.0, &KrylovConfig::default()).unwrap();
        assert!(psi.iter().zip(out_k.iter()).all(|(a, b)| (a - b).norm() < 1e-15));
    }

    #[test]
    fn eigenstate_picks_up_pure_phase() {
        // Bonding state of a 2-site hop has energy -1.
        let (basis, h) = chain_hamiltonian(2, 1, 0.0, false);
        let mut psi = CVec::zeros(basis.len());
        psi[0] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        psi[1] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let t = 0.9;
        let out = exact_evolve(&psi, &h, t).unwrap();
        let overlap: C64 = psi.iter().zip(out.iter()).map(|(a, b)| a.conj() * b).sum();
        assert_abs_diff_eq!(overlap.re, t.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(overlap.im, t.sin(), epsilon = 1e-12);
    }

    #[test]
    fn two_site_occupation_oscillates_as_cos_squared() {
        let (basis, h) = chain_hamiltonian(2, 1, 0.0, false);
        let psi0 = basis.one_hot(0b01).unwrap(); // particle at site 0
        for &t in &[0.0, 0.3, 1.1, 2.5] {
            let out = exact_evolve(&psi0, &h, t).unwrap();
            let n0 = out[basis.index_of(0b01).unwrap()].norm_sqr();
            assert_abs_diff_eq!(n0, t.cos().powi(2), epsilon = 1e-12);
            let forced = exact_evolve_krylov(&psi0, &h, t, &KrylovConfig::default()).unwrap();
            let n0k = forced[basis.index_of(0b01).unwrap()].norm_sqr();
            assert_abs_diff_eq!(n0k, t.cos().powi(2), epsilon = 1e-12);
        }
    }

    #[test]
    fn krylov_matches_dense_on_dim_256() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_sparse_hermitian(256, 4, &mut rng);
        let psi = random_state(256, &mut rng);
        let t = 1.3;
        let dense = exact_evolve_dense(&psi, &h, t).unwrap();
        let krylov = exact_evolve_krylov(&psi, &h, t, &KrylovConfig::default()).unwrap();
        let diff: f64 = dense
            .iter()
            .zip(krylov.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-9, "krylov vs dense drift {diff:.2e}");
    }

    #[test]
    fn norm_preserved_to_1e10_over_long_time_dim_4096() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_sparse_hermitian(4096, 3, &mut rng);
        let psi = random_state(4096, &mut rng);
        let out = exact_evolve_krylov(&psi, &h, 10.0, &KrylovConfig::default()).unwrap();
        assert!((vec_norm(&out) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hopping_only_chain_matches_correlation_evolution() {
        let n = 6;
        let lat = LatticeSpec::uniform(vec![n], false).unwrap();
        let (basis, h) = chain_hamiltonian(n, 3, 0.0, false);
        let psi0 = basis.one_hot(0b010101).unwrap(); // sites 0, 2, 4 occupied
        let t = 1.7;
        let psi_t = exact_evolve(&psi0, &h, t).unwrap();
        let c_exact = correlation_matrix(&basis, &psi_t).unwrap();

        let hop = hopping_matrix(&lat);
        let mut c0 = CMat::zeros((n, n));
        for site in [0, 2, 4] {
            c0[(site, site)] = c(1.0, 0.0);
        }
        let c_ff = free_fermion_evolve(&hop, &c0, t).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!(
                    (c_exact[(i, j)] - c_ff[(i, j)]).norm() < 1e-9,
                    "correlation mismatch at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn free_fermion_two_site_rabi_and_ring_trace() {
        let lat2 = LatticeSpec::uniform(vec![2], false).unwrap();
        let hop2 = hopping_matrix(&lat2);
        let mut c0 = CMat::zeros((2, 2));
        c0[(0, 0)] = c(1.0, 0.0);
        for &t in &[0.0, 0.4, 1.9] {
            let ct = free_fermion_evolve(&hop2, &c0, t).unwrap();
            assert_abs_diff_eq!(ct[(0, 0)].re, t.cos().powi(2), epsilon = 1e-12);
        }

        let ring = LatticeSpec::uniform(vec![4], true).unwrap();
        let hop4 = hopping_matrix(&ring);
        let mut c4 = CMat::zeros((4, 4));
        c4[(0, 0)] = c(1.0, 0.0);
        c4[(2, 2)] = c(1.0, 0.0);
        let ct = free_fermion_evolve(&hop4, &c4, 2.3).unwrap();
        let trace: C64 = (0..4).map(|i| ct[(i, i)]).sum();
        assert_abs_diff_eq!(trace.re, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trace.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn non_hermitian_hamiltonian_rejected() {
        let bad = SparseOperator::from_triplets(2, 2, vec![(0, 1, c(1.0, 0.0))]);
        let psi = CVec::from(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(
            exact_evolve(&psi, &bad, 1.0),
            Err(FockError::NotHermitian { .. })
        ));
    }
}
