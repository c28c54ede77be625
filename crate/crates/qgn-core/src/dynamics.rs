//! Time evolution with an energy-aware modified fourth-order scheme.
//!
//! Instead of integrating the state and connections directly, each step
//! builds one unitary frame per patch, U_I = exp(-i dt sum_k b_k Gt_I^(k)),
//! and updates psi_I -> U_I psi_I, V_IJ -> U_I V_IJ U_J^dagger while the
//! operator tables stay fixed. Because the update is a pure frame change,
//! V_IJ psi_J = psi_I is preserved to floating-point accuracy at every step.
//!
//! Stage generators follow the tableau below: with stage frames
//! u^(k)_I = exp(-i dt sum_{l<k} a_kl Gt^(l)_I), the raw generator is
//! G^(k)_I = sum_J u_I V_IJ u_J^dag H_J u_J V_JI u_I^dag over J = I and its
//! graph neighbors, and the stage value is either G itself (`Plain`, second
//! order) or the symmetrized (u^dag G u + G) / 2 (`Symmetrized`, third
//! order).
//!
//! [`rk4_modified_step`] is the direct, allocation-heavy reference.
//! [`evolve`] runs the same arithmetic in cumulative frames C_I (the state
//! never leaves the initial basis, so 0/1 selection connections keep their
//! sparsity) and can exploit exact network symmetries: when a
//! [`NetworkAutomorphism`] maps psi, V, and the H tables onto themselves
//! bitwise, stage work is done once per orbit and permuted to the rest.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::fock::site_op_name;
use crate::linalg::{
    dag, expm_minus_i, frob_norm, herm_residual, hermitize, unitarity_residual, CMat, CVec,
    LinalgError,
};
use crate::network::{NetworkError, Qgn};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("patch {patch} has no \"H\" operator")]
    MissingHamiltonian { patch: usize },
    #[error("generator on patch {patch} lost hermiticity (residual {residual:.3e})")]
    NotHermitian { patch: usize, residual: f64 },
    #[error("operator {name:?} missing on patch {patch}")]
    MissingOperator { name: String, patch: usize },
    #[error("number column needs the per-site observable base {base:?}")]
    NumberNeedsBase { base: &'static str },
    #[error("patches {i} and {j} are not connected")]
    Disconnected { i: usize, j: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Stage weights a_kl of the fourth-order tableau.
pub const RK4_A: [[f64; 4]; 4] = [
    [0.0, 0.0, 0.0, 0.0],
    [0.5, 0.0, 0.0, 0.0],
    [0.0, 0.5, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
];
/// Output weights b_k of the fourth-order tableau.
pub const RK4_B: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorMode {
    /// (u^dag G u + G) / 2; third-order accurate.
    Symmetrized,
    /// G as computed; drops to second order, kept as a diagnostic.
    Plain,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub mode: GeneratorMode,
    /// Abort threshold for the Frobenius hermiticity residual of any stage
    /// generator.
    pub hermiticity_tol: f64,
}

impl IntegratorConfig {
    pub fn new(dt: f64) -> Self {
        IntegratorConfig { dt, mode: GeneratorMode::Symmetrized, hermiticity_tol: 1e-8 }
    }
}

fn required_op<'a>(qgn: &'a Qgn, patch: usize, name: &str) -> Result<&'a CMat, DynamicsError> {
    qgn.op(patch, name).ok_or_else(|| {
        if name == "H" {
            DynamicsError::MissingHamiltonian { patch }
        } else {
            DynamicsError::MissingOperator { name: name.to_string(), patch }
        }
    })
}

fn v_dense(qgn: &Qgn, i: usize, j: usize) -> Result<CMat, DynamicsError> {
    if i == j {
        return Ok(Array2::eye(qgn.chi(i)));
    }
    let (a, b) = (i.min(j), i.max(j));
    let v = qgn.edge(a, b).ok_or(DynamicsError::Disconnected { i, j })?;
    Ok(if i < j { v.clone() } else { dag(v) })
}

fn v_bridged(qgn: &Qgn, i: usize, j: usize) -> Result<CMat, DynamicsError> {
    if i == j {
        return Ok(Array2::eye(qgn.chi(i)));
    }
    if qgn.graph().are_adjacent(i, j) {
        return v_dense(qgn, i, j);
    }
    let path = qgn.graph().path(i, j);
    if path.len() < 2 {
        return Err(DynamicsError::Disconnected { i, j });
    }
    let mut v = v_dense(qgn, path[0], path[1])?;
    for w in path[1..].windows(2) {
        v = v.dot(&v_dense(qgn, w[0], w[1])?);
    }
    Ok(v)
}

/// The effective patch generator sum_J V_IJ H_J V_JI over J = `patch` and
/// its graph neighbors.
pub fn build_h_prime(qgn: &Qgn, patch: usize) -> Result<CMat, DynamicsError> {
    let mut g = required_op(qgn, patch, "H")?.clone();
    for &j in qgn.graph().patch_neighbors(patch) {
        let hj = required_op(qgn, j, "H")?;
        let v = v_dense(qgn, patch, j)?;
        g = g + v.dot(hj).dot(&dag(&v));
    }
    Ok(g)
}

/// One product of named patch operators with a real coefficient,
/// h * tau_J ... tau_K.
#[derive(Debug, Clone)]
pub struct CouplingTerm {
    pub coeff: f64,
    pub factors: Vec<(usize, String)>,
}

fn patches_overlap(qgn: &Qgn, i: usize, j: usize) -> bool {
    i == j || {
        let pj = qgn.graph().patch(j);
        qgn.graph().patch(i).iter().any(|s| pj.contains(s))
    }
}

/// Generalized patch generator for Hamiltonians given as sums of operator
/// products: every term whose factor patches overlap `patch` contributes
/// (h/2) (V tau V) ... (V tau V) plus its Hermitian conjugate. Factors on
/// patches without a stored direct connection are reached through the
/// stored pairwise shortest paths.
pub fn build_h_prime_general(
    qgn: &Qgn,
    patch: usize,
    terms: &[CouplingTerm],
) -> Result<CMat, DynamicsError> {
    let chi = qgn.chi(patch);
    let mut g = CMat::zeros((chi, chi));
    for term in terms {
        if !term.factors.iter().any(|&(j, _)| patches_overlap(qgn, patch, j)) {
            continue;
        }
        let mut m: CMat = Array2::eye(chi) * C64::new(0.5 * term.coeff, 0.0);
        for (j, name) in &term.factors {
            let tau = required_op(qgn, *j, name)?;
            let v = v_bridged(qgn, patch, *j)?;
            m = m.dot(&v).dot(tau).dot(&dag(&v));
        }
        g = g + &m + &dag(&m);
    }
    Ok(g)
}

/// Network energy sum_I <psi_I | H_I | psi_I>.
pub fn energy_qgn(qgn: &Qgn) -> Result<f64, DynamicsError> {
    let mut e = 0.0;
    for p in 0..qgn.n_patches() {
        let h = required_op(qgn, p, "H")?;
        let psi = qgn.psi(p);
        let hp = h.dot(psi);
        let val: C64 = psi.iter().zip(hp.iter()).map(|(a, b)| a.conj() * b).sum();
        e += val.re;
    }
    Ok(e)
}

/// One step of the modified scheme in its direct form: stage frames rotate
/// the stored connections explicitly. Reference implementation; `evolve`
/// computes the same update in cumulative frames.
pub fn rk4_modified_step(qgn: &mut Qgn, cfg: &IntegratorConfig) -> Result<(), DynamicsError> {
    let n = qgn.n_patches();
    let mut hs = Vec::with_capacity(n);
    for p in 0..n {
        hs.push(required_op(qgn, p, "H")?.clone());
    }

    let mut g_tilde: Vec<Vec<CMat>> = Vec::with_capacity(4);
    for k in 0..4 {
        let mut frames: Vec<Option<CMat>> = Vec::with_capacity(n);
        for p in 0..n {
            let mut acc: Option<CMat> = None;
            for (l, stage) in g_tilde.iter().enumerate() {
                let a = RK4_A[k][l];
                if a != 0.0 {
                    let scaled = stage[p].mapv(|x| x * a);
                    acc = Some(match acc {
                        Some(m) => m + scaled,
                        None => scaled,
                    });
                }
            }
            frames.push(match acc {
                Some(m) => Some(expm_minus_i(&hermitize(&m), cfg.dt)?),
                None => None,
            });
        }
        let mut stage = Vec::with_capacity(n);
        for p in 0..n {
            let mut g = hs[p].clone();
            for &j in qgn.graph().patch_neighbors(p) {
                let mut v = v_dense(qgn, p, j)?;
                if let Some(up) = &frames[p] {
                    v = up.dot(&v);
                }
                if let Some(uj) = &frames[j] {
                    v = v.dot(&dag(uj));
                }
                g = g + v.dot(&hs[j]).dot(&dag(&v));
            }
            let residual = herm_residual(&g);
            if residual > cfg.hermiticity_tol {
                return Err(DynamicsError::NotHermitian { patch: p, residual });
            }
            let g = hermitize(&g);
            let gt = match (cfg.mode, &frames[p]) {
                (_, None) => g,
                (GeneratorMode::Plain, Some(_)) => g,
                (GeneratorMode::Symmetrized, Some(u)) => {
                    let rotated = dag(u).dot(&g).dot(u);
                    (rotated + g).mapv(|x| x * 0.5)
                }
            };
            stage.push(gt);
        }
        g_tilde.push(stage);
    }

    let mut frames = Vec::with_capacity(n);
    for p in 0..n {
        let mut acc = g_tilde[0][p].mapv(|x| x * RK4_B[0]);
        for (k, &b) in RK4_B.iter().enumerate().skip(1) {
            acc = acc + g_tilde[k][p].mapv(|x| x * b);
        }
        frames.push(expm_minus_i(&hermitize(&acc), cfg.dt)?);
    }
    qgn.apply_frame_unitaries(&frames);
    Ok(())
}

/// An exact symmetry of a network: a permutation of patches together with,
/// for each patch, the induced permutation of its local basis indices.
/// `index_perms[p][r]` is the row of patch `patch_map[p]` that index `r` of
/// patch `p` maps to.
#[derive(Debug, Clone)]
pub struct NetworkAutomorphism {
    pub patch_map: Vec<usize>,
    pub index_perms: Vec<Vec<usize>>,
}

/// Checks bitwise (no tolerance) that the automorphism maps the initial
/// state, the stored connections, and the "H" tables onto themselves. Only
/// these three enter the evolution, so other observable tables are allowed
/// to break the symmetry.
pub fn verify_automorphism(qgn: &Qgn, am: &NetworkAutomorphism) -> bool {
    let n = qgn.n_patches();
    if am.patch_map.len() != n || am.index_perms.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for p in 0..n {
        let q = am.patch_map[p];
        if q >= n || seen[q] {
            return false;
        }
        seen[q] = true;
        let chi = qgn.chi(p);
        if qgn.chi(q) != chi || am.index_perms[p].len() != chi {
            return false;
        }
        let mut hit = vec![false; chi];
        for &r in &am.index_perms[p] {
            if r >= chi || hit[r] {
                return false;
            }
            hit[r] = true;
        }
    }
    for p in 0..n {
        let q = am.patch_map[p];
        let perm = &am.index_perms[p];
        let src = qgn.psi(p);
        let dst = qgn.psi(q);
        for r in 0..src.len() {
            if dst[perm[r]] != src[r] {
                return false;
            }
        }
        let (hp, hq) = match (qgn.op(p, "H"), qgn.op(q, "H")) {
            (Some(a), Some(b)) => (a, b),
            (None, None) => continue,
            _ => return false,
        };
        for r in 0..hp.nrows() {
            for c in 0..hp.ncols() {
                if hq[(perm[r], perm[c])] != hp[(r, c)] {
                    return false;
                }
            }
        }
    }
    for (&(i, j), v) in qgn.edges() {
        let (mi, mj) = (am.patch_map[i], am.patch_map[j]);
        let (pi, pj) = (&am.index_perms[i], &am.index_perms[j]);
        if mi < mj {
            let Some(w) = qgn.edge(mi, mj) else { return false };
            for r in 0..v.nrows() {
                for c in 0..v.ncols() {
                    if w[(pi[r], pj[c])] != v[(r, c)] {
                        return false;
                    }
                }
            }
        } else {
            let Some(w) = qgn.edge(mj, mi) else { return false };
            for r in 0..v.nrows() {
                for c in 0..v.ncols() {
                    if w[(pj[c], pi[r])] != v[(r, c)].conj() {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Charge of the model-dependent "number" column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumberColumn {
    /// Sum of <n_i>.
    FermiTotal,
    /// Sum of (1 - <sx_i>) / 2: flips relative to the all-right product.
    IsingFlips,
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub dt: f64,
    pub steps: usize,
    pub mode: GeneratorMode,
    pub hermiticity_tol: f64,
    /// Per-site observable bases to sample each step ("n", "sx", ...).
    pub obs_bases: Vec<String>,
    pub number: NumberColumn,
    /// Triangle residuals are O(chi^3) per triangle; sample them only every
    /// this many steps (other rows repeat the last value). Connection and
    /// energy columns are sampled every step regardless.
    pub triangle_stride: usize,
    /// Pre-verified exact symmetries; any that fail bitwise verification
    /// against the actual network are dropped silently.
    pub automorphisms: Vec<NetworkAutomorphism>,
}

impl EvolveOptions {
    pub fn new(dt: f64, steps: usize, number: NumberColumn) -> Self {
        EvolveOptions {
            dt,
            steps,
            mode: GeneratorMode::Symmetrized,
            hermiticity_tol: 1e-8,
            obs_bases: Vec::new(),
            number,
            triangle_stride: 1,
            automorphisms: Vec::new(),
        }
    }
}

/// Sampled time series of an evolution run.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    /// Per-site observable column names, base-major then site order.
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    /// One row per time, aligned with `columns`.
    pub observables: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    pub number: Vec<f64>,
    pub vpsi: Vec<f64>,
    pub triangle: Vec<f64>,
    /// Largest imaginary part seen in any sampled expectation.
    pub max_imag: f64,
    /// Largest deviation of any cumulative frame from unitarity at the end.
    pub max_unitarity_residual: f64,
    pub wall_seconds: f64,
    pub max_chi: usize,
    /// Patches actually integrated (orbit representatives).
    pub integrated_patches: usize,
}

/// Writes the series as CSV: t, the observable columns, energy, number,
/// vpsi_residual, triangle_residual, all in full-precision scientific form.
pub fn write_csv<W: Write>(series: &TimeSeries, w: &mut W) -> std::io::Result<()> {
    write!(w, "t")?;
    for c in &series.columns {
        write!(w, ",{c}")?;
    }
    writeln!(w, ",energy,number,vpsi_residual,triangle_residual")?;
    for (i, &t) in series.times.iter().enumerate() {
        write!(w, "{t:.16e}")?;
        for v in &series.observables[i] {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(
            w,
            ",{:.16e},{:.16e},{:.16e},{:.16e}",
            series.energy[i], series.number[i], series.vpsi[i], series.triangle[i]
        )?;
    }
    Ok(())
}

enum EdgeRepr {
    /// 0/1 partial permutation: `fwd[r]` is the unique column of row r,
    /// `rev[c]` the unique row of column c.
    Select { fwd: Vec<Option<usize>>, rev: Vec<Option<usize>> },
    Dense(CMat),
}

fn detect_select(v: &CMat) -> Option<(Vec<Option<usize>>, Vec<Option<usize>>)> {
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let mut fwd: Vec<Option<usize>> = vec![None; v.nrows()];
    let mut rev: Vec<Option<usize>> = vec![None; v.ncols()];
    for r in 0..v.nrows() {
        for c in 0..v.ncols() {
            let x = v[(r, c)];
            if x == zero {
                continue;
            }
            if x != one || fwd[r].is_some() || rev[c].is_some() {
                return None;
            }
            fwd[r] = Some(c);
            rev[c] = Some(r);
        }
    }
    Some((fwd, rev))
}

/// out += V w V^dagger for this edge direction: `map[r]` indexes into `w`.
fn add_select_sandwich(out: &mut CMat, w: &CMat, map: &[Option<usize>]) {
    for r in 0..map.len() {
        let Some(mr) = map[r] else { continue };
        for s in 0..map.len() {
            if let Some(ms) = map[s] {
                out[(r, s)] += w[(mr, ms)];
            }
        }
    }
}

fn permute_matrix(w: &CMat, perm: &[usize]) -> CMat {
    let n = perm.len();
    let mut out = CMat::zeros((n, n));
    for r in 0..n {
        for c in 0..n {
            out[(perm[r], perm[c])] = w[(r, c)];
        }
    }
    out
}

fn permute_vec(v: &CVec, perm: &[usize]) -> CVec {
    let mut out = CVec::zeros(perm.len());
    for r in 0..perm.len() {
        out[perm[r]] = v[r];
    }
    out
}

struct OrbitInfo {
    rep: usize,
    /// Permutation taking the representative's indices to this patch's;
    /// `None` for representatives themselves.
    perm: Option<Vec<usize>>,
}

fn build_orbits(qgn: &Qgn, autos: &[NetworkAutomorphism]) -> Vec<OrbitInfo> {
    let n = qgn.n_patches();
    let verified: Vec<&NetworkAutomorphism> =
        autos.iter().filter(|am| verify_automorphism(qgn, am)).collect();
    let mut info: Vec<Option<OrbitInfo>> = (0..n).map(|_| None).collect();
    for p in 0..n {
        if info[p].is_some() {
            continue;
        }
        info[p] = Some(OrbitInfo { rep: p, perm: None });
        let identity: Vec<usize> = (0..qgn.chi(p)).collect();
        let mut queue: Vec<(usize, Vec<usize>)> = vec![(p, identity)];
        while let Some((q, perm)) = queue.pop() {
            for am in &verified {
                let q2 = am.patch_map[q];
                if info[q2].is_none() {
                    let perm2: Vec<usize> =
                        perm.iter().map(|&r| am.index_perms[q][r]).collect();
                    info[q2] = Some(OrbitInfo { rep: p, perm: Some(perm2.clone()) });
                    queue.push((q2, perm2));
                }
            }
        }
    }
    info.into_iter().map(|o| o.expect("orbit scan covers every patch")).collect()
}

/// Evolves the network in place for `steps` steps of size `dt`, sampling
/// observables, energy, the number column, and consistency residuals at
/// every step (including t = 0). The network ends in the evolved frame.
pub fn evolve(qgn: &mut Qgn, opts: &EvolveOptions) -> Result<TimeSeries, DynamicsError> {
    match opts.number {
        NumberColumn::FermiTotal if !opts.obs_bases.iter().any(|b| b == "n") => {
            return Err(DynamicsError::NumberNeedsBase { base: "n" });
        }
        NumberColumn::IsingFlips if !opts.obs_bases.iter().any(|b| b == "sx") => {
            return Err(DynamicsError::NumberNeedsBase { base: "sx" });
        }
        _ => {}
    }
    let start = Instant::now();
    let n = qgn.n_patches();
    let n_sites = qgn.graph().n_sites();
    let mut hs: Vec<CMat> = Vec::with_capacity(n);
    for p in 0..n {
        hs.push(required_op(qgn, p, "H")?.clone());
    }
    let site_patches: Vec<Vec<usize>> =
        (0..n_sites).map(|s| qgn.graph().patches_containing(s)).collect();
    let mut columns = Vec::new();
    for base in &opts.obs_bases {
        for site in 0..n_sites {
            let name = site_op_name(base, site);
            for &p in &site_patches[site] {
                required_op(qgn, p, &name)?;
            }
            columns.push(name);
        }
    }

    let edge_reprs: BTreeMap<(usize, usize), EdgeRepr> = qgn
        .edges()
        .iter()
        .map(|(&key, v)| {
            let repr = match detect_select(v) {
                Some((fwd, rev)) => EdgeRepr::Select { fwd, rev },
                None => EdgeRepr::Dense(v.clone()),
            };
            (key, repr)
        })
        .collect();

    let orbits = build_orbits(qgn, &opts.automorphisms);
    let reps: Vec<usize> = (0..n).filter(|&p| orbits[p].rep == p).collect();
    let triangles = qgn.graph().triangles();

    // Cumulative frames for representatives; everything else is a
    // permutation of its representative.
    let mut c_frames: BTreeMap<usize, CMat> =
        reps.iter().map(|&p| (p, Array2::eye(qgn.chi(p)))).collect();

    let mut series = TimeSeries {
        columns,
        times: Vec::with_capacity(opts.steps + 1),
        observables: Vec::with_capacity(opts.steps + 1),
        energy: Vec::with_capacity(opts.steps + 1),
        number: Vec::with_capacity(opts.steps + 1),
        vpsi: Vec::with_capacity(opts.steps + 1),
        triangle: Vec::with_capacity(opts.steps + 1),
        max_imag: 0.0,
        max_unitarity_residual: 0.0,
        wall_seconds: 0.0,
        max_chi: qgn.max_chi(),
        integrated_patches: reps.len(),
    };

    let materialize_frames = |c_frames: &BTreeMap<usize, CMat>| -> Vec<CMat> {
        (0..n)
            .map(|p| {
                let rep = &c_frames[&orbits[p].rep];
                match &orbits[p].perm {
                    None => rep.clone(),
                    Some(perm) => permute_matrix(rep, perm),
                }
            })
            .collect()
    };

    let mut last_triangle = 0.0;
    let mut sample = |qgn: &Qgn,
                      c_frames: &BTreeMap<usize, CMat>,
                      series: &mut TimeSeries,
                      step: usize|
     -> Result<(), DynamicsError> {
        // Evolved states, cheap for every patch.
        let psis: Vec<CVec> = (0..n)
            .map(|p| {
                let rep = orbits[p].rep;
                let evolved = c_frames[&rep].dot(qgn.psi(rep));
                match &orbits[p].perm {
                    None => evolved,
                    Some(perm) => permute_vec(&evolved, perm),
                }
            })
            .collect();

        let mut row = Vec::with_capacity(series.columns.len());
        for base in &opts.obs_bases {
            for (site, patches) in site_patches.iter().enumerate() {
                let name = site_op_name(base, site);
                let mut acc = C64::new(0.0, 0.0);
                for &p in patches {
                    let a = qgn.op(p, &name).expect("validated above");
                    let ap = a.dot(&psis[p]);
                    acc += psis[p].iter().zip(ap.iter()).map(|(x, y)| x.conj() * y).sum::<C64>();
                }
                let mean = acc / C64::new(patches.len() as f64, 0.0);
                series.max_imag = series.max_imag.max(mean.im.abs());
                row.push(mean.re);
            }
        }

        let mut energy = 0.0;
        for p in 0..n {
            let hp = hs[p].dot(&psis[p]);
            let val: C64 = psis[p].iter().zip(hp.iter()).map(|(x, y)| x.conj() * y).sum();
            series.max_imag = series.max_imag.max(val.im.abs());
            energy += val.re;
        }

        let number = match opts.number {
            NumberColumn::FermiTotal => {
                let base_idx = opts.obs_bases.iter().position(|b| b == "n").unwrap();
                row[base_idx * n_sites..(base_idx + 1) * n_sites].iter().sum()
            }
            NumberColumn::IsingFlips => {
                let base_idx = opts.obs_bases.iter().position(|b| b == "sx").unwrap();
                row[base_idx * n_sites..(base_idx + 1) * n_sites]
                    .iter()
                    .map(|&x| (1.0 - x) / 2.0)
                    .sum()
            }
        };

        // V psi consistency in the evolved frame, via the cumulative frames:
        // pullbacks[p] = C_p^dag psi_p(t), which for a permuted patch is the
        // permutation of the representative's pullback.
        let mut vpsi: f64 = 0.0;
        let pullbacks: Vec<CVec> = (0..n)
            .map(|p| {
                let rep = orbits[p].rep;
                let w = dag(&c_frames[&rep]).dot(&psis[rep]);
                match &orbits[p].perm {
                    None => w,
                    Some(perm) => permute_vec(&w, perm),
                }
            })
            .collect();
        for (&(i, j), v) in qgn.edges() {
            // j -> i through V, i -> j through V^dagger.
            let fwd = v.dot(&pullbacks[j]);
            let fwd = apply_frame(&fwd, i, &orbits, c_frames);
            let mut diff = 0.0f64;
            for (a, b) in fwd.iter().zip(psis[i].iter()) {
                diff += (a - b).norm_sqr();
            }
            vpsi = vpsi.max(diff.sqrt());
            let back = dag(v).dot(&pullbacks[i]);
            let back = apply_frame(&back, j, &orbits, c_frames);
            let mut diff = 0.0f64;
            for (a, b) in back.iter().zip(psis[j].iter()) {
                diff += (a - b).norm_sqr();
            }
            vpsi = vpsi.max(diff.sqrt());
        }

        if !triangles.is_empty()
            && (step % opts.triangle_stride.max(1) == 0 || step == opts.steps)
        {
            let frames = materialize_frames(c_frames);
            let mut worst = 0.0f64;
            for &(i, j, k) in &triangles {
                let vij = frames[i].dot(&v_dense(qgn, i, j)?).dot(&dag(&frames[j]));
                let vjk = frames[j].dot(&v_dense(qgn, j, k)?).dot(&dag(&frames[k]));
                let vik = frames[i].dot(&v_dense(qgn, i, k)?).dot(&dag(&frames[k]));
                worst = worst.max(frob_norm(&(vij.dot(&vjk) - &vik)));
            }
            last_triangle = worst;
        }

        series.times.push(step as f64 * opts.dt);
        series.observables.push(row);
        series.energy.push(energy);
        series.number.push(number);
        series.vpsi.push(vpsi);
        series.triangle.push(last_triangle);
        Ok(())
    };

    sample(qgn, &c_frames, &mut series, 0)?;

    // Scratch W matrices for every patch, rewritten each stage.
    let mut w_all: Vec<CMat> = (0..n).map(|p| CMat::zeros((qgn.chi(p), qgn.chi(p)))).collect();

    for step in 1..=opts.steps {
        let mut k_rep: BTreeMap<usize, CMat> = BTreeMap::new();
        for &p in &reps {
            let c = &c_frames[&p];
            k_rep.insert(p, dag(c).dot(&hs[p]).dot(c));
        }

        let mut g_tilde: BTreeMap<usize, Vec<CMat>> =
            reps.iter().map(|&p| (p, Vec::with_capacity(4))).collect();
        for k in 0..4 {
            let mut u_stage: BTreeMap<usize, Option<CMat>> = BTreeMap::new();
            for &p in &reps {
                let mut acc: Option<CMat> = None;
                for (l, gt) in g_tilde[&p].iter().enumerate() {
                    let a = RK4_A[k][l];
                    if a != 0.0 {
                        let scaled = gt.mapv(|x| x * a);
                        acc = Some(match acc {
                            Some(m) => m + scaled,
                            None => scaled,
                        });
                    }
                }
                let u = match acc {
                    Some(m) => Some(expm_minus_i(&hermitize(&m), opts.dt)?),
                    None => None,
                };
                u_stage.insert(p, u);
            }
            // W once per representative, distributed to the rest by exact
            // permutation.
            let mut w_rep: BTreeMap<usize, CMat> = BTreeMap::new();
            for &p in &reps {
                let w = match &u_stage[&p] {
                    Some(u) => dag(u).dot(&k_rep[&p]).dot(u),
                    None => k_rep[&p].clone(),
                };
                w_rep.insert(p, w);
            }
            for p in 0..n {
                let rep = orbits[p].rep;
                w_all[p] = match &orbits[p].perm {
                    None => w_rep[&rep].clone(),
                    Some(perm) => permute_matrix(&w_rep[&rep], perm),
                };
            }
            for &p in &reps {
                let mut s = w_all[p].clone();
                for &j in qgn.graph().patch_neighbors(p) {
                    let (a, b) = (p.min(j), p.max(j));
                    match &edge_reprs[&(a, b)] {
                        EdgeRepr::Select { fwd, rev } => {
                            let map = if p < j { fwd } else { rev };
                            add_select_sandwich(&mut s, &w_all[j], map);
                        }
                        EdgeRepr::Dense(v) => {
                            let contribution = if p < j {
                                v.dot(&w_all[j]).dot(&dag(v))
                            } else {
                                dag(v).dot(&w_all[j]).dot(v)
                            };
                            s = s + contribution;
                        }
                    }
                }
                let residual = herm_residual(&s);
                if residual > opts.hermiticity_tol {
                    return Err(DynamicsError::NotHermitian { patch: p, residual });
                }
                let s = hermitize(&s);
                let gt = match (&u_stage[&p], opts.mode) {
                    (None, _) => s,
                    (Some(u), GeneratorMode::Plain) => u.dot(&s).dot(&dag(u)),
                    (Some(u), GeneratorMode::Symmetrized) => {
                        let rotated = u.dot(&s).dot(&dag(u));
                        (rotated + s).mapv(|x| x * 0.5)
                    }
                };
                g_tilde.get_mut(&p).unwrap().push(gt);
            }
        }

        for &p in &reps {
            let stages = &g_tilde[&p];
            let mut acc = stages[0].mapv(|x| x * RK4_B[0]);
            for (k, &b) in RK4_B.iter().enumerate().skip(1) {
                acc = acc + stages[k].mapv(|x| x * b);
            }
            let u_hat = expm_minus_i(&hermitize(&acc), opts.dt)?;
            let updated = c_frames[&p].dot(&u_hat);
            c_frames.insert(p, updated);
        }

        sample(qgn, &c_frames, &mut series, step)?;
    }

    for &p in &reps {
        series.max_unitarity_residual =
            series.max_unitarity_residual.max(unitarity_residual(&c_frames[&p]));
    }
    let frames = materialize_frames(&c_frames);
    qgn.apply_frame_unitaries(&frames);
    series.wall_seconds = start.elapsed().as_secs_f64();
    Ok(series)
}

fn apply_frame(
    v: &CVec,
    p: usize,
    orbits: &[OrbitInfo],
    c_frames: &BTreeMap<usize, CMat>,
) -> CVec {
    let rep = orbits[p].rep;
    match &orbits[p].perm {
        None => c_frames[&rep].dot(v),
        Some(perm) => {
            let mut pulled = CVec::zeros(v.len());
            for (r, &pr) in perm.iter().enumerate() {
                pulled[r] = v[pr];
            }
            permute_vec(&c_frames[&rep].dot(&pulled), perm)
        }
    }
}
