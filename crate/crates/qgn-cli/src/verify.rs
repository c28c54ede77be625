//! Invariant battery behind the `verify` subcommand: structural consistency,
//! gauge invariance of expectation values, exactness of the string encoding,
//! agreement with the reference at saturated patch dimension, conservation
//! during evolution, and the convergence order of the integrator.

use anyhow::{bail, Result};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qgn_core::construction::{default_half_midpoint, images_for_string};
use qgn_core::dynamics::{evolve, EvolveOptions, GeneratorMode};
use qgn_core::fock::{build_basis, pauli_op, BasisKind, Model, PauliAxis, SparseOperator};
use qgn_core::lattice::{build_single_site_patch_graph, LatticeSpec, PathStyle};
use qgn_core::linalg::{expm_minus_i, hermitize, vec_norm, CMat, CVec};
use qgn_core::network::io::load_qgn;
use qgn_core::network::{
    expectation_string, gauge_transform, qgn_from_truncation, truncation_maps_from_images,
    OperatorString, PatchOpSource, Qgn,
};

use crate::config::{ExperimentConfig, OracleMode};
use crate::oracle::run_oracle;
use crate::run::{build_network, number_column};

const VPSI_TOL: f64 = 1e-8;
const SV_EXCESS_TOL: f64 = 1e-6;
const GAUGE_TOL: f64 = 1e-12;
const ENCODING_TOL: f64 = 1e-10;
const SATURATED_TOL: f64 = 1e-6;
const EXACT_CONSERVATION_TOL: f64 = 1e-9;
const ENERGY_PER_SITE_TOL: f64 = 1e-3;
const ORDER_FLOOR: f64 = 1e-13;
const SATURATED_DIM_CAP: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

impl CheckOutcome {
    fn pass(name: &'static str, detail: String) -> Self {
        Self { name, status: CheckStatus::Pass, detail }
    }
    fn fail(name: &'static str, detail: String) -> Self {
        Self { name, status: CheckStatus::Fail, detail }
    }
    fn skip(name: &'static str, detail: String) -> Self {
        Self { name, status: CheckStatus::Skip, detail }
    }
}

fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> CVec {
    let mut v = CVec::zeros(dim);
    for x in v.iter_mut() {
        *x = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    let norm = vec_norm(&v);
    v.mapv_into(|x| x / norm)
}

fn random_unitary(chi: usize, rng: &mut ChaCha8Rng) -> CMat {
    let mut h = Array2::zeros((chi, chi));
    for x in h.iter_mut() {
        *x = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    let h = hermitize(&h);
    expm_minus_i(&h, 1.0).expect("matrix exponential of a small Hermitian matrix")
}

/// Operator strings that touch every patch and every stored connection:
/// one single-op string per patch plus one two-op string per edge, using
/// each patch's alphabetically first table entry.
fn probe_strings(qgn: &Qgn) -> Result<Vec<OperatorString>> {
    let first_op = |p: usize| -> Option<&str> {
        qgn.op_table(p).keys().next().map(String::as_str)
    };
    let mut strings = Vec::new();
    for p in 0..qgn.n_patches() {
        if let Some(name) = first_op(p) {
            strings.push(OperatorString::single(p, name));
        }
    }
    for (&(i, j), _) in qgn.edges() {
        if let (Some(a), Some(b)) = (first_op(i), first_op(j)) {
            strings.push(OperatorString::from_ops(&[(i, a), (j, b)])?);
        }
    }
    Ok(strings)
}

fn check_consistency(qgn: &Qgn) -> CheckOutcome {
    let name = "connection consistency";
    let res = qgn.consistency_residuals();
    let detail = format!(
        "connection residual max ||V psi - psi|| = {:.3e} (tol {VPSI_TOL:.0e}), \
         singular-value excess {:.3e} (tol {SV_EXCESS_TOL:.0e}), \
         triangle residual {:.3e} (informational)",
        res.vpsi, res.sv_excess, res.triangle
    );
    if res.vpsi > VPSI_TOL || res.sv_excess > SV_EXCESS_TOL {
        CheckOutcome::fail(name, detail)
    } else {
        CheckOutcome::pass(name, detail)
    }
}

fn check_gauge_invariance(qgn: &Qgn, seed: u64) -> Result<CheckOutcome> {
    let name = "gauge invariance";
    let strings = probe_strings(qgn)?;
    if strings.is_empty() {
        return Ok(CheckOutcome::skip(name, "network carries no operator tables".into()));
    }
    let baseline: Vec<C64> = strings
        .iter()
        .map(|s| expectation_string(qgn, s))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6761_7567_6531_3233);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let gauges: Vec<CMat> =
            (0..qgn.n_patches()).map(|p| random_unitary(qgn.chi(p), &mut rng)).collect();
        let rotated = gauge_transform(qgn, &gauges)?;
        for (s, base) in strings.iter().zip(&baseline) {
            let got = expectation_string(&rotated, s)?;
            worst = worst.max((got - base).norm());
        }
    }
    let detail = format!(
        "max |change| over 20 random unitary gauges and {} strings = {worst:.3e} (tol {GAUGE_TOL:.0e})",
        strings.len()
    );
    if worst > GAUGE_TOL {
        Ok(CheckOutcome::fail(name, detail))
    } else {
        Ok(CheckOutcome::pass(name, detail))
    }
}

/// Self-contained exactness probe: random chain states with random Pauli
/// strings, encoded through image-based truncation maps, must reproduce the
/// full-space expectation value with the advertised patch dimensions.
fn check_exact_encoding(seed: u64) -> Result<CheckOutcome> {
    let name = "exact string encoding";
    let n = 6;
    let lattice = LatticeSpec::uniform(vec![n], false)?;
    let graph = build_single_site_patch_graph(&lattice, PathStyle::Snake)?;
    let basis = build_basis(BasisKind::Spin, n, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x656e_636f_6465);
    let axes = [PauliAxis::X, PauliAxis::Y, PauliAxis::Z];
    let mut worst = 0.0f64;
    let mut worst_chi_slack = true;
    for _ in 0..12 {
        let psi = random_state(basis.len(), &mut rng);
        let m = rng.random_range(1..=3);
        let start = rng.random_range(0..=(n - m));
        let sites: Vec<usize> = (start..start + m).collect();
        let ops: Vec<SparseOperator> = sites
            .iter()
            .map(|&s| pauli_op(&basis, s, axes[rng.random_range(0..3)]))
            .collect::<Result<_, _>>()?;
        let names: Vec<String> = (0..m).map(|k| format!("p{k}")).collect();

        let mut acted = psi.clone();
        for op in ops.iter().rev() {
            acted = op.apply(&acted);
        }
        let exact: C64 = psi.iter().zip(acted.iter()).map(|(a, b)| a.conj() * b).sum();

        let entries: Vec<(usize, Option<&SparseOperator>)> =
            sites.iter().zip(&ops).map(|(&p, op)| (p, Some(op))).collect();
        let half = default_half_midpoint(entries.len());
        let images = images_for_string(&graph, &psi, &entries, half)?;
        let maps = truncation_maps_from_images(&images)?;
        let sources: Vec<(usize, PatchOpSource)> = sites
            .iter()
            .zip(&names)
            .zip(&ops)
            .map(|((&p, name), op)| (p, PatchOpSource::Sparse(name, op)))
            .collect();
        let qgn = qgn_from_truncation(&graph, &maps, &psi, None, &sources)?;
        for p in 0..graph.n_patches() {
            let hosted = sites.iter().filter(|&&s| s == p).count();
            if qgn.chi(p) > 1 + 2 * hosted {
                worst_chi_slack = false;
            }
        }
        let string_ops: Vec<(usize, &str)> =
            sites.iter().zip(&names).map(|(&p, n)| (p, n.as_str())).collect();
        let string = OperatorString::from_ops(&string_ops)?;
        let got = expectation_string(&qgn, &string)?;
        worst = worst.max((got - exact).norm());
    }
    let detail = format!(
        "max |encoded - full-space| over 12 random states = {worst:.3e} (tol {ENCODING_TOL:.0e}), \
         patch dimensions within 1 + 2 (hosted ops): {worst_chi_slack}"
    );
    if worst > ENCODING_TOL || !worst_chi_slack {
        Ok(CheckOutcome::fail(name, detail))
    } else {
        Ok(CheckOutcome::pass(name, detail))
    }
}

/// At saturated patch dimension a short evolution must match the reference
/// series observable by observable.
fn check_saturated_equivalence(cfg: &ExperimentConfig) -> Result<CheckOutcome> {
    let name = "saturated-dimension equivalence";
    let basis = cfg.build_basis()?;
    let dim = basis.len();
    if dim > SATURATED_DIM_CAP {
        return Ok(CheckOutcome::skip(
            name,
            format!("full dimension {dim} exceeds the cap of {SATURATED_DIM_CAP}"),
        ));
    }
    let mut sat = cfg.clone();
    sat.min_chi = dim;
    sat.dt = cfg.dt.min(0.005);
    sat.time = cfg.time.min(0.1);
    if sat.oracle == OracleMode::Dense && dim > 1 << 10 {
        sat.oracle = OracleMode::Krylov;
    }

    let (mut qgn, autos) = build_network(&sat)?;
    let mut opts = EvolveOptions::new(sat.dt, sat.steps(), number_column(sat.model));
    opts.obs_bases = sat.observables.clone();
    opts.triangle_stride = sat.steps().max(1);
    opts.automorphisms = autos;
    let series = evolve(&mut qgn, &opts)?;
    let oracle = match run_oracle(&sat)? {
        Some(o) => o,
        None => return Ok(CheckOutcome::skip(name, "no reference mode configured".into())),
    };

    let mut worst = 0.0f64;
    for (c, col) in series.columns.iter().enumerate() {
        let Some(o) = oracle.columns.iter().position(|oc| oc == col) else { continue };
        for (row, ovals) in series.observables.iter().zip(&oracle.values) {
            worst = worst.max((row[c] - ovals[o]).abs());
        }
    }
    let detail = format!(
        "max |network - reference| at patch dimension {dim} over t <= {} = {worst:.3e} (tol {SATURATED_TOL:.0e})",
        sat.time
    );
    if worst > SATURATED_TOL {
        Ok(CheckOutcome::fail(name, detail))
    } else {
        Ok(CheckOutcome::pass(name, detail))
    }
}

fn check_conservation(cfg: &ExperimentConfig) -> Result<CheckOutcome> {
    let name = "conservation during evolution";
    let mut capped = cfg.clone();
    capped.time = cfg.time.min(2.0);
    let (mut qgn, autos) = build_network(&capped)?;
    let mut opts = EvolveOptions::new(capped.dt, capped.steps(), number_column(capped.model));
    opts.obs_bases = capped.observables.clone();
    opts.triangle_stride = capped.steps().max(1);
    opts.automorphisms = autos;
    let series = evolve(&mut qgn, &opts)?;

    let drift = |vals: &[f64]| -> f64 {
        let first = vals.first().copied().unwrap_or(0.0);
        vals.iter().map(|v| (v - first).abs()).fold(0.0, f64::max)
    };
    let e_drift = drift(&series.energy);
    let n_drift = drift(&series.number);
    let n_sites = cfg.lattice.num_sites() as f64;

    if matches!(cfg.model, Model::Fermi { v } if v == 0.0) {
        let detail = format!(
            "free case: energy drift {e_drift:.3e}, particle-number drift {n_drift:.3e} \
             (tol {EXACT_CONSERVATION_TOL:.0e} each, t <= {})",
            capped.time
        );
        if e_drift > EXACT_CONSERVATION_TOL || n_drift > EXACT_CONSERVATION_TOL {
            return Ok(CheckOutcome::fail(name, detail));
        }
        return Ok(CheckOutcome::pass(name, detail));
    }
    let per_site = e_drift / n_sites;
    let detail = format!(
        "energy drift per site {per_site:.3e} (tol {ENERGY_PER_SITE_TOL:.0e}, t <= {})",
        capped.time
    );
    if per_site > ENERGY_PER_SITE_TOL {
        Ok(CheckOutcome::fail(name, detail))
    } else {
        Ok(CheckOutcome::pass(name, detail))
    }
}

fn energy_drift_at(cfg: &ExperimentConfig, dt: f64, steps: usize) -> Result<f64> {
    let (mut qgn, autos) = build_network(cfg)?;
    let mut opts = EvolveOptions::new(dt, steps, number_column(cfg.model));
    opts.mode = GeneratorMode::Symmetrized;
    opts.obs_bases = cfg.observables.clone();
    opts.triangle_stride = steps.max(1);
    opts.automorphisms = autos;
    let series = evolve(&mut qgn, &opts)?;
    let first = series.energy.first().copied().unwrap_or(0.0);
    Ok(series.energy.iter().map(|e| (e - first).abs()).fold(0.0, f64::max))
}

/// Halving the step must shrink the energy drift by roughly the cube of the
/// step ratio (third-order generator symmetrization), within a factor-2 band.
fn check_integrator_order(cfg: &ExperimentConfig) -> Result<CheckOutcome> {
    let name = "integrator convergence order";
    let dt = cfg.dt.max(0.05);
    let coarse = energy_drift_at(cfg, dt, 12)?;
    let fine = energy_drift_at(cfg, dt / 2.0, 24)?;
    if fine < ORDER_FLOOR || coarse < ORDER_FLOOR {
        return Ok(CheckOutcome::skip(
            name,
            format!(
                "drifts {coarse:.3e} / {fine:.3e} below the {ORDER_FLOOR:.0e} floor \
                 (conserved to working precision)"
            ),
        ));
    }
    let ratio = coarse / fine;
    let detail =
        format!("drift ratio across step halving = {ratio:.2} (expected within [4, 16])");
    if (4.0..=16.0).contains(&ratio) {
        Ok(CheckOutcome::pass(name, detail))
    } else {
        Ok(CheckOutcome::fail(name, detail))
    }
}

/// Runs the battery and prints one line per check. Returns true when every
/// check passed or was skipped.
pub fn verify(cfg: &ExperimentConfig) -> Result<bool> {
    if cfg.oracle == OracleMode::None {
        bail!("verify needs a reference mode; set oracle to dense, krylov, or free-fermion");
    }

    let mut outcomes: Vec<CheckOutcome> = Vec::new();
    match &cfg.network {
        Some(path) => {
            let qgn = load_qgn(path)?;
            outcomes.push(check_consistency(&qgn));
            outcomes.push(check_gauge_invariance(&qgn, cfg.seed)?);
        }
        None => {
            let (qgn, _) = build_network(cfg)?;
            outcomes.push(check_consistency(&qgn));
            outcomes.push(check_gauge_invariance(&qgn, cfg.seed)?);
            outcomes.push(check_exact_encoding(cfg.seed)?);
            outcomes.push(check_saturated_equivalence(cfg)?);
            outcomes.push(check_conservation(cfg)?);
            outcomes.push(check_integrator_order(cfg)?);
        }
    }

    let mut all_ok = true;
    for o in &outcomes {
        let tag = match o.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => {
                all_ok = false;
                "FAIL"
            }
            CheckStatus::Skip => "skip",
        };
        println!("check {}: {tag} ({})", o.name, o.detail);
    }
    Ok(all_ok)
}
