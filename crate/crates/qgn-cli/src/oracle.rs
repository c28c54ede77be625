//! Reference evolutions sampled on the same time grid as the network run.
//!
//! Full-state modes propagate the exact wavefunction (dense: one
//! eigendecomposition reused for every sample; krylov: stepwise subspace
//! propagation) and evaluate the same per-site observables the network
//! reports. The free-fermion mode evolves the two-point correlation matrix
//! instead, which only yields the occupation columns.

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use num_complex::Complex64 as C64;

use qgn_core::fock::{
    exact_evolve_krylov, free_fermion_evolve, hopping_matrix, number_action,
    pauli_x_action_xbasis, pauli_y_action_xbasis, pauli_z_action_xbasis, site_op_name,
    total_hamiltonian, KrylovConfig, Model, SparseOperator,
};
use qgn_core::lattice::build_nn_patch_graph;
use qgn_core::linalg::eigh;
use qgn_core::CVec;

use crate::config::{ExperimentConfig, OracleMode};

/// Per-column reference values on the run's time grid.
pub struct OracleSeries {
    pub columns: Vec<String>,
    /// rows: one per sampled time (steps + 1), aligned with `columns`.
    pub values: Vec<Vec<f64>>,
}

pub fn run_oracle(cfg: &ExperimentConfig) -> Result<Option<OracleSeries>> {
    match cfg.oracle {
        OracleMode::None => Ok(None),
        OracleMode::FreeFermion => free_fermion_series(cfg).map(Some),
        OracleMode::Dense => full_state_series(cfg, true).map(Some),
        OracleMode::Krylov => full_state_series(cfg, false).map(Some),
    }
}

fn observable_ops(
    cfg: &ExperimentConfig,
    basis: &qgn_core::fock::Basis,
) -> Result<Vec<(String, SparseOperator)>> {
    let n_sites = cfg.lattice.num_sites();
    let mut ops = Vec::new();
    for base in &cfg.observables {
        for site in 0..n_sites {
            let action = match (cfg.model, base.as_str()) {
                (Model::Fermi { .. }, "n") => number_action(site),
                (Model::Ising { .. }, "sx") => pauli_x_action_xbasis(site),
                (Model::Ising { .. }, "sy") => pauli_y_action_xbasis(site),
                (Model::Ising { .. }, "sz") => pauli_z_action_xbasis(site),
                (_, other) => bail!("no reference operator for observable {other:?}"),
            };
            ops.push((site_op_name(base, site), action.to_sparse(basis)?));
        }
    }
    Ok(ops)
}

fn full_state_series(cfg: &ExperimentConfig, dense: bool) -> Result<OracleSeries> {
    let basis = cfg.build_basis()?;
    let graph = build_nn_patch_graph(&cfg.lattice)?;
    // Sum the same per-bond actions the network carries, so both sides use
    // one representation (spins stay x-diagonal).
    let locals: Vec<SparseOperator> = graph
        .patches()
        .iter()
        .map(|patch| {
            cfg.model
                .patch_action(patch[0], patch[1], graph.ndims())
                .to_sparse(&basis)
                .and_then(|op| op.into_hermitian_checked(0.0))
        })
        .collect::<Result<_, _>>()?;
    let h = total_hamiltonian(&locals);
    let ops = observable_ops(cfg, &basis)?;
    let mut psi = basis.one_hot(cfg.initial)?;
    let steps = cfg.steps();

    let mut sample_rows = Vec::with_capacity(steps + 1);
    let push_row = |psi: &CVec, rows: &mut Vec<Vec<f64>>| {
        rows.push(ops.iter().map(|(_, op)| op.expectation(psi).re).collect());
    };

    if dense {
        let hd = h.to_dense();
        let (evals, evecs) = eigh(&hd).context("eigendecomposition of the reference Hamiltonian")?;
        let coeffs = evecs.t().map(|z| z.conj()).dot(&psi);
        for k in 0..=steps {
            let t = k as f64 * cfg.dt;
            let phased: CVec = coeffs
                .iter()
                .zip(evals.iter())
                .map(|(c, &e)| c * C64::from_polar(1.0, -e * t))
                .collect();
            let state = evecs.dot(&phased);
            push_row(&state, &mut sample_rows);
        }
    } else {
        let krylov = KrylovConfig::default();
        push_row(&psi, &mut sample_rows);
        for _ in 0..steps {
            psi = exact_evolve_krylov(&psi, &h, cfg.dt, &krylov)?;
            push_row(&psi, &mut sample_rows);
        }
    }

    Ok(OracleSeries {
        columns: ops.into_iter().map(|(name, _)| name).collect(),
        values: sample_rows,
    })
}

fn free_fermion_series(cfg: &ExperimentConfig) -> Result<OracleSeries> {
    let n_sites = cfg.lattice.num_sites();
    let h_single = hopping_matrix(&cfg.lattice);
    let mut c0: Array2<C64> = Array2::zeros((n_sites, n_sites));
    for site in 0..n_sites {
        if cfg.initial & (1u64 << site) != 0 {
            c0[(site, site)] = C64::new(1.0, 0.0);
        }
    }
    let steps = cfg.steps();
    let mut values = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let ct = free_fermion_evolve(&h_single, &c0, t)?;
        values.push((0..n_sites).map(|i| ct[(i, i)].re).collect());
    }
    Ok(OracleSeries {
        columns: (0..n_sites).map(|i| site_op_name("n", i)).collect(),
        values,
    })
}
