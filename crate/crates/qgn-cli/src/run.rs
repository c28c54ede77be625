//! Experiment driver: build (or load) the network described by a config,
//! evolve it, optionally compare against a reference series, and write the
//! CSV and report artifacts.

use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use qgn_core::construction::{
    qgn_from_quench, quench_basis_sets, quench_network_automorphisms,
};
use qgn_core::dynamics::{
    evolve, write_csv, EvolveOptions, NetworkAutomorphism, NumberColumn, TimeSeries,
};
use qgn_core::fock::Model;
use qgn_core::lattice::build_nn_patch_graph;
use qgn_core::network::io::{load_qgn, save_qgn};
use qgn_core::network::Qgn;

use crate::config::ExperimentConfig;
use crate::oracle::run_oracle;
use crate::report::{build_report, ComparisonReport};

/// Everything a finished run produced, for callers that want to inspect the
/// numbers instead of (or in addition to) the files on disk.
pub struct RunArtifacts {
    pub series: TimeSeries,
    pub report: ComparisonReport,
}

/// Builds the truncated network for a config, together with the verified
/// lattice-symmetry candidates the integrator may exploit.
pub fn build_network(cfg: &ExperimentConfig) -> Result<(Qgn, Vec<NetworkAutomorphism>)> {
    let graph = build_nn_patch_graph(&cfg.lattice)?;
    let basis = cfg.build_basis()?;
    let obs: Vec<&str> = cfg.observables.iter().map(String::as_str).collect();
    let qgn = qgn_from_quench(cfg.model, &graph, &basis, cfg.initial, cfg.min_chi, &obs)
        .context("building the network from the config")?;
    let sets = quench_basis_sets(cfg.model, &graph, &basis, cfg.initial, cfg.min_chi)?;
    let autos = quench_network_automorphisms(&cfg.lattice, &graph, &basis, &sets, cfg.initial);
    Ok((qgn, autos))
}

/// Loads the network named by the config, or builds one when no file is
/// named. Loaded networks skip the symmetry search: their data need not
/// come from the quench constructor the search assumes.
pub fn obtain_network(cfg: &ExperimentConfig) -> Result<(Qgn, Vec<NetworkAutomorphism>)> {
    match &cfg.network {
        Some(path) => {
            let qgn = load_qgn(path)
                .with_context(|| format!("loading network from {}", path.display()))?;
            Ok((qgn, Vec::new()))
        }
        None => build_network(cfg),
    }
}

pub fn number_column(model: Model) -> NumberColumn {
    match model {
        Model::Fermi { .. } => NumberColumn::FermiTotal,
        Model::Ising { .. } => NumberColumn::IsingFlips,
    }
}

fn evolve_options(cfg: &ExperimentConfig, autos: Vec<NetworkAutomorphism>) -> EvolveOptions {
    let mut opts = EvolveOptions::new(cfg.dt, cfg.steps(), number_column(cfg.model));
    opts.obs_bases = cfg.observables.clone();
    opts.triangle_stride = cfg.triangle_stride;
    opts.automorphisms = autos;
    opts
}

fn write_series_csv(series: &TimeSeries, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating output directory {}", parent.display()))?;
        }
    }
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    write_csv(series, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Runs the experiment end to end and writes `output` (CSV), a sibling
/// `.report.txt`, and optionally the final serialized network.
pub fn run(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let (mut qgn, autos) = obtain_network(cfg)?;
    let chis: Vec<usize> = (0..qgn.n_patches()).map(|p| qgn.chi(p)).collect();

    let opts = evolve_options(cfg, autos);
    let series = evolve(&mut qgn, &opts).context("evolving the network")?;

    let oracle = run_oracle(cfg).context("running the reference calculation")?;
    let report = build_report(&series, oracle.as_ref(), chis);

    write_series_csv(&series, &cfg.output)?;
    println!("wrote {}", cfg.output.display());

    let report_path = cfg.output.with_extension("report.txt");
    fs::write(&report_path, format!("{report}"))
        .with_context(|| format!("writing {}", report_path.display()))?;
    println!("wrote {}", report_path.display());

    if let Some(net_path) = &cfg.save_network {
        save_qgn(&qgn, net_path)
            .with_context(|| format!("writing network to {}", net_path.display()))?;
        println!("wrote {}", net_path.display());
    }

    Ok(RunArtifacts { series, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{load_config, Overrides};

    fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
        let path = dir.join("exp.toml");
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn a_small_run_produces_csv_and_report_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("series.csv");
        let body = format!(
            r#"
min_chi = 8
dt = 0.005
time = 0.1
observables = ["n"]
oracle = "dense"
output = "{}"
seed = 7

[model]
kind = "fermi"
v = 1.0

[lattice]
dims = [4]
periodic = false

[initial]
kind = "checkerboard"
"#,
            out.display()
        );
        let path = write_config(dir.path(), &body);
        let cfg = load_config(&path, &Overrides::default()).unwrap();
        let artifacts = run(&cfg).unwrap();

        assert!(out.is_file());
        assert!(dir.path().join("series.report.txt").is_file());
        assert_eq!(artifacts.series.times.len(), cfg.steps() + 1);
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("t,n0,n1,n2,n3,energy,number,"));
        for (_, err, _) in &artifacts.report.oracle_errors {
            assert!(*err < 1e-6, "saturated 4-site run should track the oracle");
        }
    }

    #[test]
    fn identical_config_and_seed_give_bit_identical_csv() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("series.csv");
        let body = format!(
            r#"
min_chi = 3
dt = 0.05
time = 0.15
observables = ["sx"]
oracle = "none"
output = "{}"
seed = 11

[model]
kind = "ising"
h = 3.0

[lattice]
dims = [4]
periodic = true

[initial]
kind = "all-right"
"#,
            out.display()
        );
        let path = write_config(dir.path(), &body);
        let cfg = load_config(&path, &Overrides::default()).unwrap();
        run(&cfg).unwrap();
        let first = fs::read(&out).unwrap();
        run(&cfg).unwrap();
        let second = fs::read(&out).unwrap();
        assert_eq!(first, second);
    }
}
