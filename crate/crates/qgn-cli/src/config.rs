//! Experiment configuration: TOML schema, validation, and flag overrides.
//!
//! The file format is deliberately flat: a `[model]`, `[lattice]`, and
//! `[initial]` table plus top-level scalars. Unknown keys are rejected so
//! typos fail loudly, and validation errors carry the offending values.

use std::fmt;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use qgn_core::fock::{build_basis, Basis, BasisKind, Model};
use qgn_core::lattice::LatticeSpec;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    kind: String,
    v: Option<f64>,
    h: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PeriodicSpec {
    All(bool),
    PerAxis(Vec<bool>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeSection {
    dims: Vec<usize>,
    periodic: PeriodicSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSection {
    kind: String,
    bits: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelSection,
    lattice: LatticeSection,
    initial: InitialSection,
    min_chi: usize,
    dt: f64,
    time: f64,
    observables: Vec<String>,
    oracle: String,
    output: PathBuf,
    seed: Option<u64>,
    triangle_stride: Option<usize>,
    save_network: Option<PathBuf>,
    network: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Dense,
    Krylov,
    FreeFermion,
    None,
}

impl fmt::Display for OracleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OracleMode::Dense => "dense",
            OracleMode::Krylov => "krylov",
            OracleMode::FreeFermion => "free-fermion",
            OracleMode::None => "none",
        };
        f.write_str(s)
    }
}

impl OracleMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "dense" => OracleMode::Dense,
            "krylov" => OracleMode::Krylov,
            "free-fermion" => OracleMode::FreeFermion,
            "none" => OracleMode::None,
            other => bail!("unknown oracle mode {other:?} (expected dense, krylov, free-fermion, or none)"),
        })
    }
}

/// Fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: Model,
    pub lattice: LatticeSpec,
    /// Occupation bitstring; bit i is site i.
    pub initial: u64,
    pub min_chi: usize,
    pub dt: f64,
    pub time: f64,
    pub observables: Vec<String>,
    pub oracle: OracleMode,
    pub output: PathBuf,
    pub seed: u64,
    pub triangle_stride: usize,
    pub save_network: Option<PathBuf>,
    /// When set, `verify` checks this stored network instead of building one.
    pub network: Option<PathBuf>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub chi: Option<usize>,
    pub time: Option<f64>,
    pub oracle: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

const MAX_BASIS_DIM: usize = 1 << 24;
const MAX_DENSE_DIM: usize = 1 << 16;

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

fn checkerboard_bits(lattice: &LatticeSpec) -> u64 {
    let mut bits = 0u64;
    for site in 0..lattice.num_sites() {
        let parity: usize = lattice.site_coords(site).iter().sum();
        if parity % 2 == 0 {
            bits |= 1u64 << site;
        }
    }
    bits
}

pub fn load_config(path: &std::path::Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let raw: RawConfig = toml::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    validate(raw, overrides)
}

fn validate(raw: RawConfig, overrides: &Overrides) -> Result<ExperimentConfig> {
    let model = match raw.model.kind.as_str() {
        "fermi" => {
            if raw.model.h.is_some() {
                bail!("model.h is an ising parameter; the fermi model takes model.v");
            }
            let v = raw.model.v.context("fermi model needs model.v")?;
            Model::Fermi { v }
        }
        "ising" => {
            if raw.model.v.is_some() {
                bail!("model.v is a fermi parameter; the ising model takes model.h");
            }
            let h = raw.model.h.context("ising model needs model.h")?;
            Model::Ising { h }
        }
        other => bail!("unknown model.kind {other:?} (expected \"fermi\" or \"ising\")"),
    };

    let periodic = match raw.lattice.periodic {
        PeriodicSpec::All(b) => vec![b; raw.lattice.dims.len()],
        PeriodicSpec::PerAxis(v) => v,
    };
    let lattice = LatticeSpec::new(raw.lattice.dims, periodic)?;
    let n_sites = lattice.num_sites();
    if n_sites > 63 {
        bail!("{n_sites} sites exceed the 63-site bitstring limit");
    }

    let initial = match raw.initial.kind.as_str() {
        "checkerboard" => checkerboard_bits(&lattice),
        "all-right" => {
            if matches!(model, Model::Fermi { .. }) {
                bail!("initial.kind \"all-right\" is the spin product state; fermi runs start from \"checkerboard\" or \"custom\"");
            }
            0
        }
        "custom" => {
            let bits = raw
                .initial
                .bits
                .as_deref()
                .context("initial.kind \"custom\" needs initial.bits")?;
            if bits.len() != n_sites {
                bail!(
                    "initial.bits has {} characters for {} sites",
                    bits.len(),
                    n_sites
                );
            }
            let mut state = 0u64;
            for (site, c) in bits.chars().enumerate() {
                match c {
                    '0' => {}
                    '1' => state |= 1u64 << site,
                    other => bail!("initial.bits may only contain 0 and 1, found {other:?}"),
                }
            }
            state
        }
        other => bail!(
            "unknown initial.kind {other:?} (expected \"checkerboard\", \"all-right\", or \"custom\")"
        ),
    };

    let dim = match model {
        Model::Fermi { .. } => binomial(n_sites, initial.count_ones() as usize),
        Model::Ising { .. } => 1usize << n_sites,
    };
    if dim > MAX_BASIS_DIM {
        bail!("full basis dimension {dim} exceeds the {MAX_BASIS_DIM} guard");
    }

    let dt = overrides.dt.unwrap_or(raw.dt);
    if !(dt > 0.0) {
        bail!("dt must be positive, got {dt}");
    }
    let time = overrides.time.unwrap_or(raw.time);
    if !(time >= 0.0) {
        bail!("time must be nonnegative, got {time}");
    }
    let min_chi = overrides.chi.unwrap_or(raw.min_chi);
    if min_chi == 0 {
        bail!("min_chi must be at least 1");
    }

    let oracle = OracleMode::parse(overrides.oracle.as_deref().unwrap_or(&raw.oracle))?;
    if oracle == OracleMode::Dense && dim > MAX_DENSE_DIM {
        bail!("oracle \"dense\" needs full dimension <= {MAX_DENSE_DIM}, got {dim}");
    }
    if oracle == OracleMode::FreeFermion && !matches!(model, Model::Fermi { v } if v == 0.0) {
        bail!("oracle \"free-fermion\" needs the fermi model with v = 0");
    }

    if raw.observables.is_empty() {
        bail!("observables must not be empty");
    }
    let allowed: &[&str] = match model {
        Model::Fermi { .. } => &["n"],
        Model::Ising { .. } => &["sx", "sy", "sz"],
    };
    for base in &raw.observables {
        if !allowed.contains(&base.as_str()) {
            bail!("observable {base:?} is not valid for this model (allowed: {allowed:?})");
        }
    }
    let required = match model {
        Model::Fermi { .. } => "n",
        Model::Ising { .. } => "sx",
    };
    if !raw.observables.iter().any(|b| b == required) {
        bail!("observables must include {required:?} (it feeds the number column)");
    }

    Ok(ExperimentConfig {
        model,
        lattice,
        initial,
        min_chi,
        dt,
        time,
        observables: raw.observables,
        oracle,
        output: overrides.out.clone().unwrap_or(raw.output),
        seed: overrides.seed.or(raw.seed).unwrap_or(0),
        triangle_stride: raw.triangle_stride.unwrap_or(1).max(1),
        save_network: raw.save_network,
        network: raw.network,
    })
}

impl ExperimentConfig {
    pub fn build_basis(&self) -> Result<Basis> {
        let basis = match self.model {
            Model::Fermi { .. } => build_basis(
                BasisKind::Fermion,
                self.lattice.num_sites(),
                Some(self.initial.count_ones() as usize),
            )?,
            Model::Ising { .. } => build_basis(BasisKind::Spin, self.lattice.num_sites(), None)?,
        };
        Ok(basis)
    }

    pub fn steps(&self) -> usize {
        (self.time / self.dt).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_toml() -> String {
        r#"
            min_chi = 16
            dt = 0.05
            time = 1.0
            observables = ["n"]
            oracle = "krylov"
            output = "out.csv"

            [model]
            kind = "fermi"
            v = 1.0

            [lattice]
            dims = [6]
            periodic = true

            [initial]
            kind = "checkerboard"
        "#
        .to_string()
    }

    fn parse(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
        let raw: RawConfig = toml::from_str(text)?;
        validate(raw, overrides)
    }

    #[test]
    fn checkerboard_occupies_even_parity_sites() {
        let cfg = parse(&base_toml(), &Overrides::default()).unwrap();
        assert_eq!(cfg.initial, 0b010101);
        assert_eq!(cfg.steps(), 20);
    }

    #[test]
    fn overrides_replace_file_values() {
        let overrides = Overrides {
            dt: Some(0.01),
            chi: Some(4),
            time: Some(2.0),
            oracle: Some("none".into()),
            out: Some(PathBuf::from("elsewhere.csv")),
            seed: Some(9),
        };
        let cfg = parse(&base_toml(), &overrides).unwrap();
        assert_eq!(cfg.dt, 0.01);
        assert_eq!(cfg.min_chi, 4);
        assert_eq!(cfg.time, 2.0);
        assert_eq!(cfg.oracle, OracleMode::None);
        assert_eq!(cfg.output, PathBuf::from("elsewhere.csv"));
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn invalid_settings_are_rejected_with_reasons() {
        let wrong_param = base_toml().replace("v = 1.0", "h = 3.0");
        assert!(parse(&wrong_param, &Overrides::default())
            .unwrap_err()
            .to_string()
            .contains("model.v"));

        let bad_obs = base_toml().replace("[\"n\"]", "[\"sx\"]");
        assert!(parse(&bad_obs, &Overrides::default())
            .unwrap_err()
            .to_string()
            .contains("not valid"));

        let bad_oracle = base_toml().replace("\"krylov\"", "\"free-fermion\"");
        assert!(parse(&bad_oracle, &Overrides::default())
            .unwrap_err()
            .to_string()
            .contains("v = 0"));

        let unknown_key = format!("{}\nextra = 1\n", base_toml());
        assert!(parse(&unknown_key, &Overrides::default()).is_err());
    }

    #[test]
    fn dense_oracle_is_bounded_by_the_full_dimension() {
        let text = r#"
            min_chi = 4
            dt = 0.02
            time = 0.1
            observables = ["sx"]
            oracle = "dense"
            output = "out.csv"

            [model]
            kind = "ising"
            h = 3.0

            [lattice]
            dims = [4, 5]
            periodic = true

            [initial]
            kind = "all-right"
        "#;
        let err = parse(text, &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("dense"), "{err}");
    }

    #[test]
    fn custom_bits_use_site_order() {
        let text = base_toml().replace(
            "kind = \"checkerboard\"",
            "kind = \"custom\"\nbits = \"110100\"",
        );
        let cfg = parse(&text, &Overrides::default()).unwrap();
        assert_eq!(cfg.initial, 0b001011);
    }
}
