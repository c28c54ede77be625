//! Matrix-product-state conversion behind the `convert-mps` subcommand.

use std::path::Path;

use anyhow::{Context, Result};
use ndarray::array;
use num_complex::Complex64 as C64;
use qgn_core::construction::{load_mps, mps_to_qgn, MpsState};
use qgn_core::linalg::CMat;
use qgn_core::network::io::save_qgn;
use qgn_core::network::Qgn;

/// The standard single-qubit operator set attached to every site when all
/// physical dimensions are 2. Sites of other dimensions get no tables.
fn qubit_site_ops() -> Vec<(String, CMat)> {
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    vec![
        ("sx".to_string(), array![[zero, one], [one, zero]]),
        ("sy".to_string(), array![[zero, -i], [i, zero]]),
        ("sz".to_string(), array![[one, zero], [zero, -one]]),
    ]
}

pub fn mps_state_to_network(mps: &MpsState) -> Result<Qgn> {
    let all_qubits = (0..mps.n_sites()).all(|s| mps.phys_dim(s) == 2);
    let site_ops = if all_qubits { qubit_site_ops() } else { Vec::new() };
    Ok(mps_to_qgn(mps, &site_ops)?)
}

/// Reads an MPS container, converts it to a network container, and prints
/// each site's patch dimension as the product (left bond) x (physical) x
/// (right bond).
pub fn convert(input: &Path, output: &Path) -> Result<()> {
    let mps = load_mps(input).with_context(|| format!("reading MPS {}", input.display()))?;
    let qgn = mps_state_to_network(&mps)?;
    save_qgn(&qgn, output)
        .with_context(|| format!("writing network to {}", output.display()))?;
    for s in 0..mps.n_sites() {
        let (l, d, r) = mps.tensor(s).dim();
        println!("site {s}: chi = {l} x {d} x {r} = {}", qgn.chi(s));
    }
    println!("wrote {}", output.display());
    Ok(())
}
