//! Run summary: drifts, consistency residuals, oracle deviations, cost.

use std::fmt;

use qgn_core::dynamics::TimeSeries;

use crate::oracle::OracleSeries;

pub struct ComparisonReport {
    /// (column, max |network - oracle| over all sampled times, time of max).
    pub oracle_errors: Vec<(String, f64, f64)>,
    pub energy_drift: f64,
    pub number_drift: f64,
    pub max_vpsi: f64,
    pub max_triangle: f64,
    pub max_imag: f64,
    pub max_unitarity_residual: f64,
    pub wall_seconds: f64,
    pub chis: Vec<usize>,
    pub integrated_patches: usize,
    pub steps: usize,
}

fn drift(values: &[f64]) -> f64 {
    let first = values.first().copied().unwrap_or(0.0);
    values.iter().map(|v| (v - first).abs()).fold(0.0, f64::max)
}

pub fn build_report(
    series: &TimeSeries,
    oracle: Option<&OracleSeries>,
    chis: Vec<usize>,
) -> ComparisonReport {
    let mut oracle_errors = Vec::new();
    if let Some(oracle) = oracle {
        for (oc, name) in oracle.columns.iter().enumerate() {
            let Some(sc) = series.columns.iter().position(|c| c == name) else {
                continue;
            };
            let mut worst_err = 0.0f64;
            let mut worst_t = 0.0f64;
            for (k, (row, orow)) in series.observables.iter().zip(&oracle.values).enumerate() {
                let err = (row[sc] - orow[oc]).abs();
                if err > worst_err {
                    worst_err = err;
                    worst_t = series.times[k];
                }
            }
            oracle_errors.push((name.clone(), worst_err, worst_t));
        }
    }
    ComparisonReport {
        oracle_errors,
        energy_drift: drift(&series.energy),
        number_drift: drift(&series.number),
        max_vpsi: series.vpsi.iter().copied().fold(0.0, f64::max),
        max_triangle: series.triangle.iter().copied().fold(0.0, f64::max),
        max_imag: series.max_imag,
        max_unitarity_residual: series.max_unitarity_residual,
        wall_seconds: series.wall_seconds,
        chis,
        integrated_patches: series.integrated_patches,
        steps: series.times.len().saturating_sub(1),
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(f, "wall seconds: {:.3}", self.wall_seconds)?;
        let chi_max = self.chis.iter().copied().max().unwrap_or(0);
        writeln!(f, "patch dimensions (max {chi_max}): {:?}", self.chis)?;
        writeln!(
            f,
            "integrated patches: {} of {}",
            self.integrated_patches,
            self.chis.len()
        )?;
        writeln!(f, "energy drift: {:.3e}", self.energy_drift)?;
        writeln!(f, "number drift: {:.3e}", self.number_drift)?;
        writeln!(f, "max connection-state residual: {:.3e}", self.max_vpsi)?;
        writeln!(f, "max triangle residual: {:.3e}", self.max_triangle)?;
        writeln!(f, "max imaginary part: {:.3e}", self.max_imag)?;
        writeln!(
            f,
            "max frame unitarity residual: {:.3e}",
            self.max_unitarity_residual
        )?;
        if self.oracle_errors.is_empty() {
            writeln!(f, "oracle: none")?;
        } else {
            writeln!(f, "oracle deviations (max over time):")?;
            for (name, err, at) in &self.oracle_errors {
                writeln!(f, "  {name}: {err:.3e} (at t = {at:.4})")?;
            }
        }
        Ok(())
    }
}
