//! Command-line front end: configuration, sweep orchestration, result files
//! and plots. The binary in `main.rs` is a thin argument parser over these.

pub mod artifacts;
pub mod config;
pub mod plot;
pub mod sweep;

use std::path::Path;

use crate::error::Result;
use crate::factoranalysis::{analyze, write_coefficients_csv, Analysis, EncodeOptions, FactorRow};
use crate::seed;
use crate::taskgen::{build_task, calibrate_separation, task_to_text, TaskSpec};

pub use config::{load_config, parse_config, SweepConfig};
pub use sweep::{evaluate_all, run_sweep, Stage, SweepOptions, SweepReport};

/// Fits the factor regressions to `results` and writes the coefficient
/// table and text report into `out`.
pub fn analyze_results(results: &Path, out: &Path, alpha: f64, options: &EncodeOptions) -> Result<Analysis> {
    let rows: Vec<FactorRow> = artifacts::read_rows(results)?;
    let analysis = analyze(&rows, options, alpha)?;
    let mut buf = Vec::new();
    write_coefficients_csv(&mut buf, &[&analysis.poisson, &analysis.negbin])?;
    artifacts::write_atomic(&out.join(artifacts::COEFFICIENTS_FILE), &buf)?;
    artifacts::write_atomic(&out.join(artifacts::REPORT_FILE), analysis.report().as_bytes())?;
    Ok(analysis)
}

/// Text definition of a preset, calibrated to `target_ber` when given.
pub fn generate_task(spec: &TaskSpec, target_ber: Option<f64>, n_mc: usize, master_seed: u64) -> Result<String> {
    let mut spec = spec.clone();
    if let Some(ber) = target_ber {
        let base = TaskSpec::new(spec.task_id);
        let label = format!("calibrate:{}:{ber:.4}", spec.task_id);
        spec.separation_scale = calibrate_separation(&base, ber, 0.005, n_mc, seed::derive(master_seed, &label, 0))?;
        spec.target_ber = Some(ber);
    }
    Ok(task_to_text(&build_task(&spec)?))
}
