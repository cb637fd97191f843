//! Experiment orchestration for the `cgpdf` solver.
//!
//! A run validates an [`ExperimentConfig`], simulates (or loads from cache)
//! the Monte Carlo truth ensemble, recovers the joint density with the
//! hybrid mixture at every snapshot, scores each requested marginal by
//! relative entropy and writes plot-ready artifacts plus a JSON report.

pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod sweep;
pub mod truth;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, Prepared};
pub use error::{HarnessError, Result};
pub use report::RunReport;

/// Output directory of a config: its `out` key, or `out/<name>`.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| Path::new("out").join(&cfg.name))
}

/// Truth fields for a prepared config, using its cache directory.
pub fn prepare_truth(p: &Prepared) -> Result<Vec<pipeline::TruthFields>> {
    let snaps = truth::truth_snapshots(p, p.config.cache_dir.as_deref())?;
    pipeline::truth_fields(p, &snaps)
}

/// Runs the full pipeline for `cfg` and writes all artifacts into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let p = cfg.validate()?;
    let truth = prepare_truth(&p)?;
    let run = pipeline::recover_and_score(&p, &truth, cfg.members, cfg.seed)?;
    report::write_run(&p, &truth, &run, out)
}

/// L-sweep over `sizes` (or the config's `sweep` list), written as CSV
/// tables into `out`.
pub fn run_sweep(cfg: &ExperimentConfig, sizes: &[usize], out: &Path) -> Result<Vec<sweep::SweepRow>> {
    let p = cfg.validate()?;
    let sizes = if sizes.is_empty() { &cfg.sweep[..] } else { sizes };
    if sizes.is_empty() {
        return Err(HarnessError::Config("no ensemble sizes given for the sweep".into()));
    }
    if sizes.contains(&0) {
        return Err(HarnessError::Config("ensemble sizes must be at least 1".into()));
    }
    let truth = prepare_truth(&p)?;
    let runs = sweep::l_sweep(&p, &truth, sizes, cfg.seed)?;
    let rows = sweep::sweep_rows(&runs);
    report::write_config(&p, out)?;
    sweep::write_sweep(&rows, out)?;
    Ok(rows)
}
