//! Error-versus-ensemble-size sweeps against a fixed truth.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::Prepared;
use crate::error::{HarnessError, Result};
use crate::pipeline::{recover_and_score, RunResult, TruthFields};
use crate::report::{csv_cell, snapshot_dir};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub t: f64,
    pub members: usize,
    pub metric: &'static str,
    pub variables: String,
    pub value: f64,
    pub floor_mass: f64,
}

/// Reruns the recovery for every ensemble size in `sizes` with the same seed
/// and truth. Runs are returned in the order of `sizes`.
pub fn l_sweep(p: &Prepared, truth: &[TruthFields], sizes: &[usize], seed: u64) -> Result<Vec<RunResult>> {
    sizes.par_iter().map(|&l| recover_and_score(p, truth, l, seed)).collect()
}

pub fn sweep_rows(runs: &[RunResult]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for run in runs {
        for snap in &run.snapshots {
            for m in &snap.marginals {
                rows.push(SweepRow {
                    t: snap.t,
                    members: run.members,
                    metric: m.metric(),
                    variables: m.marginal.label(),
                    value: m.kl.value,
                    floor_mass: m.kl.floor_mass,
                });
            }
        }
    }
    rows
}

/// Writes one `sweep_t<time>.csv` per snapshot with columns
/// `L,metric,variables,value,floor_mass`.
pub fn write_sweep(rows: &[SweepRow], out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    let mut times: Vec<f64> = rows.iter().map(|r| r.t).collect();
    times.dedup();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut written = Vec::new();
    for t in times {
        let mut text = String::from("L,metric,variables,value,floor_mass\n");
        for r in rows.iter().filter(|r| r.t == t) {
            let _ = writeln!(
                text,
                "{},{},{},{:.8e},{:.8e}",
                r.members,
                r.metric,
                csv_cell(&r.variables),
                r.value,
                r.floor_mass
            );
        }
        let path = out.join(format!("sweep_{}.csv", snapshot_dir(t)));
        std::fs::write(&path, text).map_err(HarnessError::io(&path))?;
        written.push(path);
    }
    Ok(written)
}
