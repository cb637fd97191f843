//! Kernel density estimate versus raw histogram on the same samples.

use std::fmt::Write as _;
use std::path::Path;

use cgpdf::kde::{bandwidth_diag, density_on_grid, histogram_on_grid};
use cgpdf::metrics::relative_entropy;
use cgpdf::simulate::{select_columns, simulate_snapshots, smoothed_density};
use cgpdf::KlReport;

use crate::config::{Marginal, Prepared};
use crate::error::{HarnessError, Result, StageExt};
use crate::pipeline::marginal_grid;
use crate::truth::TruthSnapshot;

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub t: f64,
    pub variable: String,
    pub members: usize,
    pub bins: usize,
    pub bandwidth: f64,
    pub kde: KlReport,
    pub histogram: KlReport,
}

/// Default histogram bin count for `members` samples.
pub fn default_bins(members: usize) -> usize {
    ((members as f64).sqrt().round() as usize).max(1)
}

/// For each observed variable and snapshot, scores a kernel estimate and a
/// `√L`-bin histogram built from the same `members` simulated samples.
pub fn compare_kde_vs_mc(p: &Prepared, truth: &[TruthSnapshot], members: usize) -> Result<Vec<CompareRow>> {
    let cfg = &p.config;
    let dim = p.system.dim();
    let samples = simulate_snapshots(p.system.as_ref(), &p.init, members, cfg.dt, &cfg.snapshots, cfg.seed)
        .stage("ensemble simulation")?;
    let bins = default_bins(members);
    let mut rows = Vec::new();
    for (snap, states) in truth.iter().zip(&samples) {
        for d in 0..p.system.n_obs() {
            let m = Marginal { names: vec![p.names[d].clone()], dims: vec![d] };
            let grid = marginal_grid(p, snap, &m)?;
            let truth_field = smoothed_density(&snap.columns(&[d]), &grid).stage("truth density")?;
            let x = select_columns(states, dim, &[d]);
            let h = bandwidth_diag(&x, 1).stage("bandwidth")?;
            let kde = density_on_grid(&x, 1, &h, &grid).stage("kernel density")?;
            let hist = histogram_on_grid(&x, bins, &grid).stage("histogram")?;
            rows.push(CompareRow {
                t: snap.t,
                variable: m.names[0].clone(),
                members,
                bins,
                bandwidth: h.h()[0],
                kde: relative_entropy(&truth_field, &kde).stage("relative entropy")?,
                histogram: relative_entropy(&truth_field, &hist).stage("relative entropy")?,
            });
        }
    }
    Ok(rows)
}

pub fn write_compare(rows: &[CompareRow], path: &Path) -> Result<()> {
    let mut text = String::from("t,variable,L,bins,bandwidth,kl_kde,kl_histogram,floor_mass_histogram\n");
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{:.8e},{:.8e},{:.8e},{:.8e}",
            r.t, r.variable, r.members, r.bins, r.bandwidth, r.kde.value, r.histogram.value, r.histogram.floor_mass
        );
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    }
    std::fs::write(path, text).map_err(HarnessError::io(path))
}
