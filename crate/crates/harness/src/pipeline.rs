//! Recovery runs compared against Monte Carlo truth.

use cgpdf::filter::FilterDiagnostics;
use cgpdf::grid::{GridAxis, GridSpec};
use cgpdf::metrics::{relative_entropy, sample_moments};
use cgpdf::mixture::GaussianMixture;
use cgpdf::recovery::{recover, RecoverySettings};
use cgpdf::simulate::smoothed_density;
use cgpdf::{DensityField, KlReport, Moments};
use rayon::prelude::*;

use crate::config::{GridMode, Marginal, Prepared};
use crate::error::{HarnessError, Result, StageExt};
use crate::truth::TruthSnapshot;

/// Truth densities and moments at one snapshot, shared by every run that
/// compares against them.
#[derive(Debug, Clone)]
pub struct TruthFields {
    pub t: f64,
    /// One field per requested marginal, in config order.
    pub fields: Vec<DensityField>,
    /// Sample moments of every state variable.
    pub moments: Vec<Moments>,
}

#[derive(Debug, Clone)]
pub struct MarginalResult {
    pub marginal: Marginal,
    pub recovered: DensityField,
    pub kl: KlReport,
    pub gate: Option<f64>,
}

impl MarginalResult {
    pub fn passes(&self) -> Option<bool> {
        self.gate.map(|g| self.kl.value < g)
    }

    pub fn metric(&self) -> &'static str {
        if self.marginal.dims.len() == 1 {
            "kl_1d"
        } else {
            "kl_2d"
        }
    }
}

#[derive(Debug, Clone)]
pub struct SnapshotResult {
    pub t: f64,
    pub bandwidth: Vec<f64>,
    pub bandwidth_fallback: bool,
    pub mixture: GaussianMixture,
    pub marginals: Vec<MarginalResult>,
    /// Mixture moments of every state variable.
    pub moments: Vec<Moments>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub members: usize,
    pub seed: u64,
    pub snapshots: Vec<SnapshotResult>,
    pub diagnostics: FilterDiagnostics,
}

/// Evaluation grid of a marginal: the configured explicit ranges, or the
/// truth mean ± `width` standard deviations per axis.
pub fn marginal_grid(p: &Prepared, truth: &TruthSnapshot, m: &Marginal) -> Result<GridSpec> {
    let g = &p.config.grid;
    let points = if m.dims.len() == 1 { g.points_1d } else { g.points_2d };
    let axes = m
        .names
        .iter()
        .zip(&m.dims)
        .map(|(name, &d)| match g.mode {
            GridMode::Explicit => {
                let a = g.axes[name];
                GridAxis::new(name.clone(), a.min, a.max, a.points)
            }
            GridMode::Auto => {
                let mo = sample_moments(&truth.columns(&[d]))?;
                let half = g.width * mo.variance.sqrt();
                GridAxis::new(name.clone(), mo.mean - half, mo.mean + half, points)
            }
        })
        .collect::<cgpdf::Result<Vec<_>>>()
        .stage("grid construction")?;
    GridSpec::new(axes).stage("grid construction")
}

/// Kernel-smoothed truth fields for every requested marginal.
pub fn truth_fields(p: &Prepared, truth: &[TruthSnapshot]) -> Result<Vec<TruthFields>> {
    truth
        .iter()
        .map(|snap| {
            let fields = p
                .marginals
                .par_iter()
                .map(|m| {
                    let grid = marginal_grid(p, snap, m)?;
                    let field = smoothed_density(&snap.columns(&m.dims), &grid).stage("truth density")?;
                    for w in &field.warnings {
                        log::debug!("truth {} at t = {}: {w}", m.label(), snap.t);
                    }
                    Ok(field)
                })
                .collect::<Result<Vec<_>>>()?;
            let moments = (0..snap.dim)
                .map(|d| sample_moments(&snap.columns(&[d])))
                .collect::<cgpdf::Result<Vec<_>>>()
                .stage("truth moments")?;
            Ok(TruthFields { t: snap.t, fields, moments })
        })
        .collect()
}

/// Runs the recovery with `members` and `seed` and scores every requested
/// marginal against `truth`.
pub fn recover_and_score(p: &Prepared, truth: &[TruthFields], members: usize, seed: u64) -> Result<RunResult> {
    let cfg = &p.config;
    if truth.len() != cfg.snapshots.len() {
        return Err(HarnessError::Config("truth fields do not match the snapshot list".into()));
    }
    let settings = RecoverySettings {
        members,
        dt: cfg.dt,
        seed,
        filter_init: cfg.filter.filter_init(),
        thin: cfg.filter.thin,
    };
    let recovery = recover(p.system.as_ref(), &p.init, &settings, &cfg.snapshots).stage("recovery")?;
    let snapshots = recovery
        .snapshots
        .into_iter()
        .zip(truth)
        .map(|(snap, tf)| {
            let marginals = p
                .marginals
                .iter()
                .zip(&tf.fields)
                .map(|(m, truth_field)| {
                    let recovered = snap
                        .mixture
                        .marginal(&m.dims)
                        .and_then(|mix| mix.evaluate_on_grid(&truth_field.grid))
                        .stage("mixture evaluation")?;
                    let kl = relative_entropy(truth_field, &recovered).stage("relative entropy")?;
                    let gate = cfg.gates.as_ref().and_then(|g| if m.dims.len() == 1 { g.kl_1d } else { g.kl_2d });
                    Ok(MarginalResult { marginal: m.clone(), recovered, kl, gate })
                })
                .collect::<Result<Vec<_>>>()?;
            let moments = (0..snap.mixture.dim())
                .map(|j| snap.mixture.moments(j))
                .collect::<cgpdf::Result<Vec<_>>>()
                .stage("mixture moments")?;
            Ok(SnapshotResult {
                t: snap.t,
                bandwidth: snap.bandwidth.h(),
                bandwidth_fallback: snap.bandwidth.fallback,
                mixture: snap.mixture,
                marginals,
                moments,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult { members, seed, snapshots, diagnostics: recovery.diagnostics })
}
