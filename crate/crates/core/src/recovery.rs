//! End-to-end recovery of the joint density at a list of snapshot times.
//!
//! Each member is simulated and filtered in a single pass, so only the
//! snapshot states are kept in memory. The result is identical to running
//! [`crate::filter::run_filters`] on stored [`crate::simulate::EnsemblePaths`]
//! with the same seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{init_states, CgState, Filter, FilterDiagnostics, FilterInit};
use crate::kde::{bandwidth_diag, BandwidthMatrix};
use crate::mixture::{assemble_joint, GaussianMixture};
use crate::models::CgSystem;
use crate::rng::member_rng;
use crate::simulate::{step_index, step_time, EulerMaruyama, InitialCondition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySettings {
    /// Ensemble size `L`.
    pub members: usize,
    pub dt: f64,
    pub seed: u64,
    pub filter_init: FilterInit,
    /// The filter uses every `thin`-th simulated point.
    pub thin: usize,
}

/// Everything recovered at one snapshot time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub mixture: GaussianMixture,
    pub bandwidth: BandwidthMatrix,
    /// Simulated full states of the members (`L × dim`), observed part first.
    pub states: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: FilterDiagnostics,
}

struct MemberOutput {
    states: Vec<f64>,
    posteriors: Vec<CgState>,
    diagnostics: FilterDiagnostics,
}

/// Simulates `settings.members` trajectories, filters each one and
/// assembles the hybrid mixture at every time in `snapshot_times`.
pub fn recover<S: CgSystem + ?Sized>(
    sys: &S,
    init: &InitialCondition,
    settings: &RecoverySettings,
    snapshot_times: &[f64],
) -> Result<Recovery> {
    let RecoverySettings { members, dt, seed, filter_init, thin } = *settings;
    if members == 0 {
        return Err(Error::InvalidParameter("ensemble size must be at least 1".into()));
    }
    if thin == 0 || !(dt > 0.0) {
        return Err(Error::InvalidParameter("dt must be positive and thin at least 1".into()));
    }
    init.validate(sys.dim())?;
    let (n_obs, n_hid, dim) = (sys.n_obs(), sys.n_hid(), sys.dim());
    let filter_dt = dt * thin as f64;
    let targets: Vec<usize> = snapshot_times
        .iter()
        .map(|&t| step_index(t, filter_dt).map(|k| k * thin))
        .collect::<Result<_>>()?;
    let last = targets.iter().copied().max().unwrap_or(0);

    let mut hid0 = vec![0.0; members * n_hid];
    let mut u = vec![0.0; dim];
    for m in 0..members {
        init.sample(&mut member_rng(seed, m as u64), &mut u);
        hid0[m * n_hid..(m + 1) * n_hid].copy_from_slice(&u[n_obs..]);
    }
    let inits = init_states(&hid0, n_hid, &filter_init, 0.0)?;

    let outputs: Vec<Result<MemberOutput>> = inits
        .into_par_iter()
        .enumerate()
        .map(|(m, mut post)| {
            let mut rng = member_rng(seed, m as u64);
            let mut u = vec![0.0; dim];
            init.sample(&mut rng, &mut u);
            let mut stepper = EulerMaruyama::new(sys);
            let mut filter = Filter::new(sys, m);
            let mut anchor = u[..n_obs].to_vec();
            let mut du = vec![0.0; n_obs];
            let mut states = vec![0.0; targets.len() * dim];
            let mut posteriors: Vec<Option<CgState>> = vec![None; targets.len()];
            for k in 0..=last {
                if k > 0 {
                    stepper.step(step_time(k - 1, dt), &mut u, dt, &mut rng);
                    if u.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite { member: m, t: step_time(k, dt) });
                    }
                    if k % thin == 0 {
                        for j in 0..n_obs {
                            du[j] = u[j] - anchor[j];
                        }
                        filter.step(&mut post, &anchor, &du, filter_dt)?;
                        post.t = step_time(k, dt);
                        anchor.copy_from_slice(&u[..n_obs]);
                    }
                }
                for (s, _) in targets.iter().enumerate().filter(|(_, &tk)| tk == k) {
                    states[s * dim..(s + 1) * dim].copy_from_slice(&u);
                    posteriors[s] = Some(post.clone());
                }
            }
            Ok(MemberOutput {
                states,
                posteriors: posteriors.into_iter().map(|p| p.expect("every target is visited")).collect(),
                diagnostics: filter.diagnostics,
            })
        })
        .collect();

    let mut diagnostics = FilterDiagnostics::default();
    let mut states = vec![vec![0.0; members * dim]; targets.len()];
    let mut posteriors: Vec<Vec<CgState>> = vec![Vec::with_capacity(members); targets.len()];
    for (m, out) in outputs.into_iter().enumerate() {
        let out = out?;
        diagnostics.merge(&out.diagnostics);
        for s in 0..targets.len() {
            states[s][m * dim..(m + 1) * dim].copy_from_slice(&out.states[s * dim..(s + 1) * dim]);
        }
        for (slot, p) in posteriors.iter_mut().zip(out.posteriors) {
            slot.push(p);
        }
    }

    let names = sys.variable_names();
    let snapshots = states
        .into_iter()
        .zip(posteriors)
        .zip(snapshot_times)
        .map(|((states, posts), &t)| {
            let obs: Vec<f64> = states.chunks(dim).flat_map(|r| r[..n_obs].iter().copied()).collect();
            let bandwidth = bandwidth_diag(&obs, n_obs)?;
            let mixture = assemble_joint(&obs, &bandwidth, &posts, names.clone())?;
            Ok(Snapshot { t, mixture, bandwidth, states })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Recovery { snapshots, diagnostics })
}
