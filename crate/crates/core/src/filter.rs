//! Closed-form conditional Gaussian filter.
//!
//! Given the observed path `u_I(s ≤ t)`, the hidden state is Gaussian with
//! mean `m` and covariance `R` obeying
//!
//! ```text
//! dm = (a0 + a1 m) dt + R A1ᵀ (Σ_I Σ_Iᵀ)⁻¹ [du_I − (A0 + A1 m) dt]
//! dR = [a1 R + R a1ᵀ + Σ_II Σ_IIᵀ − R A1ᵀ (Σ_I Σ_Iᵀ)⁻¹ A1 R] dt
//! ```
//!
//! Both equations are stepped with explicit Euler at the path resolution.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde;
use crate::models::{CgSystem, Coefficients};
use crate::simulate::{step_index, EnsemblePaths};

/// Posterior mean and covariance of the hidden variables at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CgState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub t: f64,
}

impl CgState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, t: f64) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::DimensionMismatch(format!(
                "covariance {:?} for a mean of length {}",
                cov.shape(),
                mean.len()
            )));
        }
        Ok(Self { mean, cov, t })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// JSON form of a [`CgState`] with the covariance packed as its lower
/// triangle, row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub t: f64,
    pub mean: Vec<f64>,
    pub cov_lower: Vec<f64>,
}

impl From<&CgState> for StateRecord {
    fn from(s: &CgState) -> Self {
        let n = s.dim();
        let cov_lower = (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).map(|(i, j)| s.cov[(i, j)]).collect();
        Self { t: s.t, mean: s.mean.iter().copied().collect(), cov_lower }
    }
}

impl TryFrom<&StateRecord> for CgState {
    type Error = Error;

    fn try_from(r: &StateRecord) -> Result<Self> {
        let n = r.mean.len();
        if r.cov_lower.len() != n * (n + 1) / 2 {
            return Err(Error::Format(format!("packed covariance of length {} for dimension {n}", r.cov_lower.len())));
        }
        let mut cov = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in 0..=i {
                cov[(i, j)] = r.cov_lower[k];
                cov[(j, i)] = r.cov_lower[k];
                k += 1;
            }
        }
        CgState::new(DVector::from_vec(r.mean.clone()), cov, r.t)
    }
}

/// How the initial posterior covariance is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FilterInit {
    /// `ε I`. Without an explicit value, `ε_j = max(1e-4 · var_j, 1e-6)`
    /// from the per-dimension sample variance of the initial hidden states.
    Point { epsilon: Option<f64> },
    /// Diagonal of squared 1D plug-in bandwidths of the initial hidden
    /// states.
    KdeDiagonal,
}

impl Default for FilterInit {
    fn default() -> Self {
        FilterInit::Point { epsilon: None }
    }
}

const EPS_SCALE: f64 = 1e-4;
const EPS_FLOOR: f64 = 1e-6;

fn column(samples: &[f64], n: usize, j: usize) -> Vec<f64> {
    samples.iter().skip(j).step_by(n).copied().collect()
}

fn default_epsilon(samples: &[f64], n: usize) -> Vec<f64> {
    let l = (samples.len() / n) as f64;
    (0..n)
        .map(|j| {
            let col = column(samples, n, j);
            let mean = col.iter().sum::<f64>() / l;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / l;
            (EPS_SCALE * var).max(EPS_FLOOR)
        })
        .collect()
}

/// One initial state per member: the member's hidden sample as the mean and
/// a diagonal covariance chosen by `init`.
///
/// `samples` is `L × n_hid`, row-major. In [`FilterInit::KdeDiagonal`] mode a
/// single member or a constant coordinate falls back to the default point
/// covariance.
pub fn init_states(samples: &[f64], n_hid: usize, init: &FilterInit, t0: f64) -> Result<Vec<CgState>> {
    if n_hid == 0 || samples.is_empty() || !samples.len().is_multiple_of(n_hid) {
        return Err(Error::DimensionMismatch(format!("{} values do not form rows of {n_hid}", samples.len())));
    }
    let diag: Vec<f64> = match *init {
        FilterInit::Point { epsilon: Some(eps) } => {
            if !(eps > 0.0) {
                return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
            }
            vec![eps; n_hid]
        }
        FilterInit::Point { epsilon: None } => default_epsilon(samples, n_hid),
        FilterInit::KdeDiagonal => {
            let bandwidths: Result<Vec<f64>> =
                (0..n_hid).map(|j| kde::solve_bandwidth_1d(&column(samples, n_hid, j)).map(|h| h * h)).collect();
            match bandwidths {
                Ok(d) => d,
                Err(Error::Degenerate(why)) => {
                    log::info!("kde initialization fell back to point covariance: {why}");
                    default_epsilon(samples, n_hid)
                }
                Err(e) => return Err(e),
            }
        }
    };
    let cov = DMatrix::from_diagonal(&DVector::from_vec(diag));
    Ok(samples
        .chunks(n_hid)
        .map(|row| CgState { mean: DVector::from_row_slice(row), cov: cov.clone(), t: t0 })
        .collect())
}

/// Covariance hygiene statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterDiagnostics {
    /// Largest `−λ_min(R) / tr(R)` seen before clamping.
    pub max_violation: f64,
    /// Number of steps whose covariance needed clamping.
    pub clamps: usize,
}

impl FilterDiagnostics {
    pub fn merge(&mut self, other: &FilterDiagnostics) {
        self.max_violation = self.max_violation.max(other.max_violation);
        self.clamps += other.clamps;
    }
}

/// Filter workspace for one trajectory.
pub struct Filter<'a, S: CgSystem + ?Sized> {
    sys: &'a S,
    c: Coefficients,
    member: usize,
    pub diagnostics: FilterDiagnostics,
}

impl<'a, S: CgSystem + ?Sized> Filter<'a, S> {
    pub fn new(sys: &'a S, member: usize) -> Self {
        Self {
            sys,
            c: Coefficients::zeros(sys.n_obs(), sys.n_hid()),
            member,
            diagnostics: FilterDiagnostics::default(),
        }
    }

    /// Advances `state` by `dt` using the observation at `state.t` and the
    /// increment `du_obs` over the step.
    pub fn step(&mut self, state: &mut CgState, u_obs: &[f64], du_obs: &[f64], dt: f64) -> Result<()> {
        let t = state.t;
        self.c.clear();
        self.sys.coefficients(t, u_obs, &mut self.c);
        let c = &self.c;
        let obs_cov = &c.obs_noise * c.obs_noise.transpose();
        let chol = obs_cov.cholesky().ok_or(Error::SingularNoise { t })?;
        let m = &state.mean;
        let r = &state.cov;

        let a1_r = &c.obs_coupling * r;
        let gain = chol.solve(&a1_r).transpose();
        let du = DVector::from_column_slice(du_obs);
        let innovation = du - (&c.obs_drift + &c.obs_coupling * m) * dt;
        let mean = m + (&c.hid_drift + &c.hid_coupling * m) * dt + &gain * innovation;

        let a1r = &c.hid_coupling * r;
        let drift = &a1r + a1r.transpose() + &c.hid_noise * c.hid_noise.transpose() - &gain * &a1_r;
        let mut cov = r + drift * dt;
        symmetrize(&mut cov);

        if !(mean.iter().all(|x| x.is_finite()) && cov.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite { member: self.member, t: t + dt });
        }
        if cov.clone().cholesky().is_none() {
            let violation = clamp_psd(&mut cov);
            if violation > 0.0 {
                self.diagnostics.clamps += 1;
                self.diagnostics.max_violation = self.diagnostics.max_violation.max(violation);
            }
        }
        state.mean = mean;
        state.cov = cov;
        state.t = t + dt;
        Ok(())
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Clamps negative eigenvalues to zero and returns `−λ_min / tr` (zero when
/// nothing was clamped).
fn clamp_psd(m: &mut DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return 0.0;
    }
    let trace = m.trace().abs().max(f64::MIN_POSITIVE);
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    *m = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(m);
    -min / trace
}

/// One filter step returning the new state.
pub fn filter_step<S: CgSystem + ?Sized>(
    sys: &S,
    state: &CgState,
    u_obs: &[f64],
    du_obs: &[f64],
    dt: f64,
) -> Result<CgState> {
    let mut next = state.clone();
    Filter::new(sys, 0).step(&mut next, u_obs, du_obs, dt)?;
    Ok(next)
}

/// Filters one observed path (`T × n_obs`, spacing `dt`, starting at
/// `init.t`) and returns the states at `snapshot_times`.
///
/// With `thin = k` only every `k`-th path point is used and each step spans
/// `k·dt`; snapshots must then fall on that coarser grid.
#[allow(clippy::too_many_arguments)]
pub fn run_filter<S: CgSystem + ?Sized>(
    sys: &S,
    obs_path: &[f64],
    dt: f64,
    init: CgState,
    snapshot_times: &[f64],
    thin: usize,
    member: usize,
) -> Result<(Vec<CgState>, FilterDiagnostics)> {
    let n_obs = sys.n_obs();
    if thin == 0 {
        return Err(Error::InvalidParameter("thinning factor must be at least 1".into()));
    }
    if init.dim() != sys.n_hid() {
        return Err(Error::DimensionMismatch(format!("initial state of dimension {} for n_hid = {}", init.dim(), sys.n_hid())));
    }
    let n_times = obs_path.len() / n_obs;
    let t0 = init.t;
    let mut targets = Vec::with_capacity(snapshot_times.len());
    for &t in snapshot_times {
        let k = step_index(t - t0, dt * thin as f64)
            .map_err(|_| Error::InvalidParameter(format!("snapshot {t} is not on the filter grid")))?;
        if k * thin >= n_times {
            return Err(Error::InvalidParameter(format!("snapshot {t} lies beyond the observed path")));
        }
        targets.push(k);
    }
    let last = targets.iter().copied().max();
    let mut out: Vec<Option<CgState>> = vec![None; targets.len()];
    let Some(last) = last else {
        return Ok((Vec::new(), FilterDiagnostics::default()));
    };
    let mut filter = Filter::new(sys, member);
    let mut state = init;
    let big_dt = dt * thin as f64;
    let mut du = vec![0.0; n_obs];
    for k in 0..=last {
        for (slot, _) in out.iter_mut().zip(&targets).filter(|(_, &tk)| tk == k) {
            *slot = Some(state.clone());
        }
        if k == last {
            break;
        }
        let here = &obs_path[k * thin * n_obs..(k * thin + 1) * n_obs];
        let next = &obs_path[(k + 1) * thin * n_obs..((k + 1) * thin + 1) * n_obs];
        for j in 0..n_obs {
            du[j] = next[j] - here[j];
        }
        filter.step(&mut state, here, &du, big_dt)?;
        // Keep the clock on the grid rather than accumulating rounding.
        state.t = t0 + (k + 1) as f64 * big_dt;
    }
    let states = out.into_iter().map(|s| s.expect("every target is visited")).collect();
    Ok((states, filter.diagnostics))
}

/// Runs one filter per ensemble member in parallel.
///
/// Returns the states indexed `[snapshot][member]` and the merged
/// diagnostics.
pub fn run_filters<S: CgSystem + ?Sized>(
    sys: &S,
    paths: &EnsemblePaths,
    inits: Vec<CgState>,
    snapshot_times: &[f64],
    thin: usize,
) -> Result<(Vec<Vec<CgState>>, FilterDiagnostics)> {
    if inits.len() != paths.n_members {
        return Err(Error::DimensionMismatch(format!("{} initial states for {} members", inits.len(), paths.n_members)));
    }
    let per_member: Vec<Result<(Vec<CgState>, FilterDiagnostics)>> = inits
        .into_par_iter()
        .enumerate()
        .map(|(m, init)| run_filter(sys, paths.obs_path(m), paths.dt, init, snapshot_times, thin, m))
        .collect();
    let mut by_snapshot: Vec<Vec<CgState>> = vec![Vec::with_capacity(paths.n_members); snapshot_times.len()];
    let mut diagnostics = FilterDiagnostics::default();
    for r in per_member {
        let (states, diag) = r?;
        diagnostics.merge(&diag);
        for (slot, s) in by_snapshot.iter_mut().zip(states) {
            slot.push(s);
        }
    }
    Ok((by_snapshot, diagnostics))
}
