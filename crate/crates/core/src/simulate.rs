//! Seeded Euler-Maruyama ensembles and Monte Carlo truth densities.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, GridSpec};
use crate::kde;
use crate::models::{CgSystem, Coefficients};
use crate::rng::member_rng;

/// Initial distribution of a single state component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimInit {
    Delta { value: f64 },
    Gaussian { mean: f64, variance: f64 },
    Gamma { shape: f64, scale: f64 },
    /// `weight·N(means[0], variances[0]) + (1 − weight)·N(means[1], variances[1])`.
    Bimodal { means: [f64; 2], variances: [f64; 2], weight: f64 },
}

impl DimInit {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            DimInit::Delta { value } => value.is_finite(),
            DimInit::Gaussian { mean, variance } => mean.is_finite() && *variance >= 0.0,
            DimInit::Gamma { shape, scale } => *shape > 0.0 && *scale > 0.0,
            DimInit::Bimodal { means, variances, weight } => {
                means.iter().all(|m| m.is_finite())
                    && variances.iter().all(|v| *v >= 0.0)
                    && (0.0..=1.0).contains(weight)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid initial distribution {self:?}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DimInit::Delta { value } => value,
            DimInit::Gaussian { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + variance.sqrt() * z
            }
            DimInit::Gamma { shape, scale } => {
                Gamma::new(shape, scale).expect("validated gamma parameters").sample(rng)
            }
            DimInit::Bimodal { means, variances, weight } => {
                let k = if rng.random::<f64>() < weight { 0 } else { 1 };
                let z: f64 = StandardNormal.sample(rng);
                means[k] + variances[k].sqrt() * z
            }
        }
    }
}

pub type Sampler = Arc<dyn Fn(&mut ChaCha8Rng, &mut [f64]) + Send + Sync>;

/// Distribution of the full initial state `(u_I, u_II)`.
#[derive(Clone)]
pub enum InitialCondition {
    /// Independent components, one per state variable.
    Independent(Vec<DimInit>),
    /// Arbitrary sampler writing one full state.
    Custom { dim: usize, sampler: Sampler },
}

impl fmt::Debug for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialCondition::Independent(dims) => f.debug_tuple("Independent").field(dims).finish(),
            InitialCondition::Custom { dim, .. } => write!(f, "Custom {{ dim: {dim} }}"),
        }
    }
}

impl InitialCondition {
    pub fn delta(state: &[f64]) -> Self {
        InitialCondition::Independent(state.iter().map(|&value| DimInit::Delta { value }).collect())
    }

    pub fn gaussian(mean: &[f64], variance: f64) -> Self {
        InitialCondition::Independent(
            mean.iter().map(|&mean| DimInit::Gaussian { mean, variance }).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialCondition::Independent(d) => d.len(),
            InitialCondition::Custom { dim, .. } => *dim,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch(format!(
                "initial condition has {} components, system has {dim}",
                self.dim()
            )));
        }
        if let InitialCondition::Independent(dims) = self {
            dims.iter().try_for_each(DimInit::validate)?;
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            InitialCondition::Independent(dims) => {
                for (x, d) in out.iter_mut().zip(dims) {
                    *x = d.sample(rng);
                }
            }
            InitialCondition::Custom { sampler, .. } => sampler(rng, out),
        }
    }
}

/// Number of `dt` steps that land on `t`, which must be a multiple of `dt`
/// up to rounding.
pub fn step_index(t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("cannot place t = {t} on a grid with dt = {dt}")));
    }
    let k = (t / dt).round();
    if ((k * dt) - t).abs() > 1e-6 * dt {
        return Err(Error::InvalidParameter(format!("t = {t} is not a multiple of dt = {dt}")));
    }
    Ok(k as usize)
}

/// Time of step `k`.
pub fn step_time(k: usize, dt: f64) -> f64 {
    k as f64 * dt
}

/// Reusable Euler-Maruyama stepper for one ensemble member.
pub struct EulerMaruyama<'a, S: CgSystem + ?Sized> {
    sys: &'a S,
    c: Coefficients,
    drift: Vec<f64>,
    dw_obs: Vec<f64>,
    dw_hid: Vec<f64>,
}

impl<'a, S: CgSystem + ?Sized> EulerMaruyama<'a, S> {
    pub fn new(sys: &'a S) -> Self {
        Self {
            sys,
            c: Coefficients::zeros(sys.n_obs(), sys.n_hid()),
            drift: vec![0.0; sys.dim()],
            dw_obs: vec![0.0; sys.n_obs()],
            dw_hid: vec![0.0; sys.n_hid()],
        }
    }

    /// Advances `u` from `t` to `t + dt` in place.
    pub fn step<R: Rng + ?Sized>(&mut self, t: f64, u: &mut [f64], dt: f64, rng: &mut R) {
        let n_obs = self.sys.n_obs();
        let sq = dt.sqrt();
        for w in self.dw_obs.iter_mut().chain(self.dw_hid.iter_mut()) {
            let z: f64 = StandardNormal.sample(rng);
            *w = sq * z;
        }
        self.sys.drift_into(t, u, &mut self.c, &mut self.drift);
        self.c.obs_noise.fill(0.0);
        self.c.hid_noise.fill(0.0);
        self.sys.noise(t, &u[..n_obs], &mut self.c);
        let (obs, hid) = u.split_at_mut(n_obs);
        add_noisy_drift(obs, &self.drift[..n_obs], &self.c.obs_noise, &self.dw_obs, dt);
        add_noisy_drift(hid, &self.drift[n_obs..], &self.c.hid_noise, &self.dw_hid, dt);
    }
}

fn add_noisy_drift(x: &mut [f64], f: &[f64], sigma: &nalgebra::DMatrix<f64>, dw: &[f64], dt: f64) {
    for i in 0..x.len() {
        let mut acc = f[i] * dt;
        for (k, w) in dw.iter().enumerate() {
            acc += sigma[(i, k)] * w;
        }
        x[i] += acc;
    }
}

fn check_finite(u: &[f64], member: usize, t: f64) -> Result<()> {
    if u.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { member, t })
    }
}

fn first_error(results: Vec<Result<()>>) -> Result<()> {
    results.into_iter().collect()
}

/// Stored ensemble trajectories on the uniform grid `times[k] = k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePaths {
    pub times: Vec<f64>,
    pub n_members: usize,
    pub n_obs: usize,
    pub n_hid: usize,
    /// `L × T × n_obs`, row-major.
    pub obs: Vec<f64>,
    /// `L × T × n_hid`, row-major.
    pub hid: Vec<f64>,
    pub seed: u64,
    pub dt: f64,
}

impl EnsemblePaths {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Observed trajectory of `member`, `T × n_obs`.
    pub fn obs_path(&self, member: usize) -> &[f64] {
        let len = self.n_times() * self.n_obs;
        &self.obs[member * len..(member + 1) * len]
    }

    pub fn hid_path(&self, member: usize) -> &[f64] {
        let len = self.n_times() * self.n_hid;
        &self.hid[member * len..(member + 1) * len]
    }

    /// Observed states of every member at step `k`, `L × n_obs`.
    pub fn obs_at(&self, k: usize) -> Vec<f64> {
        (0..self.n_members)
            .flat_map(|m| self.obs_path(m)[k * self.n_obs..(k + 1) * self.n_obs].iter().copied())
            .collect()
    }

    pub fn hid_at(&self, k: usize) -> Vec<f64> {
        (0..self.n_members)
            .flat_map(|m| self.hid_path(m)[k * self.n_hid..(k + 1) * self.n_hid].iter().copied())
            .collect()
    }

    const MAGIC: &'static [u8; 8] = b"CGPATHS1";

    /// Binary layout, little endian: the 8-byte magic `CGPATHS1`, then
    /// `u64` L, T, n_obs, n_hid, seed, then `f64` dt, then the `f64` arrays
    /// `times`, `obs` and `hid` in row-major order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        for v in [self.n_members, self.n_times(), self.n_obs, self.n_hid] {
            w.write_u64::<LittleEndian>(v as u64)?;
        }
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_f64::<LittleEndian>(self.dt)?;
        for x in self.times.iter().chain(&self.obs).chain(&self.hid) {
            w.write_f64::<LittleEndian>(*x)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("not an ensemble path file".into()));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = usize::try_from(r.read_u64::<LittleEndian>()?)
                .map_err(|_| Error::Format("dimension overflows usize".into()))?;
        }
        let [n_members, n_times, n_obs, n_hid] = dims;
        let seed = r.read_u64::<LittleEndian>()?;
        let dt = r.read_f64::<LittleEndian>()?;
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut v)?;
            Ok(v)
        };
        let times = read_vec(n_times)?;
        let obs = read_vec(n_members * n_times * n_obs)?;
        let hid = read_vec(n_members * n_times * n_hid)?;
        Ok(Self { times, n_members, n_obs, n_hid, obs, hid, seed, dt })
    }
}

fn check_run(sys: &(impl CgSystem + ?Sized), init: &InitialCondition, members: usize, dt: f64) -> Result<()> {
    if members == 0 {
        return Err(Error::InvalidParameter("ensemble size must be at least 1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    init.validate(sys.dim())
}

/// Simulates `members` trajectories to `t_end`, storing every step.
pub fn simulate_ensemble<S: CgSystem + ?Sized>(
    sys: &S,
    init: &InitialCondition,
    members: usize,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<EnsemblePaths> {
    check_run(sys, init, members, dt)?;
    if !(t_end >= dt) {
        return Err(Error::InvalidParameter(format!("t_end = {t_end} is shorter than dt = {dt}")));
    }
    let steps = step_index(t_end, dt)?;
    let n_times = steps + 1;
    let (n_obs, n_hid) = (sys.n_obs(), sys.n_hid());
    let mut obs = vec![0.0; members * n_times * n_obs];
    let mut hid = vec![0.0; members * n_times * n_hid];
    let results: Vec<Result<()>> = obs
        .par_chunks_mut(n_times * n_obs)
        .zip(hid.par_chunks_mut(n_times * n_hid))
        .enumerate()
        .map(|(m, (obs_m, hid_m))| {
            let mut rng = member_rng(seed, m as u64);
            let mut stepper = EulerMaruyama::new(sys);
            let mut u = vec![0.0; n_obs + n_hid];
            init.sample(&mut rng, &mut u);
            for k in 0..n_times {
                if k > 0 {
                    stepper.step(step_time(k - 1, dt), &mut u, dt, &mut rng);
                    check_finite(&u, m, step_time(k, dt))?;
                }
                obs_m[k * n_obs..(k + 1) * n_obs].copy_from_slice(&u[..n_obs]);
                hid_m[k * n_hid..(k + 1) * n_hid].copy_from_slice(&u[n_obs..]);
            }
            Ok(())
        })
        .collect();
    first_error(results)?;
    let times = (0..n_times).map(|k| step_time(k, dt)).collect();
    Ok(EnsemblePaths { times, n_members: members, n_obs, n_hid, obs, hid, seed, dt })
}

/// Full ensemble states at each requested time, without storing paths.
///
/// Returns one `members × dim` row-major block per snapshot time, in the
/// order given. Member streams match [`simulate_ensemble`] for the same seed.
pub fn simulate_snapshots<S: CgSystem + ?Sized>(
    sys: &S,
    init: &InitialCondition,
    members: usize,
    dt: f64,
    snapshot_times: &[f64],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_run(sys, init, members, dt)?;
    let steps: Vec<usize> = snapshot_times.iter().map(|&t| step_index(t, dt)).collect::<Result<_>>()?;
    let last = steps.iter().copied().max().unwrap_or(0);
    let dim = sys.dim();
    let per_member: Vec<Result<Vec<f64>>> = (0..members)
        .into_par_iter()
        .map(|m| {
            let mut rng = member_rng(seed, m as u64);
            let mut stepper = EulerMaruyama::new(sys);
            let mut u = vec![0.0; dim];
            init.sample(&mut rng, &mut u);
            let mut out = vec![0.0; steps.len() * dim];
            for k in 0..=last {
                if k > 0 {
                    stepper.step(step_time(k - 1, dt), &mut u, dt, &mut rng);
                    check_finite(&u, m, step_time(k, dt))?;
                }
                for (s, _) in steps.iter().enumerate().filter(|(_, &ks)| ks == k) {
                    out[s * dim..(s + 1) * dim].copy_from_slice(&u);
                }
            }
            Ok(out)
        })
        .collect();
    let mut snaps = vec![vec![0.0; members * dim]; steps.len()];
    for (m, r) in per_member.into_iter().enumerate() {
        let states = r?;
        for (s, snap) in snaps.iter_mut().enumerate() {
            snap[m * dim..(m + 1) * dim].copy_from_slice(&states[s * dim..(s + 1) * dim]);
        }
    }
    Ok(snaps)
}

/// Columns `dims` of a `rows × dim` row-major block.
pub fn select_columns(states: &[f64], dim: usize, dims: &[usize]) -> Vec<f64> {
    states
        .chunks(dim)
        .flat_map(|row| dims.iter().map(move |&d| row[d]))
        .collect()
}

fn coverage_warnings(samples: &[f64], grid: &GridSpec) -> Vec<String> {
    let d = grid.ndim();
    let mut warnings = Vec::new();
    for (j, axis) in grid.axes.iter().enumerate() {
        let outside = samples.chunks(d).filter(|p| p[j] < axis.min || p[j] > axis.max).count();
        if outside > 0 {
            warnings.push(format!("{outside} samples fall outside axis `{}`", axis.name));
        }
    }
    warnings
}

/// Kernel-smoothed marginal density of given samples (`rows × grid.ndim()`)
/// with the plug-in bandwidth.
pub fn smoothed_density(samples: &[f64], grid: &GridSpec) -> Result<DensityField> {
    let d = grid.ndim();
    let h = kde::bandwidth_diag(samples, d)?;
    let mut field = kde::density_on_grid(samples, d, &h, grid)?;
    field.warnings.extend(coverage_warnings(samples, grid));
    if h.fallback {
        field.warnings.push("bandwidth fell back to the Gaussian reference rule".into());
    }
    Ok(field)
}

/// Monte Carlo truth: `members` trajectories to `t_snap`, kernel-smoothed
/// onto `grid` over the state components `dims`.
#[allow(clippy::too_many_arguments)]
pub fn mc_truth_density<S: CgSystem + ?Sized>(
    sys: &S,
    init: &InitialCondition,
    members: usize,
    dt: f64,
    t_snap: f64,
    seed: u64,
    dims: &[usize],
    grid: &GridSpec,
) -> Result<DensityField> {
    check_dims(sys.dim(), dims, grid)?;
    let states = simulate_snapshots(sys, init, members, dt, &[t_snap], seed)?.remove(0);
    smoothed_density(&select_columns(&states, sys.dim(), dims), grid)
}

fn check_dims(dim: usize, dims: &[usize], grid: &GridSpec) -> Result<()> {
    if dims.is_empty() || dims.len() > 2 || dims.iter().any(|&d| d >= dim) {
        return Err(Error::InvalidParameter(format!("marginal dims {dims:?} invalid for dimension {dim}")));
    }
    if grid.ndim() != dims.len() {
        return Err(Error::GridMismatch(format!("{}-D grid for a {}-D marginal", grid.ndim(), dims.len())));
    }
    Ok(())
}

/// Samples of one long trajectory after burn-in, thinned to at most
/// `max_samples` evenly spaced states (`rows × dim`).
pub fn long_run_samples<S: CgSystem + ?Sized>(
    sys: &S,
    init: &InitialCondition,
    t_burn: f64,
    t_total: f64,
    dt: f64,
    seed: u64,
    max_samples: usize,
) -> Result<Vec<f64>> {
    check_run(sys, init, 1, dt)?;
    if !(t_total > t_burn) || t_burn < 0.0 {
        return Err(Error::InvalidParameter(format!("t_total = {t_total} must exceed t_burn = {t_burn}")));
    }
    let burn = (t_burn / dt).round() as usize;
    let total = (t_total / dt).round() as usize;
    let every = (total - burn).div_ceil(max_samples.max(1)).max(1);
    let dim = sys.dim();
    let mut rng = member_rng(seed, 0);
    let mut stepper = EulerMaruyama::new(sys);
    let mut u = vec![0.0; dim];
    init.sample(&mut rng, &mut u);
    let mut out = Vec::with_capacity((total - burn) / every * dim + dim);
    for k in 1..=total {
        stepper.step(step_time(k - 1, dt), &mut u, dt, &mut rng);
        check_finite(&u, 0, step_time(k, dt))?;
        if k > burn && (k - burn).is_multiple_of(every) {
            out.extend_from_slice(&u);
        }
    }
    Ok(out)
}

/// Ergodic estimate of the equilibrium marginal from one long trajectory.
#[allow(clippy::too_many_arguments)]
pub fn long_run_equilibrium<S: CgSystem + ?Sized>(
    sys: &S,
    init: &InitialCondition,
    t_burn: f64,
    t_total: f64,
    dt: f64,
    seed: u64,
    dims: &[usize],
    grid: &GridSpec,
) -> Result<DensityField> {
    check_dims(sys.dim(), dims, grid)?;
    let states = long_run_samples(sys, init, t_burn, t_total, dt, seed, 200_000)?;
    smoothed_density(&select_columns(&states, sys.dim(), dims), grid)
}
