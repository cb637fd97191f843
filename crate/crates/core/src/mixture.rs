//! Hybrid Gaussian mixture for the joint density.
//!
//! Component `i` is centred at `(u_I^i, ū_II^i)` with block-diagonal
//! covariance `diag(H, R_II^i)` and weight `1/L`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::CgState;
use crate::grid::{DensityField, GridSpec};
use crate::kde::BandwidthMatrix;
use crate::metrics::Moments;

/// Components are ignored beyond this many standard deviations per axis.
const CUTOFF: f64 = 8.0;
/// Grid points below this fraction of the peak are evaluated without the
/// cutoff.
const TAIL_REFINE: f64 = 1e-10;

/// Equally weighted Gaussian mixture with covariances `diag(obs_var) ⊕ hid_cov[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub n_obs: usize,
    pub n_hid: usize,
    /// Component means, observed coordinates first.
    pub means: Vec<DVector<f64>>,
    /// Shared observed-block variances (the kernel bandwidth diagonal).
    pub obs_var: Vec<f64>,
    pub hid_cov: Vec<DMatrix<f64>>,
    pub names: Vec<String>,
    pub t: f64,
}

/// Builds the mixture from the observed endpoints (`L × n_obs`), the kernel
/// bandwidth and the hidden posterior states at the same time.
pub fn assemble_joint(
    obs_endpoints: &[f64],
    h: &BandwidthMatrix,
    states: &[CgState],
    names: Vec<String>,
) -> Result<GaussianMixture> {
    let n_obs = h.dim();
    let l = states.len();
    if l == 0 {
        return Err(Error::InvalidParameter("a mixture needs at least one component".into()));
    }
    if obs_endpoints.len() != l * n_obs {
        return Err(Error::DimensionMismatch(format!(
            "{} observed values for {l} components of dimension {n_obs}",
            obs_endpoints.len()
        )));
    }
    let n_hid = states[0].dim();
    let t = states[0].t;
    if let Some(bad) = states.iter().find(|s| (s.t - t).abs() > 1e-9 * t.abs().max(1.0)) {
        return Err(Error::InvalidParameter(format!("hidden states at t = {t} and t = {}", bad.t)));
    }
    if states.iter().any(|s| s.dim() != n_hid) {
        return Err(Error::DimensionMismatch("hidden states differ in dimension".into()));
    }
    if names.len() != n_obs + n_hid {
        return Err(Error::DimensionMismatch(format!("{} names for {} variables", names.len(), n_obs + n_hid)));
    }
    let means = obs_endpoints
        .chunks(n_obs)
        .zip(states)
        .map(|(u, s)| DVector::from_iterator(n_obs + n_hid, u.iter().copied().chain(s.mean.iter().copied())))
        .collect();
    Ok(GaussianMixture {
        n_obs,
        n_hid,
        means,
        obs_var: h.diag.clone(),
        hid_cov: states.iter().map(|s| s.cov.clone()).collect(),
        names,
        t,
    })
}

impl GaussianMixture {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.n_obs + self.n_hid
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Full covariance of component `i`.
    pub fn component_cov(&self, i: usize) -> DMatrix<f64> {
        let d = self.dim();
        let mut c = DMatrix::zeros(d, d);
        for (j, v) in self.obs_var.iter().enumerate() {
            c[(j, j)] = *v;
        }
        c.view_mut((self.n_obs, self.n_obs), (self.n_hid, self.n_hid)).copy_from(&self.hid_cov[i]);
        c
    }

    /// Variance of coordinate `j` in component `i`.
    fn component_var(&self, i: usize, j: usize) -> f64 {
        if j < self.n_obs {
            self.obs_var[j]
        } else {
            self.hid_cov[i][(j - self.n_obs, j - self.n_obs)]
        }
    }

    /// Marginal over the coordinates `dims`, taken in ascending order.
    pub fn marginal(&self, dims: &[usize]) -> Result<GaussianMixture> {
        let mut dims = dims.to_vec();
        dims.sort_unstable();
        dims.dedup();
        if dims.is_empty() || dims.iter().any(|&d| d >= self.dim()) {
            return Err(Error::InvalidParameter(format!("marginal dims {dims:?} out of range for {}", self.dim())));
        }
        let obs: Vec<usize> = dims.iter().copied().filter(|&d| d < self.n_obs).collect();
        let hid: Vec<usize> = dims.iter().filter(|&&d| d >= self.n_obs).map(|d| d - self.n_obs).collect();
        let means = self
            .means
            .iter()
            .map(|m| DVector::from_iterator(dims.len(), dims.iter().map(|&d| m[d])))
            .collect();
        let hid_cov = self
            .hid_cov
            .iter()
            .map(|r| DMatrix::from_fn(hid.len(), hid.len(), |a, b| r[(hid[a], hid[b])]))
            .collect();
        Ok(GaussianMixture {
            n_obs: obs.len(),
            n_hid: hid.len(),
            means,
            obs_var: obs.iter().map(|&j| self.obs_var[j]).collect(),
            hid_cov,
            names: dims.iter().map(|&d| self.names[d].clone()).collect(),
            t: self.t,
        })
    }

    /// Mixture mean: the average of the component means.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for mu in &self.means {
            m += mu;
        }
        m / self.len() as f64
    }

    /// Mixture covariance: average component covariance plus the covariance
    /// of the component means.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let d = self.dim();
        let mut c = DMatrix::zeros(d, d);
        for i in 0..self.len() {
            let dm = &self.means[i] - &mean;
            c += self.component_cov(i) + &dm * dm.transpose();
        }
        c / self.len() as f64
    }

    fn prepared(&self) -> Result<Vec<Prepared>> {
        (0..self.len())
            .map(|i| {
                let cov = self.component_cov(i);
                let chol = cov.clone().cholesky().ok_or_else(|| {
                    Error::Degenerate(format!("component {i} has a singular covariance"))
                })?;
                let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                Ok(Prepared {
                    mean: self.means[i].clone(),
                    inv: chol.inverse(),
                    log_norm: -0.5 * (log_det + self.dim() as f64 * (2.0 * PI).ln()),
                    sd: cov.diagonal().map(f64::sqrt),
                })
            })
            .collect()
    }

    /// Log density at each row of `points` (`Q × dim`).
    pub fn log_density(&self, points: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if !points.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch(format!("{} values do not form rows of {d}", points.len())));
        }
        let comps = self.prepared()?;
        let log_w = self.weight().ln();
        Ok(points
            .par_chunks(d)
            .map(|x| log_w + log_sum_pdf(&comps, &DVector::from_column_slice(x)))
            .collect())
    }

    /// Density on a grid whose axes correspond to the mixture coordinates.
    pub fn evaluate_on_grid(&self, grid: &GridSpec) -> Result<DensityField> {
        let d = self.dim();
        if grid.ndim() != d {
            return Err(Error::GridMismatch(format!("{}-D grid for a {d}-D mixture", grid.ndim())));
        }
        let comps = self.prepared()?;
        let axes: Vec<Vec<f64>> = grid.axes.iter().map(|a| a.coords()).collect();
        let shape = grid.shape();
        let row_len: usize = shape[1..].iter().product();
        let w = self.weight();
        let mut values = vec![0.0; grid.len()];
        // Tiles are runs of rows along the first axis.
        values.par_chunks_mut(row_len).enumerate().for_each(|(i0, tile)| {
            let x0 = axes[0][i0];
            let mut idx = vec![0usize; d];
            let mut x = DVector::zeros(d);
            for c in &comps {
                if (x0 - c.mean[0]).abs() > CUTOFF * c.sd[0] {
                    continue;
                }
                let ranges: Vec<(usize, usize)> = (1..d)
                    .map(|j| {
                        let lo = c.mean[j] - CUTOFF * c.sd[j];
                        let hi = c.mean[j] + CUTOFF * c.sd[j];
                        (axes[j].partition_point(|&v| v < lo), axes[j].partition_point(|&v| v <= hi))
                    })
                    .collect();
                if ranges.iter().any(|(a, b)| a >= b) {
                    continue;
                }
                x[0] = x0;
                let count: usize = ranges.iter().map(|(a, b)| b - a).product();
                for n in 0..count {
                    let mut rest = n;
                    let mut flat = 0;
                    for j in (1..d).rev() {
                        let (a, b) = ranges[j - 1];
                        idx[j] = a + rest % (b - a);
                        rest /= b - a;
                    }
                    for j in 1..d {
                        x[j] = axes[j][idx[j]];
                        flat = flat * shape[j] + idx[j];
                    }
                    tile[flat] += w * c.log_pdf(&x).exp();
                }
            }
        });
        // The cutoff drops far tails entirely; recompute points that are
        // small relative to the peak without it.
        let peak = values.iter().copied().fold(0.0, f64::max);
        let log_w = w.ln();
        values.par_iter_mut().enumerate().for_each(|(flat, v)| {
            if *v < TAIL_REFINE * peak {
                let mut x = vec![0.0; d];
                grid.point(flat, &mut x);
                *v = (log_w + log_sum_pdf(&comps, &DVector::from_vec(x))).exp();
            }
        });
        DensityField::new(grid.clone(), values)
    }

    /// Standardized moments of coordinate `j`.
    pub fn moments(&self, j: usize) -> Result<Moments> {
        if j >= self.dim() {
            return Err(Error::InvalidParameter(format!("coordinate {j} out of range for {}", self.dim())));
        }
        let n = self.len() as f64;
        let mean = self.means.iter().map(|m| m[j]).sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for i in 0..self.len() {
            let c = self.means[i][j] - mean;
            let s2 = self.component_var(i, j);
            m2 += c * c + s2;
            m3 += c * c * c + 3.0 * c * s2;
            m4 += c.powi(4) + 6.0 * c * c * s2 + 3.0 * s2 * s2;
        }
        Moments::from_central(mean, m2 / n, m3 / n, m4 / n)
    }
}

struct Prepared {
    mean: DVector<f64>,
    inv: DMatrix<f64>,
    log_norm: f64,
    sd: DVector<f64>,
}

impl Prepared {
    fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let dx = x - &self.mean;
        self.log_norm - 0.5 * dx.dot(&(&self.inv * &dx))
    }
}

/// `ln Σ_i N(x; μ_i, Σ_i)`, computed stably.
fn log_sum_pdf(comps: &[Prepared], x: &DVector<f64>) -> f64 {
    let terms: Vec<f64> = comps.iter().map(|c| c.log_pdf(x)).collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Convenience wrapper for [`GaussianMixture::moments`].
pub fn mixture_moments(mix: &GaussianMixture, j: usize) -> Result<Moments> {
    mix.moments(j)
}
