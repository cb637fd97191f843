//! Gaussian kernel density estimation with a solve-the-equation plug-in
//! bandwidth.
//!
//! The 1D bandwidth follows the fixed-point formulation of Botev, Grotowski
//! and Kroese (2010): the data are binned on `2^12` points, transformed with
//! a discrete cosine transform, and the squared bandwidth is the root of
//! `t = ξ γ^[l](t)`, where the curvature functionals are estimated in
//! stages from the transformed data.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, GridSpec};

const BINS: usize = 1 << 12;
const STAGES: u32 = 7;
const MAX_DIM: usize = 3;
/// Kernels are cut off this many bandwidths from their centre.
pub const KERNEL_CUTOFF: f64 = 8.0;

/// Diagonal kernel covariance `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthMatrix {
    /// Squared bandwidths, one per dimension.
    pub diag: Vec<f64>,
    /// Whether any dimension used the Gaussian reference rule.
    #[serde(default)]
    pub fallback: bool,
}

impl BandwidthMatrix {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || diag.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidParameter(format!("bandwidths must be positive, got {diag:?}")));
        }
        Ok(Self { diag, fallback: false })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Bandwidths (square roots of the diagonal).
    pub fn h(&self) -> Vec<f64> {
        self.diag.iter().map(|v| v.sqrt()).collect()
    }
}

/// A 1D bandwidth together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlugIn {
    pub h: f64,
    /// `true` when the fixed point could not be bracketed and the Gaussian
    /// reference rule was used instead.
    pub fallback: bool,
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_1d(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Degenerate("bandwidth selection needs at least two samples".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("samples contain non-finite values".into()));
    }
    let (_, sd) = mean_std(samples);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("samples have zero variance".into()));
    }
    Ok(sd)
}

/// Gaussian reference rule `σ̂ (4 / 3L)^{1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let sd = check_1d(samples)?;
    Ok(sd * (4.0 / (3.0 * samples.len() as f64)).powf(0.2))
}

/// Plug-in bandwidth for 1D samples.
pub fn solve_bandwidth_1d(samples: &[f64]) -> Result<f64> {
    plug_in_bandwidth(samples).map(|p| p.h)
}

/// Plug-in bandwidth with its fallback flag.
pub fn plug_in_bandwidth(samples: &[f64]) -> Result<PlugIn> {
    let sd = check_1d(samples)?;
    let n = samples.len() as f64;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = (hi - lo) / 10.0;
    let (min, range) = (lo - pad, (hi - lo) + 2.0 * pad);

    let dx = range / (BINS - 1) as f64;
    let mut hist = vec![0.0; BINS];
    for &x in samples {
        let k = (((x - min) / dx) as usize).min(BINS - 1);
        hist[k] += 1.0;
    }
    for v in hist.iter_mut() {
        *v /= n;
    }
    let a = dct(&hist);
    // Squared half-coefficients and squared frequencies k².
    let a2: Vec<f64> = a[1..].iter().map(|c| (c / 2.0).powi(2)).collect();
    let freq: Vec<f64> = (1..BINS).map(|k| (k * k) as f64).collect();

    let scale = range * range;
    let t_lo = 1e-12 * sd * sd / scale;
    let t_hi = sd * sd / scale;
    let residual = |t: f64| fixed_point_residual(t, n, &freq, &a2);
    match first_root(residual, t_lo, t_hi) {
        Some(t) => Ok(PlugIn { h: t.sqrt() * range, fallback: false }),
        None => {
            log::warn!("plug-in bandwidth root not bracketed; using the Gaussian reference rule");
            Ok(PlugIn { h: sd * (4.0 / (3.0 * n)).powf(0.2), fallback: true })
        }
    }
}

/// Type-II DCT with weights `a_0 = Σ x_j`, `a_k = 2 Σ x_j cos(π k (2j+1) / 2N)`.
fn dct(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .step_by(2)
        .chain(x.iter().skip(1).step_by(2).rev())
        .map(|&v| Complex::new(v, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter()
        .enumerate()
        .map(|(k, c)| {
            let w = if k == 0 {
                Complex::new(1.0, 0.0)
            } else {
                Complex::from_polar(2.0, -(k as f64) * PI / (2.0 * n as f64))
            };
            (w * c).re
        })
        .collect()
}

/// `t − ξ γ^[l](t)` in units where the binned range has length 1.
fn fixed_point_residual(t: f64, n: f64, freq: &[f64], a2: &[f64]) -> f64 {
    let functional = |s: u32, time: f64| -> f64 {
        let sum: f64 = freq
            .iter()
            .zip(a2)
            .map(|(&k2, &c)| k2.powi(s as i32) * c * (-k2 * PI * PI * time).exp())
            .sum();
        2.0 * PI.powi(2 * s as i32) * sum
    };
    let mut f = functional(STAGES, t);
    for s in (2..STAGES).rev() {
        let k0: f64 = (1..2 * s).step_by(2).map(f64::from).product::<f64>() / (2.0 * PI).sqrt();
        let c = (1.0 + 0.5f64.powf(s as f64 + 0.5)) / 3.0;
        let time = (2.0 * c * k0 / n / f).powf(2.0 / (3.0 + 2.0 * s as f64));
        f = functional(s, time);
    }
    t - (2.0 * n * PI.sqrt() * f).powf(-0.4)
}

/// Smallest root of `f` on `[lo, hi]` where `f` turns from negative to
/// positive, located on a logarithmic scan and refined by bisection. `None`
/// when the scan finds no such crossing. NaN counts as positive.
///
/// For large `t` the curvature estimates vanish and the residual turns
/// negative again, so the endpoints alone do not bracket the root.
fn first_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Option<f64> {
    const SCAN: usize = 96;
    let positive = |t: f64| {
        let v = f(t);
        v > 0.0 || v.is_nan()
    };
    let ratio = (hi / lo).powf(1.0 / SCAN as f64);
    let mut a = lo;
    if positive(a) {
        return None;
    }
    for k in 1..=SCAN {
        let b = if k == SCAN { hi } else { lo * ratio.powi(k as i32) };
        if positive(b) {
            let (mut a, mut b) = (a, b);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if positive(mid) {
                    b = mid;
                } else {
                    a = mid;
                }
                if b - a <= 1e-12 * b {
                    break;
                }
            }
            return Some(0.5 * (a + b));
        }
        a = b;
    }
    None
}

/// Diagonal bandwidth for `L × d` row-major samples, `d ≤ 3`.
///
/// Each coordinate gets its 1D plug-in bandwidth multiplied by
/// `L^{1/5} L^{-1/(d+4)}`, so the squared entries decay like
/// `L^{-2/(d+4)}`.
pub fn bandwidth_diag(samples: &[f64], d: usize) -> Result<BandwidthMatrix> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::InvalidParameter(format!(
            "kernel density estimation is restricted to at most {MAX_DIM} observed dimensions, got {d}"
        )));
    }
    if !samples.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch(format!("{} values do not form rows of {d}", samples.len())));
    }
    let l = (samples.len() / d) as f64;
    let factor = l.powf(0.2 - 1.0 / (d as f64 + 4.0));
    let mut diag = Vec::with_capacity(d);
    let mut fallback = false;
    for j in 0..d {
        let column: Vec<f64> = samples.iter().skip(j).step_by(d).copied().collect();
        let p = plug_in_bandwidth(&column)?;
        fallback |= p.fallback;
        diag.push((p.h * factor).powi(2));
    }
    Ok(BandwidthMatrix { diag, fallback })
}

fn check_eval(samples: &[f64], d: usize, h: &BandwidthMatrix) -> Result<()> {
    if h.dim() != d {
        return Err(Error::DimensionMismatch(format!("{}-D bandwidth for {d}-D samples", h.dim())));
    }
    if d == 0 || samples.is_empty() || !samples.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch(format!("{} values do not form rows of {d}", samples.len())));
    }
    BandwidthMatrix::new(h.diag.clone()).map(|_| ())
}

/// `(1/L) Σ_i N(q; x_i, diag H)` at each query row.
pub fn kde_evaluate(samples: &[f64], d: usize, h: &BandwidthMatrix, queries: &[f64]) -> Result<Vec<f64>> {
    check_eval(samples, d, h)?;
    if !queries.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch(format!("{} query values do not form rows of {d}", queries.len())));
    }
    let l = (samples.len() / d) as f64;
    let norm: f64 = h.diag.iter().map(|v| (2.0 * PI * v).sqrt()).product::<f64>() * l;
    let inv: Vec<f64> = h.diag.iter().map(|v| 0.5 / v).collect();
    Ok(queries
        .par_chunks(d)
        .map(|q| {
            samples
                .chunks(d)
                .map(|x| {
                    let e: f64 = (0..d).map(|j| (q[j] - x[j]).powi(2) * inv[j]).sum();
                    (-e).exp()
                })
                .sum::<f64>()
                / norm
        })
        .collect())
}

/// Samples per accumulation block. Fixed so results do not depend on the
/// number of worker threads.
const BLOCK: usize = 2048;

/// Kernel estimate on a grid, accumulating each kernel only within
/// [`KERNEL_CUTOFF`] bandwidths of its centre. For small sample sets, far
/// tail points are then recomputed with every kernel.
pub fn density_on_grid(samples: &[f64], d: usize, h: &BandwidthMatrix, grid: &GridSpec) -> Result<DensityField> {
    check_eval(samples, d, h)?;
    if grid.ndim() != d {
        return Err(Error::GridMismatch(format!("{}-D grid for {d}-D samples", grid.ndim())));
    }
    let l = samples.len() / d;
    let sd = h.h();
    let axes: Vec<Vec<f64>> = grid.axes.iter().map(|a| a.coords()).collect();
    let shape = grid.shape();
    let partials: Vec<Vec<f64>> = samples
        .par_chunks(BLOCK * d)
        .map(|block| {
            let mut acc = vec![0.0; grid.len()];
            let mut windows: Vec<(usize, Vec<f64>)> = vec![(0, Vec::new()); d];
            for x in block.chunks(d) {
                let mut empty = false;
                for j in 0..d {
                    windows[j] = kernel_window(&axes[j], x[j], sd[j]);
                    empty |= windows[j].1.is_empty();
                }
                if !empty {
                    add_product(&mut acc, &shape, &windows, 1.0);
                }
            }
            acc
        })
        .collect();
    let mut values = vec![0.0; grid.len()];
    for p in &partials {
        for (v, a) in values.iter_mut().zip(p) {
            *v += a;
        }
    }
    for v in values.iter_mut() {
        *v /= l as f64;
    }
    refine_tails(samples, d, &h.diag, grid, &mut values);
    DensityField::new(grid.clone(), values)
}

/// Grid points below this fraction of the peak are recomputed without the
/// kernel cutoff.
const TAIL_REFINE: f64 = 1e-10;
/// Larger sample sets skip the tail recomputation. Beyond the cutoff of
/// every sample the estimate is below `e^-32` times a kernel peak.
const TAIL_REFINE_MAX_SAMPLES: usize = 20_000;

/// Replaces tail values, which the cutoff may have zeroed, by the full
/// kernel sum evaluated in log space.
fn refine_tails(samples: &[f64], d: usize, var: &[f64], grid: &GridSpec, values: &mut [f64]) {
    if samples.len() / d > TAIL_REFINE_MAX_SAMPLES {
        return;
    }
    let peak = values.iter().copied().fold(0.0, f64::max);
    let l = (samples.len() / d) as f64;
    let log_norm = -var.iter().map(|v| 0.5 * (2.0 * PI * v).ln()).sum::<f64>() - l.ln();
    values.par_iter_mut().enumerate().for_each(|(flat, v)| {
        if *v >= TAIL_REFINE * peak {
            return;
        }
        let mut q = vec![0.0; d];
        grid.point(flat, &mut q);
        let expo = |x: &[f64]| -> f64 { -(0..d).map(|j| 0.5 * (q[j] - x[j]).powi(2) / var[j]).sum::<f64>() };
        let max = samples.chunks(d).map(expo).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = samples.chunks(d).map(|x| (expo(x) - max).exp()).sum();
        *v = (log_norm + max + sum.ln()).exp();
    });
}

/// Start index and normalized 1D Gaussian weights on the axis points
/// within the cutoff.
fn kernel_window(coords: &[f64], centre: f64, sd: f64) -> (usize, Vec<f64>) {
    let (lo, hi) = (centre - KERNEL_CUTOFF * sd, centre + KERNEL_CUTOFF * sd);
    let start = coords.partition_point(|&c| c < lo);
    let end = coords.partition_point(|&c| c <= hi);
    let norm = 1.0 / ((2.0 * PI).sqrt() * sd);
    let w = coords[start..end]
        .iter()
        .map(|&c| norm * (-0.5 * ((c - centre) / sd).powi(2)).exp())
        .collect();
    (start, w)
}

fn add_product(acc: &mut [f64], shape: &[usize], windows: &[(usize, Vec<f64>)], scale: f64) {
    let (s, w) = &windows[0];
    if windows.len() == 1 {
        for (k, v) in w.iter().enumerate() {
            acc[s + k] += scale * v;
        }
        return;
    }
    let stride: usize = shape[1..].iter().product();
    for (k, v) in w.iter().enumerate() {
        let row = (s + k) * stride;
        add_product(&mut acc[row..row + stride], &shape[1..], &windows[1..], scale * v);
    }
}

/// Histogram density of 1D samples with `bins` equal bins spanning the grid,
/// read off at the grid points.
pub fn histogram_on_grid(samples: &[f64], bins: usize, grid: &GridSpec) -> Result<DensityField> {
    if grid.ndim() != 1 || bins == 0 || samples.is_empty() {
        return Err(Error::InvalidParameter("histograms need a 1D grid, samples and at least one bin".into()));
    }
    let axis = &grid.axes[0];
    let width = (axis.max - axis.min) / bins as f64;
    let bin_of = |x: f64| -> Option<usize> {
        if x < axis.min || x > axis.max {
            None
        } else {
            Some((((x - axis.min) / width) as usize).min(bins - 1))
        }
    };
    let mut counts = vec![0.0; bins];
    for &x in samples {
        if let Some(b) = bin_of(x) {
            counts[b] += 1.0;
        }
    }
    let n = samples.len() as f64;
    let values = axis
        .coords()
        .iter()
        .map(|&c| counts[bin_of(c).expect("grid points lie on the grid")] / (n * width))
        .collect();
    DensityField::new(grid.clone(), values)
}
