//! Relative entropy and moment diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DensityField;

/// Model densities are floored here before taking logarithms.
pub const MODEL_FLOOR: f64 = 1e-300;
/// Truth values below this are left out of the integrand.
pub const TRUTH_MASK: f64 = 1e-14;

/// Mean, variance and standardized third and fourth moments. Kurtosis is
/// non-excess, so a Gaussian has kurtosis 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

impl Moments {
    /// From the mean and the second to fourth central moments.
    pub fn from_central(mean: f64, m2: f64, m3: f64, m4: f64) -> Result<Self> {
        if !(m2 > 0.0) {
            return Err(Error::Degenerate("zero variance leaves skewness and kurtosis undefined".into()));
        }
        Ok(Self { mean, variance: m2, skewness: m3 / m2.powf(1.5), kurtosis: m4 / (m2 * m2) })
    }
}

/// Population central-moment estimates.
pub fn sample_moments(samples: &[f64]) -> Result<Moments> {
    if samples.len() < 2 {
        return Err(Error::Degenerate("moments need at least two samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in samples {
        let c = x - mean;
        let c2 = c * c;
        m2 += c2;
        m3 += c2 * c;
        m4 += c2 * c2;
    }
    Moments::from_central(mean, m2 / n, m3 / n, m4 / n)
}

/// Pearson correlation of two equally long samples.
pub fn sample_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::DimensionMismatch("correlation needs two samples of equal length ≥ 2".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::Degenerate("correlation of a constant sample".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Outcome of [`relative_entropy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    /// Relative entropy in nats.
    pub value: f64,
    /// Renormalized truth mass at points where the model hit [`MODEL_FLOOR`].
    pub floor_mass: f64,
    /// Trapezoid integrals of the inputs before renormalization.
    pub truth_mass: f64,
    pub model_mass: f64,
}

/// `∫ p ln(p / p_M)` by the trapezoid rule after renormalizing both fields
/// on their common grid.
pub fn relative_entropy(truth: &DensityField, model: &DensityField) -> Result<KlReport> {
    if !truth.grid.matches(&model.grid) {
        return Err(Error::GridMismatch("truth and model live on different grids".into()));
    }
    let p = truth.renormalized()?;
    let q_mass = model.integral;
    if !(q_mass > 0.0) {
        return Err(Error::Degenerate("model density has zero mass on the grid".into()));
    }
    if (truth.integral - 1.0).abs() > 1e-2 {
        log::warn!("truth field integrates to {} before renormalization", truth.integral);
    }
    let w = p.grid.weights();
    let mut value = 0.0;
    let mut floor_mass = 0.0;
    for ((wi, pi), qi) in w.iter().zip(&p.values).zip(&model.values) {
        if *pi < TRUTH_MASK {
            continue;
        }
        let q = qi / q_mass;
        let q = if q < MODEL_FLOOR {
            floor_mass += wi * pi;
            MODEL_FLOOR
        } else {
            q
        };
        value += wi * pi * (pi / q).ln();
    }
    Ok(KlReport { value, floor_mass, truth_mass: truth.integral, model_mass: q_mass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn normal(mu: f64, var: f64) -> impl Fn(&[f64]) -> f64 {
        move |x| (-(x[0] - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn kl_of_identical_fields_is_zero() {
        let g = GridSpec::uniform_1d("x", -10.0, 10.0, 400).unwrap();
        let p = DensityField::from_fn(g, normal(0.0, 1.0)).unwrap();
        assert!(relative_entropy(&p, &p).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn kl_of_shifted_normals() {
        let g = GridSpec::uniform_1d("x", -10.0, 10.0, 400).unwrap();
        let p = DensityField::from_fn(g.clone(), normal(0.0, 1.0)).unwrap();
        let q = DensityField::from_fn(g, normal(1.0, 1.0)).unwrap();
        let r = relative_entropy(&p, &q).unwrap();
        assert!((r.value - 0.5).abs() < 1e-3);
        assert_eq!(r.floor_mass, 0.0);
    }

    #[test]
    fn floored_model_mass_is_reported() {
        let g = GridSpec::uniform_1d("x", -10.0, 10.0, 401).unwrap();
        let p = DensityField::from_fn(g.clone(), normal(0.0, 1.0)).unwrap();
        let q = DensityField::from_fn(g, |x| if x[0] > 0.0 { 0.1 } else { 0.0 }).unwrap();
        let r = relative_entropy(&p, &q).unwrap();
        assert!(r.floor_mass > 0.45 && r.floor_mass < 0.55);
    }

    #[test]
    fn moments_of_two_points() {
        let m = sample_moments(&[-1.0, 1.0]).unwrap();
        assert_eq!(m.mean, 0.0);
        assert_eq!(m.variance, 1.0);
        assert!(sample_moments(&[2.0, 2.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn grid_mismatch() {
        let a = DensityField::from_fn(GridSpec::uniform_1d("x", 0.0, 1.0, 5).unwrap(), |_| 1.0).unwrap();
        let b = DensityField::from_fn(GridSpec::uniform_1d("x", 0.0, 1.0, 6).unwrap(), |_| 1.0).unwrap();
        assert!(matches!(relative_entropy(&a, &b), Err(Error::GridMismatch(_))));
    }
}
