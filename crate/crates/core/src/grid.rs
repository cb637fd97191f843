//! Rectangular grids and gridded densities.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One uniformly spaced axis, endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn new(name: impl Into<String>, min: f64, max: f64, points: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::InvalidParameter(format!("axis range [{min}, {max}] is empty")));
        }
        if points < 2 {
            return Err(Error::InvalidParameter("an axis needs at least two points".into()));
        }
        Ok(Self { name: name.into(), min, max, points })
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }

    pub fn coord(&self, k: usize) -> f64 {
        if k + 1 == self.points {
            self.max
        } else {
            self.min + k as f64 * self.step()
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.points).map(|k| self.coord(k)).collect()
    }

    /// Trapezoid quadrature weights.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.points];
        w[0] *= 0.5;
        w[self.points - 1] *= 0.5;
        w
    }
}

/// Tensor-product grid. Values are stored row-major: the last axis varies
/// fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidParameter("a grid needs at least one axis".into()));
        }
        Ok(Self { axes })
    }

    pub fn uniform_1d(name: &str, min: f64, max: f64, points: usize) -> Result<Self> {
        Self::new(vec![GridAxis::new(name, min, max, points)?])
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of flat position `flat`.
    pub fn unravel(&self, mut flat: usize, idx: &mut [usize]) {
        for (d, axis) in self.axes.iter().enumerate().rev() {
            idx[d] = flat % axis.points;
            flat /= axis.points;
        }
    }

    /// Coordinates of flat position `flat`.
    pub fn point(&self, flat: usize, out: &mut [f64]) {
        let mut idx = vec![0; self.ndim()];
        self.unravel(flat, &mut idx);
        for (d, axis) in self.axes.iter().enumerate() {
            out[d] = axis.coord(idx[d]);
        }
    }

    /// All grid points, `len() × ndim()` row-major.
    pub fn points(&self) -> Vec<f64> {
        let d = self.ndim();
        let mut out = vec![0.0; self.len() * d];
        for (flat, chunk) in out.chunks_mut(d).enumerate() {
            self.point(flat, chunk);
        }
        out
    }

    /// Tensor-product trapezoid weights, one per grid point.
    pub fn weights(&self) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = self.axes.iter().map(GridAxis::weights).collect();
        let mut idx = vec![0; self.ndim()];
        (0..self.len())
            .map(|flat| {
                self.unravel(flat, &mut idx);
                idx.iter().zip(&per_axis).map(|(&k, w)| w[k]).product()
            })
            .collect()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights().iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Same axes and point counts, with coordinates equal to rounding.
    pub fn matches(&self, other: &GridSpec) -> bool {
        self.axes.len() == other.axes.len()
            && self.axes.iter().zip(&other.axes).all(|(a, b)| {
                let tol = 1e-12 * (a.max - a.min).abs().max(1.0);
                a.points == b.points && (a.min - b.min).abs() <= tol && (a.max - b.max).abs() <= tol
            })
    }
}

/// Density values on a grid, with their trapezoid integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub integral: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DensityField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("density value {bad} is not a finite nonnegative number")));
        }
        let integral = grid.integrate(&values);
        Ok(Self { grid, values, integral, warnings: Vec::new() })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = grid.ndim();
        let values = grid.points().chunks(d).map(&f).collect();
        Self::new(grid, values)
    }

    /// Copy scaled to unit trapezoid integral.
    pub fn renormalized(&self) -> Result<Self> {
        if !(self.integral > 0.0) {
            return Err(Error::Degenerate("cannot renormalize a field with zero mass".into()));
        }
        let values = self.values.iter().map(|v| v / self.integral).collect();
        let mut out = Self::new(self.grid.clone(), values)?;
        out.warnings = self.warnings.clone();
        Ok(out)
    }

    /// CSV with one column per axis followed by `density`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let names: Vec<&str> = self.grid.axes.iter().map(|a| a.name.as_str()).collect();
        writeln!(w, "{},density", names.join(","))?;
        let d = self.grid.ndim();
        let mut p = vec![0.0; d];
        for (flat, v) in self.values.iter().enumerate() {
            self.grid.point(flat, &mut p);
            for x in &p {
                write!(w, "{x:.10e},")?;
            }
            writeln!(w, "{v:.10e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_for_linear_functions() {
        let g = GridSpec::new(vec![
            GridAxis::new("a", 0.0, 2.0, 5).unwrap(),
            GridAxis::new("b", -1.0, 1.0, 7).unwrap(),
        ])
        .unwrap();
        let f = DensityField::from_fn(g, |p| 1.0 + p[0] + 0.0 * p[1]).unwrap();
        assert!((f.integral - 8.0).abs() < 1e-12);
    }

    #[test]
    fn row_major_last_axis_fastest() {
        let g = GridSpec::new(vec![
            GridAxis::new("a", 0.0, 1.0, 2).unwrap(),
            GridAxis::new("b", 0.0, 2.0, 3).unwrap(),
        ])
        .unwrap();
        let pts = g.points();
        assert_eq!(&pts[..6], &[0.0, 0.0, 0.0, 1.0, 0.0, 2.0]);
        assert_eq!(&pts[6..8], &[1.0, 0.0]);
    }

    #[test]
    fn renormalize_is_idempotent() {
        let g = GridSpec::uniform_1d("x", -1.0, 1.0, 11).unwrap();
        let f = DensityField::from_fn(g, |p| 3.0 + p[0]).unwrap();
        let once = f.renormalized().unwrap();
        let twice = once.renormalized().unwrap();
        assert!((once.integral - 1.0).abs() < 1e-14);
        for (a, b) in once.values.iter().zip(&twice.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_fields() {
        let g = GridSpec::uniform_1d("x", 0.0, 1.0, 3).unwrap();
        assert!(DensityField::new(g.clone(), vec![0.0; 2]).is_err());
        assert!(DensityField::new(g, vec![0.0, -1.0, 0.0]).is_err());
        assert!(GridAxis::new("x", 1.0, 1.0, 3).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = GridSpec::uniform_1d("x", 0.0, 1.0, 2).unwrap();
        let f = DensityField::new(g, vec![1.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,density");
        assert_eq!(lines.len(), 3);
    }
}
