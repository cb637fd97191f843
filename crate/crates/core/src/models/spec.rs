use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{CgSystem, Coefficients};
use crate::error::{Error, Result};

pub type VecFn = Arc<dyn Fn(f64, &[f64], &mut DVector<f64>) + Send + Sync>;
pub type MatFn = Arc<dyn Fn(f64, &[f64], &mut DMatrix<f64>) + Send + Sync>;
pub type EnergyFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A conditional Gaussian system given as a bundle of coefficient callables.
///
/// Useful for ad-hoc systems (tests, benchmarks) that do not warrant a
/// dedicated type. Each callable writes its block for `(t, u_obs)` into a
/// zero-initialized buffer.
#[derive(Clone)]
pub struct CgSystemSpec {
    n_obs: usize,
    n_hid: usize,
    names: Vec<String>,
    obs_drift: VecFn,
    obs_coupling: MatFn,
    hid_drift: VecFn,
    hid_coupling: MatFn,
    obs_noise: MatFn,
    hid_noise: MatFn,
    quad_energy: Option<EnergyFn>,
}

impl fmt::Debug for CgSystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CgSystemSpec")
            .field("n_obs", &self.n_obs)
            .field("n_hid", &self.n_hid)
            .field("names", &self.names)
            .finish_non_exhaustive()
    }
}

impl CgSystemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn from_fns(
        n_obs: usize,
        n_hid: usize,
        obs_drift: VecFn,
        obs_coupling: MatFn,
        hid_drift: VecFn,
        hid_coupling: MatFn,
        obs_noise: MatFn,
        hid_noise: MatFn,
    ) -> Result<Self> {
        if n_obs == 0 || n_hid == 0 {
            return Err(Error::InvalidParameter("n_obs and n_hid must be positive".into()));
        }
        let names = (1..=n_obs)
            .map(|i| format!("x{i}"))
            .chain((1..=n_hid).map(|i| format!("y{i}")))
            .collect();
        Ok(Self {
            n_obs,
            n_hid,
            names,
            obs_drift,
            obs_coupling,
            hid_drift,
            hid_coupling,
            obs_noise,
            hid_noise,
            quad_energy: None,
        })
    }

    /// A system whose coefficients do not depend on `t` or `u_I`.
    pub fn constant(
        obs_drift: DVector<f64>,
        obs_coupling: DMatrix<f64>,
        hid_drift: DVector<f64>,
        hid_coupling: DMatrix<f64>,
        obs_noise: DMatrix<f64>,
        hid_noise: DMatrix<f64>,
    ) -> Result<Self> {
        let n_obs = obs_drift.len();
        let n_hid = hid_drift.len();
        let shapes = [
            (obs_coupling.shape(), (n_obs, n_hid), "A1"),
            (hid_coupling.shape(), (n_hid, n_hid), "a1"),
            (obs_noise.shape(), (n_obs, n_obs), "Σ_I"),
            (hid_noise.shape(), (n_hid, n_hid), "Σ_II"),
        ];
        for (got, want, name) in shapes {
            if got != want {
                return Err(Error::DimensionMismatch(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        Self::from_fns(
            n_obs,
            n_hid,
            Arc::new(move |_, _, out| out.copy_from(&obs_drift)),
            Arc::new(move |_, _, out| out.copy_from(&obs_coupling)),
            Arc::new(move |_, _, out| out.copy_from(&hid_drift)),
            Arc::new(move |_, _, out| out.copy_from(&hid_coupling)),
            Arc::new(move |_, _, out| out.copy_from(&obs_noise)),
            Arc::new(move |_, _, out| out.copy_from(&hid_noise)),
        )
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_obs + self.n_hid {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} variables",
                names.len(),
                self.n_obs + self.n_hid
            )));
        }
        self.names = names;
        Ok(self)
    }

    pub fn with_quad_energy(mut self, f: EnergyFn) -> Self {
        self.quad_energy = Some(f);
        self
    }
}

impl CgSystem for CgSystemSpec {
    fn n_obs(&self) -> usize {
        self.n_obs
    }

    fn n_hid(&self) -> usize {
        self.n_hid
    }

    fn variable_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn coefficients(&self, t: f64, u_obs: &[f64], c: &mut Coefficients) {
        (self.obs_drift)(t, u_obs, &mut c.obs_drift);
        (self.obs_coupling)(t, u_obs, &mut c.obs_coupling);
        (self.hid_drift)(t, u_obs, &mut c.hid_drift);
        (self.hid_coupling)(t, u_obs, &mut c.hid_coupling);
        (self.obs_noise)(t, u_obs, &mut c.obs_noise);
        (self.hid_noise)(t, u_obs, &mut c.hid_noise);
    }

    fn noise(&self, t: f64, u_obs: &[f64], c: &mut Coefficients) {
        (self.obs_noise)(t, u_obs, &mut c.obs_noise);
        (self.hid_noise)(t, u_obs, &mut c.hid_noise);
    }

    fn quad_energy(&self, u: &[f64]) -> Option<Vec<f64>> {
        self.quad_energy.as_ref().map(|f| f(u))
    }
}
