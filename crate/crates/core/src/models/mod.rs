//! Conditional Gaussian systems and the built-in test models.
//!
//! A conditional Gaussian system has the form
//!
//! ```text
//! du_I  = [A0(t,u_I) + A1(t,u_I) u_II] dt + Σ_I(t,u_I)  dW_I
//! du_II = [a0(t,u_I) + a1(t,u_I) u_II] dt + Σ_II(t,u_I) dW_II
//! ```
//!
//! Every model exposes those six coefficients through [`CgSystem::coefficients`].
//! Built-in models additionally evaluate their drift directly from the
//! model equations, which lets tests confirm that the decomposition
//! reconstructs the stated right-hand side.

mod climate;
mod l63;
mod l96;
mod spec;
mod triad;
mod turb6d;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use climate::{build_climate4d, Climate4d, Climate4dParams};
pub use l63::{build_l63, L63Params, L63Partition, Lorenz63};
pub use l96::{build_lorenz96_two_layer, L96Params, Lorenz96TwoLayer};
pub use spec::{CgSystemSpec, EnergyFn, MatFn, VecFn};
pub use triad::{build_triad3, Forcing, Triad3, TriadParams, TriadRegime};
pub use turb6d::{build_turbulence6d, Turb6dParams, Turbulence6d};

/// The six coefficient blocks of a conditional Gaussian system at one
/// `(t, u_I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// `A0`, length `n_obs`.
    pub obs_drift: DVector<f64>,
    /// `A1`, `n_obs × n_hid`.
    pub obs_coupling: DMatrix<f64>,
    /// `a0`, length `n_hid`.
    pub hid_drift: DVector<f64>,
    /// `a1`, `n_hid × n_hid`.
    pub hid_coupling: DMatrix<f64>,
    /// `Σ_I`, `n_obs × n_obs`.
    pub obs_noise: DMatrix<f64>,
    /// `Σ_II`, `n_hid × n_hid`.
    pub hid_noise: DMatrix<f64>,
}

impl Coefficients {
    pub fn zeros(n_obs: usize, n_hid: usize) -> Self {
        Self {
            obs_drift: DVector::zeros(n_obs),
            obs_coupling: DMatrix::zeros(n_obs, n_hid),
            hid_drift: DVector::zeros(n_hid),
            hid_coupling: DMatrix::zeros(n_hid, n_hid),
            obs_noise: DMatrix::zeros(n_obs, n_obs),
            hid_noise: DMatrix::zeros(n_hid, n_hid),
        }
    }

    pub(crate) fn clear(&mut self) {
        self.obs_drift.fill(0.0);
        self.obs_coupling.fill(0.0);
        self.hid_drift.fill(0.0);
        self.hid_coupling.fill(0.0);
        self.obs_noise.fill(0.0);
        self.hid_noise.fill(0.0);
    }
}

/// A conditional Gaussian system.
///
/// Implementations must be immutable and safe to evaluate from many worker
/// threads at once.
pub trait CgSystem: Send + Sync {
    fn n_obs(&self) -> usize;
    fn n_hid(&self) -> usize;

    fn dim(&self) -> usize {
        self.n_obs() + self.n_hid()
    }

    /// Variable names, observed variables first.
    fn variable_names(&self) -> Vec<String>;

    /// Writes all six coefficient blocks at `(t, u_obs)` into `c`.
    ///
    /// `c` must have been created with matching dimensions; entries not
    /// written by the model are left at zero.
    fn coefficients(&self, t: f64, u_obs: &[f64], c: &mut Coefficients);

    /// Writes only the noise blocks `Σ_I` and `Σ_II`.
    fn noise(&self, t: f64, u_obs: &[f64], c: &mut Coefficients) {
        self.coefficients(t, u_obs, c);
    }

    /// Full drift of the state `u = (u_I, u_II)`.
    fn drift(&self, t: f64, u: &[f64], out: &mut [f64]) {
        let mut c = Coefficients::zeros(self.n_obs(), self.n_hid());
        self.drift_into(t, u, &mut c, out);
    }

    /// Full drift using `scratch` for the coefficient blocks. Models with a
    /// direct drift evaluation should forward to [`CgSystem::drift`].
    fn drift_into(&self, t: f64, u: &[f64], scratch: &mut Coefficients, out: &mut [f64]) {
        assembled_drift(self, t, u, scratch, out);
    }

    /// The quadratic part `B(u, u)` of the drift, when the model is of the
    /// energy-conserving quadratic form.
    fn quad_energy(&self, _u: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Drift assembled from the coefficient blocks:
/// `[A0 + A1 u_II ; a0 + a1 u_II]`.
pub fn assembled_drift<S: CgSystem + ?Sized>(
    sys: &S,
    t: f64,
    u: &[f64],
    c: &mut Coefficients,
    out: &mut [f64],
) {
    let n_obs = sys.n_obs();
    let n_hid = sys.n_hid();
    c.clear();
    sys.coefficients(t, &u[..n_obs], c);
    let hid = &u[n_obs..];
    for i in 0..n_obs {
        let mut acc = c.obs_drift[i];
        for k in 0..n_hid {
            acc += c.obs_coupling[(i, k)] * hid[k];
        }
        out[i] = acc;
    }
    for i in 0..n_hid {
        let mut acc = c.hid_drift[i];
        for k in 0..n_hid {
            acc += c.hid_coupling[(i, k)] * hid[k];
        }
        out[n_obs + i] = acc;
    }
}

/// Canonical model identifiers used by configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelId {
    L63,
    Climate4d,
    Triad3(TriadRegime),
    Turb6d,
    L96Two,
}

impl ModelId {
    pub const ALL: [ModelId; 7] = [
        ModelId::L63,
        ModelId::Climate4d,
        ModelId::Triad3(TriadRegime::I),
        ModelId::Triad3(TriadRegime::II),
        ModelId::Triad3(TriadRegime::III),
        ModelId::Turb6d,
        ModelId::L96Two,
    ];

    pub fn description(&self) -> &'static str {
        match self {
            ModelId::L63 => "noisy Lorenz 63, observed x, hidden (y, z)",
            ModelId::Climate4d => "4D stochastic climate model, observed (x1, x2), hidden (y1, y2)",
            ModelId::Triad3(_) => "3D nonlinear triad with multiscale features, observed u1",
            ModelId::Turb6d => "6D conceptual turbulence model, observed u, hidden v1..v5",
            ModelId::L96Two => "advective two-layer Lorenz-96 (a_S = 0), observed u_i, hidden v_ij",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::L63 => f.write_str("l63"),
            ModelId::Climate4d => f.write_str("climate4d"),
            ModelId::Triad3(r) => write!(f, "triad3:{r}"),
            ModelId::Turb6d => f.write_str("turb6d"),
            ModelId::L96Two => f.write_str("l96two"),
        }
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l63" => Ok(ModelId::L63),
            "climate4d" => Ok(ModelId::Climate4d),
            "turb6d" => Ok(ModelId::Turb6d),
            "l96two" => Ok(ModelId::L96Two),
            other => match other.strip_prefix("triad3:") {
                Some(regime) => Ok(ModelId::Triad3(regime.parse()?)),
                None => Err(Error::InvalidParameter(format!("unknown model id `{other}`"))),
            },
        }
    }
}

/// Parameters for any built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelParams {
    L63(L63Params),
    Climate4d(Climate4dParams),
    Triad3(TriadParams),
    Turb6d(Turb6dParams),
    L96Two(L96Params),
}

impl ModelParams {
    /// Default parameters for `id`.
    pub fn defaults(id: ModelId) -> Self {
        match id {
            ModelId::L63 => ModelParams::L63(L63Params::default()),
            ModelId::Climate4d => ModelParams::Climate4d(Climate4dParams::default()),
            ModelId::Triad3(r) => ModelParams::Triad3(TriadParams::regime(r)),
            ModelId::Turb6d => ModelParams::Turb6d(Turb6dParams::default()),
            ModelId::L96Two => ModelParams::L96Two(L96Params::default()),
        }
    }

    /// Defaults for `id` with the fields present in `overrides` replaced.
    ///
    /// `overrides` must be a JSON object whose keys are parameter names.
    pub fn with_overrides(id: ModelId, overrides: &serde_json::Value) -> Result<Self> {
        let defaults = Self::defaults(id);
        let Some(over) = overrides.as_object() else {
            if overrides.is_null() {
                return Ok(defaults);
            }
            return Err(Error::InvalidParameter("parameter overrides must be a table".into()));
        };
        let mut merged = serde_json::to_value(&defaults)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let obj = merged.as_object_mut().expect("params serialize to an object");
        for (k, v) in over {
            if k == "model" || !obj.contains_key(k) {
                return Err(Error::InvalidParameter(format!("unknown parameter `{k}` for model {id}")));
            }
            obj.insert(k.clone(), v.clone());
        }
        serde_json::from_value(merged).map_err(|e| Error::InvalidParameter(e.to_string()))
    }

    pub fn build(&self) -> Result<Arc<dyn CgSystem>> {
        Ok(match self {
            ModelParams::L63(p) => Arc::new(build_l63(p.clone())?),
            ModelParams::Climate4d(p) => Arc::new(build_climate4d(p.clone())?),
            ModelParams::Triad3(p) => Arc::new(build_triad3(p.clone())?),
            ModelParams::Turb6d(p) => Arc::new(build_turbulence6d(p.clone())?),
            ModelParams::L96Two(p) => Arc::new(build_lorenz96_two_layer(p.clone())?),
        })
    }
}

/// Outcome of [`check_energy_conservation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    /// `false` when the model does not provide its quadratic part.
    pub applicable: bool,
    /// Largest `|u·B(u,u)| / (1 + |u|³)` over the trials.
    pub max_violation: f64,
    pub pass: bool,
}

/// Checks `u·B(u,u) = 0` on `trials` random states drawn at scales 0.1, 1
/// and 10.
pub fn check_energy_conservation<S: CgSystem + ?Sized>(
    sys: &S,
    trials: usize,
    tol: f64,
    seed: u64,
) -> EnergyReport {
    let dim = sys.dim();
    let mut rng = crate::rng::aux_rng(seed, 0xe9e5);
    let probe = vec![0.0; dim];
    if sys.quad_energy(&probe).is_none() {
        return EnergyReport { applicable: false, max_violation: 0.0, pass: true };
    }
    let scales = [0.1, 1.0, 10.0];
    let mut worst = 0.0_f64;
    let mut u = vec![0.0; dim];
    for trial in 0..trials {
        let scale = scales[trial % scales.len()];
        for x in u.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = scale * z;
        }
        let b = sys.quad_energy(&u).expect("quad_energy availability is fixed per model");
        let dot: f64 = u.iter().zip(&b).map(|(a, b)| a * b).sum();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let violation = dot.abs() / (1.0 + norm.powi(3));
        worst = worst.max(violation);
    }
    EnergyReport { applicable: true, max_violation: worst, pass: worst <= tol }
}

pub(crate) fn require_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {value}")))
    }
}
