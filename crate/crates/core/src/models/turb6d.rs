use serde::{Deserialize, Serialize};

use super::{require_positive, CgSystem, Coefficients};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Turb6dParams {
    pub d_u: f64,
    /// Forcing `F_u` of the large-scale variable.
    pub forcing: f64,
    pub sigma_u: f64,
    pub gamma: [f64; 5],
    pub sigma_v: [f64; 5],
    pub d_v: [f64; 5],
}

impl Default for Turb6dParams {
    fn default() -> Self {
        Self {
            d_u: 0.1,
            forcing: 0.5,
            sigma_u: 2.0,
            gamma: [0.25; 5],
            sigma_v: [0.5, 0.2, 0.1, 0.1, 0.1],
            d_v: [0.2, 0.5, 1.0, 2.0, 5.0],
        }
    }
}

/// Conceptual turbulence model: one large-scale observed mode `u` feeding
/// five damped small-scale modes `v1..v5` through energy-conserving
/// dyad interactions.
#[derive(Debug, Clone)]
pub struct Turbulence6d {
    p: Turb6dParams,
}

pub fn build_turbulence6d(params: Turb6dParams) -> Result<Turbulence6d> {
    require_positive("sigma_u", params.sigma_u)?;
    for (i, s) in params.sigma_v.iter().enumerate() {
        require_positive(&format!("sigma_v{}", i + 1), *s)?;
    }
    Ok(Turbulence6d { p: params })
}

impl CgSystem for Turbulence6d {
    fn n_obs(&self) -> usize {
        1
    }

    fn n_hid(&self) -> usize {
        5
    }

    fn variable_names(&self) -> Vec<String> {
        std::iter::once("u".to_string()).chain((1..=5).map(|i| format!("v{i}"))).collect()
    }

    fn coefficients(&self, t: f64, u_obs: &[f64], c: &mut Coefficients) {
        let p = &self.p;
        let u = u_obs[0];
        c.obs_drift[0] = -p.d_u * u + p.forcing;
        for i in 0..5 {
            c.obs_coupling[(0, i)] = p.gamma[i] * u;
            c.hid_drift[i] = -p.gamma[i] * u * u;
            c.hid_coupling[(i, i)] = -p.d_v[i];
        }
        self.noise(t, u_obs, c);
    }

    fn noise(&self, _t: f64, _u_obs: &[f64], c: &mut Coefficients) {
        c.obs_noise[(0, 0)] = self.p.sigma_u;
        for i in 0..5 {
            c.hid_noise[(i, i)] = self.p.sigma_v[i];
        }
    }

    fn drift_into(&self, t: f64, u: &[f64], _scratch: &mut Coefficients, out: &mut [f64]) {
        self.drift(t, u, out);
    }

    fn drift(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        let p = &self.p;
        let u = state[0];
        let v = &state[1..6];
        let feedback: f64 = (0..5).map(|i| p.gamma[i] * u * v[i]).sum();
        out[0] = -p.d_u * u + p.forcing + feedback;
        for i in 0..5 {
            out[1 + i] = -p.d_v[i] * v[i] - p.gamma[i] * u * u;
        }
    }

    fn quad_energy(&self, state: &[f64]) -> Option<Vec<f64>> {
        let p = &self.p;
        let u = state[0];
        let mut b = vec![0.0; 6];
        b[0] = (0..5).map(|i| p.gamma[i] * u * state[1 + i]).sum();
        for i in 0..5 {
            b[1 + i] = -p.gamma[i] * u * u;
        }
        Some(b)
    }
}
