use serde::{Deserialize, Serialize};

use super::{require_positive, CgSystem, Coefficients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Climate4dParams {
    pub l12: f64,
    pub l13: f64,
    pub l24: f64,
    pub a1: f64,
    pub a2: f64,
    pub d1: f64,
    pub d2: f64,
    /// Damping of `y1` before the `1/ε` scaling.
    pub gamma1: f64,
    /// Damping of `y2` before the `1/ε` scaling.
    pub gamma2: f64,
    pub epsilon: f64,
    pub sigma_x1: f64,
    pub sigma_x2: f64,
    pub sigma_y1: f64,
    pub sigma_y2: f64,
    pub b123: f64,
    pub b213: f64,
    /// Must equal `-(b123 + b213)` when given; derived otherwise.
    pub b312: Option<f64>,
    /// `F1..F4`.
    pub forcing: [f64; 4],
}

impl Default for Climate4dParams {
    fn default() -> Self {
        Self {
            l12: 1.0,
            l13: 0.5,
            l24: 0.5,
            a1: 2.0,
            a2: 1.0,
            d1: -1.0,
            d2: -0.4,
            gamma1: 1.0,
            gamma2: 1.0,
            epsilon: 1.0,
            sigma_x1: 0.5,
            sigma_x2: 2.0,
            sigma_y1: 0.5,
            sigma_y2: 1.0,
            b123: 1.5,
            b213: 1.5,
            b312: None,
            forcing: [0.0; 4],
        }
    }
}

/// Four-variable stochastic climate model with climate variables
/// `(x1, x2)` observed and weather variables `(y1, y2)` hidden.
#[derive(Debug, Clone)]
pub struct Climate4d {
    p: Climate4dParams,
    b312: f64,
}

pub fn build_climate4d(params: Climate4dParams) -> Result<Climate4d> {
    require_positive("epsilon", params.epsilon)?;
    for (name, v) in [
        ("sigma_x1", params.sigma_x1),
        ("sigma_x2", params.sigma_x2),
        ("sigma_y1", params.sigma_y1),
        ("sigma_y2", params.sigma_y2),
    ] {
        require_positive(name, v)?;
    }
    let derived = -(params.b123 + params.b213);
    let b312 = match params.b312 {
        None => derived,
        Some(b) if (b - derived).abs() <= 1e-12 * (1.0 + derived.abs()) => b,
        Some(b) => {
            return Err(Error::InvalidParameter(format!(
                "b123 + b213 + b312 must vanish, got {}",
                params.b123 + params.b213 + b
            )))
        }
    };
    Ok(Climate4d { p: params, b312 })
}

impl Climate4d {
    pub fn b312(&self) -> f64 {
        self.b312
    }
}

impl CgSystem for Climate4d {
    fn n_obs(&self) -> usize {
        2
    }

    fn n_hid(&self) -> usize {
        2
    }

    fn variable_names(&self) -> Vec<String> {
        ["x1", "x2", "y1", "y2"].iter().map(|s| s.to_string()).collect()
    }

    fn coefficients(&self, t: f64, u_obs: &[f64], c: &mut Coefficients) {
        let p = &self.p;
        let (x1, x2) = (u_obs[0], u_obs[1]);
        let rot = p.l12 + p.a1 * x1 + p.a2 * x2;
        c.obs_drift[0] = -x2 * rot + p.d1 * x1 + p.forcing[0];
        c.obs_drift[1] = x1 * rot + p.d2 * x2 + p.forcing[1];
        c.obs_coupling[(0, 0)] = p.l13 + p.b123 * x2;
        c.obs_coupling[(0, 1)] = 0.0;
        c.obs_coupling[(1, 0)] = p.b213 * x1;
        c.obs_coupling[(1, 1)] = p.l24;
        c.hid_drift[0] = -p.l13 * x1 + self.b312 * x1 * x2 + p.forcing[2];
        c.hid_drift[1] = -p.l24 * x2 + p.forcing[3];
        c.hid_coupling[(0, 0)] = -p.gamma1 / p.epsilon;
        c.hid_coupling[(1, 1)] = -p.gamma2 / p.epsilon;
        self.noise(t, u_obs, c);
    }

    fn noise(&self, _t: f64, _u_obs: &[f64], c: &mut Coefficients) {
        let p = &self.p;
        let s = p.epsilon.sqrt();
        c.obs_noise[(0, 0)] = p.sigma_x1;
        c.obs_noise[(1, 1)] = p.sigma_x2;
        c.hid_noise[(0, 0)] = p.sigma_y1 / s;
        c.hid_noise[(1, 1)] = p.sigma_y2 / s;
    }

    fn drift_into(&self, t: f64, u: &[f64], _scratch: &mut Coefficients, out: &mut [f64]) {
        self.drift(t, u, out);
    }

    fn drift(&self, _t: f64, u: &[f64], out: &mut [f64]) {
        let p = &self.p;
        let [x1, x2, y1, y2] = [u[0], u[1], u[2], u[3]];
        let rot = p.l12 + p.a1 * x1 + p.a2 * x2;
        out[0] = -x2 * rot + p.d1 * x1 + p.forcing[0] + p.l13 * y1 + p.b123 * x2 * y1;
        out[1] = x1 * rot + p.d2 * x2 + p.forcing[1] + p.l24 * y2 + p.b213 * x1 * y1;
        out[2] = -p.l13 * x1 + self.b312 * x1 * x2 + p.forcing[2] - p.gamma1 / p.epsilon * y1;
        out[3] = -p.l24 * x2 + p.forcing[3] - p.gamma2 / p.epsilon * y2;
    }

    fn quad_energy(&self, u: &[f64]) -> Option<Vec<f64>> {
        let p = &self.p;
        let [x1, x2, y1, _] = [u[0], u[1], u[2], u[3]];
        let quad_rot = p.a1 * x1 + p.a2 * x2;
        Some(vec![
            -x2 * quad_rot + p.b123 * x2 * y1,
            x1 * quad_rot + p.b213 * x1 * y1,
            self.b312 * x1 * x2,
            0.0,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::check_energy_conservation;

    #[test]
    fn b312_follows_from_constraint() {
        let sys = build_climate4d(Climate4dParams::default()).unwrap();
        assert_eq!(sys.b312(), -3.0);
    }

    #[test]
    fn inconsistent_b312_rejected() {
        let p = Climate4dParams { b312: Some(-2.0), ..Default::default() };
        assert!(build_climate4d(p).is_err());
        let p = Climate4dParams { b312: Some(-3.0), ..Default::default() };
        assert!(build_climate4d(p).is_ok());
    }

    #[test]
    fn non_positive_epsilon_rejected() {
        assert!(build_climate4d(Climate4dParams { epsilon: 0.0, ..Default::default() }).is_err());
        assert!(build_climate4d(Climate4dParams { epsilon: -0.5, ..Default::default() }).is_err());
    }

    #[test]
    fn y2_drift_vanishes_at_origin() {
        let sys = build_climate4d(Climate4dParams::default()).unwrap();
        let mut out = [1.0; 4];
        sys.drift(0.0, &[0.0; 4], &mut out);
        assert_eq!(out[3], 0.0);
    }

    #[test]
    fn quadratic_part_conserves_energy() {
        let sys = build_climate4d(Climate4dParams::default()).unwrap();
        let u = [1.0, -1.0, 2.0, 0.5];
        let b = sys.quad_energy(&u).unwrap();
        let dot: f64 = u.iter().zip(&b).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-14);
        assert!(check_energy_conservation(&sys, 1000, 1e-12, 2).pass);
    }
}
