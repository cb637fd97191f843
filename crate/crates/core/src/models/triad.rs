use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{require_positive, CgSystem, Coefficients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TriadRegime {
    I,
    II,
    III,
}

impl fmt::Display for TriadRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriadRegime::I => "I",
            TriadRegime::II => "II",
            TriadRegime::III => "III",
        })
    }
}

impl FromStr for TriadRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(TriadRegime::I),
            "II" | "2" => Ok(TriadRegime::II),
            "III" | "3" => Ok(TriadRegime::III),
            other => Err(Error::InvalidParameter(format!("unknown triad regime `{other}`"))),
        }
    }
}

/// Large-scale forcing of the `u1` equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Forcing {
    Constant { value: f64 },
    /// `mean + amplitude · sin(2πt / period)`.
    Periodic { mean: f64, amplitude: f64, period: f64 },
}

impl Forcing {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Forcing::Constant { value } => value,
            Forcing::Periodic { mean, amplitude, period } => {
                // Reduce the phase first so that F(t) and F(t + period) agree bitwise.
                let phase = (t / period).rem_euclid(1.0);
                mean + amplitude * (2.0 * PI * phase).sin()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriadParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub l12: f64,
    pub l13: f64,
    pub l23: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    /// Strength `I` of the energy-conserving `u1`-`u2` interaction.
    pub coupling: f64,
    pub epsilon: f64,
    pub forcing: Forcing,
}

impl Default for TriadParams {
    fn default() -> Self {
        Self::regime(TriadRegime::I)
    }
}

impl TriadParams {
    /// Parameter rows of the three dynamical regimes.
    pub fn regime(regime: TriadRegime) -> Self {
        let periodic = Forcing::Periodic { mean: 2.0, amplitude: 2.0, period: 1.0 };
        match regime {
            TriadRegime::I => Self {
                gamma1: 2.0,
                gamma2: 0.2,
                gamma3: 0.4,
                l12: 0.2,
                l13: 0.1,
                l23: 0.0,
                sigma1: 0.5,
                sigma2: 1.2,
                sigma3: 0.8,
                coupling: 5.0,
                epsilon: 1.0,
                forcing: Forcing::Constant { value: 2.0 },
            },
            TriadRegime::II => Self {
                gamma1: 2.0,
                gamma2: 0.6,
                gamma3: 0.4,
                l12: 1.0,
                l13: 0.5,
                l23: 0.0,
                sigma1: 0.5,
                sigma2: 0.1,
                sigma3: 0.1,
                coupling: 5.0,
                epsilon: 0.1,
                forcing: periodic,
            },
            TriadRegime::III => Self {
                l13: 1.0,
                l23: 10.0,
                ..Self::regime(TriadRegime::II)
            },
        }
    }
}

/// Nonlinear triad with `u1` observed and `(u2, u3)` hidden:
///
/// ```text
/// du1 = (−γ1 u1 + L12 u2 + L13 u3 + I u1 u2 + F(t)) dt + σ1 dW1
/// du2 = (−L12 u1 − γ2/ε u2 + L23 u3 − I u1²) dt + σ2/√ε dW2
/// du3 = (−L13 u1 − L23 u2 − γ3/ε u3) dt + σ3/√ε dW3
/// ```
#[derive(Debug, Clone)]
pub struct Triad3 {
    p: TriadParams,
}

pub fn build_triad3(params: TriadParams) -> Result<Triad3> {
    require_positive("epsilon", params.epsilon)?;
    require_positive("sigma1", params.sigma1)?;
    require_positive("sigma2", params.sigma2)?;
    require_positive("sigma3", params.sigma3)?;
    if let Forcing::Periodic { period, .. } = params.forcing {
        require_positive("forcing period", period)?;
    }
    Ok(Triad3 { p: params })
}

impl Triad3 {
    pub fn forcing(&self, t: f64) -> f64 {
        self.p.forcing.at(t)
    }
}

impl CgSystem for Triad3 {
    fn n_obs(&self) -> usize {
        1
    }

    fn n_hid(&self) -> usize {
        2
    }

    fn variable_names(&self) -> Vec<String> {
        ["u1", "u2", "u3"].iter().map(|s| s.to_string()).collect()
    }

    fn coefficients(&self, t: f64, u_obs: &[f64], c: &mut Coefficients) {
        let p = &self.p;
        let u1 = u_obs[0];
        c.obs_drift[0] = -p.gamma1 * u1 + p.forcing.at(t);
        c.obs_coupling[(0, 0)] = p.l12 + p.coupling * u1;
        c.obs_coupling[(0, 1)] = p.l13;
        c.hid_drift[0] = -p.l12 * u1 - p.coupling * u1 * u1;
        c.hid_drift[1] = -p.l13 * u1;
        c.hid_coupling[(0, 0)] = -p.gamma2 / p.epsilon;
        c.hid_coupling[(0, 1)] = p.l23;
        c.hid_coupling[(1, 0)] = -p.l23;
        c.hid_coupling[(1, 1)] = -p.gamma3 / p.epsilon;
        self.noise(t, u_obs, c);
    }

    fn noise(&self, _t: f64, _u_obs: &[f64], c: &mut Coefficients) {
        let p = &self.p;
        let s = p.epsilon.sqrt();
        c.obs_noise[(0, 0)] = p.sigma1;
        c.hid_noise[(0, 0)] = p.sigma2 / s;
        c.hid_noise[(1, 1)] = p.sigma3 / s;
    }

    fn drift_into(&self, t: f64, u: &[f64], _scratch: &mut Coefficients, out: &mut [f64]) {
        self.drift(t, u, out);
    }

    fn drift(&self, t: f64, u: &[f64], out: &mut [f64]) {
        let p = &self.p;
        let (u1, u2, u3) = (u[0], u[1], u[2]);
        out[0] = -p.gamma1 * u1 + p.l12 * u2 + p.l13 * u3 + p.coupling * u1 * u2 + p.forcing.at(t);
        out[1] = -p.l12 * u1 - p.gamma2 / p.epsilon * u2 + p.l23 * u3 - p.coupling * u1 * u1;
        out[2] = -p.l13 * u1 - p.l23 * u2 - p.gamma3 / p.epsilon * u3;
    }

    fn quad_energy(&self, u: &[f64]) -> Option<Vec<f64>> {
        let i = self.p.coupling;
        Some(vec![i * u[0] * u[1], -i * u[0] * u[0], 0.0])
    }
}
