use serde::{Deserialize, Serialize};

use super::{require_positive, CgSystem, Coefficients};
use crate::error::Result;

/// Which variables of the Lorenz 63 model are observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L63Partition {
    /// `u_I = x`, `u_II = (y, z)`.
    #[default]
    XObserved,
    /// `u_I = (y, z)`, `u_II = x`.
    YzObserved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L63Params {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub partition: L63Partition,
}

impl Default for L63Params {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            sigma_x: 10.0,
            sigma_y: 10.0,
            sigma_z: 10.0,
            partition: L63Partition::XObserved,
        }
    }
}

/// Noisy Lorenz 63:
///
/// ```text
/// dx = σ(y − x) dt + σ_x dW_x
/// dy = (x(ρ − z) − y) dt + σ_y dW_y
/// dz = (xy − βz) dt + σ_z dW_z
/// ```
#[derive(Debug, Clone)]
pub struct Lorenz63 {
    p: L63Params,
}

pub fn build_l63(params: L63Params) -> Result<Lorenz63> {
    require_positive("sigma_x", params.sigma_x)?;
    require_positive("sigma_y", params.sigma_y)?;
    require_positive("sigma_z", params.sigma_z)?;
    Ok(Lorenz63 { p: params })
}

impl Lorenz63 {
    pub fn params(&self) -> &L63Params {
        &self.p
    }

    fn xyz(&self, u: &[f64]) -> (f64, f64, f64) {
        match self.p.partition {
            L63Partition::XObserved => (u[0], u[1], u[2]),
            L63Partition::YzObserved => (u[2], u[0], u[1]),
        }
    }
}

impl CgSystem for Lorenz63 {
    fn n_obs(&self) -> usize {
        match self.p.partition {
            L63Partition::XObserved => 1,
            L63Partition::YzObserved => 2,
        }
    }

    fn n_hid(&self) -> usize {
        3 - self.n_obs()
    }

    fn variable_names(&self) -> Vec<String> {
        let names: &[&str] = match self.p.partition {
            L63Partition::XObserved => &["x", "y", "z"],
            L63Partition::YzObserved => &["y", "z", "x"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    fn coefficients(&self, _t: f64, u_obs: &[f64], c: &mut Coefficients) {
        let p = &self.p;
        match p.partition {
            L63Partition::XObserved => {
                let x = u_obs[0];
                c.obs_drift[0] = -p.sigma * x;
                c.obs_coupling[(0, 0)] = p.sigma;
                c.obs_coupling[(0, 1)] = 0.0;
                c.hid_drift[0] = p.rho * x;
                c.hid_drift[1] = 0.0;
                c.hid_coupling[(0, 0)] = -1.0;
                c.hid_coupling[(0, 1)] = -x;
                c.hid_coupling[(1, 0)] = x;
                c.hid_coupling[(1, 1)] = -p.beta;
            }
            L63Partition::YzObserved => {
                let (y, z) = (u_obs[0], u_obs[1]);
                c.obs_drift[0] = -y;
                c.obs_drift[1] = -p.beta * z;
                c.obs_coupling[(0, 0)] = p.rho - z;
                c.obs_coupling[(1, 0)] = y;
                c.hid_drift[0] = p.sigma * y;
                c.hid_coupling[(0, 0)] = -p.sigma;
            }
        }
        self.noise(_t, u_obs, c);
    }

    fn noise(&self, _t: f64, _u_obs: &[f64], c: &mut Coefficients) {
        let p = &self.p;
        match p.partition {
            L63Partition::XObserved => {
                c.obs_noise[(0, 0)] = p.sigma_x;
                c.hid_noise[(0, 0)] = p.sigma_y;
                c.hid_noise[(1, 1)] = p.sigma_z;
            }
            L63Partition::YzObserved => {
                c.obs_noise[(0, 0)] = p.sigma_y;
                c.obs_noise[(1, 1)] = p.sigma_z;
                c.hid_noise[(0, 0)] = p.sigma_x;
            }
        }
    }

    fn drift_into(&self, t: f64, u: &[f64], _scratch: &mut Coefficients, out: &mut [f64]) {
        self.drift(t, u, out);
    }

    fn drift(&self, _t: f64, u: &[f64], out: &mut [f64]) {
        let p = &self.p;
        let (x, y, z) = self.xyz(u);
        let dx = p.sigma * (y - x);
        let dy = x * (p.rho - z) - y;
        let dz = x * y - p.beta * z;
        match p.partition {
            L63Partition::XObserved => out[..3].copy_from_slice(&[dx, dy, dz]),
            L63Partition::YzObserved => out[..3].copy_from_slice(&[dy, dz, dx]),
        }
    }

    fn quad_energy(&self, u: &[f64]) -> Option<Vec<f64>> {
        let (x, y, z) = self.xyz(u);
        let (bx, by, bz) = (0.0, -x * z, x * y);
        Some(match self.p.partition {
            L63Partition::XObserved => vec![bx, by, bz],
            L63Partition::YzObserved => vec![by, bz, bx],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{check_energy_conservation, test_util::decomposition_gap};

    fn drift_at(sys: &Lorenz63, u: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        sys.drift(0.0, &u, &mut out);
        out
    }

    #[test]
    fn drift_vanishes_at_origin() {
        let sys = build_l63(L63Params::default()).unwrap();
        assert_eq!(drift_at(&sys, [0.0; 3]), [0.0; 3]);
    }

    #[test]
    fn drift_at_unit_state() {
        let sys = build_l63(L63Params::default()).unwrap();
        let d = drift_at(&sys, [1.0, 1.0, 1.0]);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 26.0);
        assert!((d[2] - (-5.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_part_cancels_at_sample_state() {
        let sys = build_l63(L63Params::default()).unwrap();
        let b = sys.quad_energy(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(b, vec![0.0, -3.0, 2.0]);
        assert_eq!(2.0 * b[1] + 3.0 * b[2], 0.0);
    }

    #[test]
    fn conserves_energy() {
        let sys = build_l63(L63Params::default()).unwrap();
        let r = check_energy_conservation(&sys, 1000, 1e-12, 1);
        assert!(r.pass && r.max_violation < 1e-12, "{r:?}");
    }

    #[test]
    fn both_partitions_decompose_exactly() {
        for partition in [L63Partition::XObserved, L63Partition::YzObserved] {
            let sys = build_l63(L63Params { partition, ..Default::default() }).unwrap();
            assert!(decomposition_gap(&sys, 500) < 1e-14);
        }
    }

    #[test]
    fn rejects_non_positive_noise() {
        assert!(build_l63(L63Params { sigma_y: 0.0, ..Default::default() }).is_err());
        assert!(build_l63(L63Params { sigma_z: -1.0, ..Default::default() }).is_err());
    }
}
