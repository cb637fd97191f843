use serde::{Deserialize, Serialize};

use super::{require_positive, CgSystem, Coefficients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L96Params {
    /// Number of slow variables `I`.
    #[serde(rename = "I")]
    pub slow: usize,
    /// Fast variables per slow variable `J`.
    #[serde(rename = "J")]
    pub fast: usize,
    pub lambda: f64,
    pub d1: f64,
    pub d2: f64,
    pub forcing: f64,
    pub epsilon: f64,
    pub a_l: f64,
    pub sigma_u: f64,
    /// Additive noise on the fast layer.
    pub sigma_v: f64,
    /// Largest accepted `I·J`.
    pub max_hidden: usize,
}

impl Default for L96Params {
    fn default() -> Self {
        Self {
            slow: 8,
            fast: 4,
            lambda: 1.0,
            d1: 1.0,
            d2: 1.0,
            forcing: 8.0,
            epsilon: 1.0,
            a_l: 1.0,
            sigma_u: 1.0,
            sigma_v: 0.1,
            max_hidden: 512,
        }
    }
}

/// Advective two-layer Lorenz-96 model with the fast-fast advection switched
/// off, observed slow layer `u_i` and hidden fast layer `v_{i,j}`.
///
/// The fast layer is stored as one periodic ring of length `I·J` with
/// `v_{i,j}` at position `i·J + j`, so `v_{i,J+1}` continues as `v_{i+1,1}`.
#[derive(Debug, Clone)]
pub struct Lorenz96TwoLayer {
    p: L96Params,
}

pub fn build_lorenz96_two_layer(params: L96Params) -> Result<Lorenz96TwoLayer> {
    if params.slow < 4 {
        return Err(Error::InvalidParameter(format!("I must be at least 4, got {}", params.slow)));
    }
    if params.fast < 1 {
        return Err(Error::InvalidParameter("J must be at least 1".into()));
    }
    let n_hid = params.slow.saturating_mul(params.fast);
    if n_hid > params.max_hidden {
        return Err(Error::InvalidParameter(format!(
            "I·J = {n_hid} exceeds the cap of {}",
            params.max_hidden
        )));
    }
    require_positive("epsilon", params.epsilon)?;
    require_positive("sigma_u", params.sigma_u)?;
    require_positive("sigma_v", params.sigma_v)?;
    Ok(Lorenz96TwoLayer { p: params })
}

impl Lorenz96TwoLayer {
    fn ring(&self, k: isize) -> usize {
        k.rem_euclid((self.p.slow * self.p.fast) as isize) as usize
    }

    fn slow_idx(&self, i: isize) -> usize {
        i.rem_euclid(self.p.slow as isize) as usize
    }

    fn advection(&self, u: &[f64], i: usize) -> f64 {
        let i = i as isize;
        u[self.slow_idx(i - 1)] * (u[self.slow_idx(i + 1)] - u[self.slow_idx(i - 2)])
    }
}

impl CgSystem for Lorenz96TwoLayer {
    fn n_obs(&self) -> usize {
        self.p.slow
    }

    fn n_hid(&self) -> usize {
        self.p.slow * self.p.fast
    }

    fn variable_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.p.slow).map(|i| format!("u{i}")).collect();
        for i in 1..=self.p.slow {
            for j in 1..=self.p.fast {
                names.push(format!("v{i}_{j}"));
            }
        }
        names
    }

    fn coefficients(&self, t: f64, u_obs: &[f64], c: &mut Coefficients) {
        let p = &self.p;
        for i in 0..p.slow {
            c.obs_drift[i] = self.advection(u_obs, i) - p.d1 * u_obs[i] + p.forcing;
            for j in 0..p.fast {
                let k = i * p.fast + j;
                c.obs_coupling[(i, k)] = p.lambda;
                c.hid_drift[k] = -p.lambda * u_obs[i];
                let adv = p.a_l * u_obs[i] / p.epsilon;
                let ki = k as isize;
                c.hid_coupling[(k, self.ring(ki - 1))] += adv;
                c.hid_coupling[(k, self.ring(ki + 2))] -= adv;
                c.hid_coupling[(k, k)] -= p.d2;
            }
        }
        self.noise(t, u_obs, c);
    }

    fn noise(&self, _t: f64, _u_obs: &[f64], c: &mut Coefficients) {
        for i in 0..self.p.slow {
            c.obs_noise[(i, i)] = self.p.sigma_u;
        }
        for k in 0..self.n_hid() {
            c.hid_noise[(k, k)] = self.p.sigma_v;
        }
    }

    fn drift_into(&self, t: f64, u: &[f64], _scratch: &mut Coefficients, out: &mut [f64]) {
        self.drift(t, u, out);
    }

    fn drift(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        let p = &self.p;
        let (u, v) = state.split_at(p.slow);
        for i in 0..p.slow {
            let block: f64 = v[i * p.fast..(i + 1) * p.fast].iter().sum();
            out[i] = self.advection(u, i) + p.lambda * block - p.d1 * u[i] + p.forcing;
            for j in 0..p.fast {
                let k = i * p.fast + j;
                let ki = k as isize;
                let adv = p.a_l * u[i] / p.epsilon * (v[self.ring(ki - 1)] - v[self.ring(ki + 2)]);
                out[p.slow + k] = adv - p.lambda * u[i] - p.d2 * v[k];
            }
        }
    }

    /// Quadratic part: the slow-layer advection plus the `a_L` advection of
    /// the fast layer. The latter is not energy conserving for `a_L ≠ 0`,
    /// because the offsets `-1` and `+2` do not form a skew pair.
    fn quad_energy(&self, state: &[f64]) -> Option<Vec<f64>> {
        let p = &self.p;
        let (u, v) = state.split_at(p.slow);
        let mut b = vec![0.0; state.len()];
        for i in 0..p.slow {
            b[i] = self.advection(u, i);
            for j in 0..p.fast {
                let k = i * p.fast + j;
                let ki = k as isize;
                b[p.slow + k] = p.a_l * u[i] / p.epsilon * (v[self.ring(ki - 1)] - v[self.ring(ki + 2)]);
            }
        }
        Some(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::check_energy_conservation;

    fn small() -> Lorenz96TwoLayer {
        build_lorenz96_two_layer(L96Params { slow: 4, fast: 2, ..L96Params::default() }).unwrap()
    }

    #[test]
    fn forcing_only_at_rest() {
        let sys = small();
        let mut out = vec![0.0; sys.dim()];
        sys.drift(0.0, &vec![0.0; sys.dim()], &mut out);
        assert!(out[..4].iter().all(|&x| x == 8.0));
        assert!(out[4..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fast_drift_from_unit_slow_state() {
        let sys = small();
        let mut state = vec![1.0; 4];
        state.extend(vec![0.0; 8]);
        let mut out = vec![0.0; sys.dim()];
        sys.drift(0.0, &state, &mut out);
        assert_eq!(out[4], -1.0);
    }

    #[test]
    fn indices_wrap() {
        let sys = small();
        assert_eq!(sys.slow_idx(4), 0);
        assert_eq!(sys.slow_idx(-1), 3);
        assert_eq!(sys.ring(8), 0);
        assert_eq!(sys.ring(-1), 7);
    }

    #[test]
    fn rejects_oversized_layer() {
        let p = L96Params { slow: 40, fast: 20, ..L96Params::default() };
        assert!(build_lorenz96_two_layer(p).is_err());
        assert!(build_lorenz96_two_layer(L96Params { slow: 3, ..L96Params::default() }).is_err());
    }

    #[test]
    fn slow_advection_alone_conserves_energy() {
        let sys = build_lorenz96_two_layer(L96Params { a_l: 0.0, ..L96Params::default() }).unwrap();
        assert!(check_energy_conservation(&sys, 1000, 1e-12, 5).pass);
    }

    #[test]
    fn fast_advection_breaks_conservation() {
        let report = check_energy_conservation(&small(), 1000, 1e-12, 5);
        assert!(report.applicable);
        assert!(!report.pass);
    }
}
