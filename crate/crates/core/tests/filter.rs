use cgpdf::filter::{init_states, run_filter, run_filters, CgState, Filter, FilterInit};
use cgpdf::kde::solve_bandwidth_1d;
use cgpdf::models::{CgSystemSpec, ModelParams, TriadRegime};
use cgpdf::recovery::{recover, RecoverySettings};
use cgpdf::rng::aux_rng;
use cgpdf::simulate::simulate_ensemble;
use cgpdf::{InitialCondition, ModelId};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

fn scalar_riccati() -> CgSystemSpec {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    CgSystemSpec::constant(DVector::zeros(1), m(1.0), DVector::zeros(1), m(-1.0), m(1.0), m(1.0)).unwrap()
}

fn coupled() -> CgSystemSpec {
    CgSystemSpec::constant(
        DVector::from_row_slice(&[0.3]),
        DMatrix::from_row_slice(1, 2, &[0.8, -0.5]),
        DVector::from_row_slice(&[0.1, -0.2]),
        DMatrix::from_row_slice(2, 2, &[-0.7, 0.4, -0.3, -1.1]),
        DMatrix::from_element(1, 1, 0.6),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.8]),
    )
    .unwrap()
}

#[test]
fn initial_covariance_is_forgotten() {
    let sys = scalar_riccati();
    let run = |eps: f64| {
        let mut f = Filter::new(&sys, 0);
        let mut s = CgState::new(DVector::from_element(1, 0.3), DMatrix::from_element(1, 1, eps), 0.0).unwrap();
        for _ in 0..10_000 {
            f.step(&mut s, &[0.0], &[0.0], 1e-3).unwrap();
        }
        s.cov[(0, 0)]
    };
    let (small, large) = (run(1e-6), run(1e-2));
    assert!((small - large).abs() < 1e-6, "{small} vs {large}");
    assert!((small - (2f64.sqrt() - 1.0)).abs() < 1e-3);
}

#[test]
fn covariance_does_not_depend_on_the_observed_path() {
    let sys = coupled();
    let init = InitialCondition::gaussian(&[0.0, 0.0, 0.0], 1.0);
    let a = simulate_ensemble(&sys, &init, 1, 1e-3, 2.0, 1).unwrap();
    let b = simulate_ensemble(&sys, &init, 1, 1e-3, 2.0, 2).unwrap();
    assert_ne!(a.obs, b.obs);
    let start = CgState::new(DVector::zeros(2), DMatrix::identity(2, 2) * 0.2, 0.0).unwrap();
    let times: Vec<f64> = (1..=8).map(|k| 0.25 * k as f64).collect();
    let (sa, _) = run_filter(&sys, a.obs_path(0), 1e-3, start.clone(), &times, 1, 0).unwrap();
    let (sb, _) = run_filter(&sys, b.obs_path(0), 1e-3, start, &times, 1, 0).unwrap();
    for (x, y) in sa.iter().zip(&sb) {
        assert_eq!(x.cov, y.cov);
        assert_ne!(x.mean, y.mean);
    }
}

#[test]
fn riccati_fixed_point_of_a_coupled_system() {
    let sys = coupled();
    let mut f = Filter::new(&sys, 0);
    let mut s = CgState::new(DVector::zeros(2), DMatrix::identity(2, 2), 0.0).unwrap();
    for _ in 0..40_000 {
        f.step(&mut s, &[0.0], &[0.0], 1e-3).unwrap();
    }
    // Residual of a1 R + R a1ᵀ + Σ_II Σ_IIᵀ − (R A1ᵀ)(Σ_I Σ_Iᵀ)⁻¹(R A1ᵀ)ᵀ.
    let a1 = DMatrix::from_row_slice(2, 2, &[-0.7, 0.4, -0.3, -1.1]);
    let obs = DMatrix::from_row_slice(1, 2, &[0.8, -0.5]);
    let q = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.25, 0.64]));
    let r = &s.cov;
    let gain = r * obs.transpose() / 0.36;
    let residual = &a1 * r + r * a1.transpose() + q - &gain * (&obs * r);
    assert!(residual.amax() < 1e-8, "{residual}");
}

#[test]
fn filter_matches_independent_discrete_kalman_filter() {
    let sys = coupled();
    let dt = 1e-6;
    let paths = simulate_ensemble(&sys, &InitialCondition::delta(&[0.2, 1.0, -1.0]), 1, dt, 1.0, 3).unwrap();
    let x = paths.obs_path(0);
    let mut m = [0.0, 0.0];
    let mut p = [[0.5, 0.1], [0.1, 0.3]];
    let mut state = CgState::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]), 0.0).unwrap();
    let mut f = Filter::new(&sys, 0);
    let (h, a0, b0) = ([0.8, -0.5], 0.3, [0.1, -0.2]);
    let b1 = [[-0.7, 0.4], [-0.3, -1.1]];
    let q = [0.25, 0.64];
    for k in 0..x.len() - 1 {
        let du = x[k + 1] - x[k];
        f.step(&mut state, &x[k..k + 1], &[du], dt).unwrap();

        let ph = [p[0][0] * h[0] + p[0][1] * h[1], p[1][0] * h[0] + p[1][1] * h[1]];
        let s = (h[0] * ph[0] + h[1] * ph[1]) * dt * dt + 0.36 * dt;
        let k_gain = [ph[0] * dt / s, ph[1] * dt / s];
        let innov = du - (a0 + h[0] * m[0] + h[1] * m[1]) * dt;
        let mu = [m[0] + k_gain[0] * innov, m[1] + k_gain[1] * innov];
        let mut pu = p;
        for i in 0..2 {
            for j in 0..2 {
                pu[i][j] -= k_gain[i] * dt * ph[j];
            }
        }
        let fm = [[1.0 + b1[0][0] * dt, b1[0][1] * dt], [b1[1][0] * dt, 1.0 + b1[1][1] * dt]];
        for i in 0..2 {
            m[i] = fm[i][0] * mu[0] + fm[i][1] * mu[1] + b0[i] * dt;
        }
        let mut next = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let fp_i = [fm[i][0] * pu[0][0] + fm[i][1] * pu[1][0], fm[i][0] * pu[0][1] + fm[i][1] * pu[1][1]];
                next[i][j] = fp_i[0] * fm[j][0] + fp_i[1] * fm[j][1] + if i == j { q[i] * dt } else { 0.0 };
            }
        }
        p = next;
    }
    for i in 0..2 {
        assert!((state.mean[i] - m[i]).abs() < 1e-6, "mean {i}: {} vs {}", state.mean[i], m[i]);
        for j in 0..2 {
            assert!((state.cov[(i, j)] - p[i][j]).abs() < 1e-6);
        }
    }
}

#[test]
fn initial_states_follow_the_chosen_mode() {
    let states = init_states(&[1.0, 2.0], 2, &FilterInit::Point { epsilon: Some(1e-4) }, 0.0).unwrap();
    assert_eq!(states[0].mean.as_slice(), &[1.0, 2.0]);
    assert_eq!(states[0].cov, DMatrix::identity(2, 2) * 1e-4);

    let mut rng = aux_rng(0, 5);
    let samples: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let states = init_states(&samples, 2, &FilterInit::KdeDiagonal, 0.0).unwrap();
    assert_eq!(states.len(), 500);
    for j in 0..2 {
        let col: Vec<f64> = samples.iter().skip(j).step_by(2).copied().collect();
        assert_eq!(states[7].cov[(j, j)], solve_bandwidth_1d(&col).unwrap().powi(2));
    }
    assert_eq!(states[7].cov[(0, 1)], 0.0);

    let single = init_states(&[3.0, 4.0], 2, &FilterInit::KdeDiagonal, 0.0).unwrap();
    let point = init_states(&[3.0, 4.0], 2, &FilterInit::default(), 0.0).unwrap();
    assert_eq!(single[0].cov, point[0].cov);
}

#[test]
fn builtin_models_keep_covariances_symmetric_and_positive() {
    for id in ModelId::ALL {
        let sys = ModelParams::defaults(id).build().unwrap();
        let (dim, n_hid) = (sys.dim(), sys.n_hid());
        let dt = if matches!(id, ModelId::Triad3(r) if r != TriadRegime::I) { 5e-4 } else { 1e-3 };
        let init = InitialCondition::gaussian(&vec![0.5; dim], 0.5);
        let paths = simulate_ensemble(sys.as_ref(), &init, 16, dt, 1.0, 1).unwrap();
        let inits = init_states(&paths.hid_at(0), n_hid, &FilterInit::default(), 0.0).unwrap();
        let (states, diag) = run_filters(sys.as_ref(), &paths, inits, &[0.5, 1.0], 1).unwrap();
        assert!(diag.max_violation < 1e-8, "{id}: {diag:?}");
        for c in states.iter().flatten().map(|s| &s.cov) {
            assert_eq!(c, &c.transpose(), "{id}");
            assert!(c.clone().symmetric_eigen().eigenvalues.min() >= 0.0, "{id}");
        }
    }
}

#[test]
fn recovery_agrees_with_separate_simulation_and_filtering() {
    let sys = ModelParams::defaults(ModelId::L63).build().unwrap();
    let init = InitialCondition::gaussian(&[0.0, 0.0, 0.0], 1.0);
    let (l, dt, seed, times) = (12, 1e-3, 7, [0.1, 0.25]);
    let settings = RecoverySettings { members: l, dt, seed, filter_init: FilterInit::default(), thin: 1 };
    let rec = recover(sys.as_ref(), &init, &settings, &times).unwrap();

    let paths = simulate_ensemble(sys.as_ref(), &init, l, dt, 0.25, seed).unwrap();
    let inits = init_states(&paths.hid_at(0), 2, &FilterInit::default(), 0.0).unwrap();
    let (states, _) = run_filters(sys.as_ref(), &paths, inits, &times, 1).unwrap();
    for (snap, by_member) in rec.snapshots.iter().zip(&states) {
        for (i, s) in by_member.iter().enumerate() {
            assert_eq!(snap.mixture.means[i].rows(1, 2), s.mean.rows(0, 2));
            assert_eq!(snap.mixture.hid_cov[i], s.cov);
        }
    }
}

#[test]
fn empty_snapshot_list_gives_no_states() {
    let sys = scalar_riccati();
    let start = CgState::new(DVector::zeros(1), DMatrix::identity(1, 1), 0.0).unwrap();
    let (states, diag) = run_filter(&sys, &[0.0, 0.1, 0.2], 0.1, start, &[], 1, 0).unwrap();
    assert!(states.is_empty());
    assert_eq!(diag.clamps, 0);
}
