use std::f64::consts::PI;

use cgpdf::grid::{GridAxis, GridSpec};
use cgpdf::mixture::{assemble_joint, mixture_moments, GaussianMixture};
use cgpdf::rng::aux_rng;
use cgpdf::{BandwidthMatrix, CgState};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("v{i}")).collect()
}

/// Components with one observed coordinate and hidden states `(mean, cov)`.
fn mixture(obs: &[f64], h: f64, hidden: &[(Vec<f64>, DMatrix<f64>)]) -> GaussianMixture {
    let states: Vec<CgState> =
        hidden.iter().map(|(m, c)| CgState::new(DVector::from_row_slice(m), c.clone(), 0.5).unwrap()).collect();
    let n_hid = hidden[0].0.len();
    assemble_joint(obs, &BandwidthMatrix::new(vec![h]).unwrap(), &states, names(1 + n_hid)).unwrap()
}

fn random_mixture(l: usize, seed: u64) -> GaussianMixture {
    let mut rng = aux_rng(seed, 0);
    let obs: Vec<f64> = (0..l).map(|_| rng.random_range(-2.0..2.0)).collect();
    let hidden: Vec<_> = (0..l)
        .map(|_| {
            let m = vec![rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)];
            let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            (m, &a * a.transpose() + DMatrix::identity(2, 2) * 0.05)
        })
        .collect();
    mixture(&obs, 0.3, &hidden)
}

/// Draws `n` points from the mixture.
fn sample(mix: &GaussianMixture, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = aux_rng(seed, 1);
    let chols: Vec<_> = (0..mix.len()).map(|i| mix.component_cov(i).cholesky().unwrap().l()).collect();
    (0..n)
        .map(|_| {
            let i = rng.random_range(0..mix.len());
            let z = DVector::from_fn(mix.dim(), |_, _| StandardNormal.sample(&mut rng));
            &mix.means[i] + &chols[i] * z
        })
        .collect()
}

#[test]
fn single_standard_component_peaks_at_inverse_two_pi() {
    let mix = mixture(&[0.0], 1.0, &[(vec![0.0], DMatrix::identity(1, 1))]);
    let v = mix.log_density(&[0.0, 0.0]).unwrap()[0].exp();
    assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-15);
    assert_eq!(mix.weight(), 1.0);
}

#[test]
fn components_are_block_diagonal_with_equal_weights() {
    let mix = random_mixture(500, 1);
    assert_eq!(mix.len(), 500);
    assert!((mix.weight() * 500.0 - 1.0).abs() < 1e-15);
    for i in [0, 17, 499] {
        let c = mix.component_cov(i);
        assert_eq!(c[(0, 0)], 0.3);
        assert_eq!((c[(0, 1)], c[(0, 2)], c[(1, 0)], c[(2, 0)]), (0.0, 0.0, 0.0, 0.0));
    }
    let pair = mix.marginal(&[0, 2]).unwrap();
    let c = pair.component_cov(3);
    assert_eq!(c, DMatrix::from_diagonal(&DVector::from_row_slice(&[0.3, mix.hid_cov[3][(1, 1)]])));
    assert_eq!(mix.marginal(&[0, 1, 2]).unwrap(), mix);
    assert!(mix.marginal(&[3]).is_err());
}

#[test]
fn hidden_marginal_is_the_posterior_average_and_ignores_the_bandwidth() {
    let a = random_mixture(20, 2);
    let mut b = a.clone();
    b.obs_var = vec![7.0];
    let (ha, hb) = (a.marginal(&[1, 2]).unwrap(), b.marginal(&[1, 2]).unwrap());
    assert_eq!(ha, hb);

    let q = [0.3, -0.2];
    let direct: f64 = (0..a.len())
        .map(|i| {
            let m = a.means[i].rows(1, 2).into_owned();
            let c = &a.hid_cov[i];
            let d = DVector::from_row_slice(&q) - m;
            let quad = d.dot(&(c.clone().try_inverse().unwrap() * &d));
            (-0.5 * quad).exp() / (2.0 * PI * c.determinant().sqrt())
        })
        .sum::<f64>()
        / a.len() as f64;
    let v = ha.log_density(&q).unwrap()[0].exp();
    assert!((v / direct - 1.0).abs() < 1e-12);
}

#[test]
fn mean_and_covariance_obey_the_law_of_total_covariance() {
    let mix = random_mixture(30, 3);
    let avg_mean = mix.means.iter().fold(DVector::zeros(3), |s, m| s + m) / 30.0;
    assert!((mix.mean() - &avg_mean).amax() < 1e-14);
    let mut expected = DMatrix::zeros(3, 3);
    for i in 0..30 {
        let d = &mix.means[i] - &avg_mean;
        expected += mix.component_cov(i) + &d * d.transpose();
    }
    expected /= 30.0;
    assert!((mix.covariance() - &expected).amax() < 1e-12);

    let n = 400_000;
    let draws = sample(&mix, n, 4);
    let m = draws.iter().fold(DVector::zeros(3), |s, x| s + x) / n as f64;
    let c = draws.iter().fold(DMatrix::zeros(3, 3), |s, x| s + (x - &m) * (x - &m).transpose()) / n as f64;
    assert!((m - mix.mean()).amax() < 0.02);
    assert!((c - mix.covariance()).amax() < 0.05 * mix.covariance().amax());
}

#[test]
fn scale_mixture_kurtosis_matches_sampling() {
    let mix = mixture(&[0.0, 0.0], 1.0, &[(vec![0.0], DMatrix::identity(1, 1)), (vec![0.0], DMatrix::identity(1, 1) * 9.0)]);
    let m = mixture_moments(&mix, 1).unwrap();
    assert!((m.kurtosis - 123.0 / 25.0).abs() < 1e-12);
    assert_eq!(m.skewness, 0.0);

    let mut rng = aux_rng(5, 5);
    let n = 2_000_000;
    let (mut s2, mut s4) = (0.0, 0.0);
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let x = if rng.random::<bool>() { z } else { 3.0 * z };
        s2 += x * x;
        s4 += x.powi(4);
    }
    let sampled = (s4 / n as f64) / (s2 / n as f64).powi(2);
    assert!((m.kurtosis / sampled - 1.0).abs() < 0.01, "{} vs {sampled}", m.kurtosis);
}

#[test]
fn symmetric_pair_moments() {
    let a = 1.5;
    let mix = mixture(&[0.0, 0.0], 1.0, &[(vec![-a], DMatrix::identity(1, 1) * 0.25), (vec![a], DMatrix::identity(1, 1) * 0.25)]);
    let m = mix.moments(1).unwrap();
    assert_eq!(m.mean, 0.0);
    assert!((m.variance - (a * a + 0.25)).abs() < 1e-14);
    assert!(m.skewness.abs() < 1e-14);

    let single = mixture(&[2.0], 0.7, &[(vec![1.0], DMatrix::identity(1, 1))]);
    let s = single.moments(0).unwrap();
    assert!((s.kurtosis - 3.0).abs() < 1e-12 && s.skewness.abs() < 1e-12);
}

#[test]
fn grid_evaluation_is_normalized_and_exact() {
    let single = mixture(&[0.0], 1.0, &[(vec![0.0], DMatrix::identity(1, 1))]).marginal(&[0]).unwrap();
    let field = single.evaluate_on_grid(&GridSpec::uniform_1d("v0", -8.0, 8.0, 200).unwrap()).unwrap();
    assert!((field.integral - 1.0).abs() < 1e-3);

    let pair = mixture(&[0.0, 0.0], 1.0, &[(vec![-1.0], DMatrix::identity(1, 1) * 0.2), (vec![1.0], DMatrix::identity(1, 1) * 0.2)])
        .marginal(&[1])
        .unwrap();
    let grid = GridSpec::uniform_1d("v1", -2.0, 2.0, 5).unwrap();
    let v = pair.evaluate_on_grid(&grid).unwrap().values[2];
    let expected = 2.0 * 0.5 * (-0.5 / 0.2_f64).exp() / (2.0 * PI * 0.2).sqrt();
    assert!((v - expected).abs() < 1e-15);

    let mix = random_mixture(40, 6);
    let g2 = GridSpec::new(vec![GridAxis::new("v0", -6.0, 6.0, 90).unwrap(), GridAxis::new("v2", -7.0, 7.0, 90).unwrap()])
        .unwrap();
    let f2 = mix.marginal(&[0, 2]).unwrap().evaluate_on_grid(&g2).unwrap();
    assert!(f2.values.iter().all(|v| *v >= 0.0));
    assert!((f2.integral - 1.0).abs() < 1e-3, "{}", f2.integral);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let states = vec![CgState::new(DVector::zeros(1), DMatrix::identity(1, 1), 0.0).unwrap(); 2];
    let h = BandwidthMatrix::new(vec![1.0]).unwrap();
    assert!(assemble_joint(&[0.0], &h, &states, names(2)).is_err());
    let mut late = states.clone();
    late[1].t = 1.0;
    assert!(assemble_joint(&[0.0, 1.0], &h, &late, names(2)).is_err());
    assert!(assemble_joint(&[0.0, 1.0], &h, &states, names(3)).is_err());
}
