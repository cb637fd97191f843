use std::f64::consts::PI;

use cgpdf::grid::{DensityField, GridAxis, GridSpec};
use cgpdf::metrics::{relative_entropy, sample_correlation, sample_moments};
use cgpdf::rng::aux_rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-0.5 * (x - mean).powi(2) / var).exp() / (2.0 * PI * var).sqrt()
}

fn normal_field(grid: &GridSpec, mean: f64, var: f64) -> DensityField {
    DensityField::from_fn(grid.clone(), |x| normal_pdf(x[0], mean, var)).unwrap()
}

#[test]
fn gaussian_relative_entropies_match_closed_form() {
    let grid = GridSpec::uniform_1d("x", -10.0, 10.0, 400).unwrap();
    let p = normal_field(&grid, 0.0, 1.0);
    let shifted = relative_entropy(&p, &normal_field(&grid, 1.0, 1.0)).unwrap();
    assert!((shifted.value - 0.5).abs() < 1e-3, "{}", shifted.value);
    let wide = relative_entropy(&p, &normal_field(&grid, 0.0, 4.0)).unwrap();
    let exact = 2f64.ln() - 3.0 / 8.0;
    assert!((wide.value - exact).abs() < 1e-3, "{} vs {exact}", wide.value);
    assert!(relative_entropy(&p, &p).unwrap().value.abs() < 1e-12);
    assert_eq!(shifted.floor_mass, 0.0);
}

#[test]
fn relative_entropy_is_invariant_under_affine_regridding() {
    let (a, b) = (2.5, -4.0);
    let g = GridSpec::uniform_1d("x", -9.0, 9.0, 361).unwrap();
    let mapped = GridSpec::uniform_1d("y", a * -9.0 + b, a * 9.0 + b, 361).unwrap();
    let p = |x: f64| 0.6 * normal_pdf(x, -1.0, 0.5) + 0.4 * normal_pdf(x, 1.5, 1.2);
    let q = |x: f64| normal_pdf(x, 0.2, 2.0);
    let kl = relative_entropy(
        &DensityField::from_fn(g.clone(), |x| p(x[0])).unwrap(),
        &DensityField::from_fn(g, |x| q(x[0])).unwrap(),
    )
    .unwrap()
    .value;
    let back = |y: f64| (y - b) / a;
    let kl_mapped = relative_entropy(
        &DensityField::from_fn(mapped.clone(), |y| p(back(y[0])) / a).unwrap(),
        &DensityField::from_fn(mapped, |y| q(back(y[0])) / a).unwrap(),
    )
    .unwrap()
    .value;
    assert!((kl - kl_mapped).abs() < 1e-3, "{kl} vs {kl_mapped}");

    let g2 = GridSpec::new(vec![GridAxis::new("x", -6.0, 6.0, 121).unwrap(), GridAxis::new("y", -6.0, 6.0, 121).unwrap()])
        .unwrap();
    let m2 = GridSpec::new(vec![GridAxis::new("x", -3.0, 3.0, 121).unwrap(), GridAxis::new("y", 0.0, 24.0, 121).unwrap()])
        .unwrap();
    let p2 = |x: &[f64]| normal_pdf(x[0], 0.5, 1.0) * normal_pdf(x[1], -0.5, 1.5);
    let q2 = |x: &[f64]| normal_pdf(x[0], 0.0, 1.3) * normal_pdf(x[1], 0.0, 1.0);
    let to = |y: &[f64]| [2.0 * y[0], 0.5 * y[1] - 6.0];
    let kl2 = relative_entropy(
        &DensityField::from_fn(g2.clone(), p2).unwrap(),
        &DensityField::from_fn(g2, q2).unwrap(),
    )
    .unwrap()
    .value;
    let kl2_mapped = relative_entropy(
        &DensityField::from_fn(m2.clone(), |y| p2(&to(y))).unwrap(),
        &DensityField::from_fn(m2, |y| q2(&to(y))).unwrap(),
    )
    .unwrap()
    .value;
    assert!((kl2 - kl2_mapped).abs() < 1e-3, "{kl2} vs {kl2_mapped}");
}

#[test]
fn sample_moment_oracles() {
    let m = sample_moments(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
    assert_eq!((m.mean, m.variance), (0.0, 1.0));

    let mut rng = aux_rng(1, 1);
    let z: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    assert!((sample_moments(&z).unwrap().kurtosis - 3.0).abs() < 0.1);

    let e: Vec<f64> = (0..1_000_000).map(|_| Exp1.sample(&mut rng)).collect();
    let me = sample_moments(&e).unwrap();
    assert!((me.skewness - 2.0).abs() < 0.05, "{}", me.skewness);
    assert!((me.kurtosis - 9.0).abs() < 0.5, "{}", me.kurtosis);

    let w: Vec<f64> = z.iter().zip(&e).map(|(a, b)| 0.6 * a + 0.8 * (b - 1.0)).collect();
    let r = sample_correlation(&z, &w).unwrap();
    assert!((r - 0.6).abs() < 0.005, "{r}");
    assert!(sample_moments(&[1.0, 1.0, 1.0, 1.0]).is_err());
}

#[test]
fn model_floor_mass_is_reported() {
    let grid = GridSpec::uniform_1d("x", -10.0, 10.0, 401).unwrap();
    let p = normal_field(&grid, 0.0, 1.0);
    let q = DensityField::from_fn(grid, |x| if x[0] < 0.0 { 0.0 } else { 2.0 * normal_pdf(x[0], 0.0, 1.0) }).unwrap();
    let r = relative_entropy(&p, &q).unwrap();
    assert!((r.floor_mass - 0.5).abs() < 0.01, "{}", r.floor_mass);
    assert!(r.value > 100.0);
}
