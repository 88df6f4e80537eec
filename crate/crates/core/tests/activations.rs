//! Affine classifiers checked against posteriors built from independent
//! density implementations.

use bru_core::activations::{beta_to_affine, gaussian_to_affine, logit_slope, GaussianClassModel};
use bru_core::Rng;
use proptest::prelude::*;
use statrs::distribution::{Beta, Continuous, Normal};

/// Bayes posterior from log densities and priors, normalised in log space.
fn bayes(log_lik: &[f64], priors: &[f64]) -> Vec<f64> {
    let joint: Vec<f64> = log_lik.iter().zip(priors).map(|(l, p)| l + p.ln()).collect();
    let m = joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = joint.iter().map(|j| (j - m).exp()).sum();
    joint.iter().map(|j| (j - m).exp() / z).collect()
}

fn random_priors(rng: &mut Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.uniform(0.05, 1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|r| r / s).collect()
}

#[test]
fn gaussian_affine_matches_density_posterior() {
    let mut rng = Rng::new(601);
    for _ in 0..200 {
        let classes = 2 + rng.below(3);
        let dim = 1 + rng.below(4);
        let means: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| rng.uniform(-2.0, 2.0)).collect()).collect();
        let sd: Vec<f64> = (0..dim).map(|_| rng.uniform(0.3, 2.0)).collect();
        let cov = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { sd[i] * sd[i] } else { 0.0 }).collect())
            .collect();
        let priors = random_priors(&mut rng, classes);
        let model = GaussianClassModel::new(means.clone(), cov, priors.clone()).unwrap();
        let affine = gaussian_to_affine(&model).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..dim).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let log_lik: Vec<f64> = means
                .iter()
                .map(|m| (0..dim).map(|i| Normal::new(m[i], sd[i]).unwrap().ln_pdf(x[i])).sum())
                .collect();
            let want = bayes(&log_lik, &priors);
            let got = affine.posterior(&x).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10, "{got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn beta_affine_matches_density_posterior() {
    let mut rng = Rng::new(602);
    for _ in 0..200 {
        let dim = 1 + rng.below(4);
        let a1: Vec<f64> = (0..dim).map(|_| rng.uniform(0.2, 5.0)).collect();
        let a2: Vec<f64> = (0..dim).map(|_| rng.uniform(0.2, 5.0)).collect();
        let priors = random_priors(&mut rng, 2);
        let affine = beta_to_affine(&a1, &a2, (priors[0], priors[1])).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..dim).map(|_| rng.uniform(0.01, 0.99)).collect();
            let ll = |a: &[f64]| -> f64 { (0..dim).map(|i| Beta::new(a[i], 1.0).unwrap().ln_pdf(x[i])).sum() };
            let want = bayes(&[ll(&a1), ll(&a2)], &priors);
            let got = affine.posterior(&x).unwrap();
            assert!((got - want[0]).abs() < 1e-10, "{got} vs {}", want[0]);
        }
    }
}

#[test]
fn logit_tangent_at_half_is_four() {
    assert_eq!(logit_slope(0.5).unwrap(), 4.0);
}

proptest! {
    #[test]
    fn logit_slope_never_below_four(p in 1e-6f64..(1.0 - 1e-6)) {
        prop_assert!(logit_slope(p).unwrap() >= 4.0);
    }
}
