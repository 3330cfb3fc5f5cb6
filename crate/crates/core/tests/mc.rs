mod common;

use common::dense_moments;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatial_ident::forge::{self, ForgeOptions, CONSTRUCTIONS};
use spatial_ident::graph::{complete, distance_matrix, ring, ProximityMatrix};
use spatial_ident::mc::*;
use spatial_ident::models::*;
use spatial_ident::optim;
use spatial_ident::scenarios;
use spatial_ident::specfun::CovFamily;
use spatial_ident::Error;

fn car_ring() -> CarSPParams {
    CarSPParams {
        tau_u: 1.0,
        tau_z: 1.5,
        phi_u: 0.6,
        phi_z: 0.4,
        rho: 0.3,
        sigma2_eps: 0.5,
        beta: 1.0,
    }
}

fn line_distances(n: usize) -> ProximityMatrix {
    let coords = DMatrix::from_fn(n, 2, |i, j| if j == 0 { i as f64 * 0.7 } else { (i % 2) as f64 * 0.4 });
    distance_matrix(&coords).unwrap()
}

fn lmc_spec() -> ModelSpec {
    ModelSpec::Lmc(LmcParams {
        a: vec![1.0, 0.3],
        b: vec![0.2, 0.9],
        phi: vec![0.5, 2.0],
        covariance: CovFamily::Exponential,
        sigma2_eps: 0.3,
        beta: 0.5,
    })
}

/// Gaussian log-likelihood by LU determinant and solve on the dense oracle
/// covariance.
fn oracle_loglik(spec: &ModelSpec, w: &ProximityMatrix, data: &Dataset) -> f64 {
    let d = dense_moments(spec, w);
    let n = w.n();
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    s.view_mut((0, 0), (n, n)).copy_from(&d.var_y);
    s.view_mut((0, n), (n, n)).copy_from(&d.cov_yz);
    s.view_mut((n, 0), (n, n)).copy_from(&d.cov_yz.transpose());
    s.view_mut((n, n), (n, n)).copy_from(&d.var_z);
    let lu = s.clone().lu();
    let logdet = lu.determinant().ln();
    let mut total = 0.0;
    for k in 0..data.replicates() {
        let x = DVector::from_iterator(2 * n, data.y.row(k).iter().chain(data.z.row(k).iter()).copied());
        let sol = lu.solve(&x).unwrap();
        total += -0.5 * (x.dot(&sol) + logdet + 2.0 * n as f64 * (2.0 * std::f64::consts::PI).ln());
    }
    total
}

#[test]
fn sample_is_deterministic() {
    let w = ring(5);
    let spec = ModelSpec::Car(car_ring());
    let a = sample(&spec, &w, 20, 11).unwrap();
    let b = sample(&spec, &w, 20, 11).unwrap();
    assert_eq!(a, b);
    let c = sample(&spec, &w, 20, 12).unwrap();
    assert_ne!(a, c);
}

#[test]
fn sample_rejects_non_pd() {
    let w = ring(4);
    let mut p = car_ring();
    p.rho = 0.999;
    p.phi_u = 0.99;
    p.phi_z = -0.99;
    assert!(sample(&ModelSpec::Car(p), &w, 5, 0).is_err());
}

#[test]
fn noise_dominated_y_covariance() {
    let w = ring(4);
    let p = CarSPParams { tau_u: 100.0, tau_z: 1.0, phi_u: 0.2, phi_z: 0.2, rho: 0.0, sigma2_eps: 25.0, beta: 0.0 };
    let spec = ModelSpec::Car(p);
    let d = sample(&spec, &w, 10_000, 3).unwrap();
    let emp = d.y.transpose() * &d.y / d.replicates() as f64;
    let target = DMatrix::<f64>::identity(4, 4) * 25.0;
    let rel = (&emp - &target).norm() / target.norm();
    assert!(rel < 0.05, "relative error {rel}");
}

#[test]
fn regression_coefficient_within_three_standard_errors() {
    let w = ring(4);
    let spec = ModelSpec::Car(car_ring());
    let m = dense_moments(&spec, &w);
    let coef = &m.cov_yz * m.var_z.clone().try_inverse().unwrap();
    let cond_var = &m.var_y - &coef * m.cov_yz.transpose();
    let d = sample(&spec, &w, 100_000, 5).unwrap();
    let ztz_inv = (d.z.transpose() * &d.z).try_inverse().unwrap();
    let bhat = (&ztz_inv * d.z.transpose() * &d.y).transpose();
    for i in 0..4 {
        for j in 0..4 {
            let se = (cond_var[(i, i)] * ztz_inv[(j, j)]).sqrt();
            let z = (bhat[(i, j)] - coef[(i, j)]) / se;
            assert!(z.abs() < 3.0, "coef[{i},{j}] off by {z} standard errors");
        }
    }
}

#[test]
fn loglik_matches_dense_oracle_for_every_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for fam in scenarios::FAMILIES {
        for _ in 0..3 {
            let (spec, w) = scenarios::random_scenario(fam, 6, &mut rng);
            let d = sample(&spec, &w, 30, 1).unwrap();
            let a = loglik(&spec, &w, &d).unwrap();
            let b = oracle_loglik(&spec, &w, &d);
            assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{fam}: {a} vs {b}");
        }
    }
}

#[test]
fn truth_beats_perturbations() {
    let w = ring(6);
    let truth = car_ring();
    let d = sample(&ModelSpec::Car(truth), &w, 500, 21).unwrap();
    let l0 = loglik(&ModelSpec::Car(truth), &w, &d).unwrap();
    let perturbed = [
        CarSPParams { beta: truth.beta + 0.2, ..truth },
        CarSPParams { rho: truth.rho - 0.2, ..truth },
        CarSPParams { tau_u: truth.tau_u * 1.5, ..truth },
        CarSPParams { sigma2_eps: truth.sigma2_eps * 0.6, ..truth },
    ];
    for p in perturbed {
        assert!(l0 > loglik(&ModelSpec::Car(p), &w, &d).unwrap(), "{p:?}");
    }
}

#[test]
fn loglik_equal_across_every_certificate() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for name in CONSTRUCTIONS {
        for rep in 0..3 {
            let (spec, w) = scenarios::construction_scenario(name, 6, &mut rng);
            let cert = forge::construct(name, &spec, &w, &ForgeOptions::default()).unwrap();
            assert!(cert.valid, "{name}");
            let d = sample(&spec, &w, 100, rep).unwrap();
            let a = loglik(&cert.original, &w, &d).unwrap();
            let b = loglik(&cert.alternative, &w, &d).unwrap();
            assert!((a - b).abs() <= 1e-6, "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn lmc_shift_leaves_loglik_unchanged() {
    let w = line_distances(6);
    let spec = lmc_spec();
    let opts = ForgeOptions { delta: Some(1.0), ..Default::default() };
    let cert = forge::construct("lmc", &spec, &w, &opts).unwrap();
    assert!((cert.beta_gap - 1.0).abs() < 1e-15);
    // Data from an unrelated model: equality must hold on any dataset.
    let other = ModelSpec::Car(car_ring());
    let d = sample(&other, &ring(6), 50, 4).unwrap();
    let a = loglik(&cert.original, &w, &d).unwrap();
    let b = loglik(&cert.alternative, &w, &d).unwrap();
    assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
}

#[test]
fn fully_connected_alternative_loglik() {
    let w = complete(5);
    let spec = ModelSpec::Car(car_ring());
    let cert = forge::construct("car_fullyconnected", &spec, &w, &ForgeOptions::default()).unwrap();
    assert!(cert.beta_gap >= 0.1);
    let d = sample(&spec, &w, 100, 9).unwrap();
    let a = loglik(&cert.original, &w, &d).unwrap();
    let b = loglik(&cert.alternative, &w, &d).unwrap();
    assert!((a - b).abs() <= 1e-6);
}

#[test]
fn loglik_rejects_mismatched_sizes() {
    let d = sample(&ModelSpec::Car(car_ring()), &ring(4), 5, 0).unwrap();
    assert!(matches!(loglik(&ModelSpec::Car(car_ring()), &ring(5), &d), Err(Error::Precondition(_))));
}

#[test]
fn internal_gradient_agrees_with_coarser_stencil() {
    let w = ring(6);
    let spec = ModelSpec::Car(car_ring());
    let d = sample(&spec, &w, 100, 2).unwrap();
    let names = parameters(&spec);
    let f = |x: &[f64]| {
        let v: Vec<f64> = names.iter().zip(x).map(|(p, t)| p.transform.to_natural(*t)).collect();
        -loglik(&with_values(&spec, &v), &w, &d).unwrap() / 100.0
    };
    let mut x: Vec<f64> = names.iter().map(|p| p.transform.to_theta(p.value)).collect();
    x[4] += 0.1;
    x[6] -= 0.3;
    let g = optim::gradient(&f, &x, f(&x));
    for i in 0..x.len() {
        // Five-point stencil with a much larger step.
        let h = 2e-3;
        let at = |s: f64| {
            let mut y = x.clone();
            y[i] += s * h;
            f(&y)
        };
        let g5 = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h);
        assert!((g[i] - g5).abs() <= 1e-5 * (1.0 + g5.abs()), "coordinate {i}: {} vs {g5}", g[i]);
    }
}

#[test]
fn dataset_validation() {
    let ok = DMatrix::zeros(2, 3);
    assert!(Dataset::new(ok.clone(), DMatrix::zeros(2, 4), None, 0).is_err());
    let mut bad = ok.clone();
    bad[(0, 0)] = f64::NAN;
    assert!(Dataset::new(bad, ok.clone(), None, 0).is_err());
    assert!(Dataset::new(ok.clone(), ok, None, 0).is_ok());
}

#[test]
fn car_ring_fit_recovers_beta() {
    let w = ring(6);
    let truth = ModelSpec::Car(car_ring());
    let d = sample(&truth, &w, 200, 17).unwrap();
    let opts = FitOptions { n_starts: 4, seed: 3, ..Default::default() };
    let fit = fit_mle(&truth, &d, &w, &opts).unwrap();
    assert!(fit.converged);
    assert!(fit.loglik >= loglik(&truth, &w, &d).unwrap() - 1e-6);
    let se = fit.beta_se.expect("information matrix is positive definite");
    assert!((fit.spec.beta() - 1.0).abs() <= 3.0 * se, "beta {} se {se}", fit.spec.beta());
    assert!(fit.start_dispersion <= 0.05, "{}", fit.start_dispersion);
    // Reported loglik is the best over converged starts.
    let best = fit.starts.iter().filter(|s| s.converged).map(|s| s.loglik).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(fit.loglik, best);
}

#[test]
fn fit_is_deterministic() {
    let w = ring(4);
    let truth = ModelSpec::Car(car_ring());
    let d = sample(&truth, &w, 50, 1).unwrap();
    let opts = FitOptions { n_starts: 3, seed: 9, ..Default::default() };
    let a = fit_mle(&truth, &d, &w, &opts).unwrap();
    let b = fit_mle(&truth, &d, &w, &opts).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn fixed_parameters_stay_put() {
    let w = ring(4);
    let truth = ModelSpec::Car(car_ring());
    let d = sample(&truth, &w, 50, 1).unwrap();
    let opts = FitOptions { n_starts: 2, fixed: vec!["beta".into(), "phi_u".into()], ..Default::default() };
    let fit = fit_mle(&truth, &d, &w, &opts).unwrap();
    assert_eq!(fit.estimates["beta"], 1.0);
    assert_eq!(fit.estimates["phi_u"], 0.6);
    assert_eq!(fit.beta_se, None);
    let bad = FitOptions { fixed: vec!["gamma".into()], ..Default::default() };
    assert!(fit_mle(&truth, &d, &w, &bad).is_err());
}

#[test]
fn single_point_profile_equals_fixed_beta_fit() {
    let w = ring(4);
    let truth = ModelSpec::Car(car_ring());
    let d = sample(&truth, &w, 60, 8).unwrap();
    let opts = FitOptions { n_starts: 3, seed: 1, ..Default::default() };
    let prof = profile_beta(&truth, &d, &w, &[0.7], &opts).unwrap();
    let mut at = car_ring();
    at.beta = 0.7;
    let fixed = FitOptions { fixed: vec!["beta".into()], ..opts };
    let fit = fit_mle(&ModelSpec::Car(at), &d, &w, &fixed).unwrap();
    assert_eq!(prof.len(), 1);
    assert_eq!(prof[0].loglik, fit.loglik);
    assert_eq!(prof[0].estimates, fit.estimates);
}

#[test]
fn empty_profile_grid_is_an_error() {
    let w = ring(4);
    let truth = ModelSpec::Car(car_ring());
    let d = sample(&truth, &w, 10, 8).unwrap();
    assert!(profile_beta(&truth, &d, &w, &[], &FitOptions::default()).is_err());
}

#[test]
fn car_profile_has_interior_maximum() {
    let w = ring(6);
    let truth = ModelSpec::Car(car_ring());
    let d = sample(&truth, &w, 200, 17).unwrap();
    let grid: Vec<f64> = (0..5).map(|i| 0.6 + 0.2 * i as f64).collect();
    let opts = FitOptions { n_starts: 3, seed: 2, ..Default::default() };
    let prof = profile_beta(&truth, &d, &w, &grid, &opts).unwrap();
    let ll: Vec<f64> = prof.iter().map(|p| p.loglik).collect();
    assert!(prof.iter().all(|p| p.error.is_none()));
    let imax = ll.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!(imax > 0 && imax < grid.len() - 1, "{ll:?}");
    let curvature = ll[imax - 1] - 2.0 * ll[imax] + ll[imax + 1];
    assert!(curvature < 0.0);
}

#[test]
fn lmc_profile_is_flat() {
    let w = line_distances(6);
    let truth = lmc_spec();
    let d = sample(&truth, &w, 100, 5).unwrap();
    let grid = [-0.5, 0.5, 1.5];
    let opts = FitOptions { n_starts: 4, seed: 6, ..Default::default() };
    let prof = profile_beta(&truth, &d, &w, &grid, &opts).unwrap();
    let ll: Vec<f64> = prof.iter().map(|p| p.loglik).collect();
    let spread = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ll.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread <= 1e-2, "{ll:?}");
}
