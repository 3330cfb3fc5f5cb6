use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatial_ident::graph::{self, ring, ProximityMatrix};
use spatial_ident::linalg::{self, max_abs_diff};
use spatial_ident::models::*;
use spatial_ident::scenarios;
use spatial_ident::specfun::CovFamily;
use spatial_ident::Error;

fn car(phi_u: f64, rho: f64) -> CarSPParams {
    CarSPParams {
        tau_u: 1.3,
        tau_z: 0.8,
        phi_u,
        phi_z: 0.5,
        rho,
        sigma2_eps: 0.4,
        beta: 1.2,
    }
}

fn off_identity(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let s = m.trace() / n as f64;
    max_abs_diff(m, &(DMatrix::identity(n, n) * s))
}

/// Dense oracle: invert the block precision directly (LU, not Cholesky) and
/// push the blocks through the joint-form formulas written out here.
fn car_dense_oracle(p: &CarSPParams, w: &ProximityMatrix) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let q = car_joint_precision(p, w).unwrap();
    let s = q.try_inverse().unwrap();
    let n = w.n();
    let uu = s.view((0, 0), (n, n)).into_owned();
    let uz = s.view((0, n), (n, n)).into_owned();
    let zz = s.view((n, n), (n, n)).into_owned();
    let cov_yz = &zz * p.beta + &uz;
    let var_y = &zz * (p.beta * p.beta)
        + &uu
        + (&uz + uz.transpose()) * p.beta
        + DMatrix::identity(n, n) * p.sigma2_eps;
    (zz, cov_yz, var_y)
}

#[test]
fn car_precision_two_nodes() {
    let w = ProximityMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
    let p = CarSPParams {
        tau_u: 1.0,
        tau_z: 1.0,
        phi_u: 0.0,
        phi_z: 0.0,
        rho: 0.5,
        sigma2_eps: 1.0,
        beta: 0.0,
    };
    let want = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, -0.5, 0.0, //
            0.0, 1.0, 0.0, -0.5, //
            -0.5, 0.0, 1.0, 0.0, //
            0.0, -0.5, 0.0, 1.0,
        ],
    );
    assert_eq!(car_joint_precision(&p, &w).unwrap(), want);
}

#[test]
fn car_precision_block_diagonal_without_cross_term() {
    let q = car_joint_precision(&car(0.3, 0.0), &ring(5)).unwrap();
    assert!(q.view((0, 5), (5, 5)).iter().all(|&x| x == 0.0));
    assert!(q.view((5, 0), (5, 5)).iter().all(|&x| x == 0.0));
}

#[test]
fn car_precision_singular_at_unit_phi() {
    let mut p = car(0.0, 0.0);
    p.phi_u = 1.0;
    assert!(matches!(car_joint_precision(&p, &ring(6)), Err(Error::NotPositiveDefinite(_))));
}

#[test]
fn car_moments_match_dense_inversion_on_ring() {
    let w = ring(6);
    let p = car(0.4, 0.5);
    let m = car_observed_moments(&p, &w).unwrap();
    let (zz, cov_yz, var_y) = car_dense_oracle(&p, &w);
    assert!(linalg::rel_diff(&m.var_z, &zz) < 1e-12);
    assert!(linalg::rel_diff(&m.cov_yz, &cov_yz) < 1e-12);
    assert!(linalg::rel_diff(&m.var_y, &var_y) < 1e-12);
}

#[test]
fn car_coef_degenerate_cases() {
    let w = ring(6);
    let m = car_observed_moments(&car(0.4, 0.0), &w).unwrap();
    assert!(max_abs_diff(&m.coef, &(DMatrix::identity(6, 6) * 1.2)) < 1e-12);
    let p = car(0.0, 0.5);
    let m = car_observed_moments(&p, &w).unwrap();
    let scale = p.beta + p.rho * (p.tau_z / p.tau_u).sqrt();
    assert!(max_abs_diff(&m.coef, &(DMatrix::identity(6, 6) * scale)) < 1e-12);
    let m = car_observed_moments(&car(0.4, 0.5), &w).unwrap();
    assert!(off_identity(&m.coef) > 1e-3);
}

/// `σ² {(1−λ)I + λ(D−W)}^{-1}` and its inverse square root computed in
/// location coordinates, independently of the spectral code path.
fn leroux_dense(w: &ProximityMatrix, lambda: f64) -> DMatrix<f64> {
    let n = w.n();
    (DMatrix::identity(n, n) * (1.0 - lambda) + graph::laplacian(w) * lambda)
        .try_inverse()
        .unwrap()
}

fn sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

#[test]
fn leroux_matches_dense_oracle() {
    let w = ring(6);
    for cross in [LerouxCross::NonParsimonious { lambda_uz: 0.2 }, LerouxCross::Parsimonious] {
        let p = LerouxParams {
            sigma_u: 1.1,
            sigma_z: 0.7,
            lambda_u: 0.3,
            lambda_z: 0.6,
            rho: 0.4,
            sigma2_eps: 0.5,
            beta: -0.3,
            cross,
        };
        let cu = leroux_dense(&w, p.lambda_u);
        let cz = leroux_dense(&w, p.lambda_z);
        let cuz = match cross {
            LerouxCross::NonParsimonious { lambda_uz } => leroux_dense(&w, lambda_uz),
            LerouxCross::Parsimonious => sqrt_spd(&cu) * sqrt_spd(&cz),
        };
        let b = JointBlocks {
            uu: cu * (p.sigma_u * p.sigma_u),
            uz: cuz * (p.rho * p.sigma_u * p.sigma_z),
            zz: cz * (p.sigma_z * p.sigma_z),
        };
        let oracle = ObservedMoments::from_blocks(&b, p.beta, p.sigma2_eps).unwrap();
        let m = leroux_observed_moments(&p, &w).unwrap().to_locations();
        assert!(m.representation_gap(&oracle) < 1e-11, "{cross:?}");
    }
}

#[test]
fn leroux_spectral_examples() {
    let w = ring(6);
    let base = LerouxParams {
        sigma_u: 1.0,
        sigma_z: 2.0,
        lambda_u: 0.0,
        lambda_z: 0.0,
        rho: 0.5,
        sigma2_eps: 0.3,
        beta: 1.0,
        cross: LerouxCross::NonParsimonious { lambda_uz: 0.0 },
    };
    let m = leroux_observed_moments(&base, &w).unwrap();
    let constant = |v: &[f64]| v.iter().all(|x| (x - v[0]).abs() < 1e-14);
    assert!(constant(&m.var_z) && constant(&m.coef) && constant(&m.var_y_given_z));

    let p = LerouxParams {
        lambda_z: 0.6,
        cross: LerouxCross::NonParsimonious { lambda_uz: 0.2 },
        ..base
    };
    let m = leroux_observed_moments(&p, &w).unwrap();
    assert!(!constant(&m.coef));

    let p = LerouxParams {
        lambda_u: 0.5,
        lambda_z: 0.5,
        cross: LerouxCross::Parsimonious,
        ..base
    };
    let m = leroux_observed_moments(&p, &w).unwrap();
    for c in &m.coef {
        assert!((c - (p.beta + p.rho * p.sigma_u / p.sigma_z)).abs() < 1e-14);
    }
}

#[test]
fn leroux_allows_singular_latent_pair() {
    // ρ = 1 with matching shapes: (U, Z) is degenerate but (Y, Z) is not.
    let p = LerouxParams {
        sigma_u: 1.0,
        sigma_z: 1.0,
        lambda_u: 0.4,
        lambda_z: 0.4,
        rho: 1.0,
        sigma2_eps: 0.3,
        beta: 0.0,
        cross: LerouxCross::NonParsimonious { lambda_uz: 0.4 },
    };
    let m = leroux_observed_moments(&p, &ring(5)).unwrap();
    assert!(m.var_y_given_z.iter().all(|&v| (v - 0.3).abs() < 1e-12));
}

#[test]
fn lmc_without_confounder_loading() {
    let w = graph::distance_matrix(&DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 1.5, 1.5])).unwrap();
    let p = LmcParams {
        a: vec![0.8],
        b: vec![0.0],
        phi: vec![1.2],
        covariance: CovFamily::Exponential,
        sigma2_eps: 0.5,
        beta: 1.7,
    };
    let m = lmc_joint_moments(&p, &w).unwrap();
    assert!(max_abs_diff(&m.cov_yz, &(&m.var_z * 1.7)) < 1e-14);
}

fn coords5() -> ProximityMatrix {
    graph::distance_matrix(&DMatrix::from_row_slice(
        5,
        2,
        &[0.0, 0.0, 1.0, 0.2, 0.3, 1.7, 2.2, 1.1, 1.4, 2.6],
    ))
    .unwrap()
}

fn biv(rho: f64, psi_uz: f64) -> BivariateParams {
    BivariateParams {
        sigma_u: 1.2,
        sigma_z: 0.9,
        psi_u: 0.7,
        psi_z: 1.1,
        psi_uz,
        rho,
        sigma2_eps: 0.3,
        beta: 0.6,
        covariance: CovFamily::Exponential,
    }
}

#[test]
fn bivariate_degenerate_cases() {
    let w = coords5();
    let m = bivariate_joint_moments(&biv(0.0, 0.8), &w).unwrap();
    assert!(max_abs_diff(&m.cov_yz, &(&m.var_z * 0.6)) < 1e-14);
    let p = biv(0.5, 1.1);
    let m = bivariate_joint_moments(&p, &w).unwrap();
    let scale = p.beta + p.rho * p.sigma_u / p.sigma_z;
    assert!(max_abs_diff(&m.coef, &(DMatrix::identity(5, 5) * scale)) < 1e-12);
    let m = bivariate_joint_moments(&biv(0.5, 0.8), &w).unwrap();
    assert!(off_identity(&m.coef) > 1e-3);
}

#[test]
fn pars_matern_equal_smoothness_gives_scalar_coef() {
    let w = coords5();
    let p = ParsMaternParams {
        sigma_u: 1.0,
        sigma_z: 1.4,
        phi: 0.8,
        nu_u: 1.3,
        nu_z: 1.3,
        rho: 0.4,
        sigma2_eps: 0.2,
        beta: 0.1,
    };
    let m = pars_matern_joint_moments(&p, &w).unwrap();
    assert!(off_identity(&m.coef) < 1e-12);
    assert!((m.coef[(0, 0)] - (p.beta + p.rho * p.sigma_u / p.sigma_z)).abs() < 1e-12);
    let m = pars_matern_joint_moments(&ParsMaternParams { nu_u: 2.0, ..p }, &w).unwrap();
    assert!(off_identity(&m.coef) > 1e-4);
}

#[test]
fn pd_check_examples() {
    let i = DMatrix::<f64>::identity(3, 3);
    let r = pd_check(&i, &(&i * 0.5), &i);
    assert!(r.is_pd && r.sufficient_bound_holds);
    assert!((r.schur_min_eig - 0.75).abs() < 1e-14);
    let r = pd_check(&i, &i, &i);
    assert!(!r.is_pd);
    assert!(r.schur_min_eig.abs() < 1e-14);
}

#[test]
fn spec_json_roundtrip_all_families() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for fam in scenarios::FAMILIES {
        let (spec, _) = scenarios::random_scenario(fam, 5, &mut rng);
        let s = serde_json::to_string(&spec).unwrap();
        assert!(s.contains("\"family\":"));
        assert_eq!(serde_json::from_str::<ModelSpec>(&s).unwrap(), spec);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn representations_agree(seed in any::<u64>(), fam_idx in 0usize..6, n_idx in 0usize..3) {
        let n = [4, 6, 10][n_idx];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (spec, w) = scenarios::random_scenario(scenarios::FAMILIES[fam_idx], n, &mut rng);
        let b = spec.joint_blocks(&w).unwrap();
        let joint = ObservedMoments::from_blocks(&b, spec.beta(), spec.sigma2_eps()).unwrap();
        let cond = ObservedMoments::from_blocks_conditional(&b, spec.beta(), spec.sigma2_eps()).unwrap();
        prop_assert!(joint.representation_gap(&cond) < 1e-9);
        let direct = spec.observed_moments(&w).unwrap();
        prop_assert!(direct.representation_gap(&joint) < 1e-9);
    }

    #[test]
    fn car_spectral_equals_block_inversion(seed in any::<u64>(), n in 3usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = scenarios::random_graph(n, &mut rng);
        let p = scenarios::random_car(&w, &mut rng);
        let m = car_observed_moments(&p, &w).unwrap();
        let (zz, cov_yz, var_y) = car_dense_oracle(&p, &w);
        prop_assert!(linalg::rel_diff(&m.var_z, &zz) < 1e-8);
        prop_assert!(linalg::rel_diff(&m.cov_yz, &cov_yz) < 1e-8);
        prop_assert!(linalg::rel_diff(&m.var_y, &var_y) < 1e-8);
    }

    #[test]
    fn pd_bound_implies_schur(seed in any::<u64>(), scale in 0.0f64..2.0, n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = scenarios::random_distances(n, 2.0, &mut rng);
        let uu = CovFamily::Exponential.matrix(0.8, w.entries()).unwrap();
        let zz = CovFamily::Gaussian.matrix(0.5, w.entries()).unwrap() + DMatrix::identity(n, n) * 0.1;
        let uz = CovFamily::Exponential.matrix(0.6, w.entries()).unwrap() * scale;
        let r = pd_check(&uu, &uz, &zz);
        let full = linalg::block2(&uu, &uz, &uz.transpose(), &zz);
        prop_assert_eq!(r.is_pd, linalg::is_pd(&full));
        if r.sufficient_bound_holds {
            prop_assert!(r.is_pd);
        }
    }

    #[test]
    fn car_coef_scalar_iff_degenerate(seed in any::<u64>(), which in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = scenarios::random_connected_graph(6, false, &mut rng);
        let mut p = scenarios::random_car(&w, &mut rng);
        prop_assume!(p.phi_u.abs() > 0.1 && p.rho.abs() > 0.1);
        match which {
            0 => p.phi_u = 0.0,
            1 => p.rho = 0.0,
            _ => {}
        }
        let Ok(m) = car_observed_moments(&p, &w) else { return Ok(()); };
        let scalar = off_identity(&m.coef) < 1e-10;
        prop_assert_eq!(scalar, which < 2);
    }
}
