use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_ident::forge::{self, ForgeOptions};
use spatial_ident::graph::{self, complete, distance_matrix, example_graph, ring, ProximityMatrix};
use spatial_ident::identify::*;
use spatial_ident::models::*;
use spatial_ident::scenarios;
use spatial_ident::specfun::CovFamily;

fn tol() -> Tolerances {
    Tolerances::default()
}

fn car(phi_u: f64, rho: f64) -> CarSPParams {
    CarSPParams {
        tau_u: 1.0,
        tau_z: 1.5,
        phi_u,
        phi_z: 0.4,
        rho,
        sigma2_eps: 0.5,
        beta: 1.0,
    }
}

#[test]
fn example_graphs() {
    let p = car(0.3, 0.4);
    let expect = [
        ('a', Verdict::NotCovered, false),
        ('b', Verdict::ProvablyNonIdentifiable, false),
        ('c', Verdict::IdentifiableUnderTheorem, true),
        ('d', Verdict::IdentifiableUnderTheorem, true),
    ];
    for (label, verdict, cond) in expect {
        let w = example_graph(label).unwrap();
        let r = check_car(&p, &w, &tol()).unwrap();
        assert_eq!(r.theorem, Theorem::C1);
        assert_eq!(r.verdict, verdict, "graph {label}");
        assert_eq!(r.condition("indirect_neighbor_pair").unwrap().pass, cond, "graph {label}");
    }
    let r = check_car(&p, &example_graph('b').unwrap(), &tol()).unwrap();
    assert_eq!(r.construction.as_deref(), Some("car_fullyconnected"));
}

#[test]
fn car_phi0_is_non_identifiable_on_any_graph() {
    for w in [ring(6), example_graph('c').unwrap(), complete(5)] {
        let r = check_car(&car(0.0, 0.4), &w, &tol()).unwrap();
        assert_eq!(r.verdict, Verdict::ProvablyNonIdentifiable);
        assert_eq!(r.construction.as_deref(), Some("car_phi0"));
    }
}

#[test]
fn car_weighted_graph_uses_spectral_condition() {
    // Weighted path on 3 nodes: degrees 1, 3, 2 are distinct.
    let w = ProximityMatrix::new(DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 2.0, 0.0])).unwrap();
    let r = check_car(&car(0.3, 0.4), &w, &tol()).unwrap();
    assert_eq!(r.theorem, Theorem::T1);
    assert_eq!(r.verdict, Verdict::IdentifiableUnderTheorem);

    // Two disjoint weighted edges: each block has two eigenvalues, equal degrees.
    let mut m = DMatrix::zeros(4, 4);
    for (i, j) in [(0, 1), (2, 3)] {
        m[(i, j)] = 0.5;
        m[(j, i)] = 0.5;
    }
    let r = check_car(&car(0.3, 0.4), &ProximityMatrix::new(m).unwrap(), &tol()).unwrap();
    assert_eq!(r.verdict, Verdict::NotCovered);
}

#[test]
fn car_isolated_node_is_an_error() {
    let mut m = DMatrix::zeros(3, 3);
    m[(0, 1)] = 1.0;
    m[(1, 0)] = 1.0;
    let w = ProximityMatrix::new(m).unwrap();
    assert!(check_car(&car(0.3, 0.4), &w, &tol()).is_err());
}

fn leroux(lu: f64, lz: f64, rho: f64, cross: LerouxCross) -> LerouxParams {
    LerouxParams {
        sigma_u: 1.0,
        sigma_z: 1.2,
        lambda_u: lu,
        lambda_z: lz,
        rho,
        sigma2_eps: 0.5,
        beta: 0.4,
        cross,
    }
}

#[test]
fn leroux_ring_example() {
    let w = ring(6);
    // Oracle: eigenvalues of the explicit D − W, counted by hand.
    let d_minus_w = DMatrix::from_diagonal_element(6, 6, 2.0) - w.entries();
    let mut eig: Vec<f64> = d_minus_w.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let mut distinct = vec![eig[0]];
    for x in eig {
        if x - distinct.last().unwrap() > 1e-9 {
            distinct.push(x);
        }
    }
    assert!(distinct.len() >= 3);
    let p = leroux(0.3, 0.6, 0.4, LerouxCross::NonParsimonious { lambda_uz: 0.2 });
    let r = check_leroux(&p, &w, &tol());
    assert_eq!(r.theorem, Theorem::T2i);
    assert_eq!(r.verdict, Verdict::IdentifiableUnderTheorem);
    assert_eq!(r.condition("laplacian_distinct_eigenvalues").unwrap().measured, distinct.len() as f64);
}

#[test]
fn leroux_non_identifiable_regimes() {
    let w = ring(6);
    let r = check_leroux(&leroux(0.3, 0.6, 0.4, LerouxCross::NonParsimonious { lambda_uz: 0.6 }), &w, &tol());
    assert_eq!(r.verdict, Verdict::ProvablyNonIdentifiable);
    assert_eq!(r.construction.as_deref(), Some("leroux_flex_equal_lambda"));

    let r = check_leroux(&leroux(0.5, 0.5, 0.3, LerouxCross::Parsimonious), &w, &tol());
    assert_eq!(r.verdict, Verdict::ProvablyNonIdentifiable);
    assert_eq!(r.construction.as_deref(), Some("leroux_pars"));

    let r = check_leroux(&leroux(0.0, 0.5, 0.0, LerouxCross::Parsimonious), &w, &tol());
    assert_eq!(r.verdict, Verdict::ProvablyNonIdentifiable);

    let r = check_leroux(&leroux(0.0, 0.5, 0.0, LerouxCross::NonParsimonious { lambda_uz: 0.1 }), &w, &tol());
    assert_eq!(r.theorem, Theorem::T2ii);
    assert_eq!(r.construction.as_deref(), Some("leroux_rho0"));
}

#[test]
fn leroux_theorem_routing() {
    let w = ring(8);
    let r = check_leroux(&leroux(0.3, 0.6, 0.0, LerouxCross::NonParsimonious { lambda_uz: 0.1 }), &w, &tol());
    assert_eq!((r.theorem, r.verdict), (Theorem::T2ii, Verdict::IdentifiableUnderTheorem));
    let r = check_leroux(&leroux(0.0, 0.6, 0.4, LerouxCross::Parsimonious), &w, &tol());
    assert_eq!((r.theorem, r.verdict), (Theorem::T3i, Verdict::IdentifiableUnderTheorem));
    let r = check_leroux(&leroux(0.3, 0.6, 0.0, LerouxCross::Parsimonious), &w, &tol());
    assert_eq!((r.theorem, r.verdict), (Theorem::T3ii, Verdict::IdentifiableUnderTheorem));
    // λ_U = 0 with ρ ≠ 0 identifies β but not every parameter.
    let r = check_leroux(&leroux(0.0, 0.6, 0.4, LerouxCross::NonParsimonious { lambda_uz: 0.2 }), &w, &tol());
    assert_eq!(r.verdict, Verdict::IdentifiableUnderTheorem);
    assert_ne!(r.scope, "all parameters");
    // Complete graph: D − W has only two eigenvalues.
    let r = check_leroux(&leroux(0.3, 0.6, 0.4, LerouxCross::NonParsimonious { lambda_uz: 0.2 }), &complete(5), &tol());
    assert_eq!(r.verdict, Verdict::NotCovered);
}

fn coords() -> ProximityMatrix {
    let xy = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 1.0, 0.2, 0.3, 1.7, 2.2, 1.1, 0.9, 2.6]);
    distance_matrix(&xy).unwrap()
}

fn biv(rho: f64, psi_z: f64, psi_uz: f64) -> BivariateParams {
    BivariateParams {
        sigma_u: 1.0,
        sigma_z: 1.0,
        psi_u: 1.5,
        psi_z,
        psi_uz,
        rho,
        sigma2_eps: 0.3,
        beta: 1.0,
        covariance: CovFamily::Exponential,
    }
}

#[test]
fn bivariate_examples() {
    let w = coords();
    assert!(w.off_diagonal_values().len() >= 3);
    let r = check_bivariate(&biv(0.5, 1.0, 2.0), &w, &tol());
    assert_eq!(r.verdict, Verdict::IdentifiableUnderTheorem);

    let r = check_bivariate(&biv(0.0, 1.0, 2.0), &w, &tol());
    assert_eq!(r.verdict, Verdict::NotCovered);
    assert!(r.notes.iter().any(|n| n.contains("bivariate_rho0")));

    let r = check_bivariate(&biv(0.3, 1.5, 1.5), &w, &tol());
    assert_eq!(r.verdict, Verdict::ProvablyNonIdentifiable);

    // Two points give a single distance: 3-linear independence fails.
    let two = distance_matrix(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0])).unwrap();
    let r = check_bivariate(&biv(0.5, 1.0, 2.0), &two, &tol());
    assert!(!r.condition("three_linear_independence").unwrap().pass);
}

#[test]
fn lmc_is_never_identifiable() {
    let p = LmcParams {
        a: vec![1.0],
        b: vec![0.5],
        phi: vec![1.0],
        covariance: CovFamily::Exponential,
        sigma2_eps: 0.2,
        beta: 0.0,
    };
    let r = check(&ModelSpec::Lmc(p), &coords(), false, &tol()).unwrap();
    assert_eq!((r.theorem, r.verdict), (Theorem::T4, Verdict::ProvablyNonIdentifiable));
}

fn matern(nu_u: f64, nu_z: f64) -> ParsMaternParams {
    ParsMaternParams {
        sigma_u: 1.0,
        sigma_z: 1.0,
        phi: 0.5,
        nu_u,
        nu_z,
        rho: 0.5,
        sigma2_eps: 0.3,
        beta: 1.0,
    }
}

#[test]
fn matern_examples() {
    let w = coords();
    let r = check_matern(&matern(1.5, 0.5), &w, true, &tol()).unwrap();
    assert_eq!((r.theorem, r.verdict), (Theorem::TAKnownSmoothness, Verdict::IdentifiableUnderTheorem));
    let r = check_matern(&matern(0.5, 0.5), &w, true, &tol()).unwrap();
    assert_eq!(r.verdict, Verdict::NotCovered);

    let r = check_matern(&matern(1.5, 0.5), &w, false, &tol()).unwrap();
    assert_eq!((r.theorem, r.verdict), (Theorem::T6, Verdict::NotCovered));
    assert!(r.heuristic);
    let far = distance_matrix(&DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 100.0, 0.0, 30.0, 40.0])).unwrap();
    assert_eq!(far.max_entry(), 100.0);
    let r = check_matern(&matern(1.5, 0.5), &far, false, &tol()).unwrap();
    assert_eq!(r.verdict, Verdict::IdentifiableUnderTheorem);
    assert!(r.heuristic);
}

#[test]
fn scaled_identity_on_car_coef() {
    let w = ring(6);
    let m = car_observed_moments(&car(0.4, 0.5), &w).unwrap();
    assert!(!scaled_identity_diagnostic(&m.coef, 1e-8).is_scaled_identity);
    let p = car(0.4, 0.0);
    let d = scaled_identity_diagnostic(&car_observed_moments(&p, &w).unwrap().coef, 1e-8);
    assert!(d.is_scaled_identity);
    assert!((d.scale - p.beta).abs() < 1e-12);
}

#[test]
fn report_json_roundtrip() {
    let r = check_car(&car(0.3, 0.4), &ring(6), &tol()).unwrap();
    let back: IdentifiabilityReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(back, r);
    assert!(r.to_string().contains("indirect_neighbor_pair"));
}

/// Random spec that lands in a non-generic regime about half the time.
fn scenario(seed: u64) -> (ModelSpec, ProximityMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fam = scenarios::FAMILIES[rng.random_range(0..scenarios::FAMILIES.len())];
    let n = [4, 6, 10][rng.random_range(0..3)];
    let (mut spec, w) = scenarios::random_scenario(fam, n, &mut rng);
    let w = if fam == "car" && rng.random_bool(0.2) { complete(n) } else { w };
    if rng.random_bool(0.5) {
        match &mut spec {
            ModelSpec::Car(p) => match rng.random_range(0..2) {
                0 => p.phi_u = 0.0,
                _ => p.rho = 0.0,
            },
            ModelSpec::Leroux(p) => match rng.random_range(0..4) {
                0 => p.rho = 0.0,
                1 => p.lambda_u = p.lambda_z,
                2 => p.lambda_u = 0.0,
                _ => {
                    if let LerouxCross::NonParsimonious { lambda_uz } = &mut p.cross {
                        *lambda_uz = p.lambda_z;
                    } else {
                        p.lambda_z = 0.0;
                    }
                }
            },
            ModelSpec::Bivariate(p) => match rng.random_range(0..3) {
                0 => p.rho = 0.0,
                1 => p.psi_uz = p.psi_z,
                _ => {
                    p.psi_u = p.psi_z;
                    p.psi_uz = p.psi_z;
                }
            },
            ModelSpec::ParsMatern(p) => p.nu_u = p.nu_z,
            ModelSpec::Lmc(_) => {}
        }
    }
    if spec.observed_moments(&w).is_ok() {
        (spec, w)
    } else {
        scenario(seed.wrapping_add(1))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn verdict_consistency(seed in any::<u64>(), known in any::<bool>()) {
        let (spec, w) = scenario(seed);
        let r = check(&spec, &w, known, &tol()).unwrap();
        prop_assert_eq!(r.verdict == Verdict::IdentifiableUnderTheorem, r.all_pass());
        prop_assert_eq!(r.verdict == Verdict::ProvablyNonIdentifiable, r.construction.is_some());
        prop_assert_eq!(&r, &check(&spec, &w, known, &tol()).unwrap());
        if let Some(name) = &r.construction {
            let c = forge::construct(name, &spec, &w, &ForgeOptions::default()).unwrap();
            prop_assert!(c.valid && c.is_certificate, "{name} {c:?}");
            prop_assert!(c.max_moment_discrepancy <= 1e-8, "{name}: {}", c.max_moment_discrepancy);
        }
    }

    #[test]
    fn non_scalar_coef_implies_conditions(seed in any::<u64>()) {
        let (spec, w) = scenario(seed);
        let t = tol();
        let m = spec.observed_moments(&w).unwrap();
        let d = scaled_identity_diagnostic(&m.coef, 1e-8);
        // Each family's degenerate regimes force a scaled identity; the
        // contrapositive is what the diagnostic is used for.
        let degenerate = match &spec {
            ModelSpec::Car(p) => !t.nonzero(p.phi_u) || !t.nonzero(p.rho),
            ModelSpec::Leroux(p) => match p.lambda_uz() {
                Some(l) => !t.nonzero(p.rho) || !t.differ(l, p.lambda_z),
                None => !t.nonzero(p.rho) || !t.differ(p.lambda_u, p.lambda_z),
            },
            ModelSpec::Bivariate(p) => !t.nonzero(p.rho) || !t.differ(p.psi_uz, p.psi_z),
            _ => false,
        };
        if !d.is_scaled_identity {
            prop_assert!(!degenerate, "{spec:?} max_dev={}", d.max_dev);
        }
        if degenerate {
            prop_assert!(d.is_scaled_identity, "{spec:?} max_dev={}", d.max_dev);
        }
    }
}

#[test]
fn graph_counts_used_by_leroux_match_laplacian() {
    let w = example_graph('c').unwrap();
    let n = graph::count_distinct(&graph::laplacian_spectrum(&w).eigenvalues, 1e-8);
    let r = check_leroux(&leroux(0.3, 0.6, 0.4, LerouxCross::Parsimonious), &w, &tol());
    assert_eq!(r.condition("laplacian_distinct_eigenvalues").unwrap().measured, n as f64);
}
