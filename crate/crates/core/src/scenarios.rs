//! Random graphs and parameter draws for property tests and scenario runs.
//! Every draw is rejection-sampled until the model is positive definite.

use nalgebra::DMatrix;
use rand::Rng;

use crate::graph::{self, ProximityMatrix};
use crate::models::{
    BivariateParams, CarSPParams, LerouxCross, LerouxParams, LmcParams, ModelSpec,
    ParsMaternParams,
};
use crate::specfun::CovFamily;

/// Connected weighted graph: a ring backbone plus random chords. Weights are
/// 1 when `binary`, otherwise uniform on `[0.5, 2]`.
pub fn random_connected_graph<R: Rng>(n: usize, binary: bool, rng: &mut R) -> ProximityMatrix {
    assert!(n >= 3);
    let mut m = DMatrix::zeros(n, n);
    let weight = |rng: &mut R| if binary { 1.0 } else { rng.random_range(0.5..2.0) };
    for i in 0..n {
        let j = (i + 1) % n;
        let x = weight(rng);
        m[(i, j)] = x;
        m[(j, i)] = x;
    }
    for i in 0..n {
        for j in (i + 2)..n {
            if m[(i, j)] == 0.0 && rng.random_bool(0.25) {
                let x = weight(rng);
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
    }
    ProximityMatrix::new(m).expect("generated graph is valid")
}

/// Graph with no isolated nodes that may have several components: random
/// disjoint rings/edges.
pub fn random_graph<R: Rng>(n: usize, rng: &mut R) -> ProximityMatrix {
    if n < 4 || rng.random_bool(0.6) {
        return random_connected_graph(n.max(3), rng.random_bool(0.5), rng);
    }
    let split = rng.random_range(2..=n - 2);
    let mut m = DMatrix::zeros(n, n);
    for (lo, hi) in [(0, split), (split, n)] {
        let len = hi - lo;
        let sub = if len >= 3 {
            random_connected_graph(len, rng.random_bool(0.5), rng).entries().clone()
        } else {
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        };
        m.view_mut((lo, lo), (len, len)).copy_from(&sub);
    }
    ProximityMatrix::new(m).expect("generated graph is valid")
}

/// Distance matrix of `n` uniform points in `[0, side]²`.
pub fn random_distances<R: Rng>(n: usize, side: f64, rng: &mut R) -> ProximityMatrix {
    loop {
        let coords = DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..side));
        let w = graph::distance_matrix(&coords).expect("finite coordinates");
        let min_off = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| w.get(i, j))
            .fold(f64::INFINITY, f64::min);
        if min_off > 1e-3 * side {
            return w;
        }
    }
}

fn sym<R: Rng>(rng: &mut R, r: f64) -> f64 {
    rng.random_range(-r..r)
}

pub fn random_car<R: Rng>(w: &ProximityMatrix, rng: &mut R) -> CarSPParams {
    loop {
        let p = CarSPParams {
            tau_u: rng.random_range(0.5..2.0),
            tau_z: rng.random_range(0.5..2.0),
            phi_u: sym(rng, 0.9),
            phi_z: sym(rng, 0.9),
            rho: sym(rng, 0.8),
            sigma2_eps: rng.random_range(0.2..1.0),
            beta: sym(rng, 2.0),
        };
        if ModelSpec::Car(p).observed_moments(w).is_ok() {
            return p;
        }
    }
}

pub fn random_leroux<R: Rng>(w: &ProximityMatrix, parsimonious: bool, rng: &mut R) -> LerouxParams {
    loop {
        let p = LerouxParams {
            sigma_u: rng.random_range(0.5..2.0),
            sigma_z: rng.random_range(0.5..2.0),
            lambda_u: rng.random_range(0.0..0.95),
            lambda_z: rng.random_range(0.0..0.95),
            rho: sym(rng, 0.9),
            sigma2_eps: rng.random_range(0.2..1.0),
            beta: sym(rng, 2.0),
            cross: if parsimonious {
                LerouxCross::Parsimonious
            } else {
                LerouxCross::NonParsimonious {
                    lambda_uz: rng.random_range(0.0..0.95),
                }
            },
        };
        if ModelSpec::Leroux(p).observed_moments(w).is_ok() {
            return p;
        }
    }
}

pub fn random_lmc<R: Rng>(w: &ProximityMatrix, t: usize, rng: &mut R) -> LmcParams {
    loop {
        let mut a: Vec<f64> = (0..t).map(|_| sym(rng, 1.5)).collect();
        for x in &mut a {
            if x.abs() < 0.3 {
                *x += 0.3f64.copysign(*x);
            }
        }
        let p = LmcParams {
            a,
            b: (0..t).map(|_| sym(rng, 1.5)).collect(),
            phi: (0..t).map(|_| rng.random_range(0.5..3.0)).collect(),
            covariance: CovFamily::Exponential,
            sigma2_eps: rng.random_range(0.2..1.0),
            beta: sym(rng, 2.0),
        };
        if ModelSpec::Lmc(p.clone()).observed_moments(w).is_ok() {
            return p;
        }
    }
}

pub fn random_bivariate<R: Rng>(w: &ProximityMatrix, covariance: CovFamily, rng: &mut R) -> BivariateParams {
    loop {
        let p = BivariateParams {
            sigma_u: rng.random_range(0.5..2.0),
            sigma_z: rng.random_range(0.5..2.0),
            psi_u: rng.random_range(0.3..2.0),
            psi_z: rng.random_range(0.3..2.0),
            psi_uz: rng.random_range(0.3..2.0),
            rho: sym(rng, 0.9),
            sigma2_eps: rng.random_range(0.2..1.0),
            beta: sym(rng, 2.0),
            covariance,
        };
        if ModelSpec::Bivariate(p).observed_moments(w).is_ok() {
            return p;
        }
    }
}

pub fn random_pars_matern<R: Rng>(w: &ProximityMatrix, rng: &mut R) -> ParsMaternParams {
    loop {
        let p = ParsMaternParams {
            sigma_u: rng.random_range(0.5..2.0),
            sigma_z: rng.random_range(0.5..2.0),
            phi: rng.random_range(0.3..2.0),
            nu_u: rng.random_range(0.3..2.5),
            nu_z: rng.random_range(0.3..2.5),
            rho: sym(rng, 0.7),
            sigma2_eps: rng.random_range(0.2..1.0),
            beta: sym(rng, 2.0),
        };
        if ModelSpec::ParsMatern(p).observed_moments(w).is_ok() {
            return p;
        }
    }
}

/// One random spec of the named family together with a suitable matrix:
/// adjacency for `car`/`leroux`, distances otherwise.
pub fn random_scenario<R: Rng>(family: &str, n: usize, rng: &mut R) -> (ModelSpec, ProximityMatrix) {
    match family {
        "car" => {
            let w = random_graph(n, rng);
            (ModelSpec::Car(random_car(&w, rng)), w)
        }
        "leroux" | "leroux_pars" => {
            let w = random_connected_graph(n, rng.random_bool(0.5), rng);
            let p = random_leroux(&w, family == "leroux_pars", rng);
            (ModelSpec::Leroux(p), w)
        }
        "lmc" => {
            let w = random_distances(n, 3.0, rng);
            (ModelSpec::Lmc(random_lmc(&w, 2, rng)), w)
        }
        "bivariate" => {
            let w = random_distances(n, 3.0, rng);
            let fam = match rng.random_range(0..3) {
                0 => CovFamily::Exponential,
                1 => CovFamily::Gaussian,
                _ => CovFamily::PoweredExponential { c: rng.random_range(0.5..1.5) },
            };
            (ModelSpec::Bivariate(random_bivariate(&w, fam, rng)), w)
        }
        "pars_matern" => {
            let w = random_distances(n, 3.0, rng);
            (ModelSpec::ParsMatern(random_pars_matern(&w, rng)), w)
        }
        other => panic!("unknown family {other}"),
    }
}

/// Family names accepted by [`random_scenario`].
pub const FAMILIES: [&str; 6] = ["car", "leroux", "leroux_pars", "lmc", "bivariate", "pars_matern"];

/// Random spec inside the degenerate regime of the named construction from
/// [`crate::forge::CONSTRUCTIONS`], with its matrix. Panics on unknown names.
pub fn construction_scenario<R: Rng>(name: &str, n: usize, rng: &mut R) -> (ModelSpec, ProximityMatrix) {
    loop {
        let (spec, w) = raw_construction_scenario(name, n, rng);
        if spec.observed_moments(&w).is_ok() {
            return (spec, w);
        }
    }
}

fn raw_construction_scenario<R: Rng>(name: &str, n: usize, rng: &mut R) -> (ModelSpec, ProximityMatrix) {
    match name {
        "car_phi0" => {
            let w = random_graph(n, rng);
            let mut p = random_car(&w, rng);
            p.phi_u = 0.0;
            (ModelSpec::Car(p), w)
        }
        "car_fullyconnected" => {
            let w = graph::complete(n);
            let mut p = random_car(&w, rng);
            if p.phi_u.abs() < 0.05 {
                p.phi_u = 0.2;
            }
            // The attainable beta gap shrinks with |rho|.
            if p.rho.abs() < 0.2 {
                p.rho = 0.2_f64.copysign(p.rho) + 0.1 * p.rho;
            }
            (ModelSpec::Car(p), w)
        }
        "leroux_flex_equal_lambda" | "leroux_rho0" => {
            let w = random_connected_graph(n, rng.random_bool(0.5), rng);
            let mut p = random_leroux(&w, false, rng);
            if name == "leroux_flex_equal_lambda" {
                p.cross = LerouxCross::NonParsimonious { lambda_uz: p.lambda_z };
                if p.rho.abs() < 0.2 {
                    p.rho = 0.2_f64.copysign(p.rho) + 0.1 * p.rho;
                }
            } else {
                p.rho = 0.0;
                match rng.random_range(0..3) {
                    0 => p.lambda_u = p.lambda_z,
                    1 => p.lambda_z = 0.0,
                    _ => p.lambda_u = 0.0,
                }
            }
            (ModelSpec::Leroux(p), w)
        }
        "leroux_pars" => {
            let w = random_connected_graph(n, rng.random_bool(0.5), rng);
            let mut p = random_leroux(&w, true, rng);
            if rng.random_bool(0.5) {
                p.lambda_u = p.lambda_z;
            } else {
                p.rho = 0.0;
                p.lambda_u = 0.0;
            }
            (ModelSpec::Leroux(p), w)
        }
        "lmc" => {
            let w = random_distances(n, 3.0, rng);
            let t = rng.random_range(1..=3);
            (ModelSpec::Lmc(random_lmc(&w, t, rng)), w)
        }
        "bivariate_rho0" => {
            let w = random_distances(n, 3.0, rng);
            let mut p = random_bivariate(&w, CovFamily::Exponential, rng);
            p.psi_u = p.psi_z;
            p.psi_uz = p.psi_z;
            if rng.random_bool(0.5) {
                p.rho = 0.0;
            }
            (ModelSpec::Bivariate(p), w)
        }
        other => panic!("unknown construction {other}"),
    }
}
