//! Dense, location-domain moment oracle shared by the integration tests.
//! Everything is written out from the model definitions with general
//! inverses, independently of the spectral code paths.

#![allow(dead_code)]

use nalgebra::DMatrix;
use spatial_ident::graph::{self, ProximityMatrix};
use spatial_ident::models::{car_joint_precision, LerouxCross, ModelSpec};
use spatial_ident::specfun::cov_eval;

pub struct Dense {
    pub var_z: DMatrix<f64>,
    pub cov_yz: DMatrix<f64>,
    pub var_y: DMatrix<f64>,
}

impl Dense {
    pub fn max_diff(&self, other: &Dense) -> f64 {
        let d = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax();
        d(&self.var_z, &other.var_z)
            .max(d(&self.cov_yz, &other.cov_yz))
            .max(d(&self.var_y, &other.var_y))
    }
}

fn sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|x| x.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

fn leroux_cov(w: &ProximityMatrix, lambda: f64) -> DMatrix<f64> {
    let n = w.n();
    (DMatrix::identity(n, n) * (1.0 - lambda) + graph::laplacian(w) * lambda)
        .try_inverse()
        .unwrap()
}

fn cov_matrix(f: impl Fn(f64) -> f64, w: &ProximityMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(w.n(), w.n(), |i, j| f(w.get(i, j)))
}

/// `(Σ_UU, Σ_UZ, Σ_ZZ)` in location coordinates.
pub fn dense_blocks(spec: &ModelSpec, w: &ProximityMatrix) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = w.n();
    match spec {
        ModelSpec::Car(p) => {
            let s = car_joint_precision(p, w).unwrap().try_inverse().unwrap();
            (
                s.view((0, 0), (n, n)).into_owned(),
                s.view((0, n), (n, n)).into_owned(),
                s.view((n, n), (n, n)).into_owned(),
            )
        }
        ModelSpec::Leroux(p) => {
            let cu = leroux_cov(w, p.lambda_u);
            let cz = leroux_cov(w, p.lambda_z);
            let cuz = match p.cross {
                LerouxCross::NonParsimonious { lambda_uz } => leroux_cov(w, lambda_uz),
                LerouxCross::Parsimonious => sqrt_spd(&cu) * sqrt_spd(&cz),
            };
            (
                cu * p.sigma_u.powi(2),
                cuz * (p.rho * p.sigma_u * p.sigma_z),
                cz * p.sigma_z.powi(2),
            )
        }
        ModelSpec::Lmc(p) => {
            let mut uu = DMatrix::zeros(n, n);
            let mut uz = DMatrix::zeros(n, n);
            let mut zz = DMatrix::zeros(n, n);
            for t in 0..p.t() {
                let c = cov_matrix(|d| cov_eval(p.covariance, p.phi[t], d).unwrap(), w);
                uu += &c * (p.b[t] * p.b[t]);
                uz += &c * (p.b[t] * p.a[t]);
                zz += &c * (p.a[t] * p.a[t]);
            }
            (uu, uz, zz)
        }
        ModelSpec::Bivariate(p) => {
            let c = |psi: f64| cov_matrix(|d| cov_eval(p.covariance, psi, d).unwrap(), w);
            (
                c(p.psi_u) * p.sigma_u.powi(2),
                c(p.psi_uz) * (p.rho * p.sigma_u * p.sigma_z),
                c(p.psi_z) * p.sigma_z.powi(2),
            )
        }
        ModelSpec::ParsMatern(p) => {
            let c = |nu: f64| cov_matrix(|d| spatial_ident::specfun::matern(p.phi, nu, d).unwrap(), w);
            (
                c(p.nu_u) * p.sigma_u.powi(2),
                c(p.nu_cross()) * (p.rho * p.sigma_u * p.sigma_z),
                c(p.nu_z) * p.sigma_z.powi(2),
            )
        }
    }
}

/// `(Var Z, Cov(Y, Z), Var Y)` from the joint form of the outcome model.
pub fn dense_moments(spec: &ModelSpec, w: &ProximityMatrix) -> Dense {
    let (uu, uz, zz) = dense_blocks(spec, w);
    let n = w.n();
    let beta = spec.beta();
    let cov_yz = &zz * beta + &uz;
    let var_y = &zz * (beta * beta)
        + &uu
        + (&uz + uz.transpose()) * beta
        + DMatrix::identity(n, n) * spec.sigma2_eps();
    Dense { var_z: zz, cov_yz, var_y }
}
