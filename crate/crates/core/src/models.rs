//! Model families, joint `(U, Z)` covariances and the observed-moment maps.
//!
//! Every family is a joint Gaussian model for the confounder `U` and the
//! treatment `Z` over `n` locations, observed through
//! `Y = Z beta + U + eps` with `eps ~ N(0, sigma2_eps I)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, ProximityMatrix};
use crate::linalg::{self, COND_WARN};
use crate::specfun::CovFamily;

/// CAR model with a cross-precision term between `U` and `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarSPParams {
    pub tau_u: f64,
    pub tau_z: f64,
    pub phi_u: f64,
    pub phi_z: f64,
    pub rho: f64,
    pub sigma2_eps: f64,
    pub beta: f64,
}

/// Cross-covariance structure of the Leroux model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LerouxCross {
    /// Cross block `ρσ_Uσ_Z{(1−λ_UZ)I + λ_UZ Ω}^{-1}` with its own `λ_UZ`.
    NonParsimonious { lambda_uz: f64 },
    /// Cross block `ρσ_Uσ_Z{(1−λ_U)I + λ_U Ω}^{-1/2}{(1−λ_Z)I + λ_Z Ω}^{-1/2}`.
    Parsimonious,
}

/// Leroux CAR model. On the wire, `lambda_uz` present means the
/// non-parsimonious cross structure and absent means parsimonious.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "LerouxRepr", into = "LerouxRepr")]
pub struct LerouxParams {
    pub sigma_u: f64,
    pub sigma_z: f64,
    pub lambda_u: f64,
    pub lambda_z: f64,
    pub rho: f64,
    pub sigma2_eps: f64,
    pub beta: f64,
    pub cross: LerouxCross,
}

#[derive(Serialize, Deserialize)]
struct LerouxRepr {
    sigma_u: f64,
    sigma_z: f64,
    lambda_u: f64,
    lambda_z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda_uz: Option<f64>,
    rho: f64,
    sigma2_eps: f64,
    beta: f64,
}

impl From<LerouxRepr> for LerouxParams {
    fn from(r: LerouxRepr) -> Self {
        Self {
            sigma_u: r.sigma_u,
            sigma_z: r.sigma_z,
            lambda_u: r.lambda_u,
            lambda_z: r.lambda_z,
            rho: r.rho,
            sigma2_eps: r.sigma2_eps,
            beta: r.beta,
            cross: match r.lambda_uz {
                Some(lambda_uz) => LerouxCross::NonParsimonious { lambda_uz },
                None => LerouxCross::Parsimonious,
            },
        }
    }
}

impl From<LerouxParams> for LerouxRepr {
    fn from(p: LerouxParams) -> Self {
        Self {
            sigma_u: p.sigma_u,
            sigma_z: p.sigma_z,
            lambda_u: p.lambda_u,
            lambda_z: p.lambda_z,
            lambda_uz: p.lambda_uz(),
            rho: p.rho,
            sigma2_eps: p.sigma2_eps,
            beta: p.beta,
        }
    }
}

impl LerouxParams {
    pub fn lambda_uz(&self) -> Option<f64> {
        match self.cross {
            LerouxCross::NonParsimonious { lambda_uz } => Some(lambda_uz),
            LerouxCross::Parsimonious => None,
        }
    }

    pub fn is_parsimonious(&self) -> bool {
        self.cross == LerouxCross::Parsimonious
    }
}

/// Linear model of coregionalization with `T = a.len()` latent processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmcParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub phi: Vec<f64>,
    pub covariance: CovFamily,
    pub sigma2_eps: f64,
    pub beta: f64,
}

/// Bivariate stationary model with separate range parameters for the two
/// marginal blocks and the cross block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateParams {
    pub sigma_u: f64,
    pub sigma_z: f64,
    pub psi_u: f64,
    pub psi_z: f64,
    pub psi_uz: f64,
    pub rho: f64,
    pub sigma2_eps: f64,
    pub beta: f64,
    pub covariance: CovFamily,
}

/// Parsimonious bivariate Matérn: shared range, cross smoothness
/// `(nu_u + nu_z) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParsMaternParams {
    pub sigma_u: f64,
    pub sigma_z: f64,
    pub phi: f64,
    pub nu_u: f64,
    pub nu_z: f64,
    pub rho: f64,
    pub sigma2_eps: f64,
    pub beta: f64,
}

impl ParsMaternParams {
    pub fn nu_cross(&self) -> f64 {
        0.5 * (self.nu_u + self.nu_z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Car(CarSPParams),
    Leroux(LerouxParams),
    Lmc(LmcParams),
    Bivariate(BivariateParams),
    ParsMatern(ParsMaternParams),
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Domain(msg()))
    }
}

fn check_open_unit(name: &str, x: f64) -> Result<()> {
    check(x > -1.0 && x < 1.0, || format!("{name} must lie in (-1, 1), got {x}"))
}

fn check_closed_unit(name: &str, x: f64) -> Result<()> {
    check((-1.0..=1.0).contains(&x), || format!("{name} must lie in [-1, 1], got {x}"))
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    check(x > 0.0 && x.is_finite(), || format!("{name} must be positive, got {x}"))
}

fn check_lambda(name: &str, x: f64) -> Result<()> {
    check((0.0..1.0).contains(&x), || format!("{name} must lie in [0, 1), got {x}"))
}

fn check_finite(name: &str, x: f64) -> Result<()> {
    check(x.is_finite(), || format!("{name} must be finite, got {x}"))
}

impl CarSPParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("tau_u", self.tau_u)?;
        check_positive("tau_z", self.tau_z)?;
        check_open_unit("phi_u", self.phi_u)?;
        check_open_unit("phi_z", self.phi_z)?;
        check_open_unit("rho", self.rho)?;
        check_positive("sigma2_eps", self.sigma2_eps)?;
        check_finite("beta", self.beta)
    }
}

impl LerouxParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("sigma_u", self.sigma_u)?;
        check_positive("sigma_z", self.sigma_z)?;
        check_lambda("lambda_u", self.lambda_u)?;
        check_lambda("lambda_z", self.lambda_z)?;
        if let Some(l) = self.lambda_uz() {
            check_lambda("lambda_uz", l)?;
        }
        check_closed_unit("rho", self.rho)?;
        check_positive("sigma2_eps", self.sigma2_eps)?;
        check_finite("beta", self.beta)
    }
}

impl LmcParams {
    pub fn t(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<()> {
        check(!self.a.is_empty(), || "LMC needs at least one latent process".into())?;
        check(
            self.b.len() == self.a.len() && self.phi.len() == self.a.len(),
            || format!(
                "a, b, phi must have equal length, got {}, {}, {}",
                self.a.len(),
                self.b.len(),
                self.phi.len()
            ),
        )?;
        for (t, &phi) in self.phi.iter().enumerate() {
            check_positive(&format!("phi[{t}]"), phi)?;
            check_finite(&format!("a[{t}]"), self.a[t])?;
            check_finite(&format!("b[{t}]"), self.b[t])?;
        }
        self.covariance.validate()?;
        check_positive("sigma2_eps", self.sigma2_eps)?;
        check_finite("beta", self.beta)
    }
}

impl BivariateParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("sigma_u", self.sigma_u)?;
        check_positive("sigma_z", self.sigma_z)?;
        check_positive("psi_u", self.psi_u)?;
        check_positive("psi_z", self.psi_z)?;
        check_positive("psi_uz", self.psi_uz)?;
        check_closed_unit("rho", self.rho)?;
        self.covariance.validate()?;
        check_positive("sigma2_eps", self.sigma2_eps)?;
        check_finite("beta", self.beta)
    }
}

impl ParsMaternParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("sigma_u", self.sigma_u)?;
        check_positive("sigma_z", self.sigma_z)?;
        check_positive("phi", self.phi)?;
        check_positive("nu_u", self.nu_u)?;
        check_positive("nu_z", self.nu_z)?;
        check_closed_unit("rho", self.rho)?;
        check_positive("sigma2_eps", self.sigma2_eps)?;
        check_finite("beta", self.beta)
    }
}

impl ModelSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            ModelSpec::Car(_) => "car",
            ModelSpec::Leroux(_) => "leroux",
            ModelSpec::Lmc(_) => "lmc",
            ModelSpec::Bivariate(_) => "bivariate",
            ModelSpec::ParsMatern(_) => "pars_matern",
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            ModelSpec::Car(p) => p.beta,
            ModelSpec::Leroux(p) => p.beta,
            ModelSpec::Lmc(p) => p.beta,
            ModelSpec::Bivariate(p) => p.beta,
            ModelSpec::ParsMatern(p) => p.beta,
        }
    }

    pub fn sigma2_eps(&self) -> f64 {
        match self {
            ModelSpec::Car(p) => p.sigma2_eps,
            ModelSpec::Leroux(p) => p.sigma2_eps,
            ModelSpec::Lmc(p) => p.sigma2_eps,
            ModelSpec::Bivariate(p) => p.sigma2_eps,
            ModelSpec::ParsMatern(p) => p.sigma2_eps,
        }
    }

    /// Parameter-domain checks only; positive definiteness is checked when
    /// moments are computed.
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Car(p) => p.validate(),
            ModelSpec::Leroux(p) => p.validate(),
            ModelSpec::Lmc(p) => p.validate(),
            ModelSpec::Bivariate(p) => p.validate(),
            ModelSpec::ParsMatern(p) => p.validate(),
        }
    }

    /// Joint covariance blocks of `(U, Z)` in location coordinates.
    pub fn joint_blocks(&self, w: &ProximityMatrix) -> Result<JointBlocks> {
        match self {
            ModelSpec::Car(p) => car_joint_blocks(p, w),
            ModelSpec::Leroux(p) => leroux_joint_blocks(p, w),
            ModelSpec::Lmc(p) => lmc_joint_blocks(p, w),
            ModelSpec::Bivariate(p) => bivariate_joint_blocks(p, w),
            ModelSpec::ParsMatern(p) => pars_matern_joint_blocks(p, w),
        }
    }

    /// Observed moments in location coordinates, through each family's
    /// dedicated moment map.
    pub fn observed_moments(&self, w: &ProximityMatrix) -> Result<ObservedMoments> {
        match self {
            ModelSpec::Car(p) => car_observed_moments(p, w),
            ModelSpec::Leroux(p) => Ok(leroux_observed_moments(p, w)?.to_locations()),
            ModelSpec::Lmc(p) => lmc_joint_moments(p, w),
            ModelSpec::Bivariate(p) => bivariate_joint_moments(p, w),
            ModelSpec::ParsMatern(p) => pars_matern_joint_moments(p, w),
        }
    }
}

/// Covariance blocks of the latent pair: `uu = Var U`, `uz = Cov(U, Z)`,
/// `zz = Var Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBlocks {
    pub uu: DMatrix<f64>,
    pub uz: DMatrix<f64>,
    pub zz: DMatrix<f64>,
}

impl JointBlocks {
    pub fn n(&self) -> usize {
        self.zz.nrows()
    }

    /// `[[uu, uz], [uzᵀ, zz]]`.
    pub fn assemble(&self) -> DMatrix<f64> {
        linalg::block2(&self.uu, &self.uz, &self.uz.transpose(), &self.zz)
    }
}

/// The identifiable summaries of `(Y, Z)` in both representations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMoments {
    pub var_z: DMatrix<f64>,
    pub cov_yz: DMatrix<f64>,
    pub var_y: DMatrix<f64>,
    pub var_y_given_z: DMatrix<f64>,
    /// `cov_yz · var_z⁻¹`.
    pub coef: DMatrix<f64>,
    pub warnings: Vec<String>,
}

fn cond_warning(cond: f64, what: &str, warnings: &mut Vec<String>) {
    if cond > COND_WARN {
        let msg = format!("{what} is ill-conditioned (condition estimate {cond:.3e})");
        log::warn!("{msg}");
        warnings.push(msg);
    }
}

impl ObservedMoments {
    /// Joint representation: `var_z`, `cov_yz`, `var_y` given directly; the
    /// conditional pieces are derived.
    pub fn from_joint(var_z: DMatrix<f64>, cov_yz: DMatrix<f64>, var_y: DMatrix<f64>) -> Result<Self> {
        let mut warnings = Vec::new();
        let (zinv, cond) = linalg::spd_inverse(&var_z, "Var(Z)")?;
        cond_warning(cond, "Var(Z)", &mut warnings);
        let coef = &cov_yz * &zinv;
        let var_y_given_z = linalg::symmetrize(&(&var_y - &coef * cov_yz.transpose()));
        Ok(Self {
            var_z: linalg::symmetrize(&var_z),
            cov_yz,
            var_y: linalg::symmetrize(&var_y),
            var_y_given_z,
            coef,
            warnings,
        })
    }

    /// Conditional representation: `var_z`, `coef`, `var_y_given_z` given;
    /// `cov_yz` and `var_y` are derived.
    pub fn from_conditional(var_z: DMatrix<f64>, coef: DMatrix<f64>, var_y_given_z: DMatrix<f64>) -> Self {
        let cov_yz = &coef * &var_z;
        let var_y = linalg::symmetrize(&(&var_y_given_z + &cov_yz * coef.transpose()));
        Self {
            var_z: linalg::symmetrize(&var_z),
            cov_yz,
            var_y,
            var_y_given_z: linalg::symmetrize(&var_y_given_z),
            coef,
            warnings: Vec::new(),
        }
    }

    /// Joint form from latent blocks:
    /// `Cov(Y,Z) = βΣ_ZZ + Σ_UZ`, `Var Y = β²Σ_ZZ + Σ_UU + β(Σ_UZ + Σ_UZᵀ) + σ²I`.
    pub fn from_blocks(b: &JointBlocks, beta: f64, sigma2_eps: f64) -> Result<Self> {
        let n = b.n();
        let cov_yz = &b.zz * beta + &b.uz;
        let var_y = &b.zz * (beta * beta)
            + &b.uu
            + (&b.uz + b.uz.transpose()) * beta
            + DMatrix::identity(n, n) * sigma2_eps;
        Self::from_joint(b.zz.clone(), cov_yz, var_y)
    }

    /// Conditional form from latent blocks:
    /// `Var(Y|Z) = Σ_UU − Σ_UZΣ_ZZ⁻¹Σ_ZU + σ²I`, `coef = βI + Σ_UZΣ_ZZ⁻¹`.
    pub fn from_blocks_conditional(b: &JointBlocks, beta: f64, sigma2_eps: f64) -> Result<Self> {
        let n = b.n();
        let mut warnings = Vec::new();
        let (zinv, cond) = linalg::spd_inverse(&b.zz, "Var(Z)")?;
        cond_warning(cond, "Var(Z)", &mut warnings);
        let uz_zinv = &b.uz * &zinv;
        let var_y_given_z =
            &b.uu - &uz_zinv * b.uz.transpose() + DMatrix::identity(n, n) * sigma2_eps;
        let coef = DMatrix::identity(n, n) * beta + uz_zinv;
        let mut out = Self::from_conditional(b.zz.clone(), coef, var_y_given_z);
        out.warnings = warnings;
        Ok(out)
    }

    /// Covariance of the stacked vector `(Y, Z)`.
    pub fn observed_covariance(&self) -> DMatrix<f64> {
        linalg::block2(&self.var_y, &self.cov_yz, &self.cov_yz.transpose(), &self.var_z)
    }

    /// Largest element-wise absolute difference over `var_z`, `cov_yz` and
    /// `var_y`.
    pub fn max_abs_discrepancy(&self, other: &Self) -> f64 {
        linalg::max_abs_diff(&self.var_z, &other.var_z)
            .max(linalg::max_abs_diff(&self.cov_yz, &other.cov_yz))
            .max(linalg::max_abs_diff(&self.var_y, &other.var_y))
    }

    /// Largest relative difference over all five matrices.
    pub fn representation_gap(&self, other: &Self) -> f64 {
        [
            linalg::rel_diff(&self.var_z, &other.var_z),
            linalg::rel_diff(&self.cov_yz, &other.cov_yz),
            linalg::rel_diff(&self.var_y, &other.var_y),
            linalg::rel_diff(&self.var_y_given_z, &other.var_y_given_z),
            linalg::rel_diff(&self.coef, &other.coef),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------- CAR

/// The block precision
/// `[[τ_U(D−φ_U W), −ρ√(τ_Uτ_Z)D], [−ρ√(τ_Uτ_Z)D, τ_Z(D−φ_Z W)]]`.
///
/// Only the precisions are domain-checked here; parameter values that make
/// the matrix indefinite or singular surface as `NotPositiveDefinite`.
pub fn car_joint_precision(p: &CarSPParams, w: &ProximityMatrix) -> Result<DMatrix<f64>> {
    check_positive("tau_u", p.tau_u)?;
    check_positive("tau_z", p.tau_z)?;
    let d = graph::degree_matrix(w);
    d.require_positive()?;
    let dm = d.to_matrix();
    let wm = w.entries();
    let a = (&dm - wm * p.phi_u) * p.tau_u;
    let c = (&dm - wm * p.phi_z) * p.tau_z;
    let b = &dm * (-p.rho * (p.tau_u * p.tau_z).sqrt());
    let q = linalg::block2(&a, &b, &b, &c);
    linalg::cholesky(&q, "CAR joint precision")?;
    Ok(q)
}

/// Per-eigenvalue 2×2 precision entries `(a_i, b_i, c)` in the
/// `D^{1/2}Γ`-rotated frame, where `λ_i` are the eigenvalues of
/// `D^{-1/2} W D^{-1/2}`.
struct CarSpectral {
    /// `D^{-1/2}Γ`.
    left: DMatrix<f64>,
    /// `ΓᵀD^{1/2}`.
    right: DMatrix<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

fn car_spectral(p: &CarSPParams, w: &ProximityMatrix) -> Result<CarSpectral> {
    p.validate()?;
    let d = graph::degree_matrix(w);
    let spec = graph::normalized_spectrum(w, &d)?;
    let sq: Vec<f64> = d.diag.iter().map(|x| x.sqrt()).collect();
    let isq: Vec<f64> = sq.iter().map(|x| 1.0 / x).collect();
    let ones = vec![1.0; w.n()];
    let left = linalg::diag_scale(&isq, &spec.eigenvectors, &ones);
    let right = linalg::diag_scale(&ones, &spec.eigenvectors.transpose(), &sq);
    let a: Vec<f64> = spec.eigenvalues.iter().map(|l| p.tau_u * (1.0 - p.phi_u * l)).collect();
    let b: Vec<f64> = spec.eigenvalues.iter().map(|l| p.tau_z * (1.0 - p.phi_z * l)).collect();
    let c = -p.rho * (p.tau_u * p.tau_z).sqrt();
    for i in 0..a.len() {
        if !(a[i] > 0.0) || !(a[i] * b[i] - c * c > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "CAR precision is not positive definite at eigenvalue {}",
                spec.eigenvalues[i]
            )));
        }
    }
    Ok(CarSpectral { left, right, a, b, c })
}

fn sandwich(left: &DMatrix<f64>, d: &[f64], right: &DMatrix<f64>) -> DMatrix<f64> {
    let mut l = left.clone();
    for (j, dj) in d.iter().enumerate() {
        l.column_mut(j).scale_mut(*dj);
    }
    l * right
}

/// Latent blocks of the CAR model, from the per-eigenvalue 2×2 inverses.
pub fn car_joint_blocks(p: &CarSPParams, w: &ProximityMatrix) -> Result<JointBlocks> {
    let s = car_spectral(p, w)?;
    let det: Vec<f64> = (0..s.a.len()).map(|i| s.a[i] * s.b[i] - s.c * s.c).collect();
    let lt = s.left.transpose();
    let f = |v: Vec<f64>| linalg::symmetrize(&sandwich(&s.left, &v, &lt));
    Ok(JointBlocks {
        uu: f((0..det.len()).map(|i| s.b[i] / det[i]).collect()),
        uz: f((0..det.len()).map(|i| -s.c / det[i]).collect()),
        zz: f((0..det.len()).map(|i| s.a[i] / det[i]).collect()),
    })
}

/// Observed moments of the CAR model via the spectral forms
/// `Var(Z) = D^{-1/2}Γ diag(1/(τ_Z{1−φ_Zλ−ρ²/(1−φ_Uλ)}))ΓᵀD^{-1/2}`,
/// `Var(Y|Z) = D^{-1/2}Γ diag(1/(τ_U(1−φ_Uλ)))ΓᵀD^{-1/2} + σ²I`,
/// `coef = D^{-1/2}Γ{βI + ρ√(τ_Z/τ_U)(I−φ_UΛ)⁻¹}ΓᵀD^{1/2}`.
pub fn car_observed_moments(p: &CarSPParams, w: &ProximityMatrix) -> Result<ObservedMoments> {
    let s = car_spectral(p, w)?;
    let n = s.a.len();
    let lt = s.left.transpose();
    let zz_prec: Vec<f64> = (0..n).map(|i| s.b[i] - s.c * s.c / s.a[i]).collect();
    let var_z = sandwich(&s.left, &zz_prec.iter().map(|x| 1.0 / x).collect::<Vec<_>>(), &lt);
    let ratio = p.rho * (p.tau_z / p.tau_u).sqrt();
    let coef_d: Vec<f64> = (0..n)
        .map(|i| p.beta + ratio * p.tau_u / s.a[i])
        .collect();
    let coef = sandwich(&s.left, &coef_d, &s.right);
    let vyz = sandwich(&s.left, &s.a.iter().map(|x| 1.0 / x).collect::<Vec<_>>(), &lt)
        + DMatrix::identity(n, n) * p.sigma2_eps;
    let mut out = ObservedMoments::from_conditional(var_z, coef, vyz);
    let cmax = zz_prec.iter().cloned().fold(0.0, f64::max);
    let cmin = zz_prec.iter().cloned().fold(f64::INFINITY, f64::min);
    cond_warning(cmax / cmin, "Var(Z)", &mut out.warnings);
    Ok(out)
}

// ---------------------------------------------------------------- Leroux

/// Diagonal observed moments of the Leroux model in the spectral frame of
/// `D − W = P Ω Pᵀ`, together with `P` for mapping back to locations.
#[derive(Debug, Clone, PartialEq)]
pub struct LerouxSpectralMoments {
    pub omega: Vec<f64>,
    pub var_z: Vec<f64>,
    pub coef: Vec<f64>,
    pub var_y_given_z: Vec<f64>,
    pub var_u: Vec<f64>,
    pub cov_uz: Vec<f64>,
    pub p: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl LerouxSpectralMoments {
    pub fn to_locations(&self) -> ObservedMoments {
        let pt = self.p.transpose();
        let mut out = ObservedMoments::from_conditional(
            sandwich(&self.p, &self.var_z, &pt),
            sandwich(&self.p, &self.coef, &pt),
            sandwich(&self.p, &self.var_y_given_z, &pt),
        );
        out.warnings = self.warnings.clone();
        out
    }

    pub fn joint_blocks(&self) -> JointBlocks {
        let pt = self.p.transpose();
        JointBlocks {
            uu: linalg::symmetrize(&sandwich(&self.p, &self.var_u, &pt)),
            uz: linalg::symmetrize(&sandwich(&self.p, &self.cov_uz, &pt)),
            zz: linalg::symmetrize(&sandwich(&self.p, &self.var_z, &pt)),
        }
    }
}

/// `1 − λ + λω`.
pub fn leroux_a(lambda: f64, omega: f64) -> f64 {
    1.0 - lambda + lambda * omega
}

/// Leroux moments per Laplacian eigenvalue `ω`:
/// `var_z = σ_Z²/a_Z`; non-parsimonious `coef = β + ρ(σ_U/σ_Z)a_Z/a_UZ`,
/// `Var(Y|Z) = σ_U²/a_U − ρ²σ_U²a_Z/a_UZ² + σ²`; parsimonious
/// `coef = β + ρ(σ_U/σ_Z)√(a_Z/a_U)`, `Var(Y|Z) = (1−ρ²)σ_U²/a_U + σ²`.
pub fn leroux_observed_moments(p: &LerouxParams, w: &ProximityMatrix) -> Result<LerouxSpectralMoments> {
    p.validate()?;
    let spec = graph::laplacian_spectrum(w);
    let omega = spec.eigenvalues.clone();
    let n = omega.len();
    let (mut var_z, mut coef, mut vyz, mut var_u, mut cov_uz) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (su, sz, rho) = (p.sigma_u, p.sigma_z, p.rho);
    for i in 0..n {
        let au = leroux_a(p.lambda_u, omega[i]);
        let az = leroux_a(p.lambda_z, omega[i]);
        let auz = match p.cross {
            LerouxCross::NonParsimonious { lambda_uz } => leroux_a(lambda_uz, omega[i]),
            LerouxCross::Parsimonious => (au * az).sqrt(),
        };
        if !(au > 0.0 && az > 0.0 && auz > 0.0) {
            return Err(Error::Domain(format!(
                "Leroux precision factor nonpositive at eigenvalue {}",
                omega[i]
            )));
        }
        var_u[i] = su * su / au;
        var_z[i] = sz * sz / az;
        cov_uz[i] = rho * su * sz / auz;
        let schur = var_u[i] - cov_uz[i] * cov_uz[i] / var_z[i];
        // Singular frequencies (|ρ| = 1 with matching shapes) are allowed:
        // Var(Y|Z) stays positive through σ_ε².
        if schur < -1e-12 * var_u[i] {
            return Err(Error::NotPositiveDefinite(format!(
                "Leroux joint covariance indefinite at eigenvalue {} (Schur {schur:e})",
                omega[i]
            )));
        }
        coef[i] = p.beta + cov_uz[i] / var_z[i];
        vyz[i] = schur.max(0.0) + p.sigma2_eps;
    }
    let mut warnings = Vec::new();
    let (zmax, zmin) = var_z
        .iter()
        .fold((0.0_f64, f64::INFINITY), |(hi, lo), &v| (hi.max(v), lo.min(v)));
    cond_warning(zmax / zmin, "Var(Z)", &mut warnings);
    Ok(LerouxSpectralMoments {
        omega,
        var_z,
        coef,
        var_y_given_z: vyz,
        var_u,
        cov_uz,
        p: spec.eigenvectors,
        warnings,
    })
}

pub fn leroux_joint_blocks(p: &LerouxParams, w: &ProximityMatrix) -> Result<JointBlocks> {
    Ok(leroux_observed_moments(p, w)?.joint_blocks())
}

// ---------------------------------------------------------------- LMC

fn lmc_components(p: &LmcParams, w: &ProximityMatrix) -> Result<Vec<DMatrix<f64>>> {
    p.validate()?;
    p.phi
        .iter()
        .map(|&phi| p.covariance.matrix(phi, w.entries()))
        .collect()
}

/// `Σ_UU = Σ b_t²Σ_t`, `Σ_UZ = Σ a_t b_t Σ_t`, `Σ_ZZ = Σ a_t²Σ_t`.
pub fn lmc_joint_blocks(p: &LmcParams, w: &ProximityMatrix) -> Result<JointBlocks> {
    let comps = lmc_components(p, w)?;
    let n = w.n();
    let mut out = JointBlocks {
        uu: DMatrix::zeros(n, n),
        uz: DMatrix::zeros(n, n),
        zz: DMatrix::zeros(n, n),
    };
    for (t, s) in comps.iter().enumerate() {
        out.uu += s * (p.b[t] * p.b[t]);
        out.uz += s * (p.a[t] * p.b[t]);
        out.zz += s * (p.a[t] * p.a[t]);
    }
    Ok(out)
}

/// `Var Z = Σ a_t²Σ_t`, `Cov(Y,Z) = Σ(βa_t+b_t)a_tΣ_t`,
/// `Var Y = σ²I + Σ(βa_t+b_t)²Σ_t`.
pub fn lmc_joint_moments(p: &LmcParams, w: &ProximityMatrix) -> Result<ObservedMoments> {
    let comps = lmc_components(p, w)?;
    let n = w.n();
    let mut var_z = DMatrix::zeros(n, n);
    let mut cov_yz = DMatrix::zeros(n, n);
    let mut var_y = DMatrix::identity(n, n) * p.sigma2_eps;
    for (t, s) in comps.iter().enumerate() {
        let load_y = p.beta * p.a[t] + p.b[t];
        var_z += s * (p.a[t] * p.a[t]);
        cov_yz += s * (load_y * p.a[t]);
        var_y += s * (load_y * load_y);
    }
    ObservedMoments::from_joint(var_z, cov_yz, var_y)
}

// ---------------------------------------------------------------- bivariate

fn require_joint_pd(b: &JointBlocks) -> Result<()> {
    let r = pd_check(&b.uu, &b.uz, &b.zz);
    if r.is_pd {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite(format!(
            "joint covariance not positive definite (Schur min eigenvalue {:e})",
            r.schur_min_eig
        )))
    }
}

/// `Σ_UU = σ_U²C(ψ_U)`, `Σ_ZZ = σ_Z²C(ψ_Z)`, `Σ_UZ = ρσ_Uσ_Z C(ψ_UZ)`.
pub fn bivariate_joint_blocks(p: &BivariateParams, w: &ProximityMatrix) -> Result<JointBlocks> {
    p.validate()?;
    let d = w.entries();
    let b = JointBlocks {
        uu: p.covariance.matrix(p.psi_u, d)? * (p.sigma_u * p.sigma_u),
        uz: p.covariance.matrix(p.psi_uz, d)? * (p.rho * p.sigma_u * p.sigma_z),
        zz: p.covariance.matrix(p.psi_z, d)? * (p.sigma_z * p.sigma_z),
    };
    require_joint_pd(&b)?;
    Ok(b)
}

pub fn pars_matern_joint_blocks(p: &ParsMaternParams, w: &ProximityMatrix) -> Result<JointBlocks> {
    p.validate()?;
    let d = w.entries();
    let fam = |nu| CovFamily::Matern { nu };
    let b = JointBlocks {
        uu: fam(p.nu_u).matrix(p.phi, d)? * (p.sigma_u * p.sigma_u),
        uz: fam(p.nu_cross()).matrix(p.phi, d)? * (p.rho * p.sigma_u * p.sigma_z),
        zz: fam(p.nu_z).matrix(p.phi, d)? * (p.sigma_z * p.sigma_z),
    };
    require_joint_pd(&b)?;
    Ok(b)
}

pub fn bivariate_joint_moments(p: &BivariateParams, w: &ProximityMatrix) -> Result<ObservedMoments> {
    ObservedMoments::from_blocks(&bivariate_joint_blocks(p, w)?, p.beta, p.sigma2_eps)
}

pub fn pars_matern_joint_moments(p: &ParsMaternParams, w: &ProximityMatrix) -> Result<ObservedMoments> {
    ObservedMoments::from_blocks(&pars_matern_joint_blocks(p, w)?, p.beta, p.sigma2_eps)
}

// ---------------------------------------------------------------- PD

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdReport {
    pub is_pd: bool,
    /// Smallest eigenvalue of `Σ_UU − Σ_UZΣ_ZZ⁻¹Σ_ZU`; `-inf` when `Σ_ZZ`
    /// itself is not positive definite.
    pub schur_min_eig: f64,
    /// `λ_min(Σ_UU)·λ_min(Σ_ZZ) > σ_max(Σ_UZ)²`, which implies `is_pd`.
    pub sufficient_bound_holds: bool,
}

/// Positive definiteness of `[[Σ_UU, Σ_UZ], [Σ_UZᵀ, Σ_ZZ]]` through
/// `Σ_ZZ` and its Schur complement, plus the eigenvalue sufficient bound.
pub fn pd_check(uu: &DMatrix<f64>, uz: &DMatrix<f64>, zz: &DMatrix<f64>) -> PdReport {
    let bound = {
        let lu = linalg::min_eigenvalue(uu);
        let lz = linalg::min_eigenvalue(zz);
        let smax = uz.singular_values().iter().cloned().fold(0.0, f64::max);
        lu > 0.0 && lz > 0.0 && lu * lz > smax * smax
    };
    let Ok(ch) = linalg::cholesky(zz, "Σ_ZZ") else {
        return PdReport {
            is_pd: false,
            schur_min_eig: f64::NEG_INFINITY,
            sufficient_bound_holds: bound,
        };
    };
    let x = ch.solve(&uz.transpose());
    let schur = linalg::symmetrize(&(uu - uz * x));
    PdReport {
        is_pd: linalg::is_pd(&schur),
        schur_min_eig: linalg::min_eigenvalue(&schur),
        sufficient_bound_holds: bound,
    }
}
