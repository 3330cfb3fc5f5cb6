//! Closed-form observationally equivalent alternatives.
//!
//! Each construction maps a spec in a non-identified regime to a second spec
//! with a different `beta` and the same distribution of `(Y, Z)`. The match
//! is never taken on trust: both specs go through the model module's moment
//! maps and the largest element-wise difference is recorded.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, ProximityMatrix};
use crate::identify::Tolerances;
use crate::models::{
    BivariateParams, CarSPParams, LerouxCross, LerouxParams, LmcParams, ModelSpec,
};

/// Discrepancy bound a valid certificate must meet.
pub const MATCH_TOL: f64 = 1e-8;

/// Smallest `beta` gap that counts as a non-identifiability certificate.
pub const MIN_GAP: f64 = 1e-6;

/// Names accepted by [`construct`].
pub const CONSTRUCTIONS: [&str; 7] = [
    "car_phi0",
    "car_fullyconnected",
    "leroux_flex_equal_lambda",
    "leroux_rho0",
    "leroux_pars",
    "lmc",
    "bivariate_rho0",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCertificate {
    pub construction: String,
    pub original: ModelSpec,
    pub alternative: ModelSpec,
    /// `|β̃ − β|`.
    pub beta_gap: f64,
    /// Largest element-wise absolute difference over `Var Z`, `Cov(Y, Z)`
    /// and `Var Y`.
    pub max_moment_discrepancy: f64,
    /// The alternative lies in the parameter domain and is positive definite.
    pub valid: bool,
    pub is_certificate: bool,
    /// Free parameters the construction used (`delta`, `b`, `rho_tilde`, ...).
    pub free_parameters: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

/// Free parameters of the constructions. Anything left `None` gets a default
/// aimed at `beta_gap ≈ 0.5·|β| + 0.1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgeOptions {
    pub delta: Option<f64>,
    pub zeta: Option<f64>,
    pub b: Option<f64>,
    pub rho_tilde: Option<f64>,
    pub beta_tilde: Option<f64>,
    pub target_gap: Option<f64>,
    /// Half-width of the `beta_tilde` search in `bivariate_rho0`.
    pub search_radius: Option<f64>,
}

impl ForgeOptions {
    fn gap(&self, beta: f64) -> f64 {
        self.target_gap.unwrap_or(0.5 * beta.abs() + 0.1)
    }

    fn zeta(&self) -> Result<f64> {
        match self.zeta {
            None => Ok(1.0),
            Some(z) if z == 1.0 || z == -1.0 => Ok(z),
            Some(z) => Err(Error::Precondition(format!("zeta must be 1 or -1, got {z}"))),
        }
    }
}

type Free = BTreeMap<String, f64>;

fn free(pairs: &[(&str, f64)]) -> Free {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Evaluates both specs and builds the certificate. An alternative outside
/// the domain or the positive definite region is an `InvalidRegion` error.
fn certify(
    construction: &str,
    original: ModelSpec,
    alternative: ModelSpec,
    w: &ProximityMatrix,
    free_parameters: Free,
) -> Result<EquivalenceCertificate> {
    let m0 = original.observed_moments(w)?;
    alternative
        .validate()
        .map_err(|e| Error::InvalidRegion(format!("{construction}: {e}")))?;
    let m1 = alternative.observed_moments(w).map_err(|e| match e {
        Error::NotPositiveDefinite(msg) | Error::Domain(msg) => {
            Error::InvalidRegion(format!("{construction}: {msg}"))
        }
        other => other,
    })?;
    let beta_gap = (alternative.beta() - original.beta()).abs();
    let mut notes = Vec::new();
    if beta_gap <= MIN_GAP {
        notes.push("beta unchanged: degenerate choice, not a certificate".into());
    }
    Ok(EquivalenceCertificate {
        construction: construction.into(),
        max_moment_discrepancy: m0.max_abs_discrepancy(&m1),
        beta_gap,
        valid: true,
        is_certificate: beta_gap > MIN_GAP,
        original,
        alternative,
        free_parameters,
        notes,
    })
}

/// Recomputes the discrepancy of a stored certificate. `valid` turns false
/// when either spec no longer evaluates.
pub fn verify(cert: &EquivalenceCertificate, w: &ProximityMatrix) -> EquivalenceCertificate {
    let mut out = cert.clone();
    let m0 = cert.original.observed_moments(w);
    let m1 = cert.alternative.validate().and_then(|_| cert.alternative.observed_moments(w));
    match (m0, m1) {
        (Ok(a), Ok(b)) => {
            out.max_moment_discrepancy = a.max_abs_discrepancy(&b);
            out.valid = true;
        }
        _ => {
            out.max_moment_discrepancy = f64::INFINITY;
            out.valid = false;
        }
    }
    out.beta_gap = (cert.alternative.beta() - cert.original.beta()).abs();
    out.is_certificate = out.valid && out.beta_gap > MIN_GAP;
    out
}

/// CAR with `φ_U = 0`: rescale the `Z` precision by `δ` and move the
/// correlation into `β`.
pub fn car_phi0_alternative(
    p: &CarSPParams,
    w: &ProximityMatrix,
    opts: &ForgeOptions,
) -> Result<EquivalenceCertificate> {
    p.validate()?;
    if Tolerances::default().nonzero(p.phi_u) {
        return Err(Error::CaseNotApplicable(format!("car_phi0 needs phi_u = 0, got {}", p.phi_u)));
    }
    let k = (p.tau_z / p.tau_u).sqrt();
    let floor = 1.0 - p.rho * p.rho;
    let (delta, zeta) = match opts.delta {
        Some(d) => (d, opts.zeta()?),
        None => {
            // Solve |ρ − ζs|·k = gap for s = √(δ − (1 − ρ²)).
            let zeta = match opts.zeta {
                Some(_) => opts.zeta()?,
                None if p.rho < 0.0 => -1.0,
                None => 1.0,
            };
            let g = opts.gap(p.beta) / k;
            let s = if zeta * p.rho >= 0.0 { p.rho.abs() + g } else { g - p.rho.abs() };
            if s <= 0.0 {
                return Err(Error::Precondition(format!(
                    "target gap too small for zeta = {zeta} at rho = {}",
                    p.rho
                )));
            }
            (s * s + floor, zeta)
        }
    };
    if delta <= 0.0 {
        return Err(Error::Precondition(format!("delta must be positive, got {delta}")));
    }
    if delta <= floor {
        return Err(Error::InvalidRegion(format!("delta = {delta} must exceed 1 - rho^2 = {floor}")));
    }
    let rho_t = zeta * ((delta - floor) / delta).sqrt();
    let alt = CarSPParams {
        tau_z: delta * p.tau_z,
        phi_z: p.phi_z / delta,
        rho: rho_t,
        beta: p.beta + (p.rho - delta.sqrt() * rho_t) * k,
        ..*p
    };
    certify("car_phi0", ModelSpec::Car(*p), ModelSpec::Car(alt), w, free(&[("delta", delta), ("zeta", zeta)]))
}

/// The seven tilded parameters of the fully connected construction, or
/// `None` when `b` leaves them undefined.
fn car_full_params(p: &CarSPParams, n: usize, b: f64) -> Option<CarSPParams> {
    let m = (n - 1) as f64;
    let (pu, r2, tz) = (p.phi_u, p.rho * p.rho, p.tau_z);
    let r = ((1.0 + pu / m).recip() - (1.0 - pu).recip())
        / ((1.0 + b * pu / m).recip() - (1.0 - b * pu).recip());
    let b1 = tz + tz * p.phi_z / m - r2 * tz / (1.0 + pu / m) + r * r2 * tz / (1.0 + b * pu / m);
    let b2 = tz - tz * p.phi_z - r2 * tz / (1.0 - pu) + r * r2 * tz / (1.0 - b * pu);
    let tau_z = (m * b1 + b2) / n as f64;
    let k = (p.tau_z / p.tau_u).sqrt();
    let alt = CarSPParams {
        tau_u: p.tau_u / r,
        tau_z,
        phi_u: b * pu,
        phi_z: (b1 - b2) / (b2 / m + b1),
        rho: p.rho * (r * p.tau_z / tau_z).sqrt(),
        sigma2_eps: ((1.0 - pu).recip() - r / (1.0 - b * pu)) / (m * p.tau_u) + p.sigma2_eps,
        beta: p.beta + p.rho * k / (1.0 - pu) - r * p.rho * k / (1.0 - b * pu),
    };
    let finite = [alt.tau_u, alt.tau_z, alt.phi_u, alt.phi_z, alt.rho, alt.sigma2_eps, alt.beta]
        .iter()
        .all(|x| x.is_finite());
    finite.then_some(alt)
}

/// CAR on a fully connected binary graph: scale `φ_U` by `b` and solve for
/// the remaining parameters. Without an explicit `b`, a grid around 1 is
/// scanned for the valid value whose gap is closest to the target.
pub fn car_fullyconnected_alternative(
    p: &CarSPParams,
    w: &ProximityMatrix,
    opts: &ForgeOptions,
) -> Result<EquivalenceCertificate> {
    p.validate()?;
    let n = w.n();
    if n < 2 || !w.is_binary() || !w.is_complete_binary() {
        return Err(Error::CaseNotApplicable("car_fullyconnected needs a fully connected binary graph".into()));
    }
    if p.phi_u == 0.0 || p.rho == 0.0 {
        return Err(Error::CaseNotApplicable("car_fullyconnected needs phi_u != 0 and rho != 0".into()));
    }
    let build = |b: f64| -> Result<EquivalenceCertificate> {
        let alt = car_full_params(p, n, b)
            .ok_or_else(|| Error::InvalidRegion(format!("car_fullyconnected: b = {b} gives undefined parameters")))?;
        certify("car_fullyconnected", ModelSpec::Car(*p), ModelSpec::Car(alt), w, free(&[("b", b)]))
    };
    if let Some(b) = opts.b {
        return build(b);
    }
    let target = opts.gap(p.beta);
    let mut best: Option<EquivalenceCertificate> = None;
    for j in 1..=400 {
        for sign in [1.0, -1.0] {
            let b = 1.0 + sign * 0.005 * j as f64;
            if let Ok(c) = build(b) {
                if c.max_moment_discrepancy > MATCH_TOL || !c.is_certificate {
                    continue;
                }
                let better = best
                    .as_ref()
                    .is_none_or(|o| (c.beta_gap - target).abs() < (o.beta_gap - target).abs());
                if better {
                    best = Some(c);
                }
            }
        }
    }
    best.ok_or_else(|| Error::InvalidRegion("car_fullyconnected: no valid b in [-1, 3]".into()))
}

fn leroux_nonpars(p: &LerouxParams) -> Result<f64> {
    p.lambda_uz()
        .ok_or_else(|| Error::CaseNotApplicable("needs the non-parsimonious cross structure".into()))
}

/// Non-parsimonious Leroux with `λ_UZ = λ_Z`: flip the sign of `ρ`.
pub fn leroux_flex_equal_lambda_alternative(
    p: &LerouxParams,
    w: &ProximityMatrix,
) -> Result<EquivalenceCertificate> {
    p.validate()?;
    let luz = leroux_nonpars(p)?;
    let tol = Tolerances::default();
    if tol.differ(luz, p.lambda_z) {
        return Err(Error::CaseNotApplicable(format!(
            "leroux_flex_equal_lambda needs lambda_uz = lambda_z, got {luz} and {}",
            p.lambda_z
        )));
    }
    if !tol.nonzero(p.rho) {
        return Err(Error::Precondition("leroux_flex_equal_lambda needs rho != 0".into()));
    }
    let alt = LerouxParams {
        rho: -p.rho,
        beta: p.beta + 2.0 * p.rho * p.sigma_u / p.sigma_z,
        ..*p
    };
    certify("leroux_flex_equal_lambda", ModelSpec::Leroux(*p), ModelSpec::Leroux(alt), w, Free::new())
}

/// Which degeneracy of `(λ_U, λ_Z, 0)` a `ρ = 0` spec falls under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rho0Case {
    EqualLambdas,
    LambdaZZero,
    LambdaUZero,
}

pub fn leroux_rho0_case(p: &LerouxParams) -> Option<Rho0Case> {
    let tol = Tolerances::default();
    if !tol.differ(p.lambda_u, p.lambda_z) {
        Some(Rho0Case::EqualLambdas)
    } else if !tol.nonzero(p.lambda_z) {
        Some(Rho0Case::LambdaZZero)
    } else if !tol.nonzero(p.lambda_u) {
        Some(Rho0Case::LambdaUZero)
    } else {
        None
    }
}

/// Non-parsimonious Leroux with `ρ = 0` and `(λ_U, λ_Z, 0)` not mutually
/// distinct. The first matching case is used when several hold.
pub fn leroux_rho0_alternative(
    p: &LerouxParams,
    w: &ProximityMatrix,
    opts: &ForgeOptions,
) -> Result<EquivalenceCertificate> {
    p.validate()?;
    leroux_nonpars(p)?;
    if Tolerances::default().nonzero(p.rho) {
        return Err(Error::CaseNotApplicable(format!("leroux_rho0 needs rho = 0, got {}", p.rho)));
    }
    let case = leroux_rho0_case(p).ok_or_else(|| {
        Error::CaseNotApplicable("leroux_rho0: lambda_u, lambda_z and 0 are mutually distinct".into())
    })?;
    let gap = opts.gap(p.beta);
    let base = LerouxParams {
        cross: LerouxCross::NonParsimonious { lambda_uz: p.lambda_z },
        ..*p
    };
    let (alt, fp) = match case {
        Rho0Case::EqualLambdas => {
            let rt = opts.rho_tilde.unwrap_or_else(|| {
                let q = gap * p.sigma_z / p.sigma_u;
                q / (1.0 + q * q).sqrt()
            });
            if rt.abs() >= 1.0 {
                return Err(Error::InvalidRegion(format!("rho_tilde = {rt} must lie in (-1, 1)")));
            }
            let su = p.sigma_u / (1.0 - rt * rt).sqrt();
            let alt = LerouxParams { sigma_u: su, rho: rt, beta: p.beta - rt * su / p.sigma_z, ..base };
            (alt, free(&[("rho_tilde", rt)]))
        }
        Rho0Case::LambdaZZero => {
            let omega_max = graph::laplacian_spectrum(w).eigenvalues.first().copied().unwrap_or(0.0);
            let a_max = crate::models::leroux_a(p.lambda_u, omega_max).max(1.0);
            let bound = a_max.recip().sqrt();
            let rt = opts
                .rho_tilde
                .unwrap_or_else(|| (gap * p.sigma_z / p.sigma_u).min(0.95 * bound));
            if rt.abs() > bound {
                return Err(Error::InvalidRegion(format!(
                    "|rho_tilde| = {} exceeds 1/sqrt(max a_U) = {bound}",
                    rt.abs()
                )));
            }
            let alt = LerouxParams {
                rho: rt,
                sigma2_eps: p.sigma2_eps + rt * rt * p.sigma_u * p.sigma_u,
                beta: p.beta - rt * p.sigma_u / p.sigma_z,
                ..base
            };
            (alt, free(&[("rho_tilde", rt)]))
        }
        Rho0Case::LambdaUZero => {
            let zeta = opts.zeta()?;
            let su = gap * p.sigma_z;
            let alt = LerouxParams {
                sigma_u: su,
                lambda_u: p.lambda_z,
                rho: zeta,
                sigma2_eps: p.sigma_u * p.sigma_u + p.sigma2_eps,
                beta: p.beta - zeta * su / p.sigma_z,
                ..base
            };
            (alt, free(&[("zeta", zeta), ("sigma_u_tilde", su)]))
        }
    };
    let mut cert = certify("leroux_rho0", ModelSpec::Leroux(*p), ModelSpec::Leroux(alt), w, fp)?;
    cert.notes.push(format!("case: {case:?}"));
    Ok(cert)
}

/// Parsimonious Leroux, either with `λ_U = λ_Z` or with `ρ = λ_U = 0`.
pub fn leroux_pars_alternative(
    p: &LerouxParams,
    w: &ProximityMatrix,
    opts: &ForgeOptions,
) -> Result<EquivalenceCertificate> {
    p.validate()?;
    if !p.is_parsimonious() {
        return Err(Error::CaseNotApplicable("leroux_pars needs the parsimonious cross structure".into()));
    }
    let tol = Tolerances::default();
    let gap = opts.gap(p.beta);
    if !tol.differ(p.lambda_u, p.lambda_z) {
        // Two constraints on (β̃, ρ̃, σ̃_U):
        //   ρ̃σ̃_U = ρσ_U + (β − β̃)σ_Z  and  (1 − ρ̃²)σ̃_U² = (1 − ρ²)σ_U².
        let s2 = (1.0 - p.rho * p.rho) * p.sigma_u * p.sigma_u;
        let (rt, su, beta) = match opts.rho_tilde {
            Some(rt) => {
                if rt.abs() >= 1.0 || s2 <= 0.0 {
                    return Err(Error::InvalidRegion(format!("rho_tilde = {rt} cannot match |rho| = 1")));
                }
                let su = (s2 / (1.0 - rt * rt)).sqrt();
                (rt, su, p.beta + (p.rho * p.sigma_u - rt * su) / p.sigma_z)
            }
            None => {
                let t = p.rho * p.sigma_u - gap * p.sigma_z;
                let su = (s2 + t * t).sqrt();
                if su == 0.0 {
                    return Err(Error::InvalidRegion("leroux_pars: sigma_u_tilde = 0".into()));
                }
                (t / su, su, p.beta + gap)
            }
        };
        let alt = LerouxParams { sigma_u: su, rho: rt, beta, ..*p };
        let mut c = certify("leroux_pars", ModelSpec::Leroux(*p), ModelSpec::Leroux(alt), w, free(&[("rho_tilde", rt)]))?;
        c.notes.push("regime: lambda_u = lambda_z".into());
        return Ok(c);
    }
    if !tol.nonzero(p.rho) && !tol.nonzero(p.lambda_u) {
        let zeta = opts.zeta()?;
        let su = gap * p.sigma_z;
        let alt = LerouxParams {
            sigma_u: su,
            lambda_u: p.lambda_z,
            rho: zeta,
            sigma2_eps: p.sigma_u * p.sigma_u + p.sigma2_eps,
            beta: p.beta - zeta * su / p.sigma_z,
            ..*p
        };
        let mut c = certify(
            "leroux_pars",
            ModelSpec::Leroux(*p),
            ModelSpec::Leroux(alt),
            w,
            free(&[("zeta", zeta), ("sigma_u_tilde", su)]),
        )?;
        c.notes.push("regime: rho = lambda_u = 0".into());
        return Ok(c);
    }
    Err(Error::CaseNotApplicable(
        "leroux_pars needs lambda_u = lambda_z, or rho = lambda_u = 0".into(),
    ))
}

/// LMC: `β̃ = β − δ`, `b̃_t = b_t + δ a_t`.
pub fn lmc_alternative(p: &LmcParams, w: &ProximityMatrix, opts: &ForgeOptions) -> Result<EquivalenceCertificate> {
    p.validate()?;
    let delta = opts.delta.unwrap_or_else(|| opts.gap(p.beta));
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::Precondition(format!("lmc needs a finite nonzero delta, got {delta}")));
    }
    let alt = LmcParams {
        b: p.b.iter().zip(&p.a).map(|(b, a)| b + delta * a).collect(),
        beta: p.beta - delta,
        ..p.clone()
    };
    certify("lmc", ModelSpec::Lmc(p.clone()), ModelSpec::Lmc(alt), w, free(&[("delta", delta)]))
}

/// Bivariate model with equal ranges in all three blocks. For a chosen
/// `β̃` the `Cov(Y, Z)` and `Var Y` constraints give
/// `ρ̃σ̃_U = (β − β̃)σ_Z + ρσ_U` and
/// `σ̃_U² = (1 − ρ²)σ_U² + ((β − β̃)σ_Z + ρσ_U)²`.
pub fn bivariate_rho0_params(p: &BivariateParams, beta_t: f64) -> Option<BivariateParams> {
    let c = (p.beta - beta_t) * p.sigma_z + p.rho * p.sigma_u;
    let s2 = (1.0 - p.rho * p.rho) * p.sigma_u * p.sigma_u + c * c;
    if !(s2 > 0.0) {
        return None;
    }
    let su = s2.sqrt();
    let rt = c / su;
    (rt.abs() < 1.0).then_some(BivariateParams { sigma_u: su, rho: rt, beta: beta_t, ..*p })
}

/// Bivariate model with `ψ_U = ψ_Z = ψ_UZ`. Without an explicit `β̃` the
/// search tries `β ± k·gap/4` for `k = 4, 5, …` and then smaller multiples
/// down to `k = 1`, all within `search_radius` of `β`.
pub fn bivariate_rho0_alternative(
    p: &BivariateParams,
    w: &ProximityMatrix,
    opts: &ForgeOptions,
) -> Result<EquivalenceCertificate> {
    p.validate()?;
    let tol = Tolerances::default();
    if tol.differ(p.psi_u, p.psi_z) || tol.differ(p.psi_uz, p.psi_z) {
        return Err(Error::CaseNotApplicable("bivariate_rho0 needs psi_u = psi_z = psi_uz".into()));
    }
    let build = |bt: f64| -> Option<Result<EquivalenceCertificate>> {
        let alt = bivariate_rho0_params(p, bt)?;
        Some(certify(
            "bivariate_rho0",
            ModelSpec::Bivariate(*p),
            ModelSpec::Bivariate(alt),
            w,
            free(&[("beta_tilde", bt)]),
        ))
    };
    if let Some(bt) = opts.beta_tilde {
        return build(bt).unwrap_or_else(|| {
            Err(Error::NoValidBetaFound(format!("beta_tilde = {bt} gives sigma_u_tilde^2 <= 0 or |rho_tilde| >= 1")))
        });
    }
    let gap = opts.gap(p.beta);
    let radius = opts.search_radius.unwrap_or((4.0 * gap).max(1.0));
    let steps: Vec<f64> = (4..=16).chain((1..4).rev()).map(|k| k as f64 * gap / 4.0).collect();
    for d in steps {
        if d > radius || d <= MIN_GAP {
            continue;
        }
        for bt in [p.beta + d, p.beta - d] {
            if let Some(Ok(c)) = build(bt) {
                if c.is_certificate {
                    return Ok(c);
                }
            }
        }
    }
    Err(Error::NoValidBetaFound(format!(
        "no beta_tilde within {radius} of {} gives a valid alternative",
        p.beta
    )))
}

/// Runs the named construction.
pub fn construct(
    name: &str,
    spec: &ModelSpec,
    w: &ProximityMatrix,
    opts: &ForgeOptions,
) -> Result<EquivalenceCertificate> {
    let wrong = || Error::CaseNotApplicable(format!("{name} does not apply to the {} family", spec.family_name()));
    match (name, spec) {
        ("car_phi0", ModelSpec::Car(p)) => car_phi0_alternative(p, w, opts),
        ("car_fullyconnected", ModelSpec::Car(p)) => car_fullyconnected_alternative(p, w, opts),
        ("leroux_flex_equal_lambda", ModelSpec::Leroux(p)) => leroux_flex_equal_lambda_alternative(p, w),
        ("leroux_rho0", ModelSpec::Leroux(p)) => leroux_rho0_alternative(p, w, opts),
        ("leroux_pars", ModelSpec::Leroux(p)) => leroux_pars_alternative(p, w, opts),
        ("lmc", ModelSpec::Lmc(p)) => lmc_alternative(p, w, opts),
        ("bivariate_rho0", ModelSpec::Bivariate(p)) => bivariate_rho0_alternative(p, w, opts),
        _ if CONSTRUCTIONS.contains(&name) => Err(wrong()),
        _ => Err(Error::Precondition(format!(
            "unknown construction {name}; expected one of {}",
            CONSTRUCTIONS.join(", ")
        ))),
    }
}
