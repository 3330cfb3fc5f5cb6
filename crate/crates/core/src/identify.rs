//! Hypothesis checkers for the identifiability results, one per model
//! family, plus the observable scaled-identity diagnostic.
//!
//! A report lists every condition the relevant theorem needs together with
//! the measured quantity and the tolerance used. The verdict is
//! `IdentifiableUnderTheorem` exactly when all conditions pass. A failing
//! spec is only called `ProvablyNonIdentifiable` when one of the closed-form
//! constructions in [`crate::forge`] applies to it; otherwise it is
//! `NotCovered`.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{self, ProximityMatrix};
use crate::models::{
    BivariateParams, CarSPParams, LerouxCross, LerouxParams, LmcParams, ModelSpec, ParsMaternParams,
};
use crate::specfun::{self, CovFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    /// CAR, general proximity matrix.
    T1,
    /// CAR, binary proximity matrix.
    C1,
    /// Leroux non-parsimonious, `ρ ≠ 0`.
    T2i,
    /// Leroux non-parsimonious, `ρ = 0`.
    T2ii,
    /// Leroux parsimonious, `ρ ≠ 0`, `λ_U = 0`.
    T3i,
    /// Leroux parsimonious, `λ_U ≠ 0` or `ρ = 0`.
    T3ii,
    /// Linear model of coregionalization (never identifiable).
    T4,
    /// Bivariate model with free ranges.
    T5,
    /// Parsimonious Matérn, large-distance asymptotics.
    T6,
    /// Parsimonious Matérn with known smoothness.
    #[serde(rename = "TA_KnownSmoothness")]
    TAKnownSmoothness,
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Theorem::T1 => "T1",
            Theorem::C1 => "C1",
            Theorem::T2i => "T2i",
            Theorem::T2ii => "T2ii",
            Theorem::T3i => "T3i",
            Theorem::T3ii => "T3ii",
            Theorem::T4 => "T4",
            Theorem::T5 => "T5",
            Theorem::T6 => "T6",
            Theorem::TAKnownSmoothness => "TA_KnownSmoothness",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    IdentifiableUnderTheorem,
    NotCovered,
    ProvablyNonIdentifiable,
}

/// One hypothesis of a theorem, evaluated on a spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    /// Human-readable requirement, including the tolerance.
    pub required: String,
    pub measured: f64,
    pub pass: bool,
}

/// Numerical tolerances; the theorems themselves are stated for exact values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// `x ≠ 0` means `|x| > nonzero_abs`.
    pub nonzero_abs: f64,
    /// `x ≠ y` means `|x − y| > ineq_rel · max(1, |x|, |y|)`.
    pub ineq_rel: f64,
    /// Eigenvalue clustering tolerance for distinct-eigenvalue counts.
    pub eig_rel: f64,
    /// Relative singular-value cutoff for linear-independence probes.
    pub rank_tol: f64,
    /// Relative tolerance of the scaled-identity diagnostic.
    pub scaled_identity_rel: f64,
    /// Large-distance threshold for the asymptotic Matérn result, in units
    /// of the range `φ`.
    pub matern_threshold: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            nonzero_abs: 1e-10,
            ineq_rel: 1e-8,
            eig_rel: graph::DEFAULT_EIG_TOL,
            rank_tol: specfun::DEFAULT_RANK_TOL,
            scaled_identity_rel: 1e-8,
            matern_threshold: 50.0,
        }
    }
}

impl Tolerances {
    pub fn nonzero(&self, x: f64) -> bool {
        x.abs() > self.nonzero_abs
    }

    pub fn differ(&self, x: f64, y: f64) -> bool {
        (x - y).abs() > self.ineq_rel * x.abs().max(y.abs()).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub family: String,
    pub theorem: Theorem,
    pub verdict: Verdict,
    pub conditions: Vec<Condition>,
    /// Which parameters the theorem identifies when its conditions hold.
    pub scope: String,
    /// Name of the [`crate::forge`] construction backing a
    /// `ProvablyNonIdentifiable` verdict.
    pub construction: Option<String>,
    /// The theorem is asymptotic; the check is a finite-sample proxy.
    pub heuristic: bool,
    pub notes: Vec<String>,
    pub tolerances: Tolerances,
}

impl IdentifiabilityReport {
    fn new(family: &str, theorem: Theorem, conditions: Vec<Condition>, scope: &str, tol: &Tolerances) -> Self {
        let all = conditions.iter().all(|c| c.pass);
        Self {
            family: family.into(),
            theorem,
            verdict: if all { Verdict::IdentifiableUnderTheorem } else { Verdict::NotCovered },
            conditions,
            scope: scope.into(),
            construction: None,
            heuristic: false,
            notes: Vec::new(),
            tolerances: *tol,
        }
    }

    /// Downgrades a failing report to `ProvablyNonIdentifiable`, backed by
    /// the named construction.
    fn non_identifiable(&mut self, construction: &str, why: String) {
        debug_assert!(self.verdict != Verdict::IdentifiableUnderTheorem);
        self.verdict = Verdict::ProvablyNonIdentifiable;
        self.construction = Some(construction.into());
        self.notes.push(why);
    }

    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }
}

impl fmt::Display for IdentifiabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "family:  {}", self.family)?;
        let tag = if self.heuristic { " (asymptotic, heuristic check)" } else { "" };
        writeln!(f, "theorem: {}{tag}", self.theorem)?;
        writeln!(f, "verdict: {:?}", self.verdict)?;
        if let Some(c) = &self.construction {
            writeln!(f, "construction: {c}")?;
        }
        writeln!(f, "scope:   {}", self.scope)?;
        let width = self.conditions.iter().map(|c| c.name.len()).max().unwrap_or(4).max(9);
        writeln!(f, "  {:<width$}  {:<6}  {:>14}  required", "condition", "result", "measured")?;
        for c in &self.conditions {
            let res = if c.pass { "pass" } else { "FAIL" };
            writeln!(f, "  {:<width$}  {:<6}  {:>14.6e}  {}", c.name, res, c.measured, c.required)?;
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}

fn nonzero_cond(name: &str, x: f64, tol: &Tolerances) -> Condition {
    Condition {
        name: name.into(),
        required: format!("|x| > {:e}", tol.nonzero_abs),
        measured: x.abs(),
        pass: tol.nonzero(x),
    }
}

fn differ_cond(name: &str, x: f64, y: f64, tol: &Tolerances) -> Condition {
    Condition {
        name: name.into(),
        required: format!("|x - y| > {:e} * max(1, |x|, |y|)", tol.ineq_rel),
        measured: (x - y).abs(),
        pass: tol.differ(x, y),
    }
}

fn at_least_cond(name: &str, count: usize, min: usize) -> Condition {
    Condition {
        name: name.into(),
        required: format!(">= {min}"),
        measured: count as f64,
        pass: count >= min,
    }
}

/// Result of [`scaled_identity_diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledIdentity {
    pub is_scaled_identity: bool,
    pub scale: f64,
    pub max_dev: f64,
}

/// Tests whether `m` is proportional to the identity: `scale = tr(m)/n` and
/// the verdict is `max|m − scale·I| ≤ rel_tol·(1 + |scale|)`.
pub fn scaled_identity_diagnostic(m: &DMatrix<f64>, rel_tol: f64) -> ScaledIdentity {
    assert!(m.is_square(), "scaled_identity_diagnostic needs a square matrix");
    let n = m.nrows();
    if n == 0 {
        return ScaledIdentity { is_scaled_identity: true, scale: 0.0, max_dev: 0.0 };
    }
    let scale = m.trace() / n as f64;
    let mut max_dev = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { scale } else { 0.0 };
            max_dev = max_dev.max((m[(i, j)] - target).abs());
        }
    }
    ScaledIdentity {
        is_scaled_identity: max_dev <= rel_tol * (1.0 + scale.abs()),
        scale,
        max_dev,
    }
}

/// CAR model. Binary graphs use the indirect-neighbour corollary, other
/// graphs the per-component spectral condition.
pub fn check_car(p: &CarSPParams, w: &ProximityMatrix, tol: &Tolerances) -> Result<IdentifiabilityReport> {
    let degrees = graph::degree_matrix(w);
    degrees.require_positive()?;
    let comps = graph::connected_components(w);
    let mut conds = vec![nonzero_cond("phi_u_nonzero", p.phi_u, tol)];
    let mut notes = Vec::new();

    let theorem = if w.is_binary() {
        // Some pair in one component that are not neighbours.
        let witness = comps.blocks.iter().find_map(|blk| {
            blk.iter().enumerate().find_map(|(a, &i)| {
                blk[a + 1..].iter().find(|&&j| w.get(i, j) == 0.0).map(|&j| (i, j))
            })
        });
        if let Some((i, j)) = witness {
            notes.push(format!("indirect neighbours: locations {i} and {j}"));
        }
        conds.push(Condition {
            name: "indirect_neighbor_pair".into(),
            required: "some pair (i, j) in one component with W_ij = 0".into(),
            measured: if witness.is_some() { 1.0 } else { 0.0 },
            pass: witness.is_some(),
        });
        Theorem::C1
    } else {
        let mut best_eigs = 0;
        let mut best_deg = 0;
        for blk in &comps.blocks {
            let sub = w.submatrix(blk);
            let eigs = crate::linalg::sym_eigenvalues_asc(&sub);
            best_eigs = best_eigs.max(graph::count_distinct(&eigs, tol.eig_rel));
            let degs: Vec<f64> = blk.iter().map(|&i| degrees.diag[i]).collect();
            best_deg = best_deg.max(graph::count_distinct(&degs, tol.ineq_rel));
        }
        let pass = best_eigs >= 3 || best_deg >= 2;
        conds.push(Condition {
            name: "component_spectrum".into(),
            required: "some component with >= 3 distinct eigenvalues of W_[b], or distinct degrees".into(),
            measured: best_eigs as f64,
            pass,
        });
        notes.push(format!(
            "max distinct eigenvalues of W_[b]: {best_eigs}; max distinct degrees in a component: {best_deg}"
        ));
        Theorem::T1
    };

    let mut r = IdentifiabilityReport::new("car", theorem, conds, "all parameters", tol);
    r.notes = notes;
    if r.verdict != Verdict::IdentifiableUnderTheorem {
        if !tol.nonzero(p.phi_u) {
            r.non_identifiable(
                "car_phi0",
                "phi_u = 0: conditional mean of U is proportional to Z".into(),
            );
        } else if w.is_binary() && w.is_complete_binary() && w.n() >= 2 && tol.nonzero(p.rho) {
            r.non_identifiable(
                "car_fullyconnected",
                "fully connected binary graph with rho != 0".into(),
            );
        }
    }
    Ok(r)
}

/// Leroux model, both cross structures. Eigenvalue counts are taken from
/// the spectrum of `D − W`.
pub fn check_leroux(p: &LerouxParams, w: &ProximityMatrix, tol: &Tolerances) -> IdentifiabilityReport {
    let spec = graph::laplacian_spectrum(w);
    let n_eig = graph::count_distinct(&spec.eigenvalues, tol.eig_rel);
    let rho_nz = tol.nonzero(p.rho);
    let lu_nz = tol.nonzero(p.lambda_u);
    match p.cross {
        LerouxCross::NonParsimonious { lambda_uz } => {
            if rho_nz {
                let conds = vec![
                    nonzero_cond("rho_nonzero", p.rho, tol),
                    differ_cond("lambda_uz_ne_lambda_z", lambda_uz, p.lambda_z, tol),
                    at_least_cond("laplacian_distinct_eigenvalues", n_eig, 3),
                ];
                let scope = if lu_nz {
                    "all parameters"
                } else {
                    "beta, sigma_z, lambda_z, lambda_uz (lambda_u = 0: remaining parameters not covered)"
                };
                let mut r = IdentifiabilityReport::new("leroux", Theorem::T2i, conds, scope, tol);
                if r.verdict != Verdict::IdentifiableUnderTheorem && !tol.differ(lambda_uz, p.lambda_z) {
                    r.non_identifiable(
                        "leroux_flex_equal_lambda",
                        "rho != 0 with lambda_uz = lambda_z: flipping the sign of rho is observationally equivalent".into(),
                    );
                }
                r
            } else {
                let conds = vec![
                    Condition {
                        name: "rho_zero".into(),
                        required: format!("|rho| <= {:e}", tol.nonzero_abs),
                        measured: p.rho.abs(),
                        pass: true,
                    },
                    differ_cond("lambda_u_ne_lambda_z", p.lambda_u, p.lambda_z, tol),
                    nonzero_cond("lambda_z_nonzero", p.lambda_z, tol),
                    nonzero_cond("lambda_u_nonzero", p.lambda_u, tol),
                    at_least_cond("laplacian_distinct_eigenvalues", n_eig, 4),
                ];
                let mut r = IdentifiabilityReport::new(
                    "leroux",
                    Theorem::T2ii,
                    conds,
                    "beta and all parameters except lambda_uz",
                    tol,
                );
                let degenerate = !tol.differ(p.lambda_u, p.lambda_z) || !tol.nonzero(p.lambda_z) || !lu_nz;
                if degenerate {
                    r.non_identifiable(
                        "leroux_rho0",
                        "rho = 0 and (lambda_u, lambda_z, 0) not mutually distinct".into(),
                    );
                }
                r
            }
        }
        LerouxCross::Parsimonious => {
            let (theorem, scope) = if lu_nz || !rho_nz {
                (Theorem::T3ii, "all parameters")
            } else {
                (Theorem::T3i, "beta, sigma_z, lambda_z, lambda_u and rho * sigma_u")
            };
            let mut conds = vec![
                at_least_cond("laplacian_distinct_eigenvalues", n_eig, 3),
                differ_cond("lambda_u_ne_lambda_z", p.lambda_u, p.lambda_z, tol),
            ];
            conds.push(match theorem {
                Theorem::T3i => nonzero_cond("rho_nonzero", p.rho, tol),
                _ => nonzero_cond("lambda_u_nonzero", p.lambda_u, tol),
            });
            let mut r = IdentifiabilityReport::new("leroux_pars", theorem, conds, scope, tol);
            if !tol.differ(p.lambda_u, p.lambda_z) {
                r.non_identifiable(
                    "leroux_pars",
                    "lambda_u = lambda_z: rho and sigma_u trade off against beta".into(),
                );
            } else if !rho_nz && !lu_nz {
                r.non_identifiable(
                    "leroux_pars",
                    "rho = 0 and lambda_u = 0: a perfectly correlated alternative matches".into(),
                );
            }
            r
        }
    }
}

/// The linear model of coregionalization is never identifiable.
pub fn check_lmc(_p: &LmcParams, tol: &Tolerances) -> IdentifiabilityReport {
    let conds = vec![Condition {
        name: "not_coregionalization".into(),
        required: "model is not an LMC".into(),
        measured: 0.0,
        pass: false,
    }];
    let mut r = IdentifiabilityReport::new("lmc", Theorem::T4, conds, "none", tol);
    r.non_identifiable("lmc", "shifting beta by delta and b_t by delta * a_t leaves all moments unchanged".into());
    r
}

/// Parameter triples used to probe 3-linear independence: the model's own
/// ranges when distinct, plus a fixed pseudo-random sample around them.
fn probe_triples(p: &BivariateParams, tol: &Tolerances) -> Vec<[f64; 3]> {
    let own = [p.psi_u, p.psi_z, p.psi_uz];
    let mut out = Vec::new();
    if tol.differ(own[0], own[1]) && tol.differ(own[0], own[2]) && tol.differ(own[1], own[2]) {
        out.push(own);
    }
    let lo = own.iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
    let hi = own.iter().copied().fold(0.0, f64::max) * 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    while out.len() < 16 {
        let mut t = [0.0; 3];
        for x in &mut t {
            *x = (rng.random_range(lo.ln()..=hi.ln())).exp();
        }
        t.sort_by(f64::total_cmp);
        if t[1] / t[0] > 1.2 && t[2] / t[1] > 1.2 {
            out.push(t);
        }
    }
    out
}

/// Bivariate model with separate ranges for the two marginals and the cross
/// covariance.
pub fn check_bivariate(p: &BivariateParams, w: &ProximityMatrix, tol: &Tolerances) -> IdentifiabilityReport {
    let dists = w.off_diagonal_values();
    let mut worst = f64::INFINITY;
    let mut failure = None;
    for t in probe_triples(p, tol) {
        match specfun::k_linear_independence(p.covariance, &t, &dists, false, tol.rank_tol) {
            Ok(v) => {
                let ratio = if v.largest_singular_value > 0.0 {
                    v.smallest_singular_value / v.largest_singular_value
                } else {
                    0.0
                };
                worst = worst.min(ratio);
            }
            Err(e) => {
                worst = 0.0;
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let conds = vec![
        nonzero_cond("rho_nonzero", p.rho, tol),
        differ_cond("psi_uz_ne_psi_z", p.psi_uz, p.psi_z, tol),
        Condition {
            name: "three_linear_independence".into(),
            required: format!("min sigma_min/sigma_max over probe triples > {:e}", tol.rank_tol),
            measured: worst,
            pass: worst > tol.rank_tol,
        },
    ];
    let mut r = IdentifiabilityReport::new("bivariate", Theorem::T5, conds, "all parameters", tol);
    r.notes.push(format!(
        "{} distinct off-diagonal distances; independence probed numerically for the {} family",
        dists.len(),
        p.covariance.name()
    ));
    if let Some(e) = failure {
        r.notes.push(format!("linear independence probe failed: {e}"));
    }
    if matches!(p.covariance, CovFamily::Wave) {
        r.notes.push("the wave family is not 2-linearly independent on its crossing distances".into());
    }
    if r.verdict != Verdict::IdentifiableUnderTheorem {
        if !tol.differ(p.psi_u, p.psi_z) && !tol.differ(p.psi_uz, p.psi_z) {
            r.non_identifiable(
                "bivariate_rho0",
                "equal ranges in all blocks: beta trades off against rho * sigma_u".into(),
            );
        } else if !tol.nonzero(p.rho) {
            r.notes.push(
                "rho = 0 is not covered; the bivariate_rho0 construction applies when psi_u = psi_z = psi_uz".into(),
            );
        }
    }
    r
}

/// Parsimonious Matérn model. With `known_smoothness` the finite-sample
/// result applies; otherwise the large-distance result is checked by a
/// threshold on the largest distance.
pub fn check_matern(
    p: &ParsMaternParams,
    w: &ProximityMatrix,
    known_smoothness: bool,
    tol: &Tolerances,
) -> Result<IdentifiabilityReport> {
    let nu = differ_cond("nu_u_ne_nu_z", p.nu_u, p.nu_z, tol);
    let max_w = w.max_entry();
    let mut r = if known_smoothness {
        let m = ModelSpec::ParsMatern(*p).observed_moments(w)?;
        let d = scaled_identity_diagnostic(&m.coef, tol.scaled_identity_rel);
        let conds = vec![
            nu,
            Condition {
                name: "positive_distance".into(),
                required: "max W_ij > 0".into(),
                measured: max_w,
                pass: max_w > 0.0,
            },
            Condition {
                name: "coef_not_scaled_identity".into(),
                required: format!("max|coef - s I| > {:e} * (1 + |s|)", tol.scaled_identity_rel),
                measured: d.max_dev,
                pass: !d.is_scaled_identity,
            },
        ];
        IdentifiabilityReport::new(
            "pars_matern",
            Theorem::TAKnownSmoothness,
            conds,
            "all parameters (smoothness known)",
            tol,
        )
    } else {
        let conds = vec![
            nu,
            nonzero_cond("rho_nonzero", p.rho, tol),
            Condition {
                name: "large_distance".into(),
                required: format!("max W_ij >= {} * phi = {}", tol.matern_threshold, tol.matern_threshold * p.phi),
                measured: max_w,
                pass: max_w >= tol.matern_threshold * p.phi,
            },
        ];
        let mut r = IdentifiabilityReport::new("pars_matern", Theorem::T6, conds, "all parameters", tol);
        r.heuristic = true;
        r
    };
    if !tol.differ(p.nu_u, p.nu_z) {
        r.notes.push("nu_u = nu_z: the cross smoothness equals the marginal one".into());
    }
    Ok(r)
}

/// Dispatches on the model family. `known_smoothness` only affects the
/// parsimonious Matérn model.
pub fn check(
    spec: &ModelSpec,
    w: &ProximityMatrix,
    known_smoothness: bool,
    tol: &Tolerances,
) -> Result<IdentifiabilityReport> {
    spec.validate()?;
    match spec {
        ModelSpec::Car(p) => check_car(p, w, tol),
        ModelSpec::Leroux(p) => Ok(check_leroux(p, w, tol)),
        ModelSpec::Lmc(p) => Ok(check_lmc(p, tol)),
        ModelSpec::Bivariate(p) => Ok(check_bivariate(p, w, tol)),
        ModelSpec::ParsMatern(p) => check_matern(p, w, known_smoothness, tol),
    }
}
