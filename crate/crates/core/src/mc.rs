//! Simulation, exact Gaussian log-likelihood and multi-start maximum
//! likelihood over replicated fields.
//!
//! A dataset holds `r` independent replicates of `(Y, Z)` over the same `n`
//! locations. Fits work on transformed parameters (log for scales, `tanh`
//! for correlations, logistic for the Leroux `λ`s) so the optimizer is
//! unconstrained; specs outside the positive definite region get a flat
//! penalty.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ProximityMatrix;
use crate::linalg;
use crate::models::{LerouxCross, ModelSpec};
use crate::optim::{self, OptimOptions};

/// Objective value for parameters outside the positive definite region.
pub const PENALTY: f64 = 1e10;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SPATIAL_IDENT_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `r × n`, one replicate per row.
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub graph_ref: Option<String>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, z: DMatrix<f64>, graph_ref: Option<String>, seed: u64) -> Result<Self> {
        if y.shape() != z.shape() {
            return Err(Error::Precondition(format!(
                "Y is {:?} but Z is {:?}",
                y.shape(),
                z.shape()
            )));
        }
        if y.iter().chain(z.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Precondition("dataset has non-finite entries".into()));
        }
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::Precondition("dataset is empty".into()));
        }
        Ok(Self { y, z, graph_ref, seed })
    }

    pub fn replicates(&self) -> usize {
        self.y.nrows()
    }

    pub fn n(&self) -> usize {
        self.y.ncols()
    }

    /// `Σ_k x_k x_kᵀ` over the stacked replicates `x_k = (y_k, z_k)`.
    pub fn scatter(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut x = DMatrix::zeros(self.replicates(), 2 * n);
        x.view_mut((0, 0), (self.replicates(), n)).copy_from(&self.y);
        x.view_mut((0, n), (self.replicates(), n)).copy_from(&self.z);
        x.transpose() * x
    }
}

/// Square root `R` with `R Rᵀ = m`: Cholesky when it exists, otherwise a
/// clipped eigendecomposition for singular positive semidefinite `m`.
fn psd_root(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(linalg::symmetrize(m)) {
        return Ok(ch.l());
    }
    let (vals, vecs) = linalg::sym_eigen(m);
    let scale = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if vals.iter().any(|&v| v < -1e-10 * scale.max(1.0)) {
        return Err(Error::NotPositiveDefinite("joint covariance has a negative eigenvalue".into()));
    }
    let root: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(linalg::diag_scale(&vec![1.0; m.nrows()], &vecs, &root))
}

/// Draws `r` replicates of `(U, Z)` from the joint latent covariance and
/// forms `Y = Zβ + U + ε`. Deterministic given `seed`.
pub fn sample(spec: &ModelSpec, w: &ProximityMatrix, r: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if r == 0 {
        return Err(Error::Precondition("need at least one replicate".into()));
    }
    // Rejects specs whose observed covariance is not positive definite.
    spec.observed_moments(w)?;
    let blocks = spec.joint_blocks(w)?;
    let n = blocks.n();
    let root = psd_root(&blocks.assemble())?;
    let beta = spec.beta();
    let sd_eps = spec.sigma2_eps().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = DMatrix::zeros(r, n);
    let mut z = DMatrix::zeros(r, n);
    let mut xi = nalgebra::DVector::zeros(2 * n);
    for k in 0..r {
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = &root * &xi;
        for i in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            z[(k, i)] = x[n + i];
            y[(k, i)] = beta * x[n + i] + x[i] + sd_eps * e;
        }
    }
    Dataset::new(y, z, None, seed)
}

/// Log-likelihood from a precomputed scatter matrix of `r` replicates.
pub fn loglik_scatter(spec: &ModelSpec, w: &ProximityMatrix, scatter: &DMatrix<f64>, r: usize) -> Result<f64> {
    let s = spec.observed_moments(w)?.observed_covariance();
    if s.shape() != scatter.shape() {
        return Err(Error::Precondition(format!(
            "model has {} locations but the data have {}",
            s.nrows() / 2,
            scatter.nrows() / 2
        )));
    }
    let ch = linalg::cholesky(&s, "observed covariance")?;
    let logdet: f64 = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let inv = ch.inverse();
    let tr: f64 = inv.iter().zip(scatter.iter()).map(|(a, b)| a * b).sum();
    let dim = s.nrows() as f64;
    Ok(-0.5 * (tr + r as f64 * (logdet + dim * (2.0 * std::f64::consts::PI).ln())))
}

/// Sum over replicates of the `N(0, Var(Y, Z))` log-density.
pub fn loglik(spec: &ModelSpec, w: &ProximityMatrix, data: &Dataset) -> Result<f64> {
    spec.validate()?;
    loglik_scatter(spec, w, &data.scatter(), data.replicates())
}

// ------------------------------------------------------------ parameters

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// Positive scales.
    Log,
    /// Correlation-type parameters on `(−1, 1)`.
    Tanh,
    /// Leroux mixing parameters on `(0, 1)`.
    Logistic,
}

impl Transform {
    pub fn to_natural(self, t: f64) -> f64 {
        match self {
            Transform::Identity => t,
            Transform::Log => t.exp(),
            Transform::Tanh => t.tanh(),
            Transform::Logistic => 1.0 / (1.0 + (-t).exp()),
        }
    }

    pub fn to_theta(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Tanh => x.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh(),
            Transform::Logistic => {
                let x = x.clamp(1e-12, 1.0 - 1e-12);
                (x / (1.0 - x)).ln()
            }
        }
    }
}

/// One free parameter of a family.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub value: f64,
    pub transform: Transform,
}

fn ps(name: impl Into<String>, value: f64, transform: Transform) -> ParamSpec {
    ParamSpec { name: name.into(), value, transform }
}

/// Estimable parameters of `spec` in a fixed order. Structural choices
/// (Leroux cross type, covariance family, LMC size) are not parameters.
pub fn parameters(spec: &ModelSpec) -> Vec<ParamSpec> {
    use Transform::*;
    match spec {
        ModelSpec::Car(p) => vec![
            ps("tau_u", p.tau_u, Log),
            ps("tau_z", p.tau_z, Log),
            ps("phi_u", p.phi_u, Tanh),
            ps("phi_z", p.phi_z, Tanh),
            ps("rho", p.rho, Tanh),
            ps("sigma2_eps", p.sigma2_eps, Log),
            ps("beta", p.beta, Identity),
        ],
        ModelSpec::Leroux(p) => {
            let mut v = vec![
                ps("sigma_u", p.sigma_u, Log),
                ps("sigma_z", p.sigma_z, Log),
                ps("lambda_u", p.lambda_u, Logistic),
                ps("lambda_z", p.lambda_z, Logistic),
            ];
            if let Some(l) = p.lambda_uz() {
                v.push(ps("lambda_uz", l, Logistic));
            }
            v.extend([
                ps("rho", p.rho, Tanh),
                ps("sigma2_eps", p.sigma2_eps, Log),
                ps("beta", p.beta, Identity),
            ]);
            v
        }
        ModelSpec::Lmc(p) => {
            let mut v = Vec::new();
            for t in 0..p.t() {
                v.push(ps(format!("a[{t}]"), p.a[t], Identity));
                v.push(ps(format!("b[{t}]"), p.b[t], Identity));
                v.push(ps(format!("phi[{t}]"), p.phi[t], Log));
            }
            v.push(ps("sigma2_eps", p.sigma2_eps, Log));
            v.push(ps("beta", p.beta, Identity));
            v
        }
        ModelSpec::Bivariate(p) => vec![
            ps("sigma_u", p.sigma_u, Log),
            ps("sigma_z", p.sigma_z, Log),
            ps("psi_u", p.psi_u, Log),
            ps("psi_z", p.psi_z, Log),
            ps("psi_uz", p.psi_uz, Log),
            ps("rho", p.rho, Tanh),
            ps("sigma2_eps", p.sigma2_eps, Log),
            ps("beta", p.beta, Identity),
        ],
        ModelSpec::ParsMatern(p) => vec![
            ps("sigma_u", p.sigma_u, Log),
            ps("sigma_z", p.sigma_z, Log),
            ps("phi", p.phi, Log),
            ps("nu_u", p.nu_u, Log),
            ps("nu_z", p.nu_z, Log),
            ps("rho", p.rho, Tanh),
            ps("sigma2_eps", p.sigma2_eps, Log),
            ps("beta", p.beta, Identity),
        ],
    }
}

/// Inverse of [`parameters`]: a copy of `template` carrying `values`.
pub fn with_values(template: &ModelSpec, values: &[f64]) -> ModelSpec {
    let mut s = template.clone();
    let v = values;
    match &mut s {
        ModelSpec::Car(p) => {
            (p.tau_u, p.tau_z, p.phi_u, p.phi_z, p.rho, p.sigma2_eps, p.beta) =
                (v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
        }
        ModelSpec::Leroux(p) => {
            (p.sigma_u, p.sigma_z, p.lambda_u, p.lambda_z) = (v[0], v[1], v[2], v[3]);
            let mut k = 4;
            if let LerouxCross::NonParsimonious { lambda_uz } = &mut p.cross {
                *lambda_uz = v[4];
                k = 5;
            }
            (p.rho, p.sigma2_eps, p.beta) = (v[k], v[k + 1], v[k + 2]);
        }
        ModelSpec::Lmc(p) => {
            let t = p.t();
            for i in 0..t {
                (p.a[i], p.b[i], p.phi[i]) = (v[3 * i], v[3 * i + 1], v[3 * i + 2]);
            }
            (p.sigma2_eps, p.beta) = (v[3 * t], v[3 * t + 1]);
        }
        ModelSpec::Bivariate(p) => {
            (p.sigma_u, p.sigma_z, p.psi_u, p.psi_z, p.psi_uz, p.rho, p.sigma2_eps, p.beta) =
                (v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]);
        }
        ModelSpec::ParsMatern(p) => {
            (p.sigma_u, p.sigma_z, p.phi, p.nu_u, p.nu_z, p.rho, p.sigma2_eps, p.beta) =
                (v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]);
        }
    }
    s
}

/// Default range for random starting values of a parameter. Range-type
/// parameters scale with the median positive entry of `W`.
fn default_start_range(name: &str, median_w: f64) -> (f64, f64) {
    let base = name.split('[').next().unwrap_or(name);
    match base {
        "tau_u" | "tau_z" | "sigma_u" | "sigma_z" => (0.3, 3.0),
        "sigma2_eps" => (0.1, 2.0),
        "phi_u" | "phi_z" | "rho" => (-0.8, 0.8),
        "lambda_u" | "lambda_z" | "lambda_uz" => (0.05, 0.9),
        "beta" => (-3.0, 3.0),
        "a" | "b" => (-2.0, 2.0),
        "phi" | "psi_u" | "psi_z" | "psi_uz" => (0.2 * median_w, 2.0 * median_w),
        "nu_u" | "nu_z" => (0.3, 2.5),
        _ => (-1.0, 1.0),
    }
}

// ------------------------------------------------------------ fitting

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub n_starts: usize,
    pub seed: u64,
    /// Parameters held at their template values.
    pub fixed: Vec<String>,
    /// Overrides for the random starting ranges, in natural units.
    pub start_bounds: BTreeMap<String, (f64, f64)>,
    pub optim: OptimOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            seed: 0,
            fixed: Vec::new(),
            start_bounds: BTreeMap::new(),
            optim: OptimOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub index: usize,
    pub beta: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: String,
    pub estimates: BTreeMap<String, f64>,
    pub spec: ModelSpec,
    pub loglik: f64,
    pub converged: bool,
    pub n_starts: usize,
    pub n_converged: usize,
    /// Largest pairwise distance among converged `β̂`s.
    pub start_dispersion: f64,
    /// Max minus min log-likelihood over converged starts.
    pub loglik_spread: f64,
    /// Standard error of `β̂` from the observed information, when `β` is
    /// free and the information matrix is positive definite.
    pub beta_se: Option<f64>,
    pub starts: Vec<StartSummary>,
}

/// Negative per-replicate log-likelihood over the free coordinates.
struct Objective<'a> {
    template: &'a ModelSpec,
    w: &'a ProximityMatrix,
    scatter: DMatrix<f64>,
    r: usize,
    params: Vec<ParamSpec>,
    free: Vec<usize>,
}

impl Objective<'_> {
    fn spec_at(&self, theta: &[f64]) -> ModelSpec {
        let mut vals: Vec<f64> = self.params.iter().map(|p| p.value).collect();
        for (k, &i) in self.free.iter().enumerate() {
            vals[i] = self.params[i].transform.to_natural(theta[k]);
        }
        with_values(self.template, &vals)
    }

    fn value(&self, theta: &[f64]) -> f64 {
        if theta.iter().any(|t| !t.is_finite()) {
            return PENALTY;
        }
        let spec = self.spec_at(theta);
        if spec.validate().is_err() {
            return PENALTY;
        }
        match loglik_scatter(&spec, self.w, &self.scatter, self.r) {
            Ok(l) if l.is_finite() => -l / self.r as f64,
            _ => PENALTY,
        }
    }

    fn theta_of(&self, spec: &ModelSpec) -> Vec<f64> {
        let p = parameters(spec);
        self.free.iter().map(|&i| p[i].transform.to_theta(p[i].value)).collect()
    }
}

fn thread_pool() -> rayon::ThreadPool {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .expect("thread pool")
}

fn objective<'a>(
    template: &'a ModelSpec,
    data: &Dataset,
    w: &'a ProximityMatrix,
    fixed: &[String],
) -> Result<Objective<'a>> {
    template.validate()?;
    if w.n() != data.n() {
        return Err(Error::Precondition(format!(
            "graph has {} locations but the data have {}",
            w.n(),
            data.n()
        )));
    }
    let params = parameters(template);
    for f in fixed {
        if !params.iter().any(|p| &p.name == f) {
            return Err(Error::Precondition(format!("unknown parameter {f} in fixed list")));
        }
    }
    let free = (0..params.len()).filter(|&i| !fixed.contains(&params[i].name)).collect();
    Ok(Objective { template, w, scatter: data.scatter(), r: data.replicates(), params, free })
}

fn median_positive(w: &ProximityMatrix) -> f64 {
    let v = w.off_diagonal_values();
    if v.is_empty() { 1.0 } else { v[v.len() / 2] }
}

/// Random feasible start for start `index`, from its own RNG stream.
fn draw_start(obj: &Objective, opts: &FitOptions, index: usize) -> Option<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index as u64);
    let med = median_positive(obj.w);
    for _ in 0..200 {
        let theta: Vec<f64> = obj
            .free
            .iter()
            .map(|&i| {
                let p = &obj.params[i];
                let (lo, hi) = opts
                    .start_bounds
                    .get(&p.name)
                    .copied()
                    .unwrap_or_else(|| default_start_range(&p.name, med));
                let x = if hi > lo { Uniform::new(lo, hi).map_or(lo, |u| u.sample(&mut rng)) } else { lo };
                p.transform.to_theta(x)
            })
            .collect();
        if obj.value(&theta) < PENALTY {
            return Some(theta);
        }
    }
    None
}

fn beta_standard_error(obj: &Objective, theta: &[f64]) -> Option<f64> {
    let k = obj.free.iter().position(|&i| obj.params[i].name == "beta")?;
    let r = obj.r as f64;
    let h = optim::hessian(&|t: &[f64]| obj.value(t) * r, theta);
    let m = DMatrix::from_fn(theta.len(), theta.len(), |i, j| h[i][j]);
    let (inv, _) = linalg::spd_inverse(&m, "observed information").ok()?;
    let v = inv[(k, k)];
    (v > 0.0).then(|| v.sqrt())
}

struct StartOutcome {
    theta: Vec<f64>,
    f: f64,
    converged: bool,
    iterations: usize,
    method: String,
}

fn summarize(obj: &Objective, outcomes: Vec<Option<StartOutcome>>, n_starts: usize) -> Result<(FitResult, Vec<f64>)> {
    let mut starts = Vec::new();
    let mut best: Option<(usize, bool, f64)> = None;
    for (index, o) in outcomes.iter().enumerate() {
        let Some(o) = o else { continue };
        if o.f >= PENALTY {
            continue;
        }
        let spec = obj.spec_at(&o.theta);
        starts.push(StartSummary {
            index,
            beta: spec.beta(),
            loglik: -o.f * obj.r as f64,
            converged: o.converged,
            iterations: o.iterations,
            method: o.method.clone(),
        });
        let key = (o.converged, -o.f);
        let better = match best {
            None => true,
            Some((_, c, l)) => key.0 && !c || (key.0 == c && key.1 > l),
        };
        if better {
            best = Some((index, o.converged, key.1));
        }
    }
    let (bi, converged, _) = best.ok_or(Error::AllStartsFailed(n_starts))?;
    let theta = outcomes[bi].as_ref().map(|o| o.theta.clone()).unwrap_or_default();
    let spec = obj.spec_at(&theta);
    let conv: Vec<&StartSummary> = starts.iter().filter(|s| s.converged).collect();
    let mut dispersion = 0.0_f64;
    for a in &conv {
        for b in &conv {
            dispersion = dispersion.max((a.beta - b.beta).abs());
        }
    }
    let (lo, hi) = conv
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.loglik), hi.max(s.loglik)));
    let estimates = parameters(&spec).into_iter().map(|p| (p.name, p.value)).collect();
    Ok((
        FitResult {
            family: spec.family_name().into(),
            estimates,
            loglik: -outcomes[bi].as_ref().map_or(PENALTY, |o| o.f) * obj.r as f64,
            spec,
            converged,
            n_starts,
            n_converged: conv.len(),
            start_dispersion: dispersion,
            loglik_spread: if conv.is_empty() { f64::NAN } else { hi - lo },
            beta_se: None,
            starts,
        },
        theta,
    ))
}

fn run_starts(obj: &Objective, opts: &FitOptions) -> Vec<Option<StartOutcome>> {
    let run = |i: usize| -> Option<StartOutcome> {
        let x0 = draw_start(obj, opts, i)?;
        let res = optim::minimize(&|t: &[f64]| obj.value(t), &x0, &opts.optim);
        Some(StartOutcome {
            theta: res.x,
            f: res.f,
            converged: res.converged && res.f < PENALTY,
            iterations: res.iterations,
            method: res.method,
        })
    };
    thread_pool().install(|| (0..opts.n_starts).into_par_iter().map(run).collect())
}

/// Multi-start maximum likelihood. `template` fixes the family structure and
/// supplies the values of any `fixed` parameters; free parameters start from
/// seed-derived random points.
pub fn fit_mle(template: &ModelSpec, data: &Dataset, w: &ProximityMatrix, opts: &FitOptions) -> Result<FitResult> {
    if opts.n_starts == 0 {
        return Err(Error::Precondition("n_starts must be at least 1".into()));
    }
    let obj = objective(template, data, w, &opts.fixed)?;
    if obj.free.is_empty() {
        return Err(Error::Precondition("every parameter is fixed".into()));
    }
    let outcomes = run_starts(&obj, opts);
    let (mut fit, theta) = summarize(&obj, outcomes, opts.n_starts)?;
    fit.beta_se = beta_standard_error(&obj, &theta);
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub beta: f64,
    pub loglik: f64,
    pub converged: bool,
    pub estimates: BTreeMap<String, f64>,
    pub error: Option<String>,
}

/// Profile log-likelihood of `β` on `grid`. The first point is a full
/// multi-start fit with `β` fixed; later points warm-start from the previous
/// optimum and fall back to multi-start when that fails to converge.
/// Failures are recorded per point.
pub fn profile_beta(
    template: &ModelSpec,
    data: &Dataset,
    w: &ProximityMatrix,
    grid: &[f64],
    opts: &FitOptions,
) -> Result<Vec<ProfilePoint>> {
    if grid.is_empty() {
        return Err(Error::Precondition("beta grid is empty".into()));
    }
    let mut fixed = opts.fixed.clone();
    if !fixed.iter().any(|f| f == "beta") {
        fixed.push("beta".into());
    }
    let fopts = FitOptions { fixed, ..opts.clone() };
    let beta_index = parameters(template)
        .iter()
        .position(|p| p.name == "beta")
        .expect("every family has beta");
    let at_beta = |base: &ModelSpec, b: f64| {
        let mut vals: Vec<f64> = parameters(base).iter().map(|p| p.value).collect();
        vals[beta_index] = b;
        with_values(base, &vals)
    };
    let mut out = Vec::with_capacity(grid.len());
    let mut prev: Option<ModelSpec> = None;
    for &b in grid {
        let mut result = None;
        if let Some(prev) = &prev {
            let start = at_beta(prev, b);
            let obj = objective(&start, data, w, &fopts.fixed)?;
            let x0 = obj.theta_of(&start);
            if obj.value(&x0) < PENALTY {
                let res = optim::minimize(&|t: &[f64]| obj.value(t), &x0, &fopts.optim);
                if res.converged && res.f < PENALTY {
                    result = Some((obj.spec_at(&res.x), -res.f * obj.r as f64, true));
                }
            }
        }
        if result.is_none() {
            match fit_mle(&at_beta(template, b), data, w, &fopts) {
                Ok(f) => result = Some((f.spec, f.loglik, f.converged)),
                Err(e) => {
                    out.push(ProfilePoint {
                        beta: b,
                        loglik: f64::NAN,
                        converged: false,
                        estimates: BTreeMap::new(),
                        error: Some(e.to_string()),
                    });
                    continue;
                }
            }
        }
        let (spec, ll, converged) = result.expect("set above");
        out.push(ProfilePoint {
            beta: b,
            loglik: ll,
            converged,
            estimates: parameters(&spec).into_iter().map(|p| (p.name, p.value)).collect(),
            error: None,
        });
        prev = Some(spec);
    }
    Ok(out)
}
