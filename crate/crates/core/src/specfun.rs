//! Special functions and stationary covariance families.
//!
//! `K_ν` uses Temme's series for `x < 2` and Steed's continued fraction for
//! `x ≥ 2`, both evaluated at `|μ| ≤ 1/2` and carried up to the requested
//! order by forward recurrence. The recurrence is renormalized in log space so
//! large orders at small arguments do not overflow [`ln_bessel_k`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative singular-value cut-off for [`k_linear_independence`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Two parameters closer than this are treated as the same parameter.
pub const DUPLICATE_TOL: f64 = 1e-12;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;

/// Taylor coefficients of `1/Γ(1+x)` about 0.
const RGAMMA_COEF: [f64; 30] = [
    1.0,
    0.577_215_664_901_532_860_61,
    -0.655_878_071_520_253_881_08,
    -0.042_002_635_034_095_235_529,
    0.166_538_611_382_291_489_5,
    -0.042_197_734_555_544_336_748,
    -0.009_621_971_527_876_973_562_1,
    0.007_218_943_246_663_099_542_4,
    -0.001_165_167_591_859_065_112_1,
    -0.000_215_241_674_114_950_972_82,
    0.000_128_050_282_388_116_186_15,
    -0.000_020_134_854_780_788_238_656,
    -1.250_493_482_142_670_657_3e-6,
    1.133_027_231_981_695_882_4e-6,
    -2.056_338_416_977_607_103_5e-7,
    6.116_095_104_481_415_817_9e-9,
    5.002_007_644_469_222_930_1e-9,
    -1.181_274_570_487_020_144_6e-9,
    1.043_426_711_691_100_510_5e-10,
    7.782_263_439_905_071_254e-12,
    -3.696_805_618_642_205_708_2e-12,
    5.100_370_287_454_475_979e-13,
    -2.058_326_053_566_506_783_2e-14,
    -5.348_122_539_423_017_982_4e-15,
    1.226_778_628_238_260_790_2e-15,
    -1.181_259_301_697_458_769_5e-16,
    1.186_692_254_751_600_332_6e-18,
    1.412_380_655_318_031_781_6e-18,
    -2.298_745_684_435_370_206_6e-19,
    1.714_406_321_927_337_433_4e-20,
];

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Temme's auxiliary quantities at `|mu| <= 1/2`:
/// `(gam1, gam2, 1/Γ(1+mu), 1/Γ(1-mu))`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let mut gam1 = 0.0;
    let mut gam2 = 0.0;
    let mut pw = 1.0;
    for (j, &d) in RGAMMA_COEF.iter().enumerate() {
        if j % 2 == 0 {
            gam2 += d * pw;
        } else {
            gam1 -= d * pw / if mu == 0.0 { 1.0 } else { mu };
        }
        pw *= mu;
    }
    if mu == 0.0 {
        gam1 = -RGAMMA_COEF[1];
    }
    // 1/Γ(1±mu) = gam2 ∓ mu·gam1
    (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
}

/// `(K_mu(x), K_{mu+1}(x))` for `|mu| <= 1/2`, as mantissas times
/// `exp(log_scale)`.
fn bessel_k_base(mu: f64, x: f64) -> (f64, f64, f64) {
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;
    if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum, sum1 * xi2, 0.0)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let kmu = (PI / (2.0 * x)).sqrt() / s;
        let k1 = kmu * (mu + x + 0.5 - h) * xi;
        (kmu, k1, -x)
    }
}

/// `K_nu(x)` as `(mantissa, log_scale)` with `K = mantissa·exp(log_scale)`.
fn bessel_k_scaled(nu: f64, x: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("bessel_k needs x > 0, got {x}")));
    }
    if !nu.is_finite() {
        return Err(Error::Domain(format!("bessel_k order must be finite, got {nu}")));
    }
    let nu = nu.abs();
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let (mut kmu, mut k1, mut log_scale) = bessel_k_base(mu, x);
    let xi2 = 2.0 / x;
    for i in 1..=(nl as usize) {
        let next = (mu + i as f64) * xi2 * k1 + kmu;
        kmu = k1;
        k1 = next;
        if k1.abs() > 1e250 {
            kmu /= k1;
            log_scale += k1.ln();
            k1 = 1.0;
        }
    }
    Ok((kmu, log_scale))
}

/// Modified Bessel function of the second kind, `K_nu(x)`, for `x > 0`.
/// Symmetric in the sign of `nu`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    let (m, s) = bessel_k_scaled(nu, x)?;
    Ok(m * s.exp())
}

/// `ln K_nu(x)`, finite well beyond the range where `K_nu` itself
/// overflows or underflows.
pub fn ln_bessel_k(nu: f64, x: f64) -> Result<f64> {
    let (m, s) = bessel_k_scaled(nu, x)?;
    Ok(m.ln() + s)
}

/// Matérn correlation `2^{1-ν}/Γ(ν) (w/φ)^ν K_ν(w/φ)`, exactly 1 at `w = 0`.
pub fn matern(phi: f64, nu: f64, w: f64) -> Result<f64> {
    if !(phi > 0.0) || !(nu > 0.0) {
        return Err(Error::Domain(format!("matern needs phi, nu > 0, got phi={phi}, nu={nu}")));
    }
    if !(w >= 0.0) {
        return Err(Error::Domain(format!("distance must be nonnegative, got {w}")));
    }
    if w == 0.0 {
        return Ok(1.0);
    }
    let t = w / phi;
    let ln = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * t.ln() + ln_bessel_k(nu, t)?;
    Ok(ln.exp().min(1.0))
}

/// Stationary isotropic correlation families `C(ψ, w)` with `C(ψ, 0) = 1`.
/// `ψ` is the range parameter; shape parameters live in the variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovFamily {
    Exponential,
    Gaussian,
    PoweredExponential { c: f64 },
    Spherical,
    Wave,
    Matern { nu: f64 },
}

impl CovFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CovFamily::PoweredExponential { c } if !(c > 0.0) => {
                Err(Error::Domain(format!("powered exponential needs c > 0, got {c}")))
            }
            CovFamily::Matern { nu } if !(nu > 0.0) => {
                Err(Error::Domain(format!("matern needs nu > 0, got {nu}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CovFamily::Exponential => "exponential",
            CovFamily::Gaussian => "gaussian",
            CovFamily::PoweredExponential { .. } => "powered_exponential",
            CovFamily::Spherical => "spherical",
            CovFamily::Wave => "wave",
            CovFamily::Matern { .. } => "matern",
        }
    }

    pub fn eval(&self, psi: f64, w: f64) -> Result<f64> {
        cov_eval(*self, psi, w)
    }

    /// Correlation matrix `C(ψ, W_ij)` over a distance matrix.
    pub fn matrix(&self, psi: f64, dist: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = dist.nrows();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = self.eval(psi, 0.0)?;
            for j in (i + 1)..n {
                let v = self.eval(psi, dist[(i, j)])?;
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }
}

/// Evaluates `C(ψ, w)` for the given family.
pub fn cov_eval(family: CovFamily, psi: f64, w: f64) -> Result<f64> {
    family.validate()?;
    if !(psi > 0.0) || !psi.is_finite() {
        return Err(Error::Domain(format!("range parameter must be positive, got {psi}")));
    }
    if !(w >= 0.0) || !w.is_finite() {
        return Err(Error::Domain(format!("distance must be finite and nonnegative, got {w}")));
    }
    let t = w / psi;
    Ok(match family {
        CovFamily::Exponential => (-t).exp(),
        CovFamily::Gaussian => (-t * t).exp(),
        CovFamily::PoweredExponential { c } => (-t.powf(c)).exp(),
        CovFamily::Spherical => {
            if t >= 1.0 {
                0.0
            } else {
                1.0 - 1.5 * t + 0.5 * t * t * t
            }
        }
        CovFamily::Wave => {
            if w == 0.0 {
                1.0
            } else {
                t.sin() / t
            }
        }
        CovFamily::Matern { nu } => matern(psi, nu, w)?,
    })
}

/// Outcome of a K-linear-independence probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinIndepVerdict {
    pub k: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub smallest_singular_value: f64,
    pub largest_singular_value: f64,
    pub rank_tol: f64,
    pub full_rank: bool,
    /// `(rows, cols)` of the design matrix.
    pub design_matrix_shape: (usize, usize),
}

/// Design matrix `M[s][k] = C(ψ_k, s)`, plus a trailing column of ones when
/// `with_intercept` is set.
pub fn design_matrix(family: CovFamily, psis: &[f64], s: &[f64], with_intercept: bool) -> Result<DMatrix<f64>> {
    let cols = psis.len() + usize::from(with_intercept);
    let mut m = DMatrix::zeros(s.len(), cols);
    for (i, &w) in s.iter().enumerate() {
        for (k, &psi) in psis.iter().enumerate() {
            m[(i, k)] = cov_eval(family, psi, w)?;
        }
        if with_intercept {
            m[(i, cols - 1)] = 1.0;
        }
    }
    Ok(m)
}

/// Checks whether `C(ψ_1,·), …, C(ψ_K,·)` (and optionally a constant) are
/// linearly independent as functions on the finite set `s`, by the singular
/// values of the design matrix.
pub fn k_linear_independence(
    family: CovFamily,
    psis: &[f64],
    s: &[f64],
    with_intercept: bool,
    rank_tol: f64,
) -> Result<LinIndepVerdict> {
    for i in 0..psis.len() {
        for j in (i + 1)..psis.len() {
            if (psis[i] - psis[j]).abs() <= DUPLICATE_TOL * psis[i].abs().max(1.0) {
                return Err(Error::DuplicateParameter(psis[i]));
            }
        }
    }
    let cols = psis.len() + usize::from(with_intercept);
    if cols == 0 {
        return Err(Error::Precondition("need at least one parameter".into()));
    }
    if s.len() < cols {
        return Err(Error::Precondition(format!(
            "need at least {cols} distances, got {}",
            s.len()
        )));
    }
    let m = design_matrix(family, psis, s, with_intercept)?;
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let largest = sv[0];
    let smallest = sv[sv.len() - 1];
    Ok(LinIndepVerdict {
        k: psis.len(),
        full_rank: largest > 0.0 && smallest > rank_tol * largest,
        smallest_singular_value: smallest,
        largest_singular_value: largest,
        singular_values: sv,
        rank_tol,
        design_matrix_shape: (m.nrows(), m.ncols()),
    })
}

/// `count` distinct distances `w > 0` where the wave correlations with
/// ranges `phi_a` and `phi_b` coincide.
///
/// With `α = φ_big/φ_small` and `z = w/φ_big` the crossings are the roots of
/// `g(z) = sin z − sin(αz)/α`. For each `n = 1, 2, …` the interval
/// `(kπ/α, (k+1)π/α)` with `k = ⌊αn⌋` contains `nπ` and `g` changes sign on
/// it unless `αn` is an integer, in which case `nπ` is itself a root.
pub fn wave_crossings(phi_a: f64, phi_b: f64, count: usize) -> Result<Vec<f64>> {
    if !(phi_a > 0.0) || !(phi_b > 0.0) {
        return Err(Error::Domain("wave ranges must be positive".into()));
    }
    if (phi_a - phi_b).abs() <= DUPLICATE_TOL * phi_a.max(phi_b) {
        return Err(Error::DuplicateParameter(phi_a));
    }
    let (big, small) = if phi_a > phi_b { (phi_a, phi_b) } else { (phi_b, phi_a) };
    let alpha = big / small;
    let g = |z: f64| z.sin() - (alpha * z).sin() / alpha;
    let mut roots: Vec<f64> = Vec::with_capacity(count);
    let push = |roots: &mut Vec<f64>, z: f64| {
        if !roots.iter().any(|r| (r - z).abs() <= 1e-9 * z.max(1.0)) {
            roots.push(z);
        }
    };
    let max_n = 4 * count + 16;
    for n in 1..=max_n {
        if roots.len() >= count {
            break;
        }
        let an = alpha * n as f64;
        let k = an.floor();
        if (an - an.round()).abs() <= 1e-12 * an {
            push(&mut roots, n as f64 * PI);
            continue;
        }
        let (mut lo, mut hi) = (k * PI / alpha, (k + 1.0) * PI / alpha);
        let (mut glo, ghi) = (g(lo), g(hi));
        if glo == 0.0 {
            push(&mut roots, lo);
            continue;
        }
        if ghi == 0.0 {
            push(&mut roots, hi);
            continue;
        }
        if glo.signum() == ghi.signum() {
            return Err(Error::ConvergenceFailure(format!(
                "no sign change on bracket ({lo}, {hi})"
            )));
        }
        let mut converged = false;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm == 0.0 || hi - lo <= 4.0 * f64::EPSILON * hi {
                lo = mid;
                hi = mid;
                converged = true;
                break;
            }
            if gm.signum() == glo.signum() {
                lo = mid;
                glo = gm;
            } else {
                hi = mid;
            }
        }
        if !converged {
            return Err(Error::ConvergenceFailure(format!(
                "bisection did not close bracket near {}",
                n as f64 * PI
            )));
        }
        push(&mut roots, 0.5 * (lo + hi));
    }
    if roots.len() < count {
        return Err(Error::ConvergenceFailure(format!(
            "found only {} of {count} crossings",
            roots.len()
        )));
    }
    roots.sort_by(f64::total_cmp);
    roots.truncate(count);
    let ws: Vec<f64> = roots.into_iter().map(|z| z * big).collect();
    for &w in &ws {
        let diff = (cov_eval(CovFamily::Wave, phi_a, w)? - cov_eval(CovFamily::Wave, phi_b, w)?).abs();
        if diff > 1e-10 {
            return Err(Error::ConvergenceFailure(format!(
                "crossing at w={w} misses by {diff:e}"
            )));
        }
    }
    Ok(ws)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn temme_gammas_at_zero_and_half() {
        let (g1, g2, gp, gm) = temme_gammas(0.0);
        assert!((g1 + 0.577_215_664_901_532_9).abs() < 1e-15);
        assert_eq!(g2, 1.0);
        assert_eq!((gp, gm), (1.0, 1.0));
        let (_, _, gp, gm) = temme_gammas(0.5);
        assert!(rel(gp, 1.0 / gamma(1.5)) < 1e-14);
        assert!(rel(gm, 1.0 / gamma(0.5)) < 1e-14);
    }

    #[test]
    fn bessel_rejects_nonpositive_argument() {
        assert!(matches!(bessel_k(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(bessel_k(1.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn bessel_order_symmetry() {
        for &x in &[0.3, 1.9, 2.1, 10.0] {
            assert_eq!(bessel_k(1.3, x).unwrap(), bessel_k(-1.3, x).unwrap());
        }
    }

    #[test]
    fn cov_boundaries() {
        assert_eq!(cov_eval(CovFamily::Spherical, 2.0, 2.0).unwrap(), 0.0);
        assert!(cov_eval(CovFamily::Wave, 1.0, PI).unwrap().abs() < 1e-15);
        assert!(rel(cov_eval(CovFamily::PoweredExponential { c: 1.0 }, 3.0, 3.0).unwrap(), (-1.0f64).exp()) < 1e-15);
        assert!(cov_eval(CovFamily::Exponential, 0.0, 1.0).is_err());
        assert!(cov_eval(CovFamily::PoweredExponential { c: 0.0 }, 1.0, 1.0).is_err());
    }

    #[test]
    fn duplicate_parameters_rejected() {
        let r = k_linear_independence(CovFamily::Exponential, &[1.0, 1.0], &[1.0, 2.0], false, DEFAULT_RANK_TOL);
        assert!(matches!(r, Err(Error::DuplicateParameter(_))));
        assert!(matches!(wave_crossings(1.0, 1.0, 3), Err(Error::DuplicateParameter(_))));
    }

    #[test]
    fn family_json_roundtrip() {
        for f in [
            CovFamily::Exponential,
            CovFamily::PoweredExponential { c: 1.5 },
            CovFamily::Matern { nu: 2.5 },
        ] {
            let s = serde_json::to_string(&f).unwrap();
            assert_eq!(serde_json::from_str::<CovFamily>(&s).unwrap(), f);
        }
    }
}
