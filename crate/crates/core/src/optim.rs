//! Unconstrained minimizers used by the likelihood fits: BFGS on
//! central-difference gradients with an Armijo backtracking line search, and
//! a Nelder-Mead simplex as the derivative-free fallback.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimOptions {
    /// Converged when `‖∇f‖_∞ ≤ gtol·(1 + |f|)`.
    pub gtol: f64,
    pub max_iter: usize,
    /// Relative change in `f` below which BFGS counts an iteration as stalled.
    pub ftol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { gtol: 1e-6, max_iter: 500, ftol: 1e-14 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: String,
}

/// Central-difference step for coordinate value `x`.
fn step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Central-difference gradient. Non-finite one-sided values fall back to a
/// one-sided difference; if both sides fail the component is NaN.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step(x[i]);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - fx) / h,
                (false, true) => (fx - fm) / h,
                (false, false) => f64::NAN,
            }
        })
        .collect()
}

/// Central-difference Hessian.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut h = vec![vec![0.0; n]; n];
    let mut xp = x.to_vec();
    let eval = |xp: &mut Vec<f64>, i: usize, di: f64, j: usize, dj: f64| {
        xp[i] += di;
        xp[j] += dj;
        let v = f(xp);
        xp[i] = x[i];
        xp[j] = x[j];
        v
    };
    for i in 0..n {
        for j in i..n {
            let (hi, hj) = (10.0 * step(x[i]), 10.0 * step(x[j]));
            let v = (eval(&mut xp, i, hi, j, hj) - eval(&mut xp, i, hi, j, -hj) - eval(&mut xp, i, -hi, j, hj)
                + eval(&mut xp, i, -hi, j, -hj))
                / (4.0 * hi * hj);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with an inverse-Hessian update. The first step uses a unit-scaled
/// identity; the Hessian estimate is reset whenever the search direction
/// stops being a descent direction or the line search fails.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let done = |x: Vec<f64>, f: f64, g: f64, it: usize, ok: bool| OptimResult {
        x,
        f,
        grad_norm: g,
        iterations: it,
        converged: ok,
        method: "bfgs".into(),
    };
    if !fx.is_finite() {
        return done(x, fx, f64::NAN, 0, false);
    }
    let identity = || {
        let mut h = vec![vec![0.0; n]; n];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        h
    };
    let mut h = identity();
    let mut fresh = true;
    let mut g = gradient(f, &x, fx);
    let mut stalled = 0;
    for it in 0..opts.max_iter {
        let gn = inf_norm(&g);
        if !gn.is_finite() {
            return done(x, fx, gn, it, false);
        }
        if gn <= opts.gtol * (1.0 + fx.abs()) {
            return done(x, fx, gn, it, true);
        }
        let mut p: Vec<f64> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&g, &p);
        if slope >= 0.0 {
            h = identity();
            fresh = true;
            p = g.iter().map(|v| -v).collect();
            slope = dot(&g, &p);
        }
        // Keep the first step of a fresh direction at unit length in θ.
        let mut alpha = if fresh { 1.0 / inf_norm(&p).max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
            let fnew = f(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if fresh {
                return done(x, fx, gn, it, false);
            }
            h = identity();
            fresh = true;
            continue;
        };
        let gnew = gradient(f, &xn, fnew);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy.is_finite() {
            if fresh {
                let scale = sy / dot(&y, &y);
                for (i, row) in h.iter_mut().enumerate() {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    row[i] = scale;
                }
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh = false;
        }
        let rel = (fx - fnew).abs() / (1.0 + fx.abs());
        stalled = if rel <= opts.ftol { stalled + 1 } else { 0 };
        x = xn;
        fx = fnew;
        g = gnew;
        if stalled >= 5 {
            let gn = inf_norm(&g);
            return done(x, fx, gn, it + 1, gn <= opts.gtol * (1.0 + fx.abs()));
        }
    }
    let gn = inf_norm(&g);
    done(x, fx, gn, opts.max_iter, gn <= opts.gtol * (1.0 + fx.abs()))
}

/// Nelder-Mead with the standard coefficients and an initial simplex of
/// half-unit steps along each axis.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += 0.5;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    let max_evals = opts.max_iter * (n + 1) * 4;
    let mut evals = n + 1;
    let mut iterations = 0;
    let mut converged = false;
    while evals < max_evals {
        iterations += 1;
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        let spread = vals[n] - vals[0];
        let size = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if vals[0].is_finite() && spread <= 1e-12 * (1.0 + vals[0].abs()) && size <= 1e-8 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = eval(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            evals += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    pts[i] = (0..n).map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j])).collect();
                    vals[i] = eval(&pts[i]);
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    OptimResult {
        x: pts[best].clone(),
        f: vals[best],
        grad_norm: f64::NAN,
        iterations,
        converged,
        method: "nelder_mead".into(),
    }
}

/// BFGS first; if it does not converge, Nelder-Mead from the best point so
/// far followed by a BFGS polish.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let first = bfgs(f, x0, opts);
    if first.converged {
        return first;
    }
    let start = if first.f.is_finite() { first.x.clone() } else { x0.to_vec() };
    let nm = nelder_mead(f, &start, opts);
    let mut polish = bfgs(f, &nm.x, opts);
    polish.iterations += first.iterations + nm.iterations;
    polish.method = "bfgs+nelder_mead".into();
    let candidates = [first, polish];
    let ok = candidates.iter().filter(|r| r.converged).min_by(|a, b| a.f.total_cmp(&b.f));
    match ok {
        Some(r) => r.clone(),
        None => candidates.into_iter().min_by(|a, b| a.f.total_cmp(&b.f)).unwrap(),
    }
}
