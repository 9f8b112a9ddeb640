//! Unconstrained minimization of smooth functionals of the nodal values:
//! steepest descent, Polak–Ribière nonlinear CG and truncated (damped)
//! Newton–CG, all globalized by an Armijo backtracking line search.
//!
//! Boundary entries of gradients and Hessian products are zero, so iterates
//! never leave the Dirichlet subspace.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A functional of the nodal values with an exact gradient.
#[allow(clippy::len_without_is_empty)]
pub trait Objective {
    fn len(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes the gradient into `out` and returns the value.
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<f64>;

    /// `F(x + alpha d) - F(x)` together with a magnitude against which its
    /// rounding error should be judged. Override to avoid the cancellation of
    /// the plain difference near a minimizer.
    fn value_change(&self, x: &[f64], d: &[f64], alpha: f64) -> (f64, f64) {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        let (f0, f1) = (self.value(x), self.value(&xt));
        (f1 - f0, f0.abs() + f1.abs())
    }

    /// Hessian (or a symmetric model of it) frozen at `x`.
    fn hessian(&self, _x: &[f64]) -> Option<Box<dyn HessianOp + '_>> {
        None
    }
}

pub trait HessianOp {
    fn apply(&self, v: &[f64], out: &mut [f64]);

    /// Positive diagonal used for Jacobi preconditioning.
    fn preconditioner_diagonal(&self) -> &[f64];

    /// A positive semidefinite part of the operator, used for the step when
    /// the full operator shows negative curvature.
    fn apply_convex(&self, v: &[f64], out: &mut [f64]) {
        self.apply(v, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    GradientDescent,
    NonlinearCg,
    NewtonDamped,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::GradientDescent => "gradient_descent",
            Method::NonlinearCg => "nonlinear_cg",
            Method::NewtonDamped => "newton_damped",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "gradient_descent" => Ok(Method::GradientDescent),
            "nonlinear_cg" => Ok(Method::NonlinearCg),
            "newton_damped" => Ok(Method::NewtonDamped),
            _ => Err(Error::InvalidParameter(format!(
                "unknown method {s:?} (expected gradient_descent, nonlinear_cg or newton_damped)"
            ))),
        }
    }
}

/// Sufficient-decrease constant and backtracking factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Armijo {
    pub c1: f64,
    pub backtrack: f64,
}

impl Default for Armijo {
    fn default() -> Self {
        Armijo {
            c1: 1e-4,
            backtrack: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once `‖∇F‖₂ <= tol * scale`, the scale being problem dependent.
    pub tol: f64,
    pub max_iters: usize,
    pub line_search: Armijo,
    pub method: Method,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iters: 5000,
            line_search: Armijo::default(),
            method: Method::NewtonDamped,
        }
    }
}

impl SolverOptions {
    pub fn with_method(method: Method) -> SolverOptions {
        SolverOptions {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.tol > 0.0) {
            return bad(format!("tol > 0 violated (tol = {})", self.tol));
        }
        if self.max_iters == 0 {
            return bad("max_iters >= 1 violated".into());
        }
        let Armijo { c1, backtrack } = self.line_search;
        if !(c1 > 0.0 && c1 < 1.0) {
            return bad(format!("Armijo constant must lie in (0, 1), got {c1}"));
        }
        if !(backtrack > 0.0 && backtrack < 1.0) {
            return bad(format!("backtrack factor must lie in (0, 1), got {backtrack}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeReport {
    pub iterations: usize,
    pub converged: bool,
    /// Final `‖∇F‖₂`.
    pub residual: f64,
    /// The residual the run had to reach.
    pub threshold: f64,
    pub value: f64,
    /// Functional value after every accepted step, starting with the initial one.
    pub values: Vec<f64>,
    /// The run stopped because no step along a descent direction decreased `F`
    /// (usually: the value has reached its rounding floor).
    pub stalled: bool,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Trial {
    alpha: f64,
    value: f64,
    /// Accepted without sufficient decrease, at the rounding floor.
    floor: bool,
}

struct LineSearch<'a> {
    obj: &'a dyn Objective,
    armijo: Armijo,
    xt: Vec<f64>,
    gt: Vec<f64>,
}

impl LineSearch<'_> {
    fn point(&mut self, x: &[f64], d: &[f64], alpha: f64) {
        for ((t, xi), di) in self.xt.iter_mut().zip(x).zip(d) {
            *t = xi + alpha * di;
        }
    }

    /// Secant steps on `φ'(α) = ∇F(x + αd)·d`, then a few nearby trials until
    /// one is non-increasing and reduces the gradient.
    fn floor_step(&mut self, x: &[f64], f0: f64, g0_norm: f64, d: &[f64], slope: f64, alpha0: f64) -> Result<Option<Trial>> {
        let (mut a_lo, mut s_lo) = (0.0, slope);
        let mut a = alpha0;
        for _ in 0..6 {
            self.point(x, d, a);
            self.obj.gradient(&self.xt, &mut self.gt)?;
            let s = dot(&self.gt, d);
            if !s.is_finite() || s == s_lo {
                break;
            }
            let next = a_lo + (a - a_lo) * s_lo / (s_lo - s);
            if !(next > 0.0) || !next.is_finite() {
                break;
            }
            let next = next.min(16.0 * a);
            if (next - a).abs() <= 1e-3 * a {
                a = next;
                break;
            }
            if s < 0.0 {
                (a_lo, s_lo) = (a, s);
            }
            a = next;
        }
        for c in [1.0, 0.97, 1.03, 0.9, 1.1, 0.8, 0.7, 0.5, 0.3] {
            let at = a * c;
            let (df, _) = self.obj.value_change(x, d, at);
            if df.is_finite() && df <= 0.0 {
                self.point(x, d, at);
                self.obj.gradient(&self.xt, &mut self.gt)?;
                if norm2(&self.gt) < g0_norm {
                    return Ok(Some(Trial { alpha: at, value: f0 + df, floor: true }));
                }
            }
        }
        Ok(None)
    }

    /// Backtracks from `alpha0`; when `expand` is set and the first trial is
    /// accepted, keeps doubling while the value keeps dropping. On success
    /// `xt`/`gt` hold the accepted point and its gradient, and the returned
    /// value is `f0` plus the accurately computed change.
    fn search(&mut self, x: &[f64], f0: f64, g0: &[f64], d: &[f64], alpha0: f64, expand: bool) -> Result<Option<Trial>> {
        let slope = dot(g0, d);
        let g0_norm = norm2(g0);
        let Armijo { c1, backtrack } = self.armijo;
        let mut alpha = alpha0;
        let mut tried_floor = false;
        for attempt in 0..80 {
            let (df, mag) = self.obj.value_change(x, d, alpha);
            if df.is_finite() && df <= c1 * alpha * slope {
                let mut best = (alpha, df);
                if expand && attempt == 0 {
                    for _ in 0..40 {
                        let a2 = 2.0 * best.0;
                        let (df2, _) = self.obj.value_change(x, d, a2);
                        if df2.is_finite() && df2 <= c1 * a2 * slope && df2 < best.1 {
                            best = (a2, df2);
                        } else {
                            break;
                        }
                    }
                }
                self.point(x, d, best.0);
                self.obj.gradient(&self.xt, &mut self.gt)?;
                return Ok(Some(Trial { alpha: best.0, value: f0 + best.1, floor: false }));
            }
            // Even the accurate change is lost in rounding: pick the step from
            // the derivative instead.
            if !tried_floor && df.is_finite() && df.abs() <= 1e-13 * mag {
                tried_floor = true;
                if let Some(t) = self.floor_step(x, f0, g0_norm, d, slope, alpha)? {
                    return Ok(Some(t));
                }
            }
            if df.is_finite() && df <= 0.0 {
                self.point(x, d, alpha);
                self.obj.gradient(&self.xt, &mut self.gt)?;
                if norm2(&self.gt) < g0_norm {
                    return Ok(Some(Trial { alpha, value: f0 + df, floor: true }));
                }
            }
            alpha *= backtrack;
        }
        Ok(None)
    }
}

/// Preconditioned CG on `H d = -g`, truncated at the first direction of
/// non-positive curvature. Returns the step and whether curvature was
/// non-positive; at the first iteration the step is then the preconditioned
/// gradient.
fn truncated_cg(
    apply: &dyn Fn(&[f64], &mut [f64]),
    m: &[f64],
    g: &[f64],
    rtol: f64,
    max_iter: usize,
) -> (Vec<f64>, bool) {
    let n = g.len();
    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut z: Vec<f64> = r.iter().zip(m).map(|(ri, mi)| ri / mi).collect();
    let mut p = z.clone();
    let mut hp = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = rtol * norm2(g);
    for k in 0..max_iter {
        apply(&p, &mut hp);
        let php = dot(&p, &hp);
        if !(php > 0.0) || !php.is_finite() {
            if k == 0 {
                return (z, true);
            }
            return (x, true);
        }
        let a = rz / php;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * hp[i];
        }
        if norm2(&r) <= target {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / m[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, false)
}

/// Minimizes `obj` starting from `x` (updated in place). Converged means
/// `‖∇F(x)‖₂ <= opts.tol * scale`.
pub fn minimize(obj: &dyn Objective, x: &mut [f64], opts: &SolverOptions, scale: f64) -> Result<MinimizeReport> {
    opts.validate()?;
    let n = obj.len();
    assert_eq!(x.len(), n, "start point has the wrong length");
    let threshold = opts.tol * scale;

    let mut g = vec![0.0; n];
    let mut f = obj.gradient(x, &mut g)?;
    let mut values = vec![f];
    let mut ls = LineSearch {
        obj,
        armijo: opts.line_search,
        xt: vec![0.0; n],
        gt: vec![0.0; n],
    };

    let g_first = norm2(&g);
    let mut d = vec![0.0; n];
    let mut have_direction = false;
    let mut alpha_prev = 1.0;
    let mut slope_prev = 0.0;
    let mut iterations = 0;
    let mut stalled = false;
    let mut floor_steps = 0;
    let mut g_best = g_first;
    // Non-linear CG restarts at least once every n steps.
    let restart_every = n.max(1);

    while iterations < opts.max_iters {
        let g_norm = norm2(&g);
        if g_norm <= threshold {
            break;
        }

        let (alpha0, expand) = match opts.method {
            Method::GradientDescent => {
                d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
                (alpha_prev * 2.0, true)
            }
            Method::NonlinearCg => {
                if !have_direction || iterations % restart_every == 0 {
                    d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
                }
                let slope = dot(&g, &d);
                let alpha0 = if have_direction && slope < 0.0 {
                    (alpha_prev * slope_prev / slope).min(1e12)
                } else {
                    alpha_prev
                };
                (alpha0, true)
            }
            Method::NewtonDamped => {
                let forcing = (g_norm / g_first).sqrt().clamp(1e-12, 0.1);
                let max_cg = n.clamp(50, 4000);
                let (step, fallback) = match obj.hessian(x) {
                    Some(h) => {
                        let m = h.preconditioner_diagonal();
                        let (step, negative) = truncated_cg(&|v, o| h.apply(v, o), m, &g, forcing, max_cg);
                        if negative {
                            truncated_cg(&|v, o| h.apply_convex(v, o), m, &g, forcing, max_cg)
                        } else {
                            (step, false)
                        }
                    }
                    None => (g.iter().map(|v| -v).collect(), true),
                };
                d.copy_from_slice(&step);
                (if fallback { alpha_prev } else { 1.0 }, fallback)
            }
        };

        // Guard against non-descent directions.
        let mut slope = dot(&g, &d);
        let mut steepest = opts.method == Method::GradientDescent;
        if !(slope < 0.0) {
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = -g_norm * g_norm;
            steepest = true;
        }

        let mut trial = ls.search(x, f, &g, &d, alpha0, expand)?;
        if trial.is_none() && !steepest {
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = -g_norm * g_norm;
            trial = ls.search(x, f, &g, &d, alpha_prev.max(1e-12), true)?;
        }
        let Some(step) = trial else {
            stalled = true;
            break;
        };

        // Many steps in a row with neither a measurable decrease nor a clear
        // drop of the gradient: give up.
        let g_new = norm2(&ls.gt);
        let progress = (!step.floor && step.value < f) || g_new < 0.9 * g_best;
        g_best = g_best.min(g_new);
        floor_steps = if progress { 0 } else { floor_steps + 1 };
        if floor_steps >= 20 {
            stalled = true;
        }
        x.copy_from_slice(&ls.xt);
        f = step.value;
        values.push(f);
        iterations += 1;

        if opts.method == Method::NonlinearCg {
            // Polak–Ribière+, computed before overwriting g.
            let gg_old = dot(&g, &g);
            let gy: f64 = ls.gt.iter().zip(&g).map(|(gn, go)| gn * (gn - go)).sum();
            let beta = (gy / gg_old).max(0.0);
            for (di, gi) in d.iter_mut().zip(&ls.gt) {
                *di = -gi + beta * *di;
            }
            have_direction = true;
        }
        slope_prev = slope;
        alpha_prev = step.alpha;
        g.copy_from_slice(&ls.gt);
        if stalled {
            break;
        }
    }

    let residual = norm2(&g);
    Ok(MinimizeReport {
        iterations,
        converged: residual <= threshold,
        residual,
        threshold,
        value: f,
        values,
        stalled,
    })
}
