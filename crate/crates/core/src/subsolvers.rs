//! The two solution maps of the alternating scheme and the first
//! p-Laplacian eigenpair.
//!
//! * `S(ψ)` is the minimizer of the strictly convex `I1(·; ψ)`.
//! * `T(v)` is a nonnegative minimizer of `I3(·; v)`, found without
//!   constraints from the start `t*·φ₁` (where `I3 < 0`) and then replaced by
//!   its positive part.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::energy::{dirichlet_grad_add, dirichlet_value, CouplingParams, I1Functional, I3Functional};
use crate::error::{Error, Result};
use crate::grid::{integrate_nodes, positive_part, Grid, GridFunction};
use crate::optimize::{minimize, norm2, MinimizeReport, Objective, SolverOptions};

/// A sub-problem solution together with the minimizer's report. A run that
/// hit `max_iters` still returns its best iterate with `report.converged == false`.
#[derive(Debug, Clone)]
pub struct SubSolve {
    pub field: GridFunction,
    pub report: MinimizeReport,
}

/// `S(ψ)`: the solution of `-Δ_p v + A(ψ⁺)^(θ+1)|v|^(r-2)v = f`.
pub fn solve_s(psi: &GridFunction, f: &GridFunction, params: &CouplingParams, opts: &SolverOptions) -> Result<SubSolve> {
    solve_s_from(psi, f, params, opts, None)
}

/// [`solve_s`] from a chosen start (zero when `start` is `None`).
pub fn solve_s_from(
    psi: &GridFunction,
    f: &GridFunction,
    params: &CouplingParams,
    opts: &SolverOptions,
    start: Option<&GridFunction>,
) -> Result<SubSolve> {
    params.validate()?;
    let i1 = I1Functional::new(psi, f, params)?;
    let mut x = match start {
        Some(s) => {
            s.check_same_grid(psi)?;
            s.values().to_vec()
        }
        None => vec![0.0; psi.values().len()],
    };
    let scale = i1.load_norm().max(1.0);
    let report = minimize(&i1, &mut x, opts, scale)?;
    Ok(SubSolve {
        field: GridFunction::from_raw(psi.grid(), x),
        report,
    })
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda1: f64,
    /// Nonnegative, with unit discrete `L^p` norm.
    pub phi1: GridFunction,
    pub iterations: usize,
    pub converged: bool,
    /// Final relative residual of the eigen-equation.
    pub residual: f64,
}

/// `p · p_dirichlet(v, eps) / ∫|v|^p`: equals `∫|∇v|^p / ∫|v|^p` when `eps = 0`.
pub fn rayleigh_quotient(v: &GridFunction, p: f64, eps: f64) -> f64 {
    let den = integrate_nodes(v.grid(), |i| v.values()[i].abs().powf(p));
    p * dirichlet_value(v.grid(), v.values(), p, eps) / den
}

/// Inverse power iteration for the p-Laplacian: `w` solves
/// `-Δ_p w = |φ|^(p-2)φ` (an `S` solve with `A = 0`), then `φ ← w/‖w‖_p`.
/// Starts from the product-of-sines bubble. Convergence means the relative
/// residual of `-Δ_p φ = λ|φ|^(p-2)φ` is below `opts.tol`; each inner solve
/// uses `opts` with a tighter tolerance.
pub fn first_eigenpair(grid: &Arc<Grid>, p: f64, eps: f64, opts: &SolverOptions) -> Result<EigenPair> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("p > 1 violated (p = {p})")));
    }
    opts.validate()?;
    let extent = grid.extent();
    let bubble = GridFunction::from_fn(grid, |x| {
        extent.iter().enumerate().map(|(d, &l)| (PI * x[d] / l).sin()).product()
    });
    let n = grid.num_nodes();
    let vol = grid.cell_volume();
    // A = 0 removes the coupling; r is irrelevant but must be admissible.
    let params = CouplingParams::new(p, 0.0, 2.0, 0.0, eps)?;
    let zero = GridFunction::zeros(grid);
    let inner = SolverOptions {
        tol: (0.1 * opts.tol).max(1e-13),
        ..*opts
    };

    let normalize = |v: &mut [f64]| {
        let norm = integrate_nodes(grid, |i| v[i].abs().powf(p)).powf(1.0 / p);
        v.iter_mut().for_each(|x| *x /= norm);
    };
    let residual_of = |v: &[f64]| -> Result<(f64, f64)> {
        let lambda = p * dirichlet_value(grid, v, p, eps);
        let mut grad = vec![0.0; n];
        dirichlet_grad_add(grid, v, p, eps, 1.0, &mut grad)?;
        let mut mass = 0.0;
        for i in 0..n {
            let m = lambda * crate::energy::signed_pow(v[i], p - 1.0) * vol;
            grad[i] -= m;
            mass += m * m;
        }
        Ok((lambda, norm2(&grad) / mass.sqrt()))
    };

    let mut v = bubble.into_values();
    normalize(&mut v);
    let (mut lambda, mut residual) = residual_of(&v)?;
    let mut iterations = 0;
    while iterations < opts.max_iters && residual > opts.tol {
        let rhs = GridFunction::from_raw(grid, v.iter().map(|&x| crate::energy::signed_pow(x, p - 1.0)).collect());
        // At an eigenfunction the solution is exactly λ^(-1/(p-1)) φ.
        let start = GridFunction::from_raw(grid, v.clone()).scaled(lambda.powf(-1.0 / (p - 1.0)));
        let i1 = I1Functional::new(&zero, &rhs, &params)?;
        let mut next = start.into_values();
        let report = minimize(&i1, &mut next, &inner, i1.load_norm())?;
        normalize(&mut next);
        let (l, r) = residual_of(&next)?;
        iterations += 1;
        if !(r < residual) && !report.converged {
            break;
        }
        v = next;
        residual = r;
        lambda = l;
    }

    // Round-off can leave tiny negative entries; remove them and renormalize.
    let mut phi = positive_part(&GridFunction::from_raw(grid, v)).into_values();
    normalize(&mut phi);
    let phi1 = GridFunction::from_raw(grid, phi);
    let lambda1 = rayleigh_quotient(&phi1, p, eps);
    Ok(EigenPair {
        lambda1,
        phi1,
        iterations,
        converged: residual <= opts.tol,
        residual,
    })
}

/// Minimizer over `t > 0` of `c1 t^p - c2 t^(θ+1)` (0 when `c2 <= 0`).
pub fn scaling_minimizer(c1: f64, c2: f64, p: f64, theta: f64) -> f64 {
    if !(c2 > 0.0) {
        return 0.0;
    }
    ((theta + 1.0) * c2 / (p * c1)).powf(1.0 / (p - 1.0 - theta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingInit {
    pub t_star: f64,
    pub c1: f64,
    pub c2: f64,
}

/// `c1 = (θ+1) λ₁/p ∫φ₁^p`, `c2 = ∫φ₁^(θ+1)|v|^r` and the minimizing scale `t*`
/// of `I3(t φ₁) = c1 t^p - c2 t^(θ+1)`.
pub fn scaling_init(v: &GridFunction, params: &CouplingParams, eigen: &EigenPair) -> Result<ScalingInit> {
    v.check_same_grid(&eigen.phi1)?;
    let CouplingParams { p, r, theta, .. } = *params;
    let phi = eigen.phi1.values();
    let int_phi_p = integrate_nodes(v.grid(), |i| phi[i].powf(p));
    let c1 = (theta + 1.0) * eigen.lambda1 / p * int_phi_p;
    let vv = v.values();
    let c2 = integrate_nodes(v.grid(), |i| phi[i].powf(theta + 1.0) * vv[i].abs().powf(r));
    Ok(ScalingInit {
        t_star: scaling_minimizer(c1, c2, p, theta),
        c1,
        c2,
    })
}

#[derive(Debug, Clone)]
pub struct TSolve {
    /// `ζ = T(v) >= 0`.
    pub field: GridFunction,
    pub report: MinimizeReport,
    pub scaling: ScalingInit,
    /// `I3` at the start point, at the raw minimizer, and at its positive part.
    pub i3_start: f64,
    pub i3_raw: f64,
    pub i3: f64,
}

/// `T(v)`: a nonnegative solution of `-Δ_p ζ = |v|^r ζ^θ` obtained by
/// minimizing `I3(·; v)` from `t*·φ₁`.
pub fn solve_t(v: &GridFunction, params: &CouplingParams, eigen: &EigenPair, opts: &SolverOptions) -> Result<TSolve> {
    solve_t_from(v, params, eigen, opts, None)
}

/// [`solve_t`], additionally offered a warm start. The warm start (its
/// positive part) replaces `t*·φ₁` only if its `I3` value is lower, so the
/// result still satisfies `I3(ζ) <= I3(t*·φ₁)`.
pub fn solve_t_from(
    v: &GridFunction,
    params: &CouplingParams,
    eigen: &EigenPair,
    opts: &SolverOptions,
    warm: Option<&GridFunction>,
) -> Result<TSolve> {
    params.validate()?;
    let grid = v.grid();
    let scaling = scaling_init(v, params, eigen)?;
    if v.is_zero() {
        return Ok(TSolve {
            field: GridFunction::zeros(grid),
            report: MinimizeReport {
                iterations: 0,
                converged: true,
                residual: 0.0,
                threshold: opts.tol,
                value: 0.0,
                values: vec![0.0],
                stalled: false,
            },
            scaling,
            i3_start: 0.0,
            i3_raw: 0.0,
            i3: 0.0,
        });
    }
    let i3 = I3Functional::new(v, params)?;
    let mut x = eigen.phi1.scaled(scaling.t_star).into_values();
    let mut i3_start = i3.value(&x);
    if let Some(w) = warm {
        w.check_same_grid(v)?;
        let wp = positive_part(w).into_values();
        let value = i3.value(&wp);
        if value < i3_start {
            x = wp;
            i3_start = value;
        }
    }
    let scale = i3.source_norm_at(&x).max(1.0);
    let report = minimize(&i3, &mut x, opts, scale)?;
    let i3_raw = i3.value(&x);
    let field = positive_part(&GridFunction::from_raw(grid, x));
    let i3_final = i3.value(field.values());
    Ok(TSolve {
        field,
        report,
        scaling,
        i3_start,
        i3_raw,
        i3: i3_final,
    })
}

/// Euclidean norm of the `I1` gradient at `v`.
pub fn s_residual(v: &GridFunction, psi: &GridFunction, f: &GridFunction, params: &CouplingParams) -> Result<f64> {
    let i1 = I1Functional::new(psi, f, params)?;
    let mut g = vec![0.0; v.values().len()];
    i1.gradient(v.values(), &mut g)?;
    Ok(norm2(&g))
}

/// Euclidean norm of the `I3` gradient at `zeta`.
pub fn t_residual(zeta: &GridFunction, v: &GridFunction, params: &CouplingParams) -> Result<f64> {
    let i3 = I3Functional::new(v, params)?;
    let mut g = vec![0.0; zeta.values().len()];
    i3.gradient(zeta.values(), &mut g)?;
    Ok(norm2(&g))
}

/// Default options for eigenpairs used only to seed `T`.
pub fn eigen_seed_options() -> SolverOptions {
    SolverOptions {
        tol: 1e-6,
        max_iters: 500,
        ..Default::default()
    }
}
