//! The alternating iteration `φ_{k+1} = T(S(φ_k))` and the quantities used to
//! monitor it.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{i3_grad, j_value, nodal_integral, CouplingParams};
use crate::error::{Error, Result};
use crate::grid::{gradient_power_integral, lq_norm, w1p_seminorm, GridFunction};
use crate::optimize::SolverOptions;
use crate::subsolvers::{eigen_seed_options, first_eigenpair, s_residual, solve_s_from, solve_t_from, t_residual, EigenPair, SubSolve};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    /// Stop when `‖T(S(φ)) - φ‖ <= fp_tol ‖T(S(φ))‖` in the `W^{1,p}` seminorm.
    pub fp_tol: f64,
    pub max_outer: usize,
    /// Relaxation: `φ ← (1-ω)φ + ω T(S(φ))`.
    pub omega: f64,
    pub solver: SolverOptions,
    /// Options for the eigenpair that seeds `T`.
    pub eigen: SolverOptions,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            fp_tol: 1e-6,
            max_outer: 200,
            omega: 1.0,
            solver: SolverOptions::default(),
            eigen: eigen_seed_options(),
        }
    }
}

impl FixedPointOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.fp_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("fp_tol must be positive, got {}", self.fp_tol)));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidParameter("max_outer must be at least 1".into()));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::InvalidParameter(format!("omega must lie in (0, 1], got {}", self.omega)));
        }
        self.solver.validate()?;
        self.eigen.validate()
    }
}

/// The bounded quantities of the a priori estimates, for one pair `(u, φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LemmaQuantities {
    /// `‖u‖_{L^{r+1}}`
    pub norm_u_r1: f64,
    /// `‖∇u‖_{L^p}`
    pub norm_u_w1p: f64,
    /// `‖∇φ‖_{L^p}`
    pub norm_phi_w1p: f64,
    /// `∫ φ^{θ+1} |u|^r`
    pub int_phi_ur: f64,
    /// `∫ |u|^{r+1} φ^θ`
    pub int_ur1_phitheta: f64,
}

impl LemmaQuantities {
    pub const NAMES: [&'static str; 5] = ["norm_u_r1", "norm_u_w1p", "norm_phi_w1p", "int_phi_ur", "int_ur1_phitheta"];

    pub fn as_array(&self) -> [f64; 5] {
        [self.norm_u_r1, self.norm_u_w1p, self.norm_phi_w1p, self.int_phi_ur, self.int_ur1_phitheta]
    }
}

/// One outer iteration: `u_k = S(φ_k)`, `ζ_k = T(u_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    /// `‖ζ_k - φ_k‖ / ‖ζ_k‖` in the `W^{1,p}` seminorm (absolute if `ζ_k = 0`).
    pub dphi_rel: f64,
    /// `J(u_k, φ_k)`
    pub j: f64,
    pub res_s: f64,
    pub res_t: f64,
    /// Evaluated on the matched pair `(u_k, ζ_k)`.
    pub lemma: LemmaQuantities,
    pub energy_id_res: f64,
}

pub type SolveTrace = Vec<TraceRow>;

pub const TRACE_HEADER: [&str; 11] = [
    "k",
    "dphi_rel",
    "J",
    "res_S",
    "res_T",
    "norm_u_r1",
    "norm_u_w1p",
    "norm_phi_w1p",
    "int_phi_ur",
    "int_ur1_phitheta",
    "energy_id_res",
];

/// Shortest text that parses back to `v` exactly, in exponent form when
/// `|v|` is far from 1.
pub fn csv_number(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

impl TraceRow {
    pub fn to_record(&self) -> Vec<String> {
        let mut rec = vec![self.k.to_string()];
        rec.extend([self.dphi_rel, self.j, self.res_s, self.res_t].iter().map(|&v| csv_number(v)));
        rec.extend(self.lemma.as_array().iter().map(|&v| csv_number(v)));
        rec.push(csv_number(self.energy_id_res));
        rec
    }
}

#[derive(Debug, Clone)]
pub struct SolutionPair {
    pub u: GridFunction,
    /// Nonnegative.
    pub phi: GridFunction,
    pub converged: bool,
    pub trace: SolveTrace,
}

/// Runs the fixed-point iteration from `φ₀ = 0` and returns
/// `(S(φ_final), φ_final)`. Reaching `max_outer`, or a sub-solve that misses
/// its tolerance, is reported through `converged`, not as an error.
///
/// Each step moves from `φ` toward `T(S(φ))`. Fixed points are critical
/// points (local maxima) of `K(η) = J(S(η), η)`, and `T(S(η)) - η` is an
/// ascent direction of `K`, so the relaxation `ω` is chosen by backtracking
/// on `K`. An Anderson-mixed candidate built from the last few iterates is
/// tried first.
pub fn solve_system(f: &GridFunction, params: &CouplingParams, opts: &FixedPointOptions) -> Result<SolutionPair> {
    params.validate()?;
    opts.validate()?;
    let eigen = first_eigenpair(f.grid(), params.p, params.eps, &opts.eigen)?;
    solve_system_with(f, params, opts, &eigen)
}

/// Depth of the Anderson history.
const ANDERSON_DEPTH: usize = 5;

/// [`solve_system`] with a precomputed eigenpair (for sweeps over data that
/// share a grid and `p`).
pub fn solve_system_with(
    f: &GridFunction,
    params: &CouplingParams,
    opts: &FixedPointOptions,
    eigen: &EigenPair,
) -> Result<SolutionPair> {
    params.validate()?;
    opts.validate()?;
    f.check_same_grid(&eigen.phi1)?;
    let grid = f.grid();
    let p = params.p;
    let n = grid.num_nodes();

    let mut phi = GridFunction::zeros(grid);
    let s = solve_s_from(&phi, f, params, &opts.solver, None)?;
    let mut u = s.field;
    let mut s_report = s.report;
    let mut k_val = j_value(&u, &phi, f, params)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut trace = Vec::new();
    let mut fp_converged = false;
    let mut t_converged = true;

    for k in 0..opts.max_outer {
        let t = solve_t_from(&u, params, eigen, &opts.solver, Some(&phi))?;
        t_converged = t.report.converged;
        let zeta = t.field;
        let residual: Vec<f64> = zeta.values().iter().zip(phi.values()).map(|(z, x)| z - x).collect();
        let change = w1p_seminorm(&GridFunction::from_raw(grid, residual.clone()), p)?;
        let size = w1p_seminorm(&zeta, p)?;
        let dphi_rel = if size > 0.0 { change / size } else { change };
        trace.push(TraceRow {
            k,
            dphi_rel,
            j: k_val,
            res_s: s_report.residual,
            res_t: t.report.residual,
            lemma: lemma_quantities(&u, &zeta, params)?,
            energy_id_res: energy_identity_residual(&u, &zeta, params)?,
        });
        if dphi_rel <= opts.fp_tol {
            phi = zeta;
            fp_converged = true;
            break;
        }

        // Directional derivative of K along the residual.
        let slope = k_slope(&phi, &u, &residual, params)?;
        let floor = 1e-12 * (1.0 + k_val.abs());

        history.push_back((phi.values().to_vec(), zeta.values().to_vec()));
        if history.len() > ANDERSON_DEPTH + 1 {
            history.pop_front();
        }

        let mut next = None;
        if history.len() >= 2 {
            if let Some(cand) = anderson_candidate(&history, n) {
                let cand = GridFunction::from_raw(grid, cand);
                let s = solve_s_from(&cand, f, params, &opts.solver, Some(&u))?;
                let kv = j_value(&s.field, &cand, f, params)?;
                if kv >= k_val - floor {
                    next = Some((cand, s, kv));
                } else {
                    history.clear();
                    history.push_back((phi.values().to_vec(), zeta.values().to_vec()));
                }
            }
        }
        if next.is_none() {
            next = relaxed_step(&phi, &zeta, &residual, &u, f, params, opts, k_val, slope)?;
        }
        let Some((cand, s, kv)) = next else {
            break;
        };
        phi = cand;
        u = s.field;
        s_report = s.report;
        k_val = kv;
    }

    let u = if fp_converged {
        let s = solve_s_from(&phi, f, params, &opts.solver, Some(&u))?;
        s_report = s.report;
        s.field
    } else {
        u
    };
    Ok(SolutionPair {
        u,
        phi,
        converged: fp_converged && t_converged && s_report.converged,
        trace,
    })
}

/// One-sided derivative of `K(η) = J(S(η), η)` at `eta` along `dir`, with
/// `u = S(eta)`: `-(A/r)` times the derivative of `I3(·; u)`. Where `eta = 0`
/// and θ = 0, `(η⁺)` has one-sided derivative `dir⁺`.
fn k_slope(eta: &GridFunction, u: &GridFunction, dir: &[f64], params: &CouplingParams) -> Result<f64> {
    let g = i3_grad(eta, u, params)?;
    let mut s: f64 = g.values().iter().zip(dir).map(|(a, b)| a * b).sum();
    if params.theta == 0.0 {
        let grid = eta.grid();
        let vol = grid.cell_volume();
        for (i, (&e, &d)) in eta.values().iter().zip(dir).enumerate() {
            if e == 0.0 && d > 0.0 && !grid.is_boundary(i) {
                s -= u.values()[i].abs().powf(params.r) * vol * d;
            }
        }
    }
    Ok(-(params.a / params.r) * s)
}

/// Trial point `φ + w(ζ - φ)` with its `S` solve, `K` value and the slope of
/// `K` along `ζ - φ`.
#[derive(Clone)]
struct Trial {
    w: f64,
    phi: GridFunction,
    s: SubSolve,
    k: f64,
    slope: f64,
}

#[allow(clippy::too_many_arguments)]
fn trial(
    w: f64,
    phi: &GridFunction,
    zeta: &GridFunction,
    dir: &[f64],
    warm: &GridFunction,
    f: &GridFunction,
    params: &CouplingParams,
    opts: &FixedPointOptions,
) -> Result<Trial> {
    let grid = phi.grid();
    let cand = GridFunction::from_raw(
        grid,
        phi.values().iter().zip(zeta.values()).map(|(a, b)| ((1.0 - w) * a + w * b).max(0.0)).collect(),
    );
    let s = solve_s_from(&cand, f, params, &opts.solver, Some(warm))?;
    let k = j_value(&s.field, &cand, f, params)?;
    let slope = k_slope(&cand, &s.field, dir, params)?;
    Ok(Trial { w, phi: cand, s, k, slope })
}

const MAX_LINE_TRIALS: usize = 40;

/// Approximate maximization of `K` along `φ + w(ζ - φ)`, `w ∈ (0, ω]`.
///
/// The slope of `K` is decreasing along the segment for θ = 0 (`K` is
/// concave there) and is known at `w = 0`, so the search brackets the root of
/// the slope on `[0, ω]`: regula falsi, falling back to bisection (geometric
/// when the bracket spans more than a factor 4) whenever a step fails to halve
/// the bracket. Each trial warm-starts `S` from the nearest trial already
/// solved. The best trial that increases `K` wins.
#[allow(clippy::too_many_arguments)]
fn relaxed_step(
    phi: &GridFunction,
    zeta: &GridFunction,
    dir: &[f64],
    u: &GridFunction,
    f: &GridFunction,
    params: &CouplingParams,
    opts: &FixedPointOptions,
    k0: f64,
    slope0: f64,
) -> Result<Option<(GridFunction, SubSolve, f64)>> {
    let floor = 1e-12 * (1.0 + k0.abs());
    // K is concave, so any increase means w lies short of twice the maximizer.
    // A sufficient-increase test in terms of slope0 is useless here: at φ = 0
    // the slope jumps down right after w = 0.
    let ok = |t: &Trial| t.k >= k0 - floor;
    let mut best: Option<Trial> = None;
    let keep = |t: &Trial, best: &mut Option<Trial>| {
        if ok(t) && best.as_ref().is_none_or(|b| t.k > b.k) {
            *best = Some(t.clone());
        }
    };

    let first = trial(opts.omega, phi, zeta, dir, u, f, params, opts)?;
    keep(&first, &mut best);
    if first.slope >= 0.0 || !(slope0 > 0.0) {
        return Ok(best.map(|t| (t.phi, t.s, t.k)));
    }
    // Bracket ends as (w, slope, solved trial); w = 0 is the current point.
    let mut lo: (f64, f64, Option<Trial>) = (0.0, slope0, None);
    let mut hi = (first.w, first.slope, Some(first));
    let from_zero = phi.is_zero();
    let mut width = hi.0 - lo.0;
    let mut halved = true;
    for _ in 0..MAX_LINE_TRIALS {
        let (wl, sl) = (lo.0, lo.1);
        let (wh, sh) = (hi.0, hi.1);
        let w = if from_zero && wl == 0.0 {
            // from φ = 0 the root sits many decades below omega (it scales
            // like the inverse size of T(S(0))), so shrink geometrically first
            wh * 1e-3
        } else if wl > 0.0 && wh / wl > 4.0 {
            (wl * wh).sqrt()
        } else if !halved {
            0.5 * (wl + wh)
        } else {
            let w = wl + (wh - wl) * sl / (sl - sh);
            w.clamp(wl + 1e-3 * (wh - wl), wh - 1e-3 * (wh - wl))
        };
        let near = if wl > 0.0 && w / wl < wh / w { &lo.2 } else { &hi.2 };
        let warm = near.as_ref().map_or(u, |t| &t.s.field);
        let t = trial(w, phi, zeta, dir, warm, f, params, opts)?;
        keep(&t, &mut best);
        let tight = t.slope.abs() <= 0.25 * slope0 || (wl > 0.0 && wh / wl <= 1.05);
        let done = ok(&t) && tight;
        if t.slope >= 0.0 {
            lo = (t.w, t.slope, Some(t));
        } else {
            hi = (t.w, t.slope, Some(t));
        }
        if done {
            break;
        }
        let new_width = hi.0 - lo.0;
        halved = new_width <= 0.5 * width;
        width = new_width;
    }
    Ok(best.map(|t| (t.phi, t.s, t.k)))
}

/// Type-II Anderson mixing over `(x_i, G(x_i))` pairs, projected onto `x >= 0`.
fn anderson_candidate(history: &VecDeque<(Vec<f64>, Vec<f64>)>, n: usize) -> Option<Vec<f64>> {
    let m = history.len() - 1;
    let res = |i: usize| -> Vec<f64> { history[i].1.iter().zip(&history[i].0).map(|(g, x)| g - x).collect() };
    let last = res(m);
    let mut df = DMatrix::zeros(n, m);
    let mut dg = DMatrix::zeros(n, m);
    let mut prev = res(0);
    for j in 0..m {
        let cur = if j + 1 == m { last.clone() } else { res(j + 1) };
        for i in 0..n {
            df[(i, j)] = cur[i] - prev[i];
            dg[(i, j)] = history[j + 1].1[i] - history[j].1[i];
        }
        prev = cur;
    }
    let b = DVector::from_vec(last);
    let gamma = df.svd(true, true).solve(&b, 1e-12).ok()?;
    if gamma.iter().any(|g| !g.is_finite()) {
        return None;
    }
    let step = &dg * &gamma;
    let cand: Vec<f64> = history[m].1.iter().zip(step.iter()).map(|(g, s)| (g - s).max(0.0)).collect();
    Some(cand)
}


pub fn lemma_quantities(u: &GridFunction, phi: &GridFunction, params: &CouplingParams) -> Result<LemmaQuantities> {
    u.check_same_grid(phi)?;
    let CouplingParams { p, r, theta, .. } = *params;
    let pos = |x: f64| x.max(0.0);
    Ok(LemmaQuantities {
        norm_u_r1: lq_norm(u, r + 1.0)?,
        norm_u_w1p: w1p_seminorm(u, p)?,
        norm_phi_w1p: w1p_seminorm(phi, p)?,
        int_phi_ur: nodal_integral(u, phi, |a, b| pos(b).powf(theta + 1.0) * a.abs().powf(r)),
        int_ur1_phitheta: nodal_integral(u, phi, |a, b| a.abs().powf(r + 1.0) * pos(b).powf(theta)),
    })
}

/// `|∫|∇φ|^p - ∫|u|^r φ^{θ+1}| / max(1, ∫|∇φ|^p)`.
pub fn energy_identity_residual(u: &GridFunction, phi: &GridFunction, params: &CouplingParams) -> Result<f64> {
    u.check_same_grid(phi)?;
    let CouplingParams { p, r, theta, .. } = *params;
    let lhs = gradient_power_integral(phi, p);
    let rhs = nodal_integral(u, phi, |a, b| a.abs().powf(r) * b.max(0.0).powf(theta + 1.0));
    Ok((lhs - rhs).abs() / lhs.max(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleReport {
    pub probes: usize,
    pub amplitude: f64,
    pub j: f64,
    pub slack: f64,
    /// `min_w J(u + a w, φ) - J(u, φ) + slack`; nonnegative when `u` is minimal.
    pub worst_u_margin: f64,
    /// `min_w J(u, φ) + slack - J(u, φ + a w)`; nonnegative when `φ` is maximal.
    pub worst_phi_margin: f64,
    pub passed: bool,
}

/// Probes the saddle property of `(u, φ)` along `n_probes` random directions
/// of unit `W^{1,p}` seminorm. The slack is `1e-8 (1 + |J|)` plus
/// `SADDLE_QUADRATIC · a² (1 + |J|)`.
pub fn saddle_check(
    u: &GridFunction,
    phi: &GridFunction,
    f: &GridFunction,
    params: &CouplingParams,
    n_probes: usize,
    amplitude: f64,
    seed: u64,
) -> Result<SaddleReport> {
    u.check_same_grid(phi)?;
    let grid = u.grid();
    let j = j_value(u, phi, f, params)?;
    let slack = 1e-8 * (1.0 + j.abs()) + SADDLE_QUADRATIC * amplitude * amplitude * (1.0 + j.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_u, mut worst_phi) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..n_probes {
        let w = GridFunction::from_raw(grid, (0..grid.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let w = w.scaled(amplitude / w1p_seminorm(&w, params.p)?);
        let ju = j_value(&add(u, &w), phi, f, params)?;
        let jp = j_value(u, &add(phi, &w), f, params)?;
        worst_u = worst_u.min(ju - j + slack);
        worst_phi = worst_phi.min(j + slack - jp);
    }
    Ok(SaddleReport {
        probes: n_probes,
        amplitude,
        j,
        slack,
        worst_u_margin: worst_u,
        worst_phi_margin: worst_phi,
        passed: worst_u >= 0.0 && worst_phi >= 0.0,
    })
}

/// Coefficient of the second-order allowance in [`saddle_check`].
pub const SADDLE_QUADRATIC: f64 = 0.1;

fn add(a: &GridFunction, b: &GridFunction) -> GridFunction {
    GridFunction::from_raw(a.grid(), a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect())
}

/// `max |u|/φ` over interior nodes with `φ >= floor`; `+∞` when there are none.
pub fn comparison_constant(u: &GridFunction, phi: &GridFunction, floor: f64) -> Result<f64> {
    u.check_same_grid(phi)?;
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter(format!("comparison floor must be positive, got {floor}")));
    }
    let grid = u.grid();
    let mut best: Option<f64> = None;
    for i in 0..grid.num_nodes() {
        let ph = phi.values()[i];
        if grid.is_boundary(i) || ph < floor {
            continue;
        }
        let q = u.values()[i].abs() / ph;
        best = Some(best.map_or(q, |b: f64| b.max(q)));
    }
    Ok(best.unwrap_or(f64::INFINITY))
}

/// Euler–Lagrange residuals `(‖∇I1(u; φ)‖₂, ‖∇I3(φ; u)‖₂)` of a pair.
pub fn pair_residuals(u: &GridFunction, phi: &GridFunction, f: &GridFunction, params: &CouplingParams) -> Result<(f64, f64)> {
    Ok((s_residual(u, phi, f, params)?, t_residual(phi, u, params)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn unit(cells: usize) -> Arc<Grid> {
        Arc::new(Grid::unit(2, cells).unwrap())
    }

    fn smooth(g: &Arc<Grid>, amp: f64) -> GridFunction {
        GridFunction::from_fn(g, |x| amp * 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin())
    }

    #[test]
    fn zero_data_gives_zero_pair_in_one_step() {
        let g = unit(8);
        let prm = CouplingParams::new(1.5, 1.0, 6.0, 0.0, 1e-8).unwrap();
        let sol = solve_system(&GridFunction::zeros(&g), &prm, &FixedPointOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.trace.len(), 1);
        assert!(sol.u.is_zero() && sol.phi.is_zero());
    }

    #[test]
    fn converged_pair_is_a_fixed_point() {
        let g = unit(16);
        for (p, theta) in [(2.0, 0.0), (1.5, 0.0), (2.0, 0.5), (3.0, 1.0)] {
            let eps = if p < 2.0 { 1e-8 } else { 0.0 };
            let prm = CouplingParams::new(p, 1.0, 3.0, theta, eps).unwrap();
            let f = smooth(&g, 1.0);
            let opts = FixedPointOptions::default();
            let sol = solve_system(&f, &prm, &opts).unwrap();
            assert!(sol.converged, "p={p} θ={theta}: {:?}", sol.trace.last());
            assert!(sol.phi.values().iter().all(|&v| v >= 0.0));
            let last = sol.trace.last().unwrap();
            assert!(last.dphi_rel <= opts.fp_tol);
            assert!(last.energy_id_res <= 1e-5, "{}", last.energy_id_res);
            for w in sol.trace.windows(2) {
                assert!(w[1].k == w[0].k + 1);
            }
            let (rs, rt) = pair_residuals(&sol.u, &sol.phi, &f, &prm).unwrap();
            assert!(rs.is_finite() && rt.is_finite());
        }
    }

    #[test]
    fn lemma_quantities_vanish_and_specialize() {
        let g = unit(8);
        let zero = GridFunction::zeros(&g);
        let prm = CouplingParams::new(2.0, 1.0, 3.0, 0.0, 0.0).unwrap();
        assert_eq!(lemma_quantities(&zero, &zero, &prm).unwrap(), LemmaQuantities::default());

        let u = GridFunction::from_fn(&g, |x| x[0] - x[1]);
        let phi = GridFunction::from_fn(&g, |x| x[0] * x[1]);
        let q = lemma_quantities(&u, &phi, &prm).unwrap();
        let h2 = g.cell_volume();
        let expect: f64 = (0..g.num_nodes()).map(|i| phi.values()[i] * u.values()[i].abs().powi(3)).sum::<f64>() * h2;
        assert!((q.int_phi_ur - expect).abs() < 1e-14);
        let expect5: f64 = (0..g.num_nodes()).map(|i| u.values()[i].abs().powi(4)).sum::<f64>() * h2;
        assert!((q.int_ur1_phitheta - expect5).abs() < 1e-14);
        assert!((q.norm_u_r1 - expect5.powf(0.25)).abs() < 1e-14);
    }

    #[test]
    fn energy_identity_detects_perturbation() {
        let g = unit(32);
        let prm = CouplingParams::new(2.0, 1.0, 3.0, 0.0, 0.0).unwrap();
        let zero = GridFunction::zeros(&g);
        assert_eq!(energy_identity_residual(&zero, &zero, &prm).unwrap(), 0.0);
        let sol = solve_system(&smooth(&g, 5.0), &prm, &FixedPointOptions::default()).unwrap();
        let base = energy_identity_residual(&sol.u, &sol.phi, &prm).unwrap();
        assert!(base <= 1e-5);
        // additive noise at 1% of the peak value
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let level = 0.01 * sol.phi.max_abs();
        let noisy = GridFunction::from_raw(
            &g,
            sol.phi.values().iter().map(|v| v + level * rng.gen_range(-1.0..1.0)).collect(),
        );
        let noisy_res = energy_identity_residual(&sol.u, &noisy, &prm).unwrap();
        assert!(noisy_res > 1e-3, "{noisy_res}");
    }

    #[test]
    fn saddle_check_at_zero_and_at_a_solution() {
        let g = unit(16);
        let prm = CouplingParams::new(1.5, 1.0, 6.0, 0.0, 1e-8).unwrap();
        let zero = GridFunction::zeros(&g);
        let r = saddle_check(&zero, &zero, &zero, &prm, 16, 1e-3, 1).unwrap();
        assert!(r.passed && r.worst_u_margin >= r.slack && r.worst_phi_margin >= r.slack);

        let f = smooth(&g, 1.0);
        let sol = solve_system(&f, &prm, &FixedPointOptions::default()).unwrap();
        let r = saddle_check(&sol.u, &sol.phi, &f, &prm, 32, 1e-3, 2).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn rough_phi_perturbation_lowers_j() {
        let g = unit(16);
        let prm = CouplingParams::new(2.0, 1.0, 3.0, 0.0, 0.0).unwrap();
        let f = smooth(&g, 1.0);
        let sol = solve_system(&f, &prm, &FixedPointOptions::default()).unwrap();
        let n = g.dims()[0];
        let w = GridFunction::from_fn(&g, |x| {
            let (i, j) = ((x[0] * (n - 1) as f64).round() as i64, (x[1] * (n - 1) as f64).round() as i64);
            if (i + j) % 2 == 0 { 1.0 } else { -1.0 }
        });
        let w = w.scaled(0.1 / w1p_seminorm(&w, 2.0).unwrap());
        let j0 = j_value(&sol.u, &sol.phi, &f, &prm).unwrap();
        let j1 = j_value(&sol.u, &add(&sol.phi, &w), &f, &prm).unwrap();
        assert!(j1 < j0);
    }

    #[test]
    fn comparison_constant_cases() {
        let g = unit(8);
        let phi = GridFunction::from_fn(&g, |x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]));
        let zero = GridFunction::zeros(&g);
        assert_eq!(comparison_constant(&zero, &phi, 1e-6).unwrap(), 0.0);
        assert!((comparison_constant(&phi, &phi, 1e-6).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(comparison_constant(&phi, &phi, 10.0).unwrap(), f64::INFINITY);
        assert!(comparison_constant(&phi, &phi, 0.0).is_err());
    }

    #[test]
    fn options_validation() {
        assert!(FixedPointOptions::default().validate().is_ok());
        for bad in [
            FixedPointOptions { fp_tol: 0.0, ..Default::default() },
            FixedPointOptions { max_outer: 0, ..Default::default() },
            FixedPointOptions { omega: 1.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
