//! The subcommands of the binary, as library functions. Nothing here exits the
//! process; `main` maps results to exit codes.

use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use num::rational::BigRational;
use num::{BigInt, One};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cli::config::RunConfig;
use crate::cli::data::smooth_f;
use crate::energy::{grad_p_dirichlet, i1_grad, i1_value, i3_grad, i3_value, p_dirichlet, CouplingParams};
use crate::error::{Error, Result};
use crate::exponents::{self, RegimeReport};
use crate::fixedpoint::{
    comparison_constant, csv_number, solve_system_with, LemmaQuantities, SolutionPair, SolveTrace, TraceRow, TRACE_HEADER,
};
use crate::grid::{lq_norm, save_field, Grid, GridFunction};
use crate::optimize::SolverOptions;
use crate::subsolvers::{first_eigenpair, solve_s, EigenPair};

// ---------------------------------------------------------------- exponents

fn row<T: fmt::Display>(out: &mut String, name: &str, v: T) {
    writeln!(out, "  {name:<22} {v}").unwrap();
}

fn flagged(f: &exponents::Flagged<f64>) -> String {
    if f.in_hypothesis {
        f.value.to_string()
    } else {
        format!("{} (outside hypothesis)", f.value)
    }
}

/// The report as an aligned two-column table.
pub fn regime_table(rep: &RegimeReport) -> String {
    let i = &rep.input;
    let mut out = String::new();
    writeln!(out, "N = {}, p = {}, r = {}, theta = {}, m = {}", i.n(), i.p(), i.r(), i.theta(), i.m()).unwrap();
    row(&mut out, "regime", rep.regime);
    row(&mut out, "p*", rep.pstar);
    row(&mut out, "(p*)'", rep.pstar_dual);
    row(&mut out, "(r+1)'", rep.r1_dual);
    row(&mut out, "(r+1+theta)'", rep.r1theta_dual);
    row(&mut out, "m1", rep.m1);
    row(&mut out, "m2", rep.m2);
    row(&mut out, "s", flagged(&rep.s));
    row(&mut out, "gamma", flagged(&rep.gamma));
    row(&mut out, "t", rep.t.map_or("-".to_string(), |t| t.to_string()));
    row(&mut out, "r threshold (p*-1)", rep.r_threshold);
    row(&mut out, "best summability of u", &rep.best_summability);
    writeln!(out, "  satisfied hypotheses:").unwrap();
    if rep.satisfied.is_empty() {
        writeln!(out, "    none").unwrap();
    }
    for h in &rep.satisfied {
        writeln!(out, "    {}", h.describe()).unwrap();
    }
    out
}

pub const EXPONENTS_HEADER: [&str; 17] = [
    "N", "p", "r", "theta", "m", "regime", "pstar", "pstar_dual", "r1_dual", "r1theta_dual", "m1", "m2", "s", "gamma",
    "t", "r_threshold", "best_summability",
];

pub fn regime_record(rep: &RegimeReport) -> Vec<String> {
    let i = &rep.input;
    let mut rec = vec![i.n().to_string()];
    rec.extend([*i.p(), *i.r(), *i.theta(), *i.m()].iter().map(f64::to_string));
    rec.push(rep.regime.label().to_string());
    rec.extend(
        [rep.pstar, rep.pstar_dual, rep.r1_dual, rep.r1theta_dual, rep.m1, rep.m2, rep.s.value, rep.gamma.value]
            .iter()
            .map(f64::to_string),
    );
    rec.push(rep.t.map_or(String::new(), |t| t.to_string()));
    rec.push(rep.r_threshold.to_string());
    rec.push(rep.best_summability.to_string());
    rec
}

// -------------------------------------------------------------------- solve

pub fn run_solve(cfg: &RunConfig) -> Result<SolutionPair> {
    let grid = Arc::new(cfg.grid()?);
    let params = cfg.params()?;
    let opts = cfg.fixed_point_options();
    let eigen = first_eigenpair(&grid, params.p, params.eps, &opts.eigen)?;
    solve_system_with(&cfg.data(&grid)?, &params, &opts, &eigen)
}

pub fn write_trace(trace: &SolveTrace, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for row in trace {
        w.write_record(row.to_record())?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

pub fn read_trace(input: impl Read) -> Result<SolveTrace> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(TRACE_HEADER) {
        return Err(Error::Config(format!("trace header differs from {}", TRACE_HEADER.join(","))));
    }
    let mut trace = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Config(format!("trace column {}: bad number {:?}", TRACE_HEADER[i], &rec[i])))
        };
        trace.push(TraceRow {
            k: rec[0].parse().map_err(|_| Error::Config(format!("trace column k: bad index {:?}", &rec[0])))?,
            dphi_rel: v(1)?,
            j: v(2)?,
            res_s: v(3)?,
            res_t: v(4)?,
            lemma: LemmaQuantities {
                norm_u_r1: v(5)?,
                norm_u_w1p: v(6)?,
                norm_phi_w1p: v(7)?,
                int_phi_ur: v(8)?,
                int_ur1_phitheta: v(9)?,
            },
            energy_id_res: v(10)?,
        });
    }
    Ok(trace)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// Writes `u.txt`, `phi.txt` and `trace.csv` into `dir`, creating it.
pub fn write_solution(pair: &SolutionPair, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_field(&pair.u, dir.join("u.txt"))?;
    save_field(&pair.phi, dir.join("phi.txt"))?;
    let path = dir.join("trace.csv");
    write_trace(&pair.trace, create(&path)?)
}

// -------------------------------------------------------------------- sweep

/// The quantity a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Mesh spacing, on the domain of the base config.
    H,
    M,
    Alpha,
    A,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Axis> {
        match s {
            "h" => Ok(Axis::H),
            "m" => Ok(Axis::M),
            "alpha" => Ok(Axis::Alpha),
            "A" => Ok(Axis::A),
            _ => Err(Error::Config(format!("axis must be one of h, m, alpha, A; got {s:?}"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::H => "h",
            Axis::M => "m",
            Axis::Alpha => "alpha",
            Axis::A => "A",
        })
    }
}

/// The config of one sweep point.
pub fn sweep_point(base: &RunConfig, axis: Axis, value: f64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match axis {
        Axis::H => {
            if !(value > 0.0) {
                return Err(Error::Config(format!("h must be positive, got {value}")));
            }
            let mut cells = Vec::new();
            for e in base.grid()?.extent() {
                let c = (e / value).round();
                if c < 2.0 || (c * value - e).abs() > 1e-9 * e {
                    return Err(Error::Config(format!("h = {value} does not divide the domain extent {e}")));
                }
                cells.push(c as usize);
            }
            cfg.cells = cells;
            cfg.h = Some(value);
        }
        Axis::M => cfg.m = Some(value),
        Axis::Alpha => cfg.alpha = Some(value),
        Axis::A => cfg.a = value,
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub cells: usize,
    pub h: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    /// Of the final pair `(S(φ), φ)`; `None` when the run failed.
    pub lemma: Option<LemmaQuantities>,
    pub energy_id_res: f64,
    pub comparison_constant: f64,
    /// `‖u‖_{L^s}` with `s = s_exponent(m, p, r)`; needs `m`.
    pub norm_u_s: Option<f64>,
    pub norm_u_2s: Option<f64>,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: [&str; 16] = [
    "axis",
    "value",
    "cells",
    "h",
    "converged",
    "outer_iterations",
    "norm_u_r1",
    "norm_u_w1p",
    "norm_phi_w1p",
    "int_phi_ur",
    "int_ur1_phitheta",
    "energy_id_res",
    "comparison_constant",
    "norm_u_s",
    "norm_u_2s",
    "error",
];

impl SweepRow {
    pub fn to_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), csv_number);
        let mut rec = vec![
            self.axis.to_string(),
            self.value.to_string(),
            self.cells.to_string(),
            self.h.to_string(),
            self.converged.to_string(),
            self.outer_iterations.to_string(),
        ];
        match &self.lemma {
            Some(l) => rec.extend(l.as_array().iter().map(|&v| csv_number(v))),
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        rec.push(csv_number(self.energy_id_res));
        rec.push(csv_number(self.comparison_constant));
        rec.push(opt(self.norm_u_s));
        rec.push(opt(self.norm_u_2s));
        rec.push(self.error.clone().unwrap_or_default());
        rec
    }
}

fn sweep_one(cfg: &RunConfig, eigen: Option<&EigenPair>) -> Result<(SolutionPair, Option<(f64, f64)>)> {
    let grid = Arc::new(cfg.grid()?);
    let params = cfg.params()?;
    let opts = cfg.fixed_point_options();
    let own;
    let eigen = match eigen {
        Some(e) => e,
        None => {
            own = first_eigenpair(&grid, params.p, params.eps, &opts.eigen)?;
            &own
        }
    };
    let f = cfg.data(&grid)?;
    let pair = solve_system_with(&f, &params, &opts, eigen)?;
    let norms = match cfg.m {
        Some(m) => {
            let s = exponents::s_exponent(m, params.p, params.r)?.value;
            Some((lq_norm(&pair.u, s)?, lq_norm(&pair.u, 2.0 * s)?))
        }
        None => None,
    };
    Ok((pair, norms))
}

/// One independent solve per value, in parallel. A failing run becomes a row
/// with `error` set; the others are unaffected.
pub fn run_sweep(base: &RunConfig, axis: Axis, values: &[f64]) -> Result<Vec<SweepRow>> {
    let configs: Vec<RunConfig> = values.iter().map(|&v| sweep_point(base, axis, v)).collect::<Result<_>>()?;
    // every point shares the grid and p unless h varies
    let shared = match axis {
        Axis::H => None,
        _ => {
            let grid = Arc::new(base.grid()?);
            let params = base.params()?;
            Some(first_eigenpair(&grid, params.p, params.eps, &base.fixed_point_options().eigen)?)
        }
    };
    Ok(configs
        .par_iter()
        .zip(values.par_iter())
        .map(|(cfg, &value)| {
            let grid = cfg.grid().expect("validated");
            let mut row = SweepRow {
                axis,
                value,
                cells: grid.dims()[0] - 1,
                h: grid.spacing(),
                converged: false,
                outer_iterations: 0,
                lemma: None,
                energy_id_res: f64::NAN,
                comparison_constant: f64::NAN,
                norm_u_s: None,
                norm_u_2s: None,
                error: None,
            };
            match sweep_one(cfg, shared.as_ref()) {
                Ok((pair, norms)) => {
                    let params = cfg.params().expect("validated");
                    let last = pair.trace.last().expect("at least one outer iteration");
                    row.converged = pair.converged;
                    row.outer_iterations = pair.trace.len();
                    row.lemma = crate::fixedpoint::lemma_quantities(&pair.u, &pair.phi, &params).ok();
                    row.energy_id_res = crate::fixedpoint::energy_identity_residual(&pair.u, &pair.phi, &params)
                        .unwrap_or(last.energy_id_res);
                    let floor = cfg.comparison_floor * pair.phi.max_abs();
                    row.comparison_constant = if floor > 0.0 {
                        comparison_constant(&pair.u, &pair.phi, floor).unwrap_or(f64::NAN)
                    } else {
                        f64::INFINITY
                    };
                    row.norm_u_s = norms.map(|n| n.0);
                    row.norm_u_2s = norms.map(|n| n.1);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect())
}

pub fn write_sweep(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for row in rows {
        w.write_record(row.to_record())?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

// -------------------------------------------------------------------- eigen

pub fn run_eigen(dim: usize, cells: usize, p: f64, eps: Option<f64>) -> Result<EigenPair> {
    let eps = eps.unwrap_or(if p < 2.0 { CouplingParams::DEFAULT_EPS } else { 0.0 });
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("p > 1 violated (p = {p})")));
    }
    let grid = Arc::new(Grid::unit(dim, cells)?);
    first_eigenpair(&grid, p, eps, &crate::subsolvers::eigen_seed_options())
}

// -------------------------------------------------------------------- check

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// What `measured` is compared against, in words.
    pub tolerance: String,
    pub measured: f64,
    pub passed: bool,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<14} measured {:<12.4e} required {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

/// The built-in battery: gradient checks, the Poisson oracle,
/// `p`-homogeneity of `S` and the exponent identities. Uses `eps`, the
/// coupling parameters and the solver settings of `cfg`.
pub fn run_checks(cfg: &RunConfig) -> Result<Vec<CheckResult>> {
    let params = cfg.params()?;
    let opts = cfg.solver_options();
    Ok(vec![
        gradient_check(&params, cfg.seed)?,
        poisson_check(params.eps, &opts)?,
        homogeneity_check(params.eps, &opts)?,
        exponent_check(),
    ])
}

fn random_field(g: &Arc<Grid>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Result<GridFunction> {
    GridFunction::from_values(g, (0..g.num_nodes()).map(|i| if g.is_boundary(i) { 0.0 } else { rng.gen_range(lo..hi) }).collect())
}

fn directional_error(value: impl Fn(&GridFunction) -> f64, grad: &GridFunction, at: &GridFunction, dir: &GridFunction) -> Result<f64> {
    // fourth-order stencil with a wide step: a large constant in the value
    // (big eps) would swamp a narrow central difference
    let tau = 1e-3;
    let shift = |s: f64| -> Result<GridFunction> {
        GridFunction::from_values(at.grid(), at.values().iter().zip(dir.values()).map(|(a, d)| a + s * d).collect())
    };
    let diff = |t: f64| -> Result<f64> { Ok(value(&shift(t)?) - value(&shift(-t)?)) };
    let fd = (8.0 * diff(tau)? - diff(2.0 * tau)?) / (12.0 * tau);
    let an: f64 = grad.values().iter().zip(dir.values()).map(|(g, d)| g * d).sum();
    Ok((fd - an).abs() / an.abs().max(1e-300))
}

/// Central differences against the analytic gradients of `p_dirichlet`,
/// `I1` and `I3` at 20 random points of an 8×8 grid.
fn gradient_check(params: &CouplingParams, seed: u64) -> Result<CheckResult> {
    let g = Arc::new(Grid::unit(2, 8)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let z = random_field(&g, &mut rng, -1.0, 1.0)?;
        let psi = random_field(&g, &mut rng, -0.5, 1.0)?;
        let f = random_field(&g, &mut rng, -2.0, 2.0)?;
        // I3 sees η⁺; keep η away from its kink
        let eta = random_field(&g, &mut rng, 0.1, 1.0)?;
        let dir = random_field(&g, &mut rng, -1.0, 1.0)?;
        let (p, eps) = (params.p, params.eps);
        worst = worst.max(directional_error(|x| p_dirichlet(x, p, eps), &grad_p_dirichlet(&z, p, eps)?, &z, &dir)?);
        worst = worst.max(directional_error(
            |x| i1_value(x, &psi, &f, params).unwrap_or(f64::NAN),
            &i1_grad(&z, &psi, &f, params)?,
            &z,
            &dir,
        )?);
        worst = worst.max(directional_error(
            |x| i3_value(x, &z, params).unwrap_or(f64::NAN),
            &i3_grad(&eta, &z, params)?,
            &eta,
            &dir,
        )?);
    }
    Ok(CheckResult {
        name: "gradient",
        tolerance: "<= 1e-5 (relative)".into(),
        measured: worst,
        passed: worst <= 1e-5,
    })
}

/// `-Δu = 2π² sin(πx) sin(πy)` at h = 1/32 and 1/64: the ratio of max nodal
/// errors should be 4 for a second-order scheme.
fn poisson_check(eps: f64, opts: &SolverOptions) -> Result<CheckResult> {
    let err = |cells: usize| -> Result<f64> {
        let g = Arc::new(Grid::unit(2, cells)?);
        let prm = CouplingParams::new(2.0, 0.0, 2.0, 0.0, eps)?;
        let u = solve_s(&GridFunction::zeros(&g), &smooth_f(&g), &prm, opts)?.field;
        let exact = GridFunction::from_fn(&g, |x| (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin());
        Ok(u.values().iter().zip(exact.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    };
    let ratio = err(32)? / err(64)?;
    Ok(CheckResult {
        name: "poisson",
        tolerance: "in [3.5, 4.5]".into(),
        measured: ratio,
        passed: (3.5..=4.5).contains(&ratio),
    })
}

/// `S(λf) = λ^(1/(p-1)) S(f)` for p = 3 on a coarse cube (ψ = 0).
fn homogeneity_check(eps: f64, opts: &SolverOptions) -> Result<CheckResult> {
    let g = Arc::new(Grid::unit(3, 6)?);
    let (p, lambda) = (3.0, 8.0);
    let prm = CouplingParams::new(p, 0.0, 2.0, 0.0, eps)?;
    let zero = GridFunction::zeros(&g);
    let f = smooth_f(&g);
    let tight = SolverOptions { tol: opts.tol.min(1e-10), ..*opts };
    let u1 = solve_s(&zero, &f, &prm, &tight)?.field;
    let u2 = solve_s(&zero, &f.scaled(lambda), &prm, &tight)?.field;
    let k = lambda.powf(1.0 / (p - 1.0));
    let num = u2.values().iter().zip(u1.values()).map(|(a, b)| (a - k * b).abs()).fold(0.0, f64::max);
    let rel = num / u2.max_abs();
    let tol = if eps == 0.0 { 1e-4 } else { 1e-3 };
    Ok(CheckResult {
        name: "homogeneity",
        tolerance: format!("<= {tol:e} (relative)"),
        measured: rel,
        passed: rel <= tol,
    })
}

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn identities_hold(n: u32, p: &BigRational, r: &BigRational) -> Result<bool> {
    let one = BigRational::one();
    let zero = BigRational::from_integer(0.into());
    let pstar = exponents::sobolev_conjugate(n, p.clone())?;
    let m = exponents::dual_exponent(r.clone() + one.clone())?;
    let s = exponents::s_exponent(m.clone(), p.clone(), r.clone())?.value;
    let gamma = exponents::gamma_exponent(m, p.clone(), r.clone())?.value;
    let t = exponents::t_exponent(n, exponents::dual_exponent(pstar.clone())?, p.clone())?;
    let m1_3d = exponents::m1(3, q(2, 1), r.clone())?;
    Ok(exponents::r_threshold(n, p.clone())? == pstar.clone() - one.clone()
        && exponents::m2(n, p.clone(), r.clone(), zero)? == exponents::m1(n, p.clone(), r.clone())?
        && s == r.clone() + one
        && s == r.clone() + gamma
        && t == Some(pstar)
        && m1_3d == q(6, 1) * r.clone() / (q(5, 1) + q(4, 1) * r.clone()))
}

/// The closed-form identities in exact rational arithmetic; `measured` is the
/// number of inputs with a violation.
fn exponent_check() -> CheckResult {
    let inputs = [(2u32, q(3, 2), q(6, 1)), (3, q(2, 1), q(7, 2)), (3, q(5, 2), q(11, 3)), (4, q(3, 1), q(9, 1))];
    let failures = inputs.iter().filter(|(n, p, r)| !matches!(identities_hold(*n, p, r), Ok(true))).count();
    CheckResult {
        name: "exponents",
        tolerance: "0 violations (exact)".into(),
        measured: failures as f64,
        passed: failures == 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_round_trips() {
        for a in [Axis::H, Axis::M, Axis::Alpha, Axis::A] {
            assert_eq!(a.to_string().parse::<Axis>().unwrap(), a);
        }
        assert!("a".parse::<Axis>().is_err());
    }

    #[test]
    fn h_points_keep_the_domain() {
        let base = RunConfig::parse("cells = 16").unwrap();
        let c = sweep_point(&base, Axis::H, 1.0 / 64.0).unwrap();
        assert_eq!(c.grid().unwrap().dims(), &[65, 65]);
        assert!(sweep_point(&base, Axis::H, 0.3).is_err());
    }

    #[test]
    fn trace_parses_back() {
        let row = TraceRow {
            k: 3,
            dphi_rel: 0.1 + 0.2,
            j: -1.0 / 3.0,
            res_s: 1e-9,
            res_t: 2.5e-300,
            lemma: LemmaQuantities {
                norm_u_r1: std::f64::consts::PI,
                norm_u_w1p: 1.0,
                norm_phi_w1p: 0.0,
                int_phi_ur: 1e20,
                int_ur1_phitheta: 7.0,
            },
            energy_id_res: 3e-7,
        };
        let trace = vec![row.clone(), TraceRow { k: 4, ..row }];
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with(&TRACE_HEADER.join(",")));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), trace);
    }

    #[test]
    fn exponent_identities_hold() {
        let c = exponent_check();
        assert!(c.passed, "{c}");
    }

    #[test]
    fn table_names_the_regime() {
        let rep = exponents::classify(&exponents::RegimeInput::from_f64(2, 1.5, 6.0, 0.0, 1.18).unwrap());
        let t = regime_table(&rep);
        assert!(t.contains("regularizing_theta0"), "{t}");
        assert_eq!(regime_record(&rep).len(), EXPONENTS_HEADER.len());
    }
}
