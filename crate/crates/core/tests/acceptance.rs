//! Acceptance battery: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines are always
//! printed.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num::rational::BigRational;
use num::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use plapsys::cli::commands::{run_sweep, Axis, SweepRow};
use plapsys::cli::config::RunConfig;
use plapsys::energy::{grad_p_dirichlet, i1_grad, i1_value, i3_grad, i3_value, p_dirichlet, CouplingParams};
use plapsys::exponents::{
    dual_exponent, gamma_exponent, m1, m2, r_threshold, s_exponent, sobolev_conjugate, t_exponent, Scalar,
};
use plapsys::fixedpoint::{saddle_check, solve_system, FixedPointOptions};
use plapsys::grid::{w1p_seminorm, Grid, GridFunction};
use plapsys::optimize::SolverOptions;
use plapsys::subsolvers::{eigen_seed_options, first_eigenpair, solve_s, solve_t};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit(dim: usize, cells: usize) -> Arc<Grid> {
    Arc::new(Grid::unit(dim, cells).unwrap())
}

fn sines(g: &Arc<Grid>, amp: f64) -> GridFunction {
    GridFunction::from_fn(g, |x| amp * (PI * x[0]).sin() * (PI * x[1]).sin())
}

fn random(g: &Arc<Grid>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> GridFunction {
    let v = (0..g.num_nodes()).map(|i| if g.is_boundary(i) { 0.0 } else { rng.gen_range(lo..hi) }).collect();
    GridFunction::from_values(g, v).unwrap()
}

fn max_diff(a: &GridFunction, b: &GridFunction) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn spread(v: &[f64]) -> f64 {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo
}

// 1 ------------------------------------------------------------------------

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Both sides of every identity, evaluated in `T`.
fn identity_gaps<T: Scalar>(n: u32, p: T, r: T, theta: T) -> Vec<(String, T, T)> {
    let one = T::one();
    let pstar = sobolev_conjugate(n, p.clone()).unwrap();
    let mr = dual_exponent(r.clone() + one.clone()).unwrap();
    let s = |m: T| s_exponent(m, p.clone(), r.clone()).unwrap().value;
    let g = |m: T| gamma_exponent(m, p.clone(), r.clone()).unwrap().value;
    let m_mid = (mr.clone() + dual_exponent(pstar.clone()).unwrap()) / T::from_u32(2).unwrap();
    let three = T::from_u32(3).unwrap();
    let (two, four, five) = (T::from_u32(2).unwrap(), T::from_u32(4).unwrap(), T::from_u32(5).unwrap());
    vec![
        ("s = r + gamma".into(), s(m_mid.clone()), r.clone() + g(m_mid)),
        ("r_threshold = p* - 1".into(), r_threshold(n, p.clone()).unwrap(), pstar.clone() - one.clone()),
        ("m2(theta=0) = m1".into(), m2(n, p.clone(), r.clone(), T::zero()).unwrap(), m1(n, p.clone(), r.clone()).unwrap()),
        ("s((r+1)') = r+1".into(), s(mr), r.clone() + one.clone()),
        (
            "t((p*)') = p*".into(),
            t_exponent(n, dual_exponent(pstar.clone()).unwrap(), p.clone()).unwrap().unwrap(),
            pstar,
        ),
        (
            "m1(3,2,r) = 6r/(5+4r)".into(),
            m1(3, two.clone(), r.clone()).unwrap(),
            T::from_u32(6).unwrap() * r.clone() / (five + four.clone() * r.clone()),
        ),
        (
            "6r/(5+4r) = 2Nr/(N+2+4r) at N=3".into(),
            m1(3, two.clone(), r.clone()).unwrap(),
            two.clone() * three.clone() * r.clone() / (three + two + four * r.clone()),
        ),
        (
            "m2 > m1 for theta > 0".into(),
            T::from_u32(u32::from(m2(n, p.clone(), r.clone(), theta).unwrap() > m1(n, p, r).unwrap())).unwrap(),
            T::one(),
        ),
    ]
}

fn criterion_1() -> Outcome {
    let mut checked = 0;
    for (n, p, r, th) in [(2u32, q(3, 2), q(6, 1), q(1, 4)), (3, q(2, 1), q(7, 2), q(1, 2)), (4, q(5, 2), q(9, 1), q(1, 3))] {
        for (name, a, b) in identity_gaps(n, p, r, th) {
            if a != b {
                return Err(format!("exact: {name} fails at N={n}: {a} vs {b}"));
            }
            checked += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=5u32);
        let p = rng.gen_range(1.1..(n as f64 - 0.1).min(4.0));
        let r = rng.gen_range(1.1..12.0);
        let theta = rng.gen_range(0.01..(p - 1.0));
        for (name, a, b) in identity_gaps(n, p, r, theta) {
            let gap: f64 = (a - b).abs() / b.abs().max(1.0);
            if gap > 1e-12 {
                return Err(format!("f64: {name} off by {gap:e} at N={n}, p={p}, r={r}"));
            }
            worst = worst.max(gap);
        }
    }
    ensure(true, format!("{checked} exact identities hold with equality; f64 worst relative gap {worst:.1e} over 200 random inputs"))
}

// 2 ------------------------------------------------------------------------

fn fd_gap(value: impl Fn(&GridFunction) -> f64, grad: &GridFunction, at: &GridFunction, dir: &GridFunction) -> f64 {
    let tau = 1e-6;
    let shifted = |s: f64| {
        let v = at.values().iter().zip(dir.values()).map(|(a, d)| a + s * d).collect();
        GridFunction::from_values(at.grid(), v).unwrap()
    };
    let fd = (value(&shifted(tau)) - value(&shifted(-tau))) / (2.0 * tau);
    let an: f64 = grad.values().iter().zip(dir.values()).map(|(g, d)| g * d).sum();
    (fd - an).abs() / an.abs()
}

fn criterion_2() -> Outcome {
    let g = unit(2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let sets = [
        CouplingParams::new(1.5, 1.3, 6.0, 0.0, 1e-8).unwrap(),
        CouplingParams::new(1.5, 0.7, 3.0, 0.3, 1e-8).unwrap(),
        CouplingParams::new(3.0, 2.0, 2.5, 1.2, 0.0).unwrap(),
    ];
    for prm in &sets {
        for _ in 0..20 {
            let z = random(&g, &mut rng, -1.0, 1.0);
            let psi = random(&g, &mut rng, -0.5, 1.0);
            let f = random(&g, &mut rng, -2.0, 2.0);
            let eta = random(&g, &mut rng, 0.1, 1.0);
            let dir = random(&g, &mut rng, -1.0, 1.0);
            let (p, eps) = (prm.p, prm.eps);
            worst = worst.max(fd_gap(|x| p_dirichlet(x, p, eps), &grad_p_dirichlet(&z, p, eps).unwrap(), &z, &dir));
            worst = worst.max(fd_gap(|x| i1_value(x, &psi, &f, prm).unwrap(), &i1_grad(&z, &psi, &f, prm).unwrap(), &z, &dir));
            worst = worst.max(fd_gap(|x| i3_value(x, &z, prm).unwrap(), &i3_grad(&eta, &z, prm).unwrap(), &eta, &dir));
        }
    }
    ensure(worst <= 1e-5, format!("worst relative error {worst:.2e} (<= 1e-5) over 3 parameter sets x 20 points x 3 functionals"))
}

// 3 ------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let prm = CouplingParams::new(2.0, 1.0, 2.0, 0.0, 0.0).unwrap();
    let err = |cells: usize| {
        let g = unit(2, cells);
        let f = sines(&g, 2.0 * PI * PI);
        let u = solve_s(&GridFunction::zeros(&g), &f, &prm, &SolverOptions::default()).unwrap();
        assert!(u.report.converged);
        max_diff(&u.field, &sines(&g, 1.0))
    };
    let (e32, e64) = (err(32), err(64));
    let ratio = e32 / e64;
    ensure((3.5..=4.5).contains(&ratio), format!("errors {e32:.3e} (h=1/32), {e64:.3e} (h=1/64), ratio {ratio:.3} in [3.5, 4.5]"))
}

// 4 ------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (dim, cells, p, eps, tol) in [(3usize, 6usize, 3.0, 0.0, 1e-4), (2, 16, 2.0, 0.0, 1e-4), (2, 16, 1.5, 1e-8, 1e-3)] {
        let g = unit(dim, cells);
        let prm = CouplingParams::new(p, 0.0, 2.0, 0.0, eps).unwrap();
        let f = GridFunction::from_fn(&g, |x| 1.0 + x[0] * (1.0 - x[1]));
        let zero = GridFunction::zeros(&g);
        let opts = SolverOptions { tol: 1e-10, ..SolverOptions::default() };
        let lambda = 5.0;
        let u1 = solve_s(&zero, &f, &prm, &opts).unwrap().field;
        let u2 = solve_s(&zero, &f.scaled(lambda), &prm, &opts).unwrap().field;
        let rel = max_diff(&u2, &u1.scaled(lambda.powf(1.0 / (p - 1.0)))) / u2.max_abs();
        ok &= rel <= tol;
        lines.push(format!("N={dim} p={p} eps={eps}: {rel:.1e} (<= {tol:e})"));
    }
    ensure(ok, lines.join("; "))
}

// 5 ------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let e = first_eigenpair(&unit(2, 64), 2.0, 0.0, &eigen_seed_options()).unwrap();
    let exact = 2.0 * PI * PI;
    let rel = (e.lambda1 - exact).abs() / exact;
    ensure(rel <= 0.02, format!("lambda1 = {:.5} vs 2 pi^2 = {exact:.5}, relative error {rel:.2e} (<= 2e-2)", e.lambda1))
}

// 6 ------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let g = unit(2, 32);
    let prm = CouplingParams::with_default_eps(1.5, 1.0, 6.0, 0.0).unwrap();
    let f = sines(&g, 2.0 * PI * PI);
    let pair = solve_system(&f, &prm, &FixedPointOptions::default()).unwrap();
    if !pair.converged {
        return Err("smooth-data solve did not converge".into());
    }
    let rep = saddle_check(&pair.u, &pair.phi, &f, &prm, 32, 1e-3, 6).unwrap();
    ensure(
        rep.passed,
        format!(
            "32 probes at 1e-3: worst u margin {:.3e}, worst phi margin {:.3e}, slack {:.3e}",
            rep.worst_u_margin, rep.worst_phi_margin, rep.slack
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let g = unit(2, 32);
    let f = sines(&g, 2.0 * PI * PI);
    let mut lines = Vec::new();
    let mut ok = true;
    for (p, r, theta) in [(1.5, 6.0, 0.0), (1.5, 3.0, 0.3), (2.0, 3.0, 0.3)] {
        let prm = CouplingParams::with_default_eps(p, 1.0, r, theta).unwrap();
        let pair = solve_system(&f, &prm, &FixedPointOptions::default()).unwrap();
        // ∫|∇φ|^p against the lumped ∫|u|^r φ^{θ+1}, computed here from nodal values
        let lhs = w1p_seminorm(&pair.phi, p).unwrap().powf(p);
        let rhs: f64 = pair
            .u
            .values()
            .iter()
            .zip(pair.phi.values())
            .map(|(u, ph)| u.abs().powf(r) * ph.max(0.0).powf(theta + 1.0))
            .sum::<f64>()
            * g.cell_volume();
        let res = (lhs - rhs).abs() / lhs.max(1.0);
        ok &= pair.converged && res <= 1e-5;
        lines.push(format!("p={p} r={r} theta={theta}: converged={} residual {res:.1e}", pair.converged));
    }
    ensure(ok, lines.join("; "))
}

// 8 ------------------------------------------------------------------------

fn criterion_8() -> Outcome {
    let g = unit(2, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_i3 = f64::NEG_INFINITY;
    let mut min_node = f64::INFINITY;
    for k in 0..5 {
        let (p, theta) = [(1.5, 0.0), (1.5, 0.3), (2.0, 0.0), (2.0, 0.6), (3.0, 1.2)][k];
        let prm = CouplingParams::with_default_eps(p, 1.0, 2.5, theta).unwrap();
        let eig = first_eigenpair(&g, p, prm.eps, &eigen_seed_options()).unwrap();
        let v = random(&g, &mut rng, -1.5, 1.5);
        let t = solve_t(&v, &prm, &eig, &SolverOptions::default()).unwrap();
        worst_i3 = worst_i3.max(i3_value(&t.field, &v, &prm).unwrap());
        min_node = min_node.min(t.field.values().iter().cloned().fold(f64::INFINITY, f64::min));
    }
    ensure(worst_i3 < 0.0 && min_node >= 0.0, format!("max I3(T(v)) = {worst_i3:.3e} < 0, min nodal value {min_node:e} >= 0"))
}

// 9, 10 --------------------------------------------------------------------

const REGULARIZING: &str = "\
dim = 2
cells = 16
p = 1.5
r = 6
theta = 0
data = singular
m = 1.18
alpha = 1.68
";

const H_VALUES: [f64; 4] = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];

fn sweep(a: f64) -> &'static [SweepRow] {
    static RUNS: OnceLock<[Vec<SweepRow>; 2]> = OnceLock::new();
    let runs = RUNS.get_or_init(|| {
        let run = |a: f64| {
            let mut cfg = RunConfig::parse(REGULARIZING).unwrap();
            cfg.a = a;
            run_sweep(&cfg, Axis::H, &H_VALUES).unwrap()
        };
        let (coupled, free) = rayon::join(|| run(1.0), || run(0.0));
        [coupled, free]
    });
    &runs[if a == 1.0 { 0 } else { 1 }]
}

fn column(rows: &[SweepRow], f: impl Fn(&SweepRow) -> Option<f64>) -> Result<Vec<f64>, String> {
    rows.iter()
        .map(|r| {
            if let Some(e) = &r.error {
                return Err(format!("h = {}: {e}", r.h));
            }
            if !r.converged {
                return Err(format!("h = {}: no convergence", r.h));
            }
            f(r).ok_or_else(|| format!("h = {}: missing value", r.h))
        })
        .collect()
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn criterion_9() -> Outcome {
    // the data sits in L^1.18 but not in the dual space L^1.2
    let (alpha, m, dual) = (1.68, 1.18, 1.2);
    if !(alpha * m < 2.0 && alpha * dual >= 2.0) {
        return Err("alpha does not separate L^1.18 from L^1.2".into());
    }
    let w1p = column(sweep(1.0), |r| r.lemma.map(|l| l.norm_u_w1p))?;
    let r1 = column(sweep(1.0), |r| r.lemma.map(|l| l.norm_u_r1))?;
    let free = column(sweep(0.0), |r| r.lemma.map(|l| l.norm_u_w1p))?;
    let (s_w, s_r) = (spread(&w1p[1..]), spread(&r1[1..]));
    let increasing = free.windows(2).all(|w| w[1] > w[0]);
    ensure(
        s_w < 0.2 && s_r < 0.2 && increasing,
        format!(
            "A=1 |grad u|_p [{}] spread {s_w:.3}, |u|_(r+1) [{}] spread {s_r:.3}; A=0 |grad u|_p [{}] increasing={increasing}",
            fmt(&w1p),
            fmt(&r1),
            fmt(&free)
        ),
    )
}

fn criterion_10() -> Outcome {
    let s = s_exponent(1.18, 1.5, 6.0).unwrap().value;
    let ls = column(sweep(1.0), |r| r.norm_u_s)?;
    let l2s = column(sweep(1.0), |r| r.norm_u_2s)?;
    let sp = spread(&ls[1..]);
    ensure(sp < 0.2, format!("s = {s:.4}: |u|_s [{}] spread {sp:.3}; |u|_2s [{}] (recorded only)", fmt(&ls), fmt(&l2s)))
}

// 11 -----------------------------------------------------------------------

/// The discrete system for p = 2, θ = 0, r = 2 written out by hand:
/// `K u + A h² φ u = h² f`, `K φ = h² u²`, with `K` assembled from the
/// cell-center gradient of the bilinear interpolant.
fn criterion_11() -> Outcome {
    let cells = 6;
    let g = unit(2, cells);
    let h = 1.0 / cells as f64;
    let n1 = cells + 1;
    let a = 1.0;
    let f = sines(&g, 2.0 * PI * PI);

    // interior unknowns, indexed by (i, j) with node index i + n1 j
    let interior: Vec<usize> = (0..g.num_nodes()).filter(|&i| !g.is_boundary(i)).collect();
    let slot = |node: usize| interior.iter().position(|&k| k == node);
    let m = interior.len();
    let mut k = DMatrix::<f64>::zeros(m, m);
    for cj in 0..cells {
        for ci in 0..cells {
            let corners = [(ci, cj), (ci + 1, cj), (ci, cj + 1), (ci + 1, cj + 1)];
            // d/dx and d/dy of the bilinear interpolant at the center
            let gx = [-0.5 / h, 0.5 / h, -0.5 / h, 0.5 / h];
            let gy = [-0.5 / h, -0.5 / h, 0.5 / h, 0.5 / h];
            for (s, &(i1, j1)) in corners.iter().enumerate() {
                for (t, &(i2, j2)) in corners.iter().enumerate() {
                    if let (Some(x), Some(y)) = (slot(i1 + n1 * j1), slot(i2 + n1 * j2)) {
                        k[(x, y)] += h * h * (gx[s] * gx[t] + gy[s] * gy[t]);
                    }
                }
            }
        }
    }
    let fv = DVector::from_iterator(m, interior.iter().map(|&i| f.values()[i] * h * h));
    let kinv = k.clone().lu();
    let mut phi = DVector::<f64>::zeros(m);
    let mut u = DVector::<f64>::zeros(m);
    for _ in 0..500 {
        let mut lhs = k.clone();
        for i in 0..m {
            lhs[(i, i)] += a * h * h * phi[i];
        }
        u = lhs.lu().solve(&fv).unwrap();
        let src = u.map(|x| x * x * h * h);
        let next = kinv.solve(&src).unwrap();
        let change = (&next - &phi).amax();
        phi = 0.5 * &phi + 0.5 * next;
        if change < 1e-15 {
            break;
        }
    }

    let prm = CouplingParams::new(2.0, a, 2.0, 0.0, 0.0).unwrap();
    let opts = FixedPointOptions {
        fp_tol: 1e-12,
        solver: SolverOptions { tol: 1e-12, ..SolverOptions::default() },
        ..FixedPointOptions::default()
    };
    let pair = solve_system(&f, &prm, &opts).unwrap();
    let mut worst: f64 = 0.0;
    for (x, &node) in interior.iter().enumerate() {
        worst = worst.max((pair.u.values()[node] - u[x]).abs());
        worst = worst.max((pair.phi.values()[node] - phi[x]).abs());
    }
    ensure(
        pair.converged && worst <= 1e-6,
        format!("max nodal difference {worst:.2e} (<= 1e-6) over u and phi, max phi {:.4e}", phi.amax()),
    )
}

fn main() -> ExitCode {
    // libtest passes flags such as --nocapture or a filter; a filter that
    // names nothing here just runs everything
    let criteria: [Criterion; 11] = [
        (1, "exponent identities", criterion_1),
        (2, "gradient correctness", criterion_2),
        (3, "Poisson oracle", criterion_3),
        (4, "p-homogeneity", criterion_4),
        (5, "eigen oracle", criterion_5),
        (6, "saddle-point property", criterion_6),
        (7, "energy identity", criterion_7),
        (8, "T nontriviality", criterion_8),
        (9, "regularizing-effect trend", criterion_9),
        (10, "summability exponent probe", criterion_10),
        (11, "small-instance fixed-point oracle", criterion_11),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let start = std::time::Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id:>2} PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
