//! Variational functionals of the coupled system and their exact nodal gradients.
//!
//! For `z`, `eta` vanishing on the boundary,
//!
//! ```text
//! J(z, eta) = 1/p ∫|∇z|^p - A(θ+1)/(p r) ∫|∇eta|^p + A/r ∫(eta⁺)^(θ+1)|z|^r - ∫ f z
//! I1(z)     = 1/p ∫|∇z|^p + A/r ∫(ψ⁺)^(θ+1)|z|^r - ∫ f z          (J(·, ψ) minus a constant)
//! I3(eta)   = (θ+1)/p ∫|∇eta|^p - ∫(eta⁺)^(θ+1)|v|^r
//! ```
//!
//! Gradient terms use the regularized density `(|∇z|² + eps²)^(p/2)` and the
//! one-point cell rule; every other integral uses nodal quadrature. On a
//! finite grid the coupling integral is always finite, so `J` never takes the
//! value `+∞`.
//!
//! Gradients are derivatives with respect to the nodal values, so they carry
//! the quadrature weight `h^N` (they are not mass-scaled residual densities).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{integrate_nodes, Grid, GridFunction};
use crate::optimize::{HessianOp, Objective};

/// The exponents and coupling strength of the system, plus the gradient
/// regularization `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingParams {
    pub p: f64,
    pub a: f64,
    pub r: f64,
    pub theta: f64,
    pub eps: f64,
}

impl CouplingParams {
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(p: f64, a: f64, r: f64, theta: f64, eps: f64) -> Result<CouplingParams> {
        let params = CouplingParams { p, a, r, theta, eps };
        params.validate()?;
        Ok(params)
    }

    /// Parameters with the default regularization: `eps = 1e-8` when `p < 2`,
    /// none otherwise.
    pub fn with_default_eps(p: f64, a: f64, r: f64, theta: f64) -> Result<CouplingParams> {
        let eps = if p < 2.0 { Self::DEFAULT_EPS } else { 0.0 };
        Self::new(p, a, r, theta, eps)
    }

    /// `A = 0` is accepted: it decouples the first equation and serves as the
    /// control arm of the regularization experiments.
    pub fn validate(&self) -> Result<()> {
        let CouplingParams { p, a, r, theta, eps } = *self;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(p > 1.0 && p.is_finite()) {
            return bad(format!("p > 1 violated (p = {p})"));
        }
        if !(a >= 0.0 && a.is_finite()) {
            return bad(format!("A >= 0 violated (A = {a})"));
        }
        if !(r > 1.0 && r.is_finite()) {
            return bad(format!("r > 1 violated (r = {r})"));
        }
        if !(theta >= 0.0 && theta < p - 1.0) {
            return bad(format!("0 <= theta < p - 1 violated (theta = {theta}, p - 1 = {})", p - 1.0));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return bad(format!("eps >= 0 violated (eps = {eps})"));
        }
        Ok(())
    }
}

/// `(1/p) Σ_cells (|∇u|² + eps²)^(p/2) h^N`.
pub fn p_dirichlet(u: &GridFunction, p: f64, eps: f64) -> f64 {
    dirichlet_value(u.grid(), u.values(), p, eps)
}

/// Exact gradient of [`p_dirichlet`] with respect to the nodal values.
pub fn grad_p_dirichlet(u: &GridFunction, p: f64, eps: f64) -> Result<GridFunction> {
    let grid = u.grid();
    let mut out = vec![0.0; grid.num_nodes()];
    dirichlet_grad_add(grid, u.values(), p, eps, 1.0, &mut out)?;
    Ok(GridFunction::from_raw(grid, out))
}

/// The saddle functional `J(z, eta)`.
pub fn j_value(z: &GridFunction, eta: &GridFunction, f: &GridFunction, params: &CouplingParams) -> Result<f64> {
    let i1 = i1_value(z, eta, f, params)?;
    let CouplingParams { p, a, r, theta, eps } = *params;
    Ok(i1 - a * (theta + 1.0) / r * p_dirichlet(eta, p, eps))
}

pub fn i1_value(z: &GridFunction, psi: &GridFunction, f: &GridFunction, params: &CouplingParams) -> Result<f64> {
    z.check_same_grid(psi)?;
    Ok(I1Functional::new(psi, f, params)?.value(z.values()))
}

pub fn i1_grad(z: &GridFunction, psi: &GridFunction, f: &GridFunction, params: &CouplingParams) -> Result<GridFunction> {
    z.check_same_grid(psi)?;
    let i1 = I1Functional::new(psi, f, params)?;
    let mut g = vec![0.0; z.values().len()];
    i1.gradient(z.values(), &mut g)?;
    Ok(GridFunction::from_raw(z.grid(), g))
}

pub fn i3_value(eta: &GridFunction, v: &GridFunction, params: &CouplingParams) -> Result<f64> {
    eta.check_same_grid(v)?;
    Ok(I3Functional::new(v, params)?.value(eta.values()))
}

pub fn i3_grad(eta: &GridFunction, v: &GridFunction, params: &CouplingParams) -> Result<GridFunction> {
    eta.check_same_grid(v)?;
    let i3 = I3Functional::new(v, params)?;
    let mut g = vec![0.0; eta.values().len()];
    i3.gradient(eta.values(), &mut g)?;
    Ok(GridFunction::from_raw(eta.grid(), g))
}

/// `sign(z)|z|^(r-1)`, continuously extended by 0 at `z = 0`.
#[inline]
pub(crate) fn signed_pow(z: f64, e: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        z.signum() * z.abs().powf(e)
    }
}

pub(crate) fn dirichlet_value(grid: &Grid, u: &[f64], p: f64, eps: f64) -> f64 {
    let eps2 = eps * eps;
    let s: f64 = (0..grid.num_cells())
        .map(|c| {
            let g = grid.gradient_in_cell(u, c);
            (g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + eps2).powf(0.5 * p)
        })
        .sum();
    s * grid.cell_volume() / p
}

/// `(b + delta)^e - b^e` for `b >= 0`, `b + delta >= 0`, without the
/// cancellation of the direct difference.
#[inline]
pub(crate) fn pow_change(b: f64, delta: f64, e: f64) -> f64 {
    if b == 0.0 {
        delta.max(0.0).powf(e)
    } else {
        b.powf(e) * (e * (delta / b).ln_1p()).exp_m1()
    }
}

/// Change of [`dirichlet_value`] from `u` to `u + alpha d`, and the sum of
/// the magnitudes of the per-cell changes.
pub(crate) fn dirichlet_change(grid: &Grid, u: &[f64], d: &[f64], alpha: f64, p: f64, eps: f64) -> (f64, f64) {
    let eps2 = eps * eps;
    let (mut sum, mut mag) = (0.0, 0.0);
    for c in 0..grid.num_cells() {
        let g = grid.gradient_in_cell(u, c);
        let dg = grid.gradient_in_cell(d, c);
        let s0 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + eps2;
        let gd = g[0] * dg[0] + g[1] * dg[1] + g[2] * dg[2];
        let dd = dg[0] * dg[0] + dg[1] * dg[1] + dg[2] * dg[2];
        let ds = alpha * (2.0 * gd + alpha * dd);
        let t = pow_change(s0, ds, 0.5 * p);
        sum += t;
        mag += t.abs();
    }
    let w = grid.cell_volume() / p;
    (sum * w, mag * w)
}

/// `|z + dz|^r - |z|^r`.
#[inline]
fn abs_pow_change(z: f64, dz: f64, r: f64) -> f64 {
    let z1 = z + dz;
    if z != 0.0 && (z1 > 0.0) == (z > 0.0) {
        pow_change(z.abs(), dz * z.signum(), r)
    } else {
        z1.abs().powf(r) - z.abs().powf(r)
    }
}

/// `out += scale * ∇_u p_dirichlet(u)`.
pub(crate) fn dirichlet_grad_add(grid: &Grid, u: &[f64], p: f64, eps: f64, scale: f64, out: &mut [f64]) -> Result<()> {
    let eps2 = eps * eps;
    let vol = scale * grid.cell_volume();
    let e = 0.5 * (p - 2.0);
    for c in 0..grid.num_cells() {
        let g = grid.gradient_in_cell(u, c);
        let s = g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + eps2;
        let k = if s == 0.0 {
            if p < 2.0 {
                return Err(Error::Degenerate { p, cell: c });
            }
            if p == 2.0 {
                1.0
            } else {
                0.0
            }
        } else {
            s.powf(e)
        };
        grid.scatter_flux(c, [k * g[0], k * g[1], k * g[2]], vol, out);
    }
    grid.zero_boundary(out);
    Ok(())
}

/// Second derivative of the cell density `(1/p) s^(p/2)`, `s = |g|² + eps²`,
/// frozen at one linearization point: `a I + b g gᵀ`.
///
/// For `p < 2` the `b` term is dropped (the Kačanov linearization). The full
/// Hessian overshoots there: on a single cell Newton maps `g` to
/// `g (p-2)/(p-1)`, which for `p = 1.5` is `-g`, and the line search then
/// crawls. The dropped term is negative, so what is left stays positive
/// definite and dominates the true Hessian.
pub(crate) struct DirichletHessian {
    grid: Arc<Grid>,
    a: Vec<f64>,
    b: Vec<f64>,
    g: Vec<[f64; 3]>,
    scale: f64,
}

impl DirichletHessian {
    pub(crate) fn new(grid: &Arc<Grid>, u: &[f64], p: f64, eps: f64, scale: f64) -> DirichletHessian {
        let n = grid.num_cells();
        let (mut a, mut b, mut gs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let eps2 = eps * eps;
        for c in 0..n {
            let g = grid.gradient_in_cell(u, c);
            let s = g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + eps2;
            if s == 0.0 {
                // Only reachable for p >= 2 (p < 2 is rejected by the gradient).
                a.push(if p == 2.0 { 1.0 } else { 0.0 });
                b.push(0.0);
            } else {
                a.push(s.powf(0.5 * (p - 2.0)));
                b.push(if p < 2.0 { 0.0 } else { (p - 2.0) * s.powf(0.5 * (p - 4.0)) });
            }
            gs.push(g);
        }
        DirichletHessian {
            grid: Arc::clone(grid),
            a,
            b,
            g: gs,
            scale,
        }
    }

    pub(crate) fn apply_add(&self, v: &[f64], out: &mut [f64]) {
        let grid = &*self.grid;
        let vol = self.scale * grid.cell_volume();
        for c in 0..grid.num_cells() {
            let dv = grid.gradient_in_cell(v, c);
            let g = self.g[c];
            let gd = g[0] * dv[0] + g[1] * dv[1] + g[2] * dv[2];
            let (a, b) = (self.a[c], self.b[c] * gd);
            grid.scatter_flux(c, [a * dv[0] + b * g[0], a * dv[1] + b * g[1], a * dv[2] + b * g[2]], vol, out);
        }
    }

    pub(crate) fn diagonal_add(&self, out: &mut [f64]) {
        let grid = &*self.grid;
        let vol = self.scale * grid.cell_volume();
        let weights = grid.corner_weights();
        for c in 0..grid.num_cells() {
            let g = self.g[c];
            for (node, w) in grid.cell_nodes(c).zip(weights) {
                let wg = w[0] * g[0] + w[1] * g[1] + w[2] * g[2];
                let ww = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
                out[node] += vol * (self.a[c] * ww + self.b[c] * wg * wg);
            }
        }
    }
}

/// Gradient-term Hessian plus a diagonal (nodal) term, boundary rows removed.
pub(crate) struct NodalPlusDirichlet {
    dirichlet: DirichletHessian,
    nodal: Vec<f64>,
    // Diagonal of the convex part only; used as a preconditioner.
    precond_diag: Vec<f64>,
}

impl HessianOp for NodalPlusDirichlet {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.dirichlet.apply_add(v, out);
        for ((o, d), x) in out.iter_mut().zip(&self.nodal).zip(v) {
            *o += d * x;
        }
        self.dirichlet.grid.zero_boundary(out);
    }

    fn preconditioner_diagonal(&self) -> &[f64] {
        &self.precond_diag
    }

    fn apply_convex(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.dirichlet.apply_add(v, out);
        for ((o, d), x) in out.iter_mut().zip(&self.nodal).zip(v) {
            *o += d.max(0.0) * x;
        }
        self.dirichlet.grid.zero_boundary(out);
    }
}

fn build_hessian(grid: &Arc<Grid>, x: &[f64], p: f64, eps: f64, scale: f64, nodal: Vec<f64>) -> NodalPlusDirichlet {
    let dirichlet = DirichletHessian::new(grid, x, p, eps, scale);
    let mut diag = vec![0.0; grid.num_nodes()];
    dirichlet.diagonal_add(&mut diag);
    for (d, n) in diag.iter_mut().zip(&nodal) {
        if *n > 0.0 {
            *d += n;
        }
    }
    for (i, d) in diag.iter_mut().enumerate() {
        if grid.is_boundary(i) || !(*d > 0.0 && d.is_finite()) {
            *d = 1.0;
        }
    }
    NodalPlusDirichlet {
        dirichlet,
        nodal,
        precond_diag: diag,
    }
}

/// `I1 = J(·, ψ)` without its ψ-only term, as a function of the nodal values of `z`.
#[derive(Debug, Clone)]
pub struct I1Functional {
    grid: Arc<Grid>,
    p: f64,
    eps: f64,
    r: f64,
    /// `A (ψ⁺)^(θ+1) h^N` per node.
    coupling: Vec<f64>,
    /// `f h^N` per node.
    load: Vec<f64>,
}

impl I1Functional {
    pub fn new(psi: &GridFunction, f: &GridFunction, params: &CouplingParams) -> Result<I1Functional> {
        psi.check_same_grid(f)?;
        let grid = psi.grid();
        let vol = grid.cell_volume();
        let e = params.theta + 1.0;
        let coupling = psi
            .values()
            .iter()
            .map(|&s| if s > 0.0 { params.a * s.powf(e) * vol } else { 0.0 })
            .collect();
        let load = f.values().iter().map(|&x| x * vol).collect();
        Ok(I1Functional {
            grid: Arc::clone(grid),
            p: params.p,
            eps: params.eps,
            r: params.r,
            coupling,
            load,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Euclidean norm of the load vector `f h^N`.
    pub fn load_norm(&self) -> f64 {
        self.load.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl Objective for I1Functional {
    fn len(&self) -> usize {
        self.grid.num_nodes()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let lower: f64 = z
            .iter()
            .zip(&self.coupling)
            .zip(&self.load)
            .map(|((&z, &c), &l)| c * z.abs().powf(self.r) / self.r - l * z)
            .sum();
        dirichlet_value(&self.grid, z, self.p, self.eps) + lower
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) -> Result<f64> {
        for ((o, (&zi, &c)), &l) in out.iter_mut().zip(z.iter().zip(&self.coupling)).zip(&self.load) {
            *o = c * signed_pow(zi, self.r - 1.0) - l;
        }
        dirichlet_grad_add(&self.grid, z, self.p, self.eps, 1.0, out)?;
        Ok(self.value(z))
    }

    fn value_change(&self, z: &[f64], d: &[f64], alpha: f64) -> (f64, f64) {
        let (mut sum, mut mag) = dirichlet_change(&self.grid, z, d, alpha, self.p, self.eps);
        for (((&zi, &di), &c), &l) in z.iter().zip(d).zip(&self.coupling).zip(&self.load) {
            let t = c * abs_pow_change(zi, alpha * di, self.r) / self.r - l * alpha * di;
            sum += t;
            mag += t.abs();
        }
        (sum, mag)
    }

    fn hessian(&self, z: &[f64]) -> Option<Box<dyn HessianOp + '_>> {
        let nodal = z
            .iter()
            .zip(&self.coupling)
            .map(|(&zi, &c)| {
                if c == 0.0 || (zi == 0.0 && self.r != 2.0) {
                    0.0
                } else {
                    c * (self.r - 1.0) * zi.abs().powf(self.r - 2.0)
                }
            })
            .collect();
        Some(Box::new(build_hessian(&self.grid, z, self.p, self.eps, 1.0, nodal)))
    }
}

/// `I3` for a frozen `v`, as a function of the nodal values of `eta`.
#[derive(Debug, Clone)]
pub struct I3Functional {
    grid: Arc<Grid>,
    p: f64,
    eps: f64,
    theta: f64,
    /// `|v|^r h^N` per node.
    source: Vec<f64>,
}

impl I3Functional {
    pub fn new(v: &GridFunction, params: &CouplingParams) -> Result<I3Functional> {
        let grid = v.grid();
        let vol = grid.cell_volume();
        let source = v.values().iter().map(|x| x.abs().powf(params.r) * vol).collect();
        Ok(I3Functional {
            grid: Arc::clone(grid),
            p: params.p,
            eps: params.eps,
            theta: params.theta,
            source,
        })
    }

    pub fn source_norm(&self) -> f64 {
        self.source.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Euclidean norm of the source term `(θ+1)|v|^r (η⁺)^θ h^N` at `eta`.
    pub fn source_norm_at(&self, eta: &[f64]) -> f64 {
        let e = self.theta;
        self.source
            .iter()
            .zip(eta)
            .map(|(w, &x)| if x > 0.0 { (e + 1.0) * w * x.powf(e) } else { 0.0 })
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

impl Objective for I3Functional {
    fn len(&self) -> usize {
        self.grid.num_nodes()
    }

    fn value(&self, eta: &[f64]) -> f64 {
        let e = self.theta + 1.0;
        let coupling: f64 = eta
            .iter()
            .zip(&self.source)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &w)| w * x.powf(e))
            .sum();
        e * dirichlet_value(&self.grid, eta, self.p, self.eps) - coupling
    }

    fn gradient(&self, eta: &[f64], out: &mut [f64]) -> Result<f64> {
        let e = self.theta + 1.0;
        for ((o, &x), &w) in out.iter_mut().zip(eta).zip(&self.source) {
            // d/dx (x⁺)^(θ+1) is taken as 0 at x = 0.
            *o = if x > 0.0 { -e * w * x.powf(self.theta) } else { 0.0 };
        }
        dirichlet_grad_add(&self.grid, eta, self.p, self.eps, e, out)?;
        Ok(self.value(eta))
    }

    fn value_change(&self, eta: &[f64], d: &[f64], alpha: f64) -> (f64, f64) {
        let e = self.theta + 1.0;
        let (ds, dm) = dirichlet_change(&self.grid, eta, d, alpha, self.p, self.eps);
        let (mut sum, mut mag) = (e * ds, e * dm);
        for ((&x, &di), &w) in eta.iter().zip(d).zip(&self.source) {
            let x1 = x + alpha * di;
            let t = if x > 0.0 && x1 > 0.0 {
                pow_change(x, alpha * di, e)
            } else {
                x1.max(0.0).powf(e) - x.max(0.0).powf(e)
            };
            sum -= w * t;
            mag += (w * t).abs();
        }
        (sum, mag)
    }

    fn hessian(&self, eta: &[f64]) -> Option<Box<dyn HessianOp + '_>> {
        let e = self.theta + 1.0;
        let nodal = eta
            .iter()
            .zip(&self.source)
            .map(|(&x, &w)| {
                if x > 0.0 && self.theta > 0.0 && w > 0.0 {
                    -e * self.theta * w * x.powf(self.theta - 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        Some(Box::new(build_hessian(&self.grid, eta, self.p, self.eps, e, nodal)))
    }
}

/// `∫ w(u_i, φ_i)` with nodal quadrature over two fields on one grid.
pub(crate) fn nodal_integral(u: &GridFunction, phi: &GridFunction, w: impl Fn(f64, f64) -> f64) -> f64 {
    let (uv, pv) = (u.values(), phi.values());
    integrate_nodes(u.grid(), |i| w(uv[i], pv[i]))
}
