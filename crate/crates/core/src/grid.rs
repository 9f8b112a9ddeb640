//! Structured box grids, nodal fields and the discrete norms built on them.
//!
//! Nodes are numbered with the x index running fastest:
//! `index = i + nx * (j + ny * k)`. Every node on a face of the box is a
//! Dirichlet node; a [`GridFunction`] is exactly zero there.
//!
//! Gradients are sampled once per cell, at the cell center, from the
//! multilinear (bilinear in 2D, trilinear in 3D) interpolant of the corner
//! values. Gradient terms are integrated with that one-point rule, lower-order
//! terms with nodal (lumped) quadrature.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A uniform, isotropic node lattice on the box `[0, (n_x-1)h] x ...`.
#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    dims: [usize; 3],
    h: f64,
    boundary: Vec<bool>,
    cell_base: Vec<usize>,
    corner_offsets: Vec<usize>,
    // d(interpolant)/dx_d at the cell center, per corner and axis.
    corner_weights: Vec<[f64; 3]>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.dims == other.dims && self.h == other.h
    }
}

impl Grid {
    /// Builds a grid with `dims.len()` axes (2 or 3), `dims[d]` nodes along axis `d`
    /// and spacing `h`.
    pub fn new(dims: &[usize], h: f64) -> Result<Grid> {
        let dim = dims.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if let Some(n) = dims.iter().find(|&&n| n < 3) {
            return Err(Error::InvalidGrid(format!(
                "every axis needs at least 3 nodes, got {n}"
            )));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        let mut d3 = [1usize; 3];
        d3[..dim].copy_from_slice(dims);
        let [nx, ny, nz] = d3;
        let n_nodes = nx * ny * nz;

        let mut boundary = vec![false; n_nodes];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let on_face = i == 0
                        || i == nx - 1
                        || j == 0
                        || j == ny - 1
                        || (dim == 3 && (k == 0 || k == nz - 1));
                    boundary[i + nx * (j + ny * k)] = on_face;
                }
            }
        }

        let cz = if dim == 3 { nz - 1 } else { 1 };
        let mut cell_base = Vec::with_capacity((nx - 1) * (ny - 1) * cz);
        for k in 0..cz {
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    cell_base.push(i + nx * (j + ny * k));
                }
            }
        }

        let n_corners = 1usize << dim;
        let norm = (1usize << (dim - 1)) as f64 * h;
        let mut corner_offsets = Vec::with_capacity(n_corners);
        let mut corner_weights = Vec::with_capacity(n_corners);
        for c in 0..n_corners {
            let bits = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            corner_offsets.push(bits[0] + nx * (bits[1] + ny * bits[2]));
            let mut w = [0.0; 3];
            for (d, wd) in w.iter_mut().enumerate().take(dim) {
                *wd = if bits[d] == 1 { 1.0 } else { -1.0 } / norm;
            }
            corner_weights.push(w);
        }

        Ok(Grid {
            dim,
            dims: d3,
            h,
            boundary,
            cell_base,
            corner_offsets,
            corner_weights,
        })
    }

    /// The unit square (N = 2) or unit cube (N = 3) with `cells` cells per axis.
    pub fn unit(dim: usize, cells: usize) -> Result<Grid> {
        if cells < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 cells per axis, got {cells}")));
        }
        let dims = vec![cells + 1; dim];
        Grid::new(&dims, 1.0 / cells as f64)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Node counts per axis.
    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.dim]
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn extent(&self) -> Vec<f64> {
        self.dims().iter().map(|&n| (n - 1) as f64 * self.h).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.boundary.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cell_base.len()
    }

    pub fn num_interior(&self) -> usize {
        self.boundary.iter().filter(|&&b| !b).count()
    }

    /// `h^N`, the volume of one cell and the lumped mass of one interior node.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.extent().iter().product()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    /// Physical coordinates of a node (unused trailing axes are 0).
    pub fn node_coords(&self, node: usize) -> [f64; 3] {
        let [nx, ny, _] = self.dims;
        let i = node % nx;
        let j = (node / nx) % ny;
        let k = node / (nx * ny);
        [i as f64 * self.h, j as f64 * self.h, k as f64 * self.h]
    }

    /// Physical coordinates of a cell center.
    pub fn cell_center(&self, cell: usize) -> [f64; 3] {
        let mut x = self.node_coords(self.cell_base[cell]);
        for xd in x.iter_mut().take(self.dim) {
            *xd += 0.5 * self.h;
        }
        x
    }

    pub(crate) fn cell_nodes(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let base = self.cell_base[cell];
        self.corner_offsets.iter().map(move |&o| base + o)
    }

    pub(crate) fn corner_weights(&self) -> &[[f64; 3]] {
        &self.corner_weights
    }

    /// Gradient of the multilinear interpolant at the center of `cell`.
    #[inline]
    pub(crate) fn gradient_in_cell(&self, values: &[f64], cell: usize) -> [f64; 3] {
        let base = self.cell_base[cell];
        let mut g = [0.0; 3];
        for (off, w) in self.corner_offsets.iter().zip(&self.corner_weights) {
            let u = values[base + off];
            g[0] += w[0] * u;
            g[1] += w[1] * u;
            g[2] += w[2] * u;
        }
        g
    }

    /// Adds `vol * w_c . flux` to every corner `c` of `cell`: the transpose of
    /// [`Grid::gradient_in_cell`].
    #[inline]
    pub(crate) fn scatter_flux(&self, cell: usize, flux: [f64; 3], vol: f64, out: &mut [f64]) {
        let base = self.cell_base[cell];
        for (off, w) in self.corner_offsets.iter().zip(&self.corner_weights) {
            out[base + off] += vol * (w[0] * flux[0] + w[1] * flux[1] + w[2] * flux[2]);
        }
    }

    pub(crate) fn zero_boundary(&self, values: &mut [f64]) {
        for (v, &b) in values.iter_mut().zip(&self.boundary) {
            if b {
                *v = 0.0;
            }
        }
    }
}

/// A nodal scalar field vanishing on the boundary.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: &Arc<Grid>) -> GridFunction {
        GridFunction {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.num_nodes()],
        }
    }

    /// Wraps nodal values. Boundary entries must be exactly zero and all
    /// entries finite.
    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<GridFunction> {
        if values.len() != grid.num_nodes() {
            return Err(Error::InvalidParameter(format!(
                "expected {} nodal values, got {}",
                grid.num_nodes(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at node {i}")));
        }
        if let Some(i) = (0..values.len()).find(|&i| grid.is_boundary(i) && values[i] != 0.0) {
            return Err(Error::InvalidParameter(format!(
                "boundary node {i} carries nonzero value {}",
                values[i]
            )));
        }
        Ok(GridFunction {
            grid: Arc::clone(grid),
            values,
        })
    }

    /// Samples `f` at the interior nodes; boundary nodes are set to zero.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn([f64; 3]) -> f64) -> GridFunction {
        let values = (0..grid.num_nodes())
            .map(|i| if grid.is_boundary(i) { 0.0 } else { f(grid.node_coords(i)) })
            .collect();
        GridFunction {
            grid: Arc::clone(grid),
            values,
        }
    }

    // Callers guarantee the Dirichlet condition and finiteness.
    pub(crate) fn from_raw(grid: &Arc<Grid>, mut values: Vec<f64>) -> GridFunction {
        grid.zero_boundary(&mut values);
        GridFunction {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Nodewise `f(value)`, re-imposing the boundary condition.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, s: f64) -> GridFunction {
        self.map(|v| s * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub(crate) fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// One length-N vector per cell.
#[derive(Debug, Clone)]
pub struct CellField {
    grid: Arc<Grid>,
    data: Vec<f64>,
}

impl CellField {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn get(&self, cell: usize) -> &[f64] {
        let n = self.grid.dim();
        &self.data[cell * n..(cell + 1) * n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.grid.dim())
    }

    /// Euclidean length of each cell vector.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.iter()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }
}

pub fn cell_gradient(u: &GridFunction) -> CellField {
    cell_gradient_of(u.grid(), u.values())
}

/// Like [`cell_gradient`] but for arbitrary nodal values, including ones that
/// do not vanish on the boundary.
pub fn cell_gradient_of(grid: &Arc<Grid>, values: &[f64]) -> CellField {
    assert_eq!(values.len(), grid.num_nodes(), "one value per node");
    let n = grid.dim();
    let mut data = Vec::with_capacity(grid.num_cells() * n);
    for c in 0..grid.num_cells() {
        data.extend_from_slice(&grid.gradient_in_cell(values, c)[..n]);
    }
    CellField {
        grid: Arc::clone(grid),
        data,
    }
}

/// Sum of `w` times the cell volume.
pub fn integrate_cells(w: &[f64], grid: &Grid) -> f64 {
    assert_eq!(w.len(), grid.num_cells(), "one scalar per cell");
    w.iter().sum::<f64>() * grid.cell_volume()
}

/// Nodal quadrature of `sum_i weight(i)` : `h^N * sum_i`.
pub(crate) fn integrate_nodes(grid: &Grid, weight: impl Fn(usize) -> f64) -> f64 {
    (0..grid.num_nodes()).map(weight).sum::<f64>() * grid.cell_volume()
}

/// Discrete `L^q` norm with nodal quadrature.
pub fn lq_norm(u: &GridFunction, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::InvalidParameter(format!("L^q norm needs q >= 1, got {q}")));
    }
    let s = integrate_nodes(u.grid(), |i| u.values[i].abs().powf(q));
    Ok(s.powf(1.0 / q))
}

/// Discrete `W^{1,p}_0` norm: `(sum_cells |grad u|^p h^N)^{1/p}`.
pub fn w1p_seminorm(u: &GridFunction, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("W^(1,p) norm needs p > 1, got {p}")));
    }
    Ok(gradient_power_integral(u, p).powf(1.0 / p))
}

/// `sum_cells |grad u|^p h^N`.
pub(crate) fn gradient_power_integral(u: &GridFunction, p: f64) -> f64 {
    let grid = u.grid();
    let s: f64 = (0..grid.num_cells())
        .map(|c| {
            let g = grid.gradient_in_cell(u.values(), c);
            (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).powf(0.5 * p)
        })
        .sum();
    s * grid.cell_volume()
}

pub fn positive_part(u: &GridFunction) -> GridFunction {
    u.map(|v| v.max(0.0))
}

pub fn negative_part(u: &GridFunction) -> GridFunction {
    u.map(|v| (-v).max(0.0))
}

/// Writes the `plapfield` text format: a header `plapfield N nx [ny [nz]] h`
/// followed by one value per node, in node order.
pub fn write_field(u: &GridFunction, mut out: impl Write) -> std::io::Result<()> {
    let grid = u.grid();
    let mut header = format!("plapfield {}", grid.dim());
    for n in grid.dims() {
        write!(header, " {n}").unwrap();
    }
    writeln!(out, "{header} {:e}", grid.spacing())?;
    for v in u.values() {
        writeln!(out, "{v:e}")?;
    }
    out.flush()
}

pub fn read_field(input: impl BufRead) -> Result<GridFunction> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::FieldFormat(e.to_string()))?,
        None => return Err(Error::FieldFormat("empty input".into())),
    };
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.first() != Some(&"plapfield") {
        return Err(Error::FieldFormat(format!("bad header {header:?}")));
    }
    let dim: usize = tokens
        .get(1)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::FieldFormat(format!("bad dimension in {header:?}")))?;
    if tokens.len() != dim + 3 {
        return Err(Error::FieldFormat(format!(
            "expected {} header tokens for N = {dim}, got {}",
            dim + 3,
            tokens.len()
        )));
    }
    let dims = tokens[2..2 + dim]
        .iter()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::FieldFormat(format!("bad node count: {e}")))?;
    let h: f64 = tokens[2 + dim]
        .parse()
        .map_err(|e| Error::FieldFormat(format!("bad spacing: {e}")))?;
    let grid = Arc::new(Grid::new(&dims, h)?);

    let mut values = Vec::with_capacity(grid.num_nodes());
    for line in lines {
        let line = line.map_err(|e| Error::FieldFormat(e.to_string()))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(
            t.parse::<f64>()
                .map_err(|e| Error::FieldFormat(format!("bad value {t:?}: {e}")))?,
        );
    }
    GridFunction::from_values(&grid, values).map_err(|e| Error::FieldFormat(e.to_string()))
}

pub fn save_field(u: &GridFunction, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_field(u, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_field(path: impl AsRef<Path>) -> Result<GridFunction> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_field(std::io::BufReader::new(file))
}
