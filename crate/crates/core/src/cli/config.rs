//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! dim = 2
//! cells = 64
//! p = 1.5
//! A = 1
//! r = 6
//! theta = 0
//! data = singular
//! m = 1.18
//! ```
//!
//! Unknown or repeated keys are errors. Every key has a default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::cli::data::{default_center, make_singular_f, smooth_f};
use crate::energy::CouplingParams;
use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointOptions;
use crate::grid::{Grid, GridFunction};
use crate::optimize::{Method, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    /// `f ≡ 0`
    Zero,
    Smooth,
    Singular,
}

/// Cap radius of the singular data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cap {
    /// `h/2`, so that the cap shrinks with the mesh.
    HalfCell,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    /// Cells per axis; a single entry applies to every axis.
    pub cells: Vec<usize>,
    /// Spacing; `None` gives the first axis unit length.
    pub h: Option<f64>,
    pub p: f64,
    pub a: f64,
    pub r: f64,
    pub theta: f64,
    /// `None` selects the default regularization for `p`.
    pub eps: Option<f64>,
    pub method: Method,
    pub tol: f64,
    pub max_iters: usize,
    pub fp_tol: f64,
    pub max_outer: usize,
    pub omega: f64,
    pub data: DataKind,
    /// Multiplies the data.
    pub scale: f64,
    /// Exponent of the singular data. `None` with `m` set means
    /// `0.99 N / m`, just inside `L^m`.
    pub alpha: Option<f64>,
    pub center: Option<Vec<f64>>,
    pub cap: Cap,
    /// Summability of the data, used for reporting `L^s` norms.
    pub m: Option<f64>,
    /// Nodes with `φ` below this fraction of `max φ` are ignored by the comparison constant.
    pub comparison_floor: f64,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fp = FixedPointOptions::default();
        RunConfig {
            dim: 2,
            cells: vec![32],
            h: None,
            p: 2.0,
            a: 1.0,
            r: 2.0,
            theta: 0.0,
            eps: None,
            method: fp.solver.method,
            tol: fp.solver.tol,
            max_iters: fp.solver.max_iters,
            fp_tol: fp.fp_tol,
            max_outer: fp.max_outer,
            omega: fp.omega,
            data: DataKind::Smooth,
            scale: 1.0,
            alpha: None,
            center: None,
            cap: Cap::HalfCell,
            m: None,
            comparison_floor: 1e-3,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "dim", "cells", "h", "p", "A", "r", "theta", "eps", "method", "tol", "max_iters", "fp_tol", "max_outer", "omega",
    "data", "scale", "alpha", "center", "cap", "m", "comparison_floor", "out", "seed",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?} as a number")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

impl RunConfig {
    /// Parses the text of a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: key {k:?} given twice", lineno + 1)));
            }
        }
        if seen.is_empty() {
            return Err(Error::Config("config is empty".into()));
        }
        let mut cfg = RunConfig::default();
        for (k, v) in &seen {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.as_ref().display())),
            other => other,
        })
    }

    /// Sets one key. Does not re-validate the whole config.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dim" => self.dim = num(key, v)?,
            "cells" => self.cells = list(key, v)?,
            "h" => self.h = Some(num(key, v)?),
            "p" => self.p = num(key, v)?,
            "A" => self.a = num(key, v)?,
            "r" => self.r = num(key, v)?,
            "theta" => self.theta = num(key, v)?,
            "eps" => self.eps = Some(num(key, v)?),
            "method" => self.method = v.parse()?,
            "tol" => self.tol = num(key, v)?,
            "max_iters" => self.max_iters = num(key, v)?,
            "fp_tol" => self.fp_tol = num(key, v)?,
            "max_outer" => self.max_outer = num(key, v)?,
            "omega" => self.omega = num(key, v)?,
            "data" => {
                self.data = match v {
                    "zero" => DataKind::Zero,
                    "smooth" => DataKind::Smooth,
                    "singular" => DataKind::Singular,
                    _ => return Err(Error::Config(format!("data: expected zero, smooth or singular, got {v:?}"))),
                }
            }
            "scale" => self.scale = num(key, v)?,
            "alpha" => self.alpha = Some(num(key, v)?),
            "center" => self.center = Some(list(key, v)?),
            "cap" => {
                self.cap = if v == "h/2" { Cap::HalfCell } else { Cap::Fixed(num(key, v)?) };
            }
            "m" => self.m = Some(num(key, v)?),
            "comparison_floor" => self.comparison_floor = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = num(key, v)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?} (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.params()?;
        self.fixed_point_options().validate()?;
        if !self.scale.is_finite() {
            return Err(Error::Config(format!("scale must be finite, got {}", self.scale)));
        }
        if let Some(m) = self.m {
            if !(m >= 1.0 && m.is_finite()) {
                return Err(Error::Config(format!("m >= 1 violated (m = {m})")));
            }
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("alpha >= 0 violated (alpha = {a})")));
            }
        }
        if let Cap::Fixed(c) = self.cap {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("cap radius > 0 violated (cap = {c})")));
            }
        }
        if !(self.comparison_floor > 0.0 && self.comparison_floor < 1.0) {
            return Err(Error::Config(format!(
                "comparison_floor must lie in (0, 1), got {}",
                self.comparison_floor
            )));
        }
        if self.data == DataKind::Singular {
            self.singular_alpha()?;
            let grid = self.grid()?;
            self.data(&Arc::new(grid))?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        let cells: Vec<usize> = match self.cells.len() {
            1 => vec![self.cells[0]; self.dim],
            n if n == self.dim => self.cells.clone(),
            n => {
                return Err(Error::Config(format!(
                    "cells lists {n} axes but dim = {}",
                    self.dim
                )))
            }
        };
        if let Some(&c) = cells.iter().find(|&&c| c < 2) {
            return Err(Error::Config(format!("cells >= 2 violated (cells = {c})")));
        }
        let h = self.h.unwrap_or(1.0 / cells[0] as f64);
        let dims: Vec<usize> = cells.iter().map(|c| c + 1).collect();
        Grid::new(&dims, h)
    }

    pub fn params(&self) -> Result<CouplingParams> {
        match self.eps {
            Some(eps) => CouplingParams::new(self.p, self.a, self.r, self.theta, eps),
            None => CouplingParams::with_default_eps(self.p, self.a, self.r, self.theta),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            method: self.method,
            ..SolverOptions::default()
        }
    }

    pub fn fixed_point_options(&self) -> FixedPointOptions {
        FixedPointOptions {
            fp_tol: self.fp_tol,
            max_outer: self.max_outer,
            omega: self.omega,
            solver: self.solver_options(),
            ..FixedPointOptions::default()
        }
    }

    fn singular_alpha(&self) -> Result<f64> {
        match (self.alpha, self.m) {
            (Some(a), _) => Ok(a),
            (None, Some(m)) => Ok(0.99 * self.dim as f64 / m),
            (None, None) => Err(Error::Config("singular data needs alpha or m".into())),
        }
    }

    /// The right-hand side on `grid`.
    pub fn data(&self, grid: &Arc<Grid>) -> Result<GridFunction> {
        let f = match self.data {
            DataKind::Zero => GridFunction::zeros(grid),
            DataKind::Smooth => smooth_f(grid),
            DataKind::Singular => {
                let center = self.center.clone().unwrap_or_else(|| default_center(grid));
                let cap = match self.cap {
                    Cap::HalfCell => grid.spacing() / 2.0,
                    Cap::Fixed(c) => c,
                };
                make_singular_f(grid, self.singular_alpha()?, &center, cap)?
            }
        };
        Ok(if self.scale == 1.0 { f } else { f.scaled(self.scale) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let text = "\
            # full config
            dim = 3
            cells = 4,5,6
            h = 0.25
            p = 2.5
            A = 0.5
            r = 3
            theta = 0.5   # inline comment
            eps = 1e-6
            method = nonlinear_cg
            tol = 1e-7
            max_iters = 100
            fp_tol = 1e-5
            max_outer = 10
            omega = 0.5
            data = singular
            scale = 2
            alpha = 1.2
            center = 0.55,0.6,0.7
            cap = 0.1
            m = 1.3
            comparison_floor = 0.01
            out = results
            seed = 7
        ";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.dim, 3);
        assert_eq!(c.cells, vec![4, 5, 6]);
        assert_eq!(c.grid().unwrap().dims(), &[5, 6, 7]);
        assert_eq!(c.method, Method::NonlinearCg);
        assert_eq!(c.cap, Cap::Fixed(0.1));
        assert_eq!(c.center, Some(vec![0.55, 0.6, 0.7]));
        assert_eq!(c.out, PathBuf::from("results"));
        assert_eq!(c.seed, 7);
        let prm = c.params().unwrap();
        assert_eq!((prm.p, prm.a, prm.r, prm.theta, prm.eps), (2.5, 0.5, 3.0, 0.5, 1e-6));
        let fp = c.fixed_point_options();
        assert_eq!((fp.fp_tol, fp.max_outer, fp.omega), (1e-5, 10, 0.5));
        assert_eq!(KEYS.len(), 23);
    }

    #[test]
    fn rejects_bad_configs() {
        for (text, needle) in [
            ("", "empty"),
            ("# only a comment\n", "empty"),
            ("p = 2\np = 3", "twice"),
            ("colour = red", "unknown key"),
            ("p 2", "key = value"),
            ("p = two", "cannot parse"),
            ("p = 2\ntheta = 1.5", "theta < p - 1"),
            ("dim = 2\ncells = 4,4,4", "axes"),
            ("data = singular", "alpha or m"),
            ("data = singular\nalpha = 1\ncenter = 2,0.5", "outside"),
            ("omega = 1.5", "omega"),
            ("data = fuzzy", "zero, smooth or singular"),
        ] {
            let err = RunConfig::parse(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?}: {err}");
        }
    }

    #[test]
    fn alpha_from_m() {
        let c = RunConfig::parse("data = singular\nm = 1.18").unwrap();
        assert!((c.singular_alpha().unwrap() - 0.99 * 2.0 / 1.18).abs() < 1e-15);
    }

    #[test]
    fn default_eps_follows_p() {
        let c = RunConfig::parse("p = 1.5").unwrap();
        assert_eq!(c.params().unwrap().eps, CouplingParams::DEFAULT_EPS);
        let c = RunConfig::parse("p = 3\ndim = 3").unwrap();
        assert_eq!(c.params().unwrap().eps, 0.0);
    }
}
