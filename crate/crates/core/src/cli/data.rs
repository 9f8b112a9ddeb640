//! Right-hand sides for experiments.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};

/// Where the pole of the singular data sits when no center is given: the
/// middle of the box, shifted by half a cell along every axis so that no node
/// lands on it.
pub fn default_center(grid: &Grid) -> Vec<f64> {
    let h = grid.spacing();
    grid.extent().iter().map(|e| 0.5 * e + 0.5 * h).collect()
}

/// `f(x) = max(|x - x0|, cap)^(-alpha)` at every node: the radial singularity
/// `|x - x0|^(-alpha)`, truncated inside the ball of radius `cap`. Boundary
/// nodes are zero like every grid function. `f ∈ L^m` iff `alpha * m < N`.
///
/// ```
/// use std::sync::Arc;
/// use plapsys::grid::Grid;
/// use plapsys::cli::data::make_singular_f;
///
/// let g = Arc::new(Grid::unit(2, 16).unwrap());
/// let f = make_singular_f(&g, 1.5, &[0.5, 0.5], 0.2).unwrap();
/// assert!((f.max_abs() - 0.2f64.powf(-1.5)).abs() < 1e-12);
/// ```
pub fn make_singular_f(grid: &Arc<Grid>, alpha: f64, center: &[f64], cap: f64) -> Result<GridFunction> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha >= 0 violated (alpha = {alpha})")));
    }
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(Error::InvalidParameter(format!("cap radius > 0 violated (cap = {cap})")));
    }
    let ext = grid.extent();
    if center.len() != grid.dim() {
        return Err(Error::InvalidParameter(format!(
            "center has {} coordinates, grid has dimension {}",
            center.len(),
            grid.dim()
        )));
    }
    for (d, (&c, &e)) in center.iter().zip(&ext).enumerate() {
        if !(c > 0.0 && c < e) {
            return Err(Error::InvalidParameter(format!(
                "center coordinate {d} = {c} is outside the open interval (0, {e})"
            )));
        }
    }
    Ok(GridFunction::from_fn(grid, |x| {
        let r2: f64 = center.iter().enumerate().map(|(d, c)| (x[d] - c).powi(2)).sum();
        r2.sqrt().max(cap).powf(-alpha)
    }))
}

/// `N π² Π sin(π x_d / L_d)`, scaled so that on the unit box it is `-Δ` of the
/// product of sines.
pub fn smooth_f(grid: &Arc<Grid>) -> GridFunction {
    let ext = grid.extent();
    let dim = grid.dim();
    GridFunction::from_fn(grid, |x| {
        let mut v = dim as f64 * PI * PI;
        for d in 0..dim {
            v *= (PI * x[d] / ext[d]).sin();
        }
        v
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::lq_norm;

    fn grid(n: usize) -> Arc<Grid> {
        Arc::new(Grid::unit(2, n).unwrap())
    }

    #[test]
    fn alpha_zero_is_one() {
        let g = grid(8);
        let f = make_singular_f(&g, 0.0, &default_center(&g), g.spacing() / 2.0).unwrap();
        for (i, &v) in f.values().iter().enumerate() {
            if !g.is_boundary(i) {
                assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn cap_sets_the_maximum() {
        let g = grid(16);
        for cap in [0.1, 0.25] {
            let f = make_singular_f(&g, 1.3, &[0.5, 0.5], cap).unwrap();
            assert_eq!(f.max_abs(), cap.powf(-1.3));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let g = grid(8);
        assert!(make_singular_f(&g, 1.0, &[1.0, 0.5], 0.1).is_err());
        assert!(make_singular_f(&g, 1.0, &[0.5], 0.1).is_err());
        assert!(make_singular_f(&g, -1.0, &[0.5, 0.5], 0.1).is_err());
        assert!(make_singular_f(&g, 1.0, &[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn integrability_dichotomy() {
        // |x|^(-alpha) in L^m on the plane iff alpha m < 2; sample at alpha m = 0.8N and 1.2N
        let m = 1.5;
        let norms = |alpha: f64| -> Vec<f64> {
            [16, 32, 64, 128]
                .iter()
                .map(|&n| {
                    let g = grid(n);
                    let f = make_singular_f(&g, alpha, &default_center(&g), g.spacing() / 2.0).unwrap();
                    lq_norm(&f, m).unwrap()
                })
                .collect()
        };
        let good = norms(0.8 * 2.0 / m);
        let bad = norms(1.2 * 2.0 / m);
        let incr = |v: &[f64]| v.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>();
        // increments of a convergent sequence shrink; the divergent one's do not
        let (ig, ib) = (incr(&good), incr(&bad));
        assert!(ig.windows(2).all(|w| w[1] < 0.8 * w[0]), "{good:?}");
        assert!(ib.iter().all(|&d| d > 0.0), "{bad:?}");
        assert!(ib[2] / ib[1] > ig[2] / ig[1] + 0.1, "{good:?} {bad:?}");
        // the integrable family converges to the continuous value
        let alpha = 0.8 * 2.0 / m;
        let exact = {
            // ∫_{[0,1]^2} |x - c|^{-alpha m} with the pole near the center, by fine midpoint sum
            let n = 2000;
            let h = 1.0 / n as f64;
            let c = 0.5 + 1.0 / 256.0;
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let x = (i as f64 + 0.5) * h - c;
                    let y = (j as f64 + 0.5) * h - c;
                    s += (x * x + y * y).sqrt().powf(-alpha * m);
                }
            }
            (s * h * h).powf(1.0 / m)
        };
        // Aitken extrapolation of the last three values
        let limit = good[3] - ig[2] * ig[2] / (ig[2] - ig[1]);
        assert!(good[3] < exact);
        assert!((limit - exact).abs() / exact < 0.03, "{limit} vs {exact}");
    }

    #[test]
    fn smooth_matches_laplacian_of_sines() {
        let g = grid(8);
        let f = smooth_f(&g);
        let x = g.node_coords(4 + 9 * 4);
        assert!((f.values()[4 + 9 * 4] - 2.0 * PI * PI).abs() < 1e-12, "{x:?}");
    }
}
