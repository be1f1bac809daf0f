//! Closed-form and brute-force references. Nothing here calls into the
//! stencil, pair-sampling or quadrature code it is used to check.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid::{Point, ScalarField};

/// Potential of the indicator of `B_R`, `N(1)(x)`.
///
/// `n = 3`: `R^2/2 - |x|^2/6`.
/// `n = 2`: `R^2 (1 - 2 ln R) / 4 - |x|^2 / 4`. Inside the ball the radial
/// solution of `u'' + u'/r = -1` is `c - r^2/4`; matching the exterior
/// `-(R^2/2) ln r` in value at `r = R` fixes `c`.
pub fn uniform_ball_potential(n: usize, radius: f64, x: &[f64]) -> Result<f64> {
    let r2: f64 = x.iter().map(|c| c * c).sum();
    if r2.sqrt() > radius * (1.0 + 1e-12) {
        return Err(Error::InvalidGrid(format!(
            "point at distance {} outside the ball of radius {radius}",
            r2.sqrt()
        )));
    }
    match n {
        3 => Ok(radius * radius / 2.0 - r2 / 6.0),
        2 => Ok(radius * radius * (1.0 - 2.0 * radius.ln()) / 4.0 - r2 / 4.0),
        _ => Err(Error::UnsupportedDimension(n)),
    }
}

/// `H_a` of `f` on `resolution` equally spaced points of `[-R, R]` by a full
/// pair scan.
pub fn exhaustive_holder(f: impl Fn(f64) -> f64, radius: f64, alpha: f64, resolution: usize) -> f64 {
    let step = 2.0 * radius / (resolution - 1) as f64;
    let ts: Vec<f64> = (0..resolution).map(|i| -radius + step * i as f64).collect();
    let vs: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
    let mut best = 0.0_f64;
    for i in 0..resolution {
        for j in i + 1..resolution {
            let q = (vs[i] - vs[j]).abs() / (ts[j] - ts[i]).powf(alpha);
            if q > best {
                best = q;
            }
        }
    }
    best
}

/// Five-point (seven-point in 3-D) Laplacian at nodes whose axis neighbours
/// all exist, found by hashing rounded coordinates. `None` elsewhere.
pub fn fd_laplacian_reference(field: &ScalarField) -> Vec<Option<f64>> {
    let grid = field.grid();
    let h = grid.spacing();
    let key = |p: &Point| -> (i64, i64, i64) {
        (
            (p[0] / h).round() as i64,
            (p[1] / h).round() as i64,
            (p[2] / h).round() as i64,
        )
    };
    let lookup: HashMap<(i64, i64, i64), f64> = grid
        .nodes()
        .iter()
        .zip(field.values())
        .map(|(p, &v)| (key(p), v))
        .collect();
    let dim = grid.dim();
    grid.nodes()
        .iter()
        .zip(field.values())
        .map(|(p, &centre)| {
            let (a, b, c) = key(p);
            let mut sum = 0.0;
            // reverse axis order, minus side first
            for axis in (0..dim).rev() {
                for s in [-1i64, 1] {
                    let k = match axis {
                        0 => (a + s, b, c),
                        1 => (a, b + s, c),
                        _ => (a, b, c + s),
                    };
                    sum += lookup.get(&k)?;
                }
            }
            Some((sum - 2.0 * dim as f64 * centre) / (h * h))
        })
        .collect()
}

/// Number of lattice points `h * l` with `|h l| <= R`, counted by scanning
/// the bounding cube in floating point.
pub fn lattice_count(dim: usize, radius: f64, res: usize) -> usize {
    let h = 2.0 * radius / (res - 1) as f64;
    let half = (res / 2) as i64;
    let range = -half..=half;
    let z_range = if dim == 3 { -half..=half } else { 0..=0 };
    let mut count = 0;
    for a in range.clone() {
        for b in range.clone() {
            for c in z_range.clone() {
                let r = ((a * a + b * b + c * c) as f64).sqrt() * h;
                if r <= radius * (1.0 + 1e-12) {
                    count += 1;
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{laplacian, BallGrid};

    #[test]
    fn ball_potential_values() {
        assert_eq!(uniform_ball_potential(3, 1.0, &[0.0; 3]).unwrap(), 0.5);
        let v = uniform_ball_potential(3, 1.0, &[1.0, 0.0, 0.0]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert!(uniform_ball_potential(3, 1.0, &[1.1, 0.0, 0.0]).is_err());
        // Laplacian of the closed form is -1 in both dimensions
        for n in [2usize, 3] {
            let e = 1e-3;
            let x = [0.2, -0.1, 0.15];
            let c = uniform_ball_potential(n, 1.3, &x[..n]).unwrap();
            let mut lap = 0.0;
            for i in 0..n {
                let mut p = x;
                let mut m = x;
                p[i] += e;
                m[i] -= e;
                lap += uniform_ball_potential(n, 1.3, &p[..n]).unwrap()
                    + uniform_ball_potential(n, 1.3, &m[..n]).unwrap()
                    - 2.0 * c;
            }
            assert!((lap / (e * e) + 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn exhaustive_holder_linear() {
        // |t - s| / |t - s|^a is largest at the widest pair
        let h = exhaustive_holder(|t| t, 1.0, 0.5, 101);
        assert!((h - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(exhaustive_holder(|_| 3.0, 1.0, 0.5, 11), 0.0);
    }

    #[test]
    fn reference_laplacian_agrees_with_grid() {
        for dim in [2, 3] {
            let g = BallGrid::new(dim, 1.0, 11).unwrap();
            let f = ScalarField::from_fn(g.clone(), |x| x[0] * x[0] - 3.0 * x[1] * x[0] + x[2] * x[2]).unwrap();
            let a = laplacian(&f).unwrap();
            let b = fd_laplacian_reference(&f);
            let want = if dim == 3 { 4.0 } else { 2.0 };
            for k in g.interior_nodes() {
                let r = b[k].unwrap();
                assert!((a.value_at(k) - r).abs() < 1e-12);
                assert!((r - want).abs() < 1e-10);
            }
            let f = ScalarField::from_fn(g.clone(), |x| x[0].sin() * x[1].exp()).unwrap();
            let a = laplacian(&f).unwrap();
            let b = fd_laplacian_reference(&f);
            for k in g.interior_nodes() {
                assert!((a.value_at(k) - b[k].unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lattice_counts_match_grid() {
        for (dim, res) in [(2, 5), (2, 21), (3, 9), (3, 17)] {
            let g = BallGrid::new(dim, 0.7, res).unwrap();
            assert_eq!(g.len(), lattice_count(dim, 0.7, res));
        }
        assert_eq!(lattice_count(2, 1.0, 5), 13);
    }
}
