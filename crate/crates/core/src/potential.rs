//! Fundamental solution of the Laplacian, the Newtonian potential over the
//! ball and its first and second derivatives by midpoint quadrature.
//!
//! `N(f)(x) = sum_{y != x} G(x - y) f(y) h^n + f(x) * I_cell` where `I_cell`
//! integrates `G` exactly over the ball of volume `h^n` centred at `x`.
//! Second derivatives use the subtracted form
//! `d_ij N(f)(x) = int d_ij G(x - y) (f(y) - f(x)) dy - delta_ij f(x) / n`,
//! whose singular cell contributes `O(h^a)` and is dropped.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{norm, BallGrid, PairSet, Point, ScalarField};
use crate::holder::{check_alpha, holder_norm, holder_norm_values};
use crate::par;

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// The free-space kernel: `-ln|z| / 2pi` for `n = 2`,
/// `|z|^(2-n) / (n (n-2) w_n)` for `n >= 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSpec {
    pub dim: usize,
    pub unit_ball_volume: f64,
}

impl KernelSpec {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::UnsupportedDimension(dim));
        }
        Ok(KernelSpec {
            dim,
            unit_ball_volume: unit_ball_volume(dim),
        })
    }

    pub fn is_log(&self) -> bool {
        self.dim == 2
    }

    // n * w_n, the area of the unit sphere
    fn sphere_area(&self) -> f64 {
        self.dim as f64 * self.unit_ball_volume
    }

    /// `G` as a function of `|z|`.
    pub fn radial(&self, r: f64) -> f64 {
        if self.is_log() {
            -r.ln() / (2.0 * PI)
        } else {
            let n = self.dim as f64;
            r.powf(2.0 - n) / (n * (n - 2.0) * self.unit_ball_volume)
        }
    }

    pub fn gamma(&self, z: &[f64]) -> Result<f64> {
        let r = z.iter().map(|c| c * c).sum::<f64>().sqrt();
        if r == 0.0 {
            return Err(Error::SingularKernel);
        }
        Ok(self.radial(r))
    }

    /// `dG/dz_i = -z_i / (n w_n |z|^n)`
    pub fn gradient(&self, z: &Point) -> Point {
        let r = norm(z);
        let c = -1.0 / (self.sphere_area() * r.powi(self.dim as i32));
        [c * z[0], c * z[1], c * z[2]]
    }

    /// `d2G/dz_i dz_j = (n z_i z_j / |z|^(n+2) - delta_ij / |z|^n) / (n w_n)`
    pub fn hessian(&self, z: &Point) -> [[f64; 3]; 3] {
        let r2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
        let n = self.dim as i32;
        let rn = r2.powi(n / 2) * if n % 2 == 1 { r2.sqrt() } else { 1.0 };
        let a = 1.0 / self.sphere_area();
        let mut out = [[0.0; 3]; 3];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let delta = if i == j { 1.0 } else { 0.0 };
                out[i][j] = a * (n as f64 * (z[i] * z[j]) / (rn * r2) - delta / rn);
            }
        }
        out
    }

    /// Exact integral of `G` over the ball of volume `h^n` centred at the pole.
    pub fn singular_cell_integral(&self, h: f64) -> f64 {
        let n = self.dim as f64;
        let rho = (h.powf(n) / self.unit_ball_volume).powf(1.0 / n);
        if self.is_log() {
            0.25 * rho * rho * (1.0 - 2.0 * rho.ln())
        } else {
            rho * rho / (2.0 * (n - 2.0))
        }
    }
}

/// Singular-cell handling used by the quadrature, echoed in reports.
#[derive(Debug, Clone, Serialize)]
pub struct QuadratureInfo {
    pub spacing: f64,
    pub cell_volume: f64,
    pub value_singular_cell: &'static str,
    pub derivative_singular_cell: &'static str,
}

impl QuadratureInfo {
    pub fn for_grid(grid: &BallGrid) -> Self {
        QuadratureInfo {
            spacing: grid.spacing(),
            cell_volume: grid.cell_volume(),
            value_singular_cell: "exact integral over equal-volume ball",
            derivative_singular_cell: "dropped",
        }
    }
}

/// Second derivatives `d_ij N(f)` for `i <= j`.
#[derive(Debug, Clone)]
pub struct HessianField {
    dim: usize,
    entries: Vec<ScalarField>,
}

impl HessianField {
    fn slot(dim: usize, i: usize, j: usize) -> usize {
        let (i, j) = (i.min(j), i.max(j));
        // row-major upper triangle
        i * dim - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> &ScalarField {
        &self.entries[Self::slot(self.dim, i, j)]
    }

    pub fn entries(&self) -> &[ScalarField] {
        &self.entries
    }

    /// `sum_i d_ii N(f)`
    pub fn trace(&self) -> Result<ScalarField> {
        let mut acc = self.get(0, 0).clone();
        for i in 1..self.dim {
            acc = acc.lin_comb(1.0, self.get(i, i), 1.0)?;
        }
        Ok(acc)
    }
}

/// Value, gradient and Hessian of `N(f)` on the grid.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub value: ScalarField,
    pub gradient: Vec<ScalarField>,
    pub hessian: HessianField,
    pub quadrature: QuadratureInfo,
}

fn kernel_for(grid: &BallGrid) -> KernelSpec {
    KernelSpec::new(grid.dim()).expect("grid dimension is 2 or 3")
}

/// `N(f)` at node `k`.
pub fn potential_at(f: &ScalarField, k: usize) -> f64 {
    let grid = f.grid();
    let kernel = kernel_for(grid);
    let vals = f.values();
    let x = grid.node(k);
    let mut acc = 0.0;
    for (m, y) in grid.nodes().iter().enumerate() {
        if m == k {
            continue;
        }
        let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
        acc += kernel.radial(r) * vals[m];
    }
    acc * grid.cell_volume() + vals[k] * kernel.singular_cell_integral(grid.spacing())
}

/// `grad N(f)` at node `k`; the singular cell is dropped.
pub fn gradient_at(f: &ScalarField, k: usize) -> Point {
    let grid = f.grid();
    let kernel = kernel_for(grid);
    let vals = f.values();
    let x = grid.node(k);
    let mut acc = [0.0; 3];
    for (m, y) in grid.nodes().iter().enumerate() {
        if m == k {
            continue;
        }
        let g = kernel.gradient(&[x[0] - y[0], x[1] - y[1], x[2] - y[2]]);
        for i in 0..3 {
            acc[i] += g[i] * vals[m];
        }
    }
    let w = grid.cell_volume();
    [acc[0] * w, acc[1] * w, acc[2] * w]
}

/// `d_ij N(f)` at node `k` by the subtracted-integrand formula.
pub fn hessian_at(f: &ScalarField, k: usize) -> [[f64; 3]; 3] {
    let grid = f.grid();
    let kernel = kernel_for(grid);
    let n = grid.dim();
    let vals = f.values();
    let x = grid.node(k);
    let fx = vals[k];
    let mut acc = [[0.0; 3]; 3];
    for (m, y) in grid.nodes().iter().enumerate() {
        let df = vals[m] - fx;
        if m == k || df == 0.0 {
            continue;
        }
        let hz = kernel.hessian(&[x[0] - y[0], x[1] - y[1], x[2] - y[2]]);
        for i in 0..n {
            for j in i..n {
                acc[i][j] += hz[i][j] * df;
            }
        }
    }
    let w = grid.cell_volume();
    let mut out = [[0.0; 3]; 3];
    for i in 0..n {
        for j in i..n {
            let delta = if i == j { fx / n as f64 } else { 0.0 };
            out[i][j] = acc[i][j] * w - delta;
            out[j][i] = out[i][j];
        }
    }
    out
}

pub fn newtonian_potential(f: &ScalarField) -> Result<ScalarField> {
    let grid = f.grid().clone();
    let values = par::map_range(grid.len(), |k| potential_at(f, k));
    ScalarField::from_values(grid, values)
}

pub fn potential_gradient(f: &ScalarField) -> Result<Vec<ScalarField>> {
    let grid = f.grid().clone();
    let rows = par::map_range(grid.len(), |k| gradient_at(f, k));
    (0..grid.dim())
        .map(|i| ScalarField::from_values(grid.clone(), rows.iter().map(|g| g[i]).collect()))
        .collect()
}

pub fn potential_hessian(f: &ScalarField) -> Result<HessianField> {
    let grid = f.grid().clone();
    let n = grid.dim();
    let rows = par::map_range(grid.len(), |k| hessian_at(f, k));
    let mut entries = Vec::new();
    for i in 0..n {
        for j in i..n {
            entries.push(ScalarField::from_values(
                grid.clone(),
                rows.iter().map(|h| h[i][j]).collect(),
            )?);
        }
    }
    Ok(HessianField { dim: n, entries })
}

pub fn potential_field(f: &ScalarField) -> Result<PotentialField> {
    Ok(PotentialField {
        value: newtonian_potential(f)?,
        gradient: potential_gradient(f)?,
        hessian: potential_hessian(f)?,
        quadrature: QuadratureInfo::for_grid(f.grid()),
    })
}

/// Midpoint quadrature of `int_{B_R \ B_rho(x)} d_ij G(x - y) dy` over the
/// grid nodes with `|y - x| >= rho`.
pub fn check_truncated_kernel_bound(grid: &BallGrid, x: &Point, rho: f64, i: usize, j: usize) -> f64 {
    let kernel = kernel_for(grid);
    let mut acc = 0.0;
    for y in grid.nodes() {
        let z = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
        if norm(&z) >= rho && norm(&z) > 0.0 {
            acc += kernel.hessian(&z)[i][j];
        }
    }
    acc * grid.cell_volume()
}

/// One probe of the potential norm-bound sweep.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeRatio {
    pub name: String,
    /// `||N(f)||^(2,a)` from the kernel Hessian.
    pub potential_norm: f64,
    /// `||f||_a`
    pub source_norm: f64,
    /// `None` when `||f||_a = 0`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormBoundTable {
    pub radius: f64,
    pub alpha: f64,
    pub pair_count: usize,
    pub probes: Vec<ProbeRatio>,
    pub max_ratio: f64,
}

/// The probe battery `{1, x_1, sin x_1, |x|^2}`.
pub fn default_probes(grid: &Arc<BallGrid>) -> Result<Vec<(String, ScalarField)>> {
    Ok(vec![
        ("1".to_string(), ScalarField::from_fn(grid.clone(), |_| 1.0)?),
        ("x1".to_string(), ScalarField::from_fn(grid.clone(), |x| x[0])?),
        ("sin x1".to_string(), ScalarField::from_fn(grid.clone(), |x| x[0].sin())?),
        ("|x|^2".to_string(), ScalarField::from_fn(grid.clone(), |x| norm(x).powi(2))?),
    ])
}

/// `||N(f)||^(2,a) / ||f||_a` for each probe; zero probes are skipped.
pub fn check_potential_norm_bound(
    probes: &[(String, ScalarField)],
    alpha: f64,
    pairs: &PairSet,
) -> Result<NormBoundTable> {
    check_alpha(alpha)?;
    let mut rows = Vec::new();
    let mut max_ratio = 0.0_f64;
    let mut radius = 0.0;
    for (name, f) in probes {
        radius = f.grid().radius();
        let source_norm = holder_norm(f, alpha, pairs)?.weighted;
        if source_norm == 0.0 {
            rows.push(ProbeRatio {
                name: name.clone(),
                potential_norm: 0.0,
                source_norm,
                ratio: None,
            });
            continue;
        }
        let hess = potential_hessian(f)?;
        let mut potential_norm = 0.0_f64;
        for e in hess.entries() {
            potential_norm =
                potential_norm.max(holder_norm_values(e.values(), radius, alpha, pairs)?.weighted);
        }
        let ratio = potential_norm / source_norm;
        max_ratio = max_ratio.max(ratio);
        rows.push(ProbeRatio {
            name: name.clone(),
            potential_norm,
            source_norm,
            ratio: Some(ratio),
        });
    }
    Ok(NormBoundTable {
        radius,
        alpha,
        pair_count: pairs.len(),
        probes: rows,
        max_ratio,
    })
}
