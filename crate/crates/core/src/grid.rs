//! Cartesian lattice clipped to the closed ball `|x| <= R`, grid fields,
//! finite-difference stencils and the pair sets used for Hölder quotients.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Node coordinates. Unused trailing components are zero.
pub type Point = [f64; 3];

/// Default cap on the number of Hölder pairs.
pub const DEFAULT_PAIR_CAP: usize = 200_000;
/// Default seed for pair sampling.
pub const DEFAULT_PAIR_SEED: u64 = 0x5eed_0fa1_fa00;

const ABSENT: u32 = u32::MAX;

/// Multi-index `beta` of a partial derivative `d^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub [u8; 3]);

impl MultiIndex {
    pub const ZERO: MultiIndex = MultiIndex([0, 0, 0]);

    pub fn first(i: usize) -> Self {
        let mut b = [0; 3];
        b[i] += 1;
        MultiIndex(b)
    }

    pub fn second(i: usize, j: usize) -> Self {
        let mut b = [0; 3];
        b[i] += 1;
        b[j] += 1;
        MultiIndex(b)
    }

    pub fn order(&self) -> usize {
        self.0.iter().map(|&b| b as usize).sum()
    }

    pub fn add(&self, other: MultiIndex) -> Self {
        MultiIndex([
            self.0[0] + other.0[0],
            self.0[1] + other.0[1],
            self.0[2] + other.0[2],
        ])
    }

    /// `beta! = beta_1! ... beta_n!`
    pub fn factorial(&self) -> f64 {
        self.0
            .iter()
            .map(|&b| (1..=b as u32).product::<u32>() as f64)
            .product()
    }

    /// `h^beta`
    pub fn monomial(&self, h: &Point) -> f64 {
        (0..3).map(|k| h[k].powi(self.0[k] as i32)).product()
    }

    /// All multi-indices of the given order in `dim` variables, in
    /// lexicographic order of their index pairs (`(0,0), (0,1), (1,1), ...`).
    pub fn of_order(dim: usize, order: usize) -> Vec<MultiIndex> {
        match order {
            0 => vec![MultiIndex::ZERO],
            1 => (0..dim).map(MultiIndex::first).collect(),
            2 => {
                let mut out = Vec::new();
                for i in 0..dim {
                    for j in i..dim {
                        out.push(MultiIndex::second(i, j));
                    }
                }
                out
            }
            _ => {
                // general enumeration, only used by the polynomial fit basis
                let mut out = Vec::new();
                for a in 0..=order {
                    for b in 0..=(order - a) {
                        let c = order - a - b;
                        let m = MultiIndex([a as u8, b as u8, c as u8]);
                        let fits = (dim >= 3 || c == 0) && (dim >= 2 || b == 0);
                        if fits {
                            out.push(m);
                        }
                    }
                }
                out
            }
        }
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.0[0], self.0[1], self.0[2])
    }
}

/// Linear combination `sum_k weights[k] * f(nodes[k])`.
#[derive(Debug, Clone, Default)]
pub struct Stencil {
    pub nodes: Vec<u32>,
    pub weights: Vec<f64>,
}

impl Stencil {
    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&k, &w)| w * values[k as usize])
            .sum()
    }
}

/// The lattice `h Z^n` clipped to the closed ball of radius `R`.
#[derive(Debug)]
pub struct BallGrid {
    dim: usize,
    radius: f64,
    res: usize,
    spacing: f64,
    nodes: Vec<Point>,
    lattice: Vec<[i32; 3]>,
    lookup: Vec<u32>,
    interior: Vec<bool>,
    origin: usize,
    // stencils[slot][node], slots ordered as `derivative_slots`
    stencils: Vec<Vec<Stencil>>,
}

impl BallGrid {
    /// Builds the grid with `res` lattice points per axis across `[-R, R]`.
    pub fn new(dim: usize, radius: f64, res: usize) -> Result<Arc<Self>> {
        if !(2..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidGrid(format!("radius must be positive, got {radius}")));
        }
        if res.is_multiple_of(2) || res < 5 {
            return Err(Error::InvalidGrid(format!("res must be odd and >= 5, got {res}")));
        }
        let half = (res as i32 - 1) / 2;
        let spacing = 2.0 * radius / (res - 1) as f64;
        let span = if dim == 3 { res } else { 1 };
        let mut lookup = vec![ABSENT; res * res * span];
        let mut nodes = Vec::new();
        let mut lattice = Vec::new();
        let zr = if dim == 3 { -half..=half } else { 0..=0 };
        for a in -half..=half {
            for b in -half..=half {
                for c in zr.clone() {
                    // integer test avoids rounding at the sphere
                    let r2 = (a * a + b * b + c * c) as i64;
                    if r2 <= (half as i64) * (half as i64) {
                        let idx = lattice_slot(res, dim, half, [a, b, c]);
                        lookup[idx] = nodes.len() as u32;
                        nodes.push([a as f64 * spacing, b as f64 * spacing, c as f64 * spacing]);
                        lattice.push([a, b, c]);
                    }
                }
            }
        }
        let origin = lookup[lattice_slot(res, dim, half, [0, 0, 0])] as usize;
        let mut grid = BallGrid {
            dim,
            radius,
            res,
            spacing,
            nodes,
            lattice,
            lookup,
            interior: Vec::new(),
            origin,
            stencils: Vec::new(),
        };
        grid.interior = (0..grid.len()).map(|k| grid.has_full_stencil(k)).collect();
        let slots = grid.derivative_slots();
        let per_node = par::map_range(grid.len(), |k| grid.node_stencils(k, &slots));
        let mut stencils: Vec<Vec<Stencil>> = vec![Vec::with_capacity(grid.len()); slots.len()];
        for node in per_node {
            for (slot, st) in stencils.iter_mut().zip(node) {
                slot.push(st);
            }
        }
        grid.stencils = stencils;
        Ok(Arc::new(grid))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn res(&self) -> usize {
        self.res
    }

    /// Lattice spacing `h = 2R / (res - 1)`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// `h^n`
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &Point {
        &self.nodes[k]
    }

    pub fn lattice_index(&self, k: usize) -> [i32; 3] {
        self.lattice[k]
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    /// True when every second-order central stencil at `k` stays in the ball.
    pub fn is_interior(&self, k: usize) -> bool {
        self.interior[k]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&k| self.interior[k])
    }

    /// Node at lattice offset `off` from node `k`, if it lies in the ball.
    pub fn neighbor(&self, k: usize, off: [i32; 3]) -> Option<usize> {
        let l = self.lattice[k];
        self.find([l[0] + off[0], l[1] + off[1], l[2] + off[2]])
    }

    /// Node with the given lattice index.
    pub fn find(&self, l: [i32; 3]) -> Option<usize> {
        let half = (self.res as i32 - 1) / 2;
        if l.iter().take(self.dim).any(|c| c.abs() > half) || (self.dim == 2 && l[2] != 0) {
            return None;
        }
        match self.lookup[lattice_slot(self.res, self.dim, half, l)] {
            ABSENT => None,
            k => Some(k as usize),
        }
    }

    /// Node `-x` for node `x`; the lattice is symmetric so it always exists.
    pub fn antipode(&self, k: usize) -> usize {
        let l = self.lattice[k];
        self.find([-l[0], -l[1], -l[2]]).expect("lattice is point symmetric")
    }

    /// True when some axis neighbour `x +- h e_i` lies outside the ball.
    pub fn is_boundary(&self, k: usize) -> bool {
        (0..self.dim).any(|i| {
            let mut off = [0; 3];
            off[i] = 1;
            let mut neg = [0; 3];
            neg[i] = -1;
            self.neighbor(k, off).is_none() || self.neighbor(k, neg).is_none()
        })
    }

    /// Derivative multi-indices with precomputed stencils: first order, then
    /// second order.
    pub fn derivative_slots(&self) -> Vec<MultiIndex> {
        let mut s = MultiIndex::of_order(self.dim, 1);
        s.extend(MultiIndex::of_order(self.dim, 2));
        s
    }

    fn slot_of(&self, beta: MultiIndex) -> Option<usize> {
        let d = self.dim;
        let b = beta.0;
        if b[d..].iter().any(|&e| e != 0) {
            return None;
        }
        let mut idx = [0usize; 2];
        let mut k = 0;
        for (i, &e) in b[..d].iter().enumerate() {
            for _ in 0..e {
                idx[k.min(1)] = i;
                k += 1;
            }
        }
        match k {
            1 => Some(idx[0]),
            // (i, j) with i <= j in lexicographic order
            2 => {
                let (i, j) = (idx[0], idx[1]);
                Some(d + i * d - i * i.saturating_sub(1) / 2 + j - i)
            }
            _ => None,
        }
    }

    /// The stencil approximating `d^beta` at node `k`.
    pub fn stencil(&self, k: usize, beta: MultiIndex) -> Result<&Stencil> {
        if beta.order() > 2 {
            return Err(Error::DerivativeOrder(beta.order()));
        }
        let slot = self
            .slot_of(beta)
            .ok_or_else(|| Error::InvalidGrid(format!("no stencil for {beta} in dimension {}", self.dim)))?;
        Ok(&self.stencils[slot][k])
    }

    fn has_full_stencil(&self, k: usize) -> bool {
        for i in 0..self.dim {
            for s in [-1, 1] {
                let mut off = [0; 3];
                off[i] = s;
                if self.neighbor(k, off).is_none() {
                    return false;
                }
            }
            for j in (i + 1)..self.dim {
                for si in [-1, 1] {
                    for sj in [-1, 1] {
                        let mut off = [0; 3];
                        off[i] = si;
                        off[j] = sj;
                        if self.neighbor(k, off).is_none() {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    fn axis_nodes(&self, k: usize, i: usize, steps: &[i32]) -> Option<Vec<u32>> {
        steps
            .iter()
            .map(|&s| {
                let mut off = [0; 3];
                off[i] = s;
                self.neighbor(k, off).map(|n| n as u32)
            })
            .collect()
    }

    fn node_stencils(&self, k: usize, slots: &[MultiIndex]) -> Vec<Stencil> {
        let mut fit: Option<CubicFit> = None;
        slots
            .iter()
            .map(|&beta| {
                self.build_stencil(k, beta).unwrap_or_else(|| {
                    fit.get_or_insert_with(|| self.cubic_fit(k)).stencil(beta, self.spacing)
                })
            })
            .collect()
    }

    fn build_stencil(&self, k: usize, beta: MultiIndex) -> Option<Stencil> {
        let h = self.spacing;
        let axes: Vec<usize> = (0..self.dim).filter(|&i| beta.0[i] > 0).collect();
        let one_d = |steps: &[i32], w: &[f64], i: usize| {
            self.axis_nodes(k, i, steps).map(|nodes| Stencil {
                nodes,
                weights: w.to_vec(),
            })
        };
        let found = match (beta.order(), axes.as_slice()) {
            (1, &[i]) => {
                let c = 0.5 / h;
                one_d(&[-1, 1], &[-c, c], i)
                    .or_else(|| one_d(&[0, 1, 2], &[-3.0 * c, 4.0 * c, -c], i))
                    .or_else(|| one_d(&[0, -1, -2], &[3.0 * c, -4.0 * c, c], i))
            }
            (2, &[i]) => {
                let c = 1.0 / (h * h);
                one_d(&[-1, 0, 1], &[c, -2.0 * c, c], i)
                    .or_else(|| one_d(&[0, 1, 2, 3], &[2.0 * c, -5.0 * c, 4.0 * c, -c], i))
                    .or_else(|| one_d(&[0, -1, -2, -3], &[2.0 * c, -5.0 * c, 4.0 * c, -c], i))
            }
            (2, &[i, j]) => {
                let c = 0.25 / (h * h);
                let corners = [(1, 1, c), (1, -1, -c), (-1, 1, -c), (-1, -1, c)];
                let mut st = Stencil::default();
                let mut ok = true;
                for (si, sj, w) in corners {
                    let mut off = [0; 3];
                    off[i] = si;
                    off[j] = sj;
                    match self.neighbor(k, off) {
                        Some(n) => {
                            st.nodes.push(n as u32);
                            st.weights.push(w);
                        }
                        None => ok = false,
                    }
                }
                ok.then_some(st)
            }
            _ => None,
        };
        found
    }

    /// Least-squares cubic fit over nearby in-ball nodes. Exact on cubics,
    /// so second derivatives keep second-order accuracy at the boundary.
    fn cubic_fit(&self, k: usize) -> CubicFit {
        let basis: Vec<MultiIndex> = (0..=3).flat_map(|o| MultiIndex::of_order(self.dim, o)).collect();
        for reach in 2..=4 {
            let mut nbrs = Vec::new();
            let zr = if self.dim == 3 { -reach..=reach } else { 0..=0 };
            for a in -reach..=reach {
                for b in -reach..=reach {
                    for c in zr.clone() {
                        if let Some(n) = self.neighbor(k, [a, b, c]) {
                            nbrs.push((n, [a as f64, b as f64, c as f64]));
                        }
                    }
                }
            }
            if nbrs.len() < basis.len() {
                continue;
            }
            let v = DMatrix::from_fn(nbrs.len(), basis.len(), |r, c| basis[c].monomial(&nbrs[r].1));
            // normal equations; the Gram matrix is at most 20 x 20
            let gram = v.tr_mul(&v);
            let eig = gram.clone().symmetric_eigenvalues();
            if eig.min() <= 1e-20 * eig.max() {
                continue;
            }
            let Some(chol) = gram.cholesky() else {
                continue;
            };
            let pinv = chol.solve(&v.transpose());
            return CubicFit {
                nodes: nbrs.iter().map(|&(n, _)| n as u32).collect(),
                basis,
                pinv,
            };
        }
        unreachable!("a lattice ball with res >= 5 always admits a cubic fit")
    }
}

struct CubicFit {
    nodes: Vec<u32>,
    basis: Vec<MultiIndex>,
    pinv: DMatrix<f64>,
}

impl CubicFit {
    fn stencil(&self, beta: MultiIndex, h: f64) -> Stencil {
        let target = self.basis.iter().position(|&b| b == beta).expect("beta in basis");
        let scale = beta.factorial() / h.powi(beta.order() as i32);
        Stencil {
            nodes: self.nodes.clone(),
            weights: (0..self.nodes.len()).map(|c| scale * self.pinv[(target, c)]).collect(),
        }
    }
}

fn lattice_slot(res: usize, dim: usize, half: i32, l: [i32; 3]) -> usize {
    let a = (l[0] + half) as usize;
    let b = (l[1] + half) as usize;
    if dim == 3 {
        (a * res + b) * res + (l[2] + half) as usize
    } else {
        a * res + b
    }
}

/// Exact derivative oracle `(x, beta) -> d^beta f(x)`.
pub type AnalyticFn = Arc<dyn Fn(&Point, MultiIndex) -> f64 + Send + Sync>;

/// Values of a real function at the grid nodes.
#[derive(Clone)]
pub struct ScalarField {
    grid: Arc<BallGrid>,
    values: Vec<f64>,
    analytic: Option<AnalyticFn>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("nodes", &self.values.len())
            .field("analytic", &self.analytic.is_some())
            .finish()
    }
}

impl ScalarField {
    pub fn from_values(grid: Arc<BallGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values".into()));
        }
        Ok(ScalarField {
            grid,
            values,
            analytic: None,
        })
    }

    pub fn zeros(grid: Arc<BallGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        ScalarField {
            grid,
            values,
            analytic: None,
        }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: Arc<BallGrid>, f: impl Fn(&Point) -> f64 + Sync + Send) -> Result<Self> {
        let values = par::map_range(grid.len(), |k| f(grid.node(k)));
        Self::from_values(grid, values)
    }

    /// Samples `f(x, 0)` and keeps `f` as the exact derivative oracle.
    pub fn analytic(
        grid: Arc<BallGrid>,
        f: impl Fn(&Point, MultiIndex) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let f: AnalyticFn = Arc::new(f);
        let values = par::map_range(grid.len(), |k| f(grid.node(k), MultiIndex::ZERO));
        let mut field = Self::from_values(grid, values)?;
        field.analytic = Some(f);
        Ok(field)
    }

    pub fn grid(&self) -> &Arc<BallGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value_at(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn at_origin(&self) -> f64 {
        self.values[self.grid.origin()]
    }

    pub fn analytic_oracle(&self) -> Option<&AnalyticFn> {
        self.analytic.as_ref()
    }

    pub fn has_analytic(&self) -> bool {
        self.analytic.is_some()
    }

    /// Drops the analytic oracle so derivatives fall back to stencils.
    pub fn without_analytic(mut self) -> Self {
        self.analytic = None;
        self
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn same_grid(&self, other: &ScalarField) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// `a * self + b * other`, pointwise. Analytic oracles combine when both exist.
    pub fn lin_comb(&self, a: f64, other: &ScalarField, b: f64) -> Result<ScalarField> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        let analytic = match (&self.analytic, &other.analytic) {
            (Some(f), Some(g)) => {
                let (f, g) = (f.clone(), g.clone());
                Some(Arc::new(move |x: &Point, beta| a * f(x, beta) + b * g(x, beta)) as AnalyticFn)
            }
            _ => None,
        };
        Ok(ScalarField {
            grid: self.grid.clone(),
            values,
            analytic,
        })
    }

    /// Pointwise product (values only).
    pub fn product(&self, other: &ScalarField) -> Result<ScalarField> {
        self.same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x * y).collect();
        ScalarField::from_values(self.grid.clone(), values)
    }

    /// Derivative at one node: exact when an oracle is attached, otherwise the stencil.
    pub fn derivative_at(&self, k: usize, beta: MultiIndex) -> Result<f64> {
        if beta.order() > 2 {
            return Err(Error::DerivativeOrder(beta.order()));
        }
        if beta.order() == 0 {
            return Ok(self.values[k]);
        }
        if let Some(f) = &self.analytic {
            return Ok(f(self.grid.node(k), beta));
        }
        Ok(self.grid.stencil(k, beta)?.apply(&self.values))
    }
}

/// `d^beta f` as a new field. Uses the analytic oracle when present, else
/// central differences where the stencil fits and one-sided / fitted
/// second-order stencils near the boundary.
pub fn fd_derivative(field: &ScalarField, beta: MultiIndex) -> Result<ScalarField> {
    if beta.order() > 2 {
        return Err(Error::DerivativeOrder(beta.order()));
    }
    let grid = field.grid.clone();
    if beta.order() == 0 {
        return Ok(field.clone());
    }
    if let Some(f) = &field.analytic {
        let f = f.clone();
        let g = f.clone();
        let values = par::map_range(grid.len(), |k| f(grid.node(k), beta));
        let mut out = ScalarField::from_values(grid, values)?;
        out.analytic = Some(Arc::new(move |x: &Point, gamma| g(x, beta.add(gamma))));
        return Ok(out);
    }
    // validate the slot once
    grid.stencil(grid.origin(), beta)?;
    let values = par::map_range(grid.len(), |k| {
        grid.stencil(k, beta)
            .map(|s| s.apply(&field.values))
            .unwrap_or(f64::NAN)
    });
    ScalarField::from_values(grid, values)
}

/// Sum of `d_ii f`. Values at non-interior nodes come from one-sided or
/// fitted stencils; only [`BallGrid::is_interior`] nodes are central.
pub fn laplacian(field: &ScalarField) -> Result<ScalarField> {
    let dim = field.grid.dim();
    let mut acc = fd_derivative(field, MultiIndex::second(0, 0))?.without_analytic();
    for i in 1..dim {
        let d = fd_derivative(field, MultiIndex::second(i, i))?.without_analytic();
        acc = acc.lin_comb(1.0, &d, 1.0)?;
    }
    Ok(acc)
}

/// An `m`-vector of fields on a shared grid.
#[derive(Debug, Clone)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidGrid("vector field needs at least one component".into()));
        }
        for c in &components[1..] {
            c.same_grid(&components[0])?;
        }
        Ok(VectorField { components })
    }

    pub fn zeros(grid: Arc<BallGrid>, m: usize) -> Self {
        VectorField {
            components: (0..m).map(|_| ScalarField::zeros(grid.clone())).collect(),
        }
    }

    pub fn grid(&self) -> &Arc<BallGrid> {
        self.components[0].grid()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.components[i]
    }

    pub fn lin_comb(&self, a: f64, other: &VectorField, b: f64) -> Result<VectorField> {
        if self.len() != other.len() {
            return Err(Error::GridMismatch);
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(x, y)| x.lin_comb(a, y, b))
            .collect::<Result<_>>()?;
        Ok(VectorField { components })
    }

    pub fn sup_norm(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.sup_norm()))
    }
}

/// Node index pairs over which discrete Hölder quotients are maximized.
///
/// Always contains every `(node, origin)` pair, every antipodal pair of
/// boundary nodes and every pair of nodes on a common coordinate axis; the
/// rest is sampled from a seeded generator up to `cap` pairs in total. Grids
/// small enough that all pairs fit under the cap get the exhaustive set.
#[derive(Debug, Clone)]
pub struct PairSet {
    pairs: Vec<(u32, u32)>,
    dist: Vec<f64>,
    seed: u64,
    cap: usize,
}

impl PairSet {
    pub fn new(grid: &BallGrid, seed: u64, cap: usize) -> Self {
        let n = grid.len();
        let total = n * n.saturating_sub(1) / 2;
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        if total <= cap {
            for i in 0..n {
                for j in (i + 1)..n {
                    pairs.push((i as u32, j as u32));
                }
            }
        } else {
            let mut seen: HashSet<(u32, u32)> = HashSet::new();
            let mut push = |i: usize, j: usize, pairs: &mut Vec<(u32, u32)>| {
                if i == j {
                    return;
                }
                let key = (i.min(j) as u32, i.max(j) as u32);
                if seen.insert(key) {
                    pairs.push(key);
                }
            };
            let o = grid.origin();
            for k in 0..n {
                push(k, o, &mut pairs);
            }
            for k in 0..n {
                if grid.is_boundary(k) {
                    push(k, grid.antipode(k), &mut pairs);
                }
            }
            let half = (grid.res() as i32 - 1) / 2;
            for axis in 0..grid.dim() {
                let line: Vec<usize> = (-half..=half)
                    .filter_map(|t| {
                        let mut l = [0; 3];
                        l[axis] = t;
                        grid.find(l)
                    })
                    .collect();
                for (a, &i) in line.iter().enumerate() {
                    for &j in &line[a + 1..] {
                        push(i, j, &mut pairs);
                    }
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let want = cap.saturating_sub(pairs.len());
            let mut added = 0;
            let mut attempts = 0usize;
            while added < want && attempts < 20 * cap {
                attempts += 1;
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                let before = pairs.len();
                push(i, j, &mut pairs);
                added += pairs.len() - before;
            }
        }
        let dist = pairs
            .iter()
            .map(|&(i, j)| distance(grid.node(i as usize), grid.node(j as usize)))
            .collect();
        PairSet {
            pairs,
            dist,
            seed,
            cap,
        }
    }

    pub fn with_defaults(grid: &BallGrid) -> Self {
        Self::new(grid, DEFAULT_PAIR_SEED, DEFAULT_PAIR_CAP)
    }

    /// Explicit pair list; zero-separation pairs are dropped.
    pub fn from_pairs(grid: &BallGrid, list: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let pairs: Vec<(u32, u32)> = list
            .into_iter()
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| (i as u32, j as u32))
            .collect();
        let dist = pairs
            .iter()
            .map(|&(i, j)| distance(grid.node(i as usize), grid.node(j as usize)))
            .collect();
        PairSet {
            pairs,
            dist,
            seed: 0,
            cap: usize::MAX,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    /// `|x - x'|` for pair `p`.
    pub fn distance(&self, p: usize) -> f64 {
        self.dist[p]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cap(&self) -> usize {
        self.cap
    }
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn norm(a: &Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn has_node(g: &BallGrid, p: Point) -> bool {
        g.nodes().iter().any(|q| distance(q, &p) < 1e-12)
    }

    #[test]
    fn slot_lookup_matches_slot_list() {
        for dim in [2, 3] {
            let g = BallGrid::new(dim, 1.0, 5).unwrap();
            for (k, b) in g.derivative_slots().into_iter().enumerate() {
                assert_eq!(g.slot_of(b), Some(k), "{b}");
            }
            assert_eq!(g.slot_of(MultiIndex::ZERO), None);
        }
        let g = BallGrid::new(2, 1.0, 5).unwrap();
        assert_eq!(g.slot_of(MultiIndex::first(2)), None);
    }

    #[test]
    fn small_disk_contains_axis_points() {
        let g = BallGrid::new(2, 1.0, 5).unwrap();
        for p in [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]] {
            assert!(has_node(&g, p), "{p:?}");
        }
        assert_eq!(g.node(g.origin()), &[0.0, 0.0, 0.0]);
        assert!(g.nodes().iter().all(|x| norm(x) <= 1.0 + 1e-12));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(BallGrid::new(2, 1.0, 4).is_err());
        assert!(BallGrid::new(2, 1.0, 3).is_err());
        assert!(BallGrid::new(2, 0.0, 5).is_err());
        assert!(BallGrid::new(2, -1.0, 5).is_err());
        assert!(BallGrid::new(4, 1.0, 5).is_err());
        assert!(BallGrid::new(1, 1.0, 5).is_err());
    }

    #[test]
    fn interior_nodes_have_all_neighbors() {
        let g = BallGrid::new(3, 0.7, 9).unwrap();
        for k in g.interior_nodes() {
            for i in 0..3 {
                for j in 0..3 {
                    for si in [-1, 1] {
                        for sj in [-1, 1] {
                            let mut off = [0; 3];
                            off[i] += si;
                            if i != j {
                                off[j] += sj;
                            }
                            assert!(g.neighbor(k, off).is_some());
                        }
                    }
                }
            }
        }
        assert!(g.is_interior(g.origin()));
    }

    #[test]
    fn antipodes_and_lookup() {
        let g = BallGrid::new(2, 2.0, 11).unwrap();
        for k in 0..g.len() {
            let a = g.antipode(k);
            let (x, y) = (g.node(k), g.node(a));
            assert!((x[0] + y[0]).abs() < 1e-12 && (x[1] + y[1]).abs() < 1e-12);
            assert_eq!(g.find(g.lattice_index(k)), Some(k));
        }
    }

    #[test]
    fn multi_index_enumeration() {
        assert_eq!(MultiIndex::of_order(2, 2).len(), 3);
        assert_eq!(MultiIndex::of_order(3, 2).len(), 6);
        assert_eq!(MultiIndex::of_order(2, 3).len(), 4);
        assert_eq!(MultiIndex::of_order(3, 3).len(), 10);
        assert_eq!(MultiIndex::second(0, 0).factorial(), 2.0);
        assert_eq!(MultiIndex::second(0, 1).factorial(), 1.0);
    }

    #[test]
    fn stencils_exact_on_bilinear() {
        let g = BallGrid::new(2, 1.0, 9).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| x[0] * x[1]).unwrap();
        let d = fd_derivative(&f, MultiIndex::second(0, 1)).unwrap();
        for v in d.values() {
            assert!((v - 1.0).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let g = BallGrid::new(3, 1.0, 7).unwrap();
        let f = ScalarField::from_fn(g.clone(), |_| 2.5).unwrap();
        for beta in g.derivative_slots() {
            let d = fd_derivative(&f, beta).unwrap();
            assert!(d.sup_norm() < 1e-9, "{beta}: {}", d.sup_norm());
        }
    }

    #[test]
    fn rejects_third_order() {
        let g = BallGrid::new(2, 1.0, 5).unwrap();
        let f = ScalarField::zeros(g);
        assert!(matches!(
            fd_derivative(&f, MultiIndex([3, 0, 0])),
            Err(Error::DerivativeOrder(3))
        ));
        assert!(fd_derivative(&f, MultiIndex([1, 1, 1])).is_err());
    }

    #[test]
    fn analytic_oracle_wins() {
        let g = BallGrid::new(2, 1.0, 7).unwrap();
        let f = ScalarField::analytic(g.clone(), |x, b| match b.0 {
            [0, 0, 0] => x[0].sin(),
            [1, 0, 0] => x[0].cos(),
            [2, 0, 0] => -x[0].sin(),
            _ => 0.0,
        })
        .unwrap();
        let d = fd_derivative(&f, MultiIndex::second(0, 0)).unwrap();
        for k in 0..g.len() {
            assert_eq!(d.value_at(k), -g.node(k)[0].sin());
        }
    }

    #[test]
    fn laplacian_of_quadratic() {
        for dim in [2, 3] {
            let g = BallGrid::new(dim, 1.0, 9).unwrap();
            let f = ScalarField::from_fn(g.clone(), move |x| norm(x).powi(2) / (2.0 * dim as f64)).unwrap();
            let l = laplacian(&f).unwrap();
            for k in 0..g.len() {
                assert!((l.value_at(k) - 1.0).abs() < 1e-9, "dim {dim} node {k}: {}", l.value_at(k));
            }
        }
    }

    #[test]
    fn pair_set_is_deterministic_and_forced() {
        let g = BallGrid::new(2, 1.0, 41).unwrap();
        let a = PairSet::new(&g, 7, 5_000);
        let b = PairSet::new(&g, 7, 5_000);
        assert_eq!(a.pairs(), b.pairs());
        assert!(a.len() >= 5_000 || a.len() > g.len());
        let o = g.origin() as u32;
        let set: HashSet<(u32, u32)> = a.pairs().iter().copied().collect();
        for k in 0..g.len() as u32 {
            if k != o {
                assert!(set.contains(&(k.min(o), k.max(o))));
            }
        }
        for k in 0..g.len() {
            if g.is_boundary(k) {
                let j = g.antipode(k);
                assert!(set.contains(&(k.min(j) as u32, k.max(j) as u32)));
            }
        }
        assert!((0..a.len()).all(|p| a.distance(p) > 0.0));
    }

    #[test]
    fn small_grids_get_all_pairs() {
        let g = BallGrid::new(2, 1.0, 7).unwrap();
        let p = PairSet::with_defaults(&g);
        assert_eq!(p.len(), g.len() * (g.len() - 1) / 2);
    }
}
