//! The fixed-point map and its driver.
//!
//! For a Poisson-form system with zero jet, one step is
//!
//! ```text
//! Psi(f)   = -psi(x, f, Df) - sum b^ij(x, f, Df) D_ij f
//! omega(f) = N(Psi(f)) + h
//! Theta(f) = omega - omega(0) - D omega(0) . x - sum_{k<l} d_kl omega(0) x_k x_l
//! ```
//!
//! with `h` an optional harmonic polynomial. Only the mixed second
//! derivatives are removed, so `Delta Theta(f) = -Psi(f)`. The driver iterates
//! from `f = 0`, watches the increments in `||.||^(2,a)`, and halves the ball
//! when the map stops contracting.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fd_derivative, laplacian, BallGrid, MultiIndex, PairSet, Point, ScalarField, VectorField};
use crate::grid::{DEFAULT_PAIR_CAP, DEFAULT_PAIR_SEED};
use crate::holder::{check_alpha, second_order_norm};
use crate::par;
use crate::potential::{check_potential_norm_bound, default_probes, hessian_at, newtonian_potential};
use crate::reduce::PoissonSystem;

/// Origin jets above this count as a broken invariant.
pub const JET_TOLERANCE: f64 = 1e-10;

/// `coeff * x^powers`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u8>,
}

impl Monomial {
    fn exponent(&self) -> [u8; 3] {
        let mut e = [0; 3];
        for (k, p) in self.powers.iter().take(3).enumerate() {
            e[k] = *p;
        }
        e
    }

    fn eval(&self, x: &Point) -> f64 {
        self.coeff * MultiIndex(self.exponent()).monomial(x)
    }
}

/// One polynomial of degree at most 3 per solution component, in the
/// solver's (diagonalized) coordinates. Empty means `h = 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSeed {
    pub components: Vec<Vec<Monomial>>,
}

impl HarmonicSeed {
    pub fn is_zero(&self) -> bool {
        self.components.iter().flatten().all(|t| t.coeff == 0.0)
    }

    /// Degree, shape and exact harmonicity.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.components.is_empty() {
            return Ok(());
        }
        if self.components.len() != m {
            return Err(Error::config(
                "harmonic_seed",
                format!("expected {m} components, got {}", self.components.len()),
            ));
        }
        for (c, poly) in self.components.iter().enumerate() {
            let mut lap: BTreeMap<[u8; 3], f64> = BTreeMap::new();
            let mut scale = 0.0;
            for t in poly {
                if t.powers.len() != n {
                    return Err(Error::config(
                        format!("harmonic_seed.components[{c}]"),
                        format!("powers must have length {n}"),
                    ));
                }
                if t.powers.iter().map(|&p| p as usize).sum::<usize>() > 3 {
                    return Err(Error::config(
                        format!("harmonic_seed.components[{c}]"),
                        "degree exceeds 3",
                    ));
                }
                if !t.coeff.is_finite() {
                    return Err(Error::config(format!("harmonic_seed.components[{c}]"), "non-finite coefficient"));
                }
                scale += t.coeff.abs();
                let e = t.exponent();
                for i in 0..n {
                    if e[i] >= 2 {
                        let mut d = e;
                        d[i] -= 2;
                        *lap.entry(d).or_insert(0.0) += t.coeff * (e[i] as f64) * (e[i] as f64 - 1.0);
                    }
                }
            }
            if lap.values().any(|v| v.abs() > 1e-12 * (1.0 + scale)) {
                return Err(Error::NotHarmonic { component: c });
            }
        }
        Ok(())
    }

    pub fn eval(&self, component: usize, x: &Point) -> f64 {
        self.components
            .get(component)
            .map_or(0.0, |p| p.iter().map(|t| t.eval(x)).sum())
    }

    /// `d_kl h(0)`, read off the quadratic terms.
    pub fn hessian_at_origin(&self, component: usize) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for t in self.components.get(component).into_iter().flatten() {
            let e = t.exponent();
            if e.iter().map(|&p| p as usize).sum::<usize>() != 2 {
                continue;
            }
            for k in 0..3 {
                for l in 0..3 {
                    let mut d = e;
                    if d[k] == 0 {
                        continue;
                    }
                    let a = d[k] as f64;
                    d[k] -= 1;
                    if d[l] == 0 {
                        continue;
                    }
                    out[k][l] += t.coeff * a * d[l] as f64;
                }
            }
        }
        out
    }

    pub fn field(&self, grid: &Arc<BallGrid>, m: usize) -> Result<VectorField> {
        let comps = (0..m)
            .map(|c| ScalarField::from_fn(grid.clone(), |x| self.eval(c, x)))
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(comps)
    }
}

/// Solver parameters. `r_min` defaults to `r0 / 64`; `gamma0` overrides the
/// measured starting ball radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    #[serde(rename = "R0")]
    pub r0: f64,
    #[serde(rename = "R_min")]
    pub r_min: Option<f64>,
    pub gamma0: Option<f64>,
    pub gamma0_floor: f64,
    pub max_doublings: usize,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub contraction_threshold: f64,
    pub res: usize,
    pub pair_cap: usize,
    pub seed: u64,
    pub c_samples: usize,
    pub harmonic_seed: HarmonicSeed,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            r0: 0.5,
            r_min: None,
            gamma0: None,
            gamma0_floor: 1.0,
            max_doublings: 3,
            alpha: 0.5,
            tol: 1e-9,
            max_iter: 60,
            contraction_threshold: 0.9,
            res: 21,
            pair_cap: DEFAULT_PAIR_CAP,
            seed: DEFAULT_PAIR_SEED,
            c_samples: 2000,
            harmonic_seed: HarmonicSeed::default(),
        }
    }
}

impl SolveConfig {
    pub fn r_min(&self) -> f64 {
        self.r_min.unwrap_or(self.r0 / 64.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: String| Err(Error::config(f, m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", format!("must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return bad("R0", format!("must be positive, got {}", self.r0));
        }
        let r_min = self.r_min();
        if !(r_min > 0.0 && r_min < self.r0) {
            return bad("R_min", format!("must lie in (0, R0), got {r_min}"));
        }
        if !(self.tol > 0.0) {
            return bad("tol", format!("must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter", "must be positive".into());
        }
        if !(self.contraction_threshold > 0.0 && self.contraction_threshold < 1.0) {
            return bad("contraction_threshold", format!("must lie in (0, 1), got {}", self.contraction_threshold));
        }
        if self.res < 5 || self.res.is_multiple_of(2) {
            return bad("res", format!("must be odd and at least 5, got {}", self.res));
        }
        if !(self.gamma0_floor > 0.0) {
            return bad("gamma0_floor", format!("must be positive, got {}", self.gamma0_floor));
        }
        if let Some(g) = self.gamma0 {
            if !(g > 0.0 && g.is_finite()) {
                return bad("gamma0", format!("must be positive, got {g}"));
            }
        }
        if self.pair_cap == 0 {
            return bad("pair_cap", "must be positive".into());
        }
        if self.c_samples == 0 {
            return bad("c_samples", "must be positive".into());
        }
        Ok(())
    }
}

fn dvec_point(x: &Point, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| x[i])
}

fn oracle_failure(x: &Point, n: usize, what: impl Into<String>) -> Error {
    Error::OracleFailure {
        node: x[..n].to_vec(),
        what: what.into(),
    }
}

/// `Psi(f) = -psi(x, f, Df) - sum b^ij D_ij f`, derivatives by finite differences.
pub fn assemble_psi(sys: &PoissonSystem, f: &VectorField) -> Result<VectorField> {
    let grid = f.grid().clone();
    let (n, m) = (sys.n, sys.m);
    if grid.dim() != n || f.len() != m {
        return Err(Error::GridMismatch);
    }
    let firsts = MultiIndex::of_order(n, 1);
    let seconds = MultiIndex::of_order(n, 2);
    let mut d1 = Vec::with_capacity(m);
    let mut d2 = Vec::with_capacity(m);
    for c in f.components() {
        d1.push(firsts.iter().map(|&b| fd_derivative(c, b)).collect::<Result<Vec<_>>>()?);
        d2.push(seconds.iter().map(|&b| fd_derivative(c, b)).collect::<Result<Vec<_>>>()?);
    }
    let rows: Vec<Result<Vec<f64>>> = par::map_range(grid.len(), |k| {
        let node = grid.node(k);
        let x = dvec_point(node, n);
        let p = DVector::from_fn(m, |a, _| f.component(a).value_at(k));
        let q = DMatrix::from_fn(m, n, |a, i| d1[a][i].value_at(k));
        let psi = sys.eval_psi(&x, &p, &q);
        let b = sys.eval_b(&x, &p, &q);
        if psi.len() != m || b.shape() != (n, n) {
            return Err(oracle_failure(node, n, "oracle returned the wrong shape"));
        }
        let mut out = Vec::with_capacity(m);
        for a in 0..m {
            let mut s = -psi[a];
            for (slot, beta) in seconds.iter().enumerate() {
                let (i, j) = beta_pair(beta);
                let h = d2[a][slot].value_at(k);
                // off-diagonal slots stand for both (i, j) and (j, i)
                let w = if i == j { b[(i, i)] } else { b[(i, j)] + b[(j, i)] };
                s -= w * h;
            }
            if !s.is_finite() {
                return Err(oracle_failure(node, n, "non-finite right-hand side"));
            }
            out.push(s);
        }
        Ok(out)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let comps = (0..m)
        .map(|a| ScalarField::from_values(grid.clone(), rows.iter().map(|r| r[a]).collect()))
        .collect::<Result<Vec<_>>>()?;
    VectorField::new(comps)
}

fn beta_pair(beta: &MultiIndex) -> (usize, usize) {
    let mut idx = Vec::with_capacity(2);
    for (i, &e) in beta.0.iter().enumerate() {
        for _ in 0..e {
            idx.push(i);
        }
    }
    (idx[0], idx[1])
}

/// `Psi(f)` together with `omega = N(Psi(f))`.
#[derive(Debug, Clone)]
pub struct OmegaStep {
    pub psi: VectorField,
    pub omega: VectorField,
}

pub fn omega(sys: &PoissonSystem, f: &VectorField) -> Result<OmegaStep> {
    let psi = assemble_psi(sys, f)?;
    let comps = psi
        .components()
        .iter()
        .map(newtonian_potential)
        .collect::<Result<Vec<_>>>()?;
    Ok(OmegaStep {
        psi,
        omega: VectorField::new(comps)?,
    })
}

/// Removes value and gradient at the origin node and the given mixed second
/// derivatives. The gradient is taken with the origin's central stencil, so
/// the result has exactly zero discrete jet there.
pub fn jet_correct(w: &ScalarField, mixed: &[[f64; 3]; 3]) -> Result<ScalarField> {
    let grid = w.grid().clone();
    let n = grid.dim();
    let o = grid.origin();
    let v0 = w.value_at(o);
    let mut g = [0.0; 3];
    for (i, gi) in g.iter_mut().enumerate().take(n) {
        *gi = grid.stencil(o, MultiIndex::first(i))?.apply(w.values());
    }
    let values = w
        .values()
        .iter()
        .zip(grid.nodes())
        .map(|(&v, x)| {
            let mut s = v - v0;
            for i in 0..n {
                s -= g[i] * x[i];
                for l in i + 1..n {
                    s -= mixed[i][l] * x[i] * x[l];
                }
            }
            s
        })
        .collect();
    ScalarField::from_values(grid, values)
}

/// Everything one application of `Theta` produces.
#[derive(Debug, Clone)]
pub struct ThetaStep {
    pub theta: VectorField,
    pub psi: VectorField,
}

pub fn theta(sys: &PoissonSystem, f: &VectorField, seed: &HarmonicSeed) -> Result<ThetaStep> {
    let step = omega(sys, f)?;
    let grid = f.grid().clone();
    let o = grid.origin();
    let mut comps = Vec::with_capacity(sys.m);
    for a in 0..sys.m {
        let mut w = step.omega.component(a).clone();
        let mut mixed = hessian_at(step.psi.component(a), o);
        if !seed.is_zero() {
            let h = ScalarField::from_fn(grid.clone(), |x| seed.eval(a, x))?;
            w = w.lin_comb(1.0, &h, 1.0)?;
            let hh = seed.hessian_at_origin(a);
            for (row, hrow) in mixed.iter_mut().zip(hh) {
                for (v, hv) in row.iter_mut().zip(hrow) {
                    *v += hv;
                }
            }
        }
        comps.push(jet_correct(&w, &mixed)?);
    }
    Ok(ThetaStep {
        theta: VectorField::new(comps)?,
        psi: step.psi,
    })
}

/// Value and discrete gradient of each component at the origin node.
pub fn origin_jet(f: &VectorField) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let grid = f.grid();
    let o = grid.origin();
    let mut values = Vec::new();
    let mut grads = Vec::new();
    for c in f.components() {
        values.push(c.value_at(o));
        grads.push(
            (0..grid.dim())
                .map(|i| Ok(grid.stencil(o, MultiIndex::first(i))?.apply(c.values())))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((values, grads))
}

fn jet_magnitude(f: &VectorField) -> Result<f64> {
    let (v, g) = origin_jet(f)?;
    Ok(v.iter().chain(g.iter().flatten()).fold(0.0_f64, |m, x| m.max(x.abs())))
}

/// Interior sup of `|Delta u + Psi(u)|` with finite differences only.
pub fn residual_check(sys: &PoissonSystem, u: &VectorField) -> Result<f64> {
    Ok(residual_field(sys, u)?
        .into_iter()
        .flatten()
        .fold(0.0_f64, f64::max))
}

/// Per-node `max_a |Delta u^a + Psi^a(u)|`, `None` off the interior.
pub fn residual_field(sys: &PoissonSystem, u: &VectorField) -> Result<Vec<Option<f64>>> {
    let psi = assemble_psi(sys, u)?;
    defect_field(u, &psi)
}

fn defect_field(u: &VectorField, psi: &VectorField) -> Result<Vec<Option<f64>>> {
    let grid = u.grid();
    let laps = u.components().iter().map(laplacian).collect::<Result<Vec<_>>>()?;
    Ok((0..grid.len())
        .map(|k| {
            grid.is_interior(k).then(|| {
                laps.iter()
                    .zip(psi.components())
                    .map(|(l, p)| (l.value_at(k) + p.value_at(k)).abs())
                    .fold(0.0, f64::max)
            })
        })
        .collect())
}

/// `max |b^kl|` over `samples` draws of `|x| <= R`, `|p| <= R^2 gamma`,
/// `|q| <= R gamma`. The unit draws depend only on `seed`, so estimates for
/// different `R` are evaluated at the same scaled points.
pub fn estimate_c_r_gamma(sys: &PoissonSystem, radius: f64, gamma: f64, samples: usize, seed: u64) -> Result<f64> {
    let (n, m) = (sys.n, sys.m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = |len: usize| -> DVector<f64> {
        loop {
            let v = DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0));
            if v.norm() <= 1.0 {
                return v;
            }
        }
    };
    let mut best = 0.0_f64;
    for _ in 0..samples {
        let x = unit(n) * radius;
        let p = unit(m) * (radius * radius * gamma);
        let qv = unit(m * n) * (radius * gamma);
        let q = DMatrix::from_column_slice(m, n, qv.as_slice());
        let b = sys.eval_b(&x, &p, &q);
        let s = b.amax();
        if !s.is_finite() {
            return Err(Error::OracleFailure {
                node: x.iter().copied().collect(),
                what: "non-finite b".into(),
            });
        }
        best = best.max(s);
    }
    Ok(best)
}

/// `max(4 C max_i |Psi^i(0,0,0,0)|, floor, 2 ||h||^(2,a))` with `C` the
/// measured potential norm ratio.
pub fn choose_gamma0(sys: &PoissonSystem, config: &SolveConfig, c_hat: f64, seed_norm: f64) -> f64 {
    let (x, p, q) = (DVector::zeros(sys.n), DVector::zeros(sys.m), DMatrix::zeros(sys.m, sys.n));
    let psi0 = sys.eval_psi(&x, &p, &q).amax();
    (4.0 * c_hat * psi0).max(config.gamma0_floor).max(2.0 * seed_norm)
}

/// `||Theta(u + d) - Theta(u)|| / ||d||` for `d` a multiple of `|x|^2` with
/// `||d||^(2,a) = 0.1 gamma`.
pub fn probe_contraction_ratio(
    sys: &PoissonSystem,
    u: &VectorField,
    seed: &HarmonicSeed,
    gamma: f64,
    alpha: f64,
    pairs: &PairSet,
) -> Result<f64> {
    let grid = u.grid().clone();
    let bump = ScalarField::from_fn(grid.clone(), |x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2])?;
    let bump = VectorField::new(vec![bump; u.len()])?;
    let scale = 0.1 * gamma / second_order_norm(&bump, alpha, pairs)?;
    let d = VectorField::zeros(grid, u.len()).lin_comb(0.0, &bump, scale)?;
    let moved = u.lin_comb(1.0, &d, 1.0)?;
    let a = theta(sys, u, seed)?.theta;
    let b = theta(sys, &moved, seed)?.theta;
    Ok(second_order_norm(&b.lin_comb(1.0, &a, -1.0)?, alpha, pairs)? / second_order_norm(&d, alpha, pairs)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub index: usize,
    pub increment: f64,
    pub norm: f64,
    pub jet: f64,
    pub laplacian_defect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Converged,
    Escaped,
    NotContracting,
    MaxIterations,
    LeftChart,
}

#[derive(Debug, Clone, Serialize)]
pub struct RadiusAttempt {
    pub radius: f64,
    pub gamma_initial: f64,
    pub gamma_final: f64,
    pub doublings: usize,
    pub c_hat: f64,
    pub c_r_gamma: f64,
    pub iterations: usize,
    pub outcome: AttemptOutcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub dim: usize,
    pub radius: f64,
    pub res: usize,
    pub nodes: usize,
    pub spacing: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct JetReport {
    /// `u(0)` in original coordinates.
    pub value: Vec<f64>,
    /// `Du(0)` in original coordinates, one row per component.
    pub gradient: Vec<Vec<f64>>,
    pub value_error: f64,
    pub gradient_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub status: &'static str,
    pub system: String,
    pub radius: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub increment_ratios: Vec<f64>,
    pub empirical_contraction: f64,
    pub probe_contraction: f64,
    pub residual: f64,
    pub psi_sup: f64,
    pub solution_norm: f64,
    pub jet: JetReport,
    pub attempts: Vec<RadiusAttempt>,
    /// `(R, C[R, gamma])` with `gamma` fixed to the first starting radius.
    pub c_r_gamma_history: Vec<(f64, f64)>,
    pub grid: GridInfo,
    pub pair_count: usize,
    /// The solution in the solver's coordinates.
    #[serde(skip)]
    pub solution: VectorField,
    #[serde(skip)]
    pub residual_field: Vec<Option<f64>>,
}

impl SolveReport {
    /// `(x, u(x))` in original coordinates for every node.
    pub fn original_rows(&self, sys: &PoissonSystem) -> Vec<(Vec<f64>, Vec<f64>)> {
        let grid = self.solution.grid();
        (0..grid.len())
            .map(|k| {
                let xt = dvec_point(grid.node(k), sys.n);
                let v = DVector::from_fn(sys.m, |a, _| self.solution.component(a).value_at(k));
                let x = sys.to_original(&xt);
                let u = sys.reconstruct_value(&xt, &v);
                (x.iter().copied().collect(), u.iter().copied().collect())
            })
            .collect()
    }
}

struct Attempt {
    outcome: AttemptOutcome,
    solution: VectorField,
    history: Vec<IterationRecord>,
    gamma: f64,
}

fn leaves_chart(sys: &PoissonSystem, f: &VectorField) -> bool {
    if !sys.target_radius.is_finite() {
        return false;
    }
    let grid = f.grid();
    (0..grid.len()).any(|k| {
        let xt = dvec_point(grid.node(k), sys.n);
        let v = DVector::from_fn(sys.m, |a, _| f.component(a).value_at(k));
        sys.reconstruct_value(&xt, &v).norm() >= sys.target_radius
    })
}

fn iterate(
    sys: &PoissonSystem,
    config: &SolveConfig,
    grid: &Arc<BallGrid>,
    pairs: &PairSet,
    gamma: f64,
) -> Result<Attempt> {
    let mut f = VectorField::zeros(grid.clone(), sys.m);
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut over = 0;
    for index in 1..=config.max_iter {
        let step = theta(sys, &f, &config.harmonic_seed)?;
        let next = step.theta;
        let jet = jet_magnitude(&next)?;
        if jet > JET_TOLERANCE * (1.0 + next.sup_norm()) {
            return Err(Error::OracleFailure {
                node: vec![0.0; sys.n],
                what: format!("origin jet of the iterate is {jet:e}"),
            });
        }
        let norm = second_order_norm(&next, config.alpha, pairs)?;
        let increment = second_order_norm(&next.lin_comb(1.0, &f, -1.0)?, config.alpha, pairs)?;
        let laplacian_defect = defect_field(&next, &step.psi)?.into_iter().flatten().fold(0.0, f64::max);
        history.push(IterationRecord {
            index,
            increment,
            norm,
            jet,
            laplacian_defect,
        });
        let done = |outcome, solution| {
            Ok(Attempt {
                outcome,
                solution,
                history: history.clone(),
                gamma,
            })
        };
        if !norm.is_finite() || norm > gamma {
            return done(AttemptOutcome::Escaped, next);
        }
        if leaves_chart(sys, &next) {
            return done(AttemptOutcome::LeftChart, next);
        }
        if history.len() >= 2 {
            let prev = history[history.len() - 2].increment;
            if prev > 0.0 && increment / prev > config.contraction_threshold {
                over += 1;
            } else {
                over = 0;
            }
        }
        f = next;
        if increment < config.tol {
            return done(AttemptOutcome::Converged, f);
        }
        if over >= 3 {
            return done(AttemptOutcome::NotContracting, f);
        }
    }
    Ok(Attempt {
        outcome: AttemptOutcome::MaxIterations,
        solution: f,
        history,
        gamma,
    })
}

/// Picard iteration with ball enlargement and radius halving.
pub fn picard_solve(sys: &PoissonSystem, config: &SolveConfig) -> Result<SolveReport> {
    config.validate()?;
    check_alpha(config.alpha)?;
    config.harmonic_seed.validate(sys.n, sys.m)?;
    let r_min = config.r_min();
    let p_inv_norm = sys.p_inv.singular_values().max();
    let mut radius = config.r0;
    let mut attempts = Vec::new();
    let mut c_hist = Vec::new();
    let mut c_gamma: Option<f64> = None;
    let mut last_outcome = AttemptOutcome::MaxIterations;
    let mut last_gamma = 0.0;
    while radius >= r_min {
        // the affine part must fit in the chart before anything is solved
        if sys.target_radius.is_finite() && sys.jet.reach(p_inv_norm * radius) >= sys.target_radius {
            attempts.push(RadiusAttempt {
                radius,
                gamma_initial: 0.0,
                gamma_final: 0.0,
                doublings: 0,
                c_hat: 0.0,
                c_r_gamma: 0.0,
                iterations: 0,
                outcome: AttemptOutcome::LeftChart,
            });
            last_outcome = AttemptOutcome::LeftChart;
            radius /= 2.0;
            continue;
        }
        let grid = BallGrid::new(sys.n, radius, config.res)?;
        let pairs = PairSet::new(&grid, config.seed, config.pair_cap);
        let c_hat = check_potential_norm_bound(&default_probes(&grid)?, config.alpha, &pairs)?.max_ratio;
        let seed_norm = if config.harmonic_seed.is_zero() {
            0.0
        } else {
            second_order_norm(&config.harmonic_seed.field(&grid, sys.m)?, config.alpha, &pairs)?
        };
        let gamma_initial = config
            .gamma0
            .unwrap_or_else(|| choose_gamma0(sys, config, c_hat, seed_norm));
        let cg = *c_gamma.get_or_insert(gamma_initial);
        let c_r_gamma = estimate_c_r_gamma(sys, radius, cg, config.c_samples, config.seed)?;
        c_hist.push((radius, c_r_gamma));

        let mut gamma = gamma_initial;
        let mut doublings = 0;
        let attempt = loop {
            let a = iterate(sys, config, &grid, &pairs, gamma)?;
            if a.outcome == AttemptOutcome::Escaped && doublings < config.max_doublings {
                gamma *= 2.0;
                doublings += 1;
                continue;
            }
            break a;
        };
        attempts.push(RadiusAttempt {
            radius,
            gamma_initial,
            gamma_final: gamma,
            doublings,
            c_hat,
            c_r_gamma,
            iterations: attempt.history.len(),
            outcome: attempt.outcome,
        });
        last_outcome = attempt.outcome;
        last_gamma = gamma;
        if attempt.outcome == AttemptOutcome::Converged {
            return finish(sys, config, grid, pairs, attempt, attempts, c_hist);
        }
        radius /= 2.0;
    }
    match last_outcome {
        AttemptOutcome::Escaped => Err(Error::IterateEscaped { gamma: last_gamma }),
        _ => Err(Error::NoConvergence {
            r_min,
            last_radius: radius * 2.0,
        }),
    }
}

fn finish(
    sys: &PoissonSystem,
    config: &SolveConfig,
    grid: Arc<BallGrid>,
    pairs: PairSet,
    attempt: Attempt,
    attempts: Vec<RadiusAttempt>,
    c_r_gamma_history: Vec<(f64, f64)>,
) -> Result<SolveReport> {
    let u = attempt.solution;
    let psi = assemble_psi(sys, &u)?;
    let residual_field = defect_field(&u, &psi)?;
    let residual = residual_field.iter().flatten().fold(0.0_f64, |m, v| m.max(*v));
    let increments: Vec<f64> = attempt.history.iter().map(|r| r.increment).collect();
    let increment_ratios: Vec<f64> = increments
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect();
    let probe = probe_contraction_ratio(sys, &u, &config.harmonic_seed, attempt.gamma, config.alpha, &pairs)?;
    let empirical = if increment_ratios.len() >= 2 {
        let logs: f64 = increment_ratios.iter().map(|r| r.max(f64::MIN_POSITIVE).ln()).sum();
        (logs / increment_ratios.len() as f64).exp()
    } else {
        probe
    };
    let (v0, dv0) = origin_jet(&u)?;
    let value: Vec<f64> = (0..sys.m).map(|a| v0[a] + sys.jet.c0[a]).collect();
    let dv = DMatrix::from_fn(sys.m, sys.n, |a, i| dv0[a][i]);
    let du = sys.reconstruct_gradient(&dv);
    let gradient: Vec<Vec<f64>> = (0..sys.m).map(|a| du.row(a).iter().copied().collect()).collect();
    let value_error = (0..sys.m).map(|a| (value[a] - sys.jet.c0[a]).abs()).fold(0.0, f64::max);
    let gradient_error = (&du - &sys.jet.c1).amax();
    let solution_norm = second_order_norm(&u, config.alpha, &pairs)?;
    Ok(SolveReport {
        status: "converged",
        system: sys.name.clone(),
        radius: grid.radius(),
        gamma: attempt.gamma,
        iterations: attempt.history.len(),
        history: attempt.history,
        increment_ratios,
        empirical_contraction: empirical,
        probe_contraction: probe,
        residual,
        psi_sup: psi.sup_norm(),
        solution_norm,
        jet: JetReport {
            value,
            gradient,
            value_error,
            gradient_error,
        },
        attempts,
        c_r_gamma_history,
        grid: GridInfo {
            dim: grid.dim(),
            radius: grid.radius(),
            res: grid.res(),
            nodes: grid.len(),
            spacing: grid.spacing(),
        },
        pair_count: pairs.len(),
        solution: u,
        residual_field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduce::{reduce, JetSpec};
    use crate::systems::{minimal_surface_system, poisson_system};

    fn poisson(n: usize, c: f64) -> PoissonSystem {
        let s = poisson_system(n, 1, Arc::new(move |_| DVector::from_element(1, c)));
        reduce(&s, &JetSpec::zero(1, n)).unwrap()
    }

    #[test]
    fn psi_of_pure_source() {
        let s = poisson_system(2, 1, Arc::new(|x| DVector::from_element(1, x[0].sin())));
        let sys = reduce(&s, &JetSpec::zero(1, 2)).unwrap();
        let g = BallGrid::new(2, 1.0, 9).unwrap();
        let f = VectorField::zeros(g.clone(), 1);
        let psi = assemble_psi(&sys, &f).unwrap();
        for k in 0..g.len() {
            assert_eq!(psi.component(0).value_at(k), -g.node(k)[0].sin());
        }
        let zero = assemble_psi(&poisson(2, 0.0), &f).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
    }

    #[test]
    fn minimal_surface_psi_vanishes_on_zero() {
        let sys = reduce(&minimal_surface_system(2), &JetSpec::zero(1, 2)).unwrap();
        let g = BallGrid::new(2, 1.0, 9).unwrap();
        let psi = assemble_psi(&sys, &VectorField::zeros(g, 1)).unwrap();
        assert_eq!(psi.sup_norm(), 0.0);
    }

    #[test]
    fn jet_correction_examples() {
        let g = BallGrid::new(2, 1.0, 11).unwrap();
        let w = ScalarField::from_fn(g.clone(), |x| 1.0 + x[0] + x[0] * x[1]).unwrap();
        let mut mixed = [[0.0; 3]; 3];
        mixed[0][1] = 1.0;
        mixed[1][0] = 1.0;
        assert!(jet_correct(&w, &mixed).unwrap().sup_norm() < 1e-14);
        let sq = ScalarField::from_fn(g.clone(), |x| x[0] * x[0]).unwrap();
        let t = jet_correct(&sq, &[[0.0; 3]; 3]).unwrap();
        for k in 0..g.len() {
            assert!((t.value_at(k) - sq.value_at(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_source_fixed_point() {
        let c = 1.5;
        let sys = poisson(3, c);
        let g = BallGrid::new(3, 1.0, 13).unwrap();
        let f = VectorField::zeros(g.clone(), 1);
        let t = theta(&sys, &f, &HarmonicSeed::default()).unwrap().theta;
        assert!(jet_magnitude(&t).unwrap() < 1e-12);
        for k in 0..g.len() {
            let x = g.node(k);
            let want = c * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 6.0;
            assert!((t.component(0).value_at(k) - want).abs() < 0.02 * c / 6.0, "{x:?}");
        }
        // the exact field has zero residual
        let exact = ScalarField::from_fn(g.clone(), |x| c * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 6.0).unwrap();
        let r = residual_check(&sys, &VectorField::new(vec![exact]).unwrap()).unwrap();
        assert!(r < 1e-12, "{r}");
    }

    #[test]
    fn zero_system_converges_immediately() {
        let sys = poisson(2, 0.0);
        let cfg = SolveConfig {
            res: 11,
            ..SolveConfig::default()
        };
        let rep = picard_solve(&sys, &cfg).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.solution.sup_norm(), 0.0);
    }

    #[test]
    fn seed_validation() {
        let good = HarmonicSeed {
            components: vec![vec![
                Monomial { coeff: 1.0, powers: vec![2, 0] },
                Monomial { coeff: -1.0, powers: vec![0, 2] },
                Monomial { coeff: 0.3, powers: vec![1, 1] },
                Monomial { coeff: 2.0, powers: vec![3, 0] },
                Monomial { coeff: -6.0, powers: vec![1, 2] },
            ]],
        };
        good.validate(2, 1).unwrap();
        let h = good.hessian_at_origin(0);
        assert_eq!(h[0][0], 2.0);
        assert_eq!(h[1][1], -2.0);
        assert!((h[0][1] - 0.3).abs() < 1e-15 && (h[1][0] - 0.3).abs() < 1e-15);
        let bad = HarmonicSeed {
            components: vec![vec![Monomial { coeff: 1.0, powers: vec![2, 0] }]],
        };
        assert!(matches!(bad.validate(2, 1), Err(Error::NotHarmonic { component: 0 })));
        let deep = HarmonicSeed {
            components: vec![vec![Monomial { coeff: 1.0, powers: vec![4, 0] }]],
        };
        assert!(deep.validate(2, 1).is_err());
    }

    #[test]
    fn c_estimate_examples() {
        let mut sys = poisson(2, 0.0);
        assert_eq!(estimate_c_r_gamma(&sys, 0.1, 1.0, 100, 1).unwrap(), 0.0);
        sys.b = Arc::new(|x, _, _| DMatrix::from_row_slice(2, 2, &[x[0], 0.0, 0.0, 0.0]));
        let c = estimate_c_r_gamma(&sys, 0.1, 1.0, 2000, 1).unwrap();
        assert!(c <= 0.1 && c > 0.098, "{c}");
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = SolveConfig {
            alpha: 1.5,
            ..SolveConfig::default()
        };
        match cfg.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "alpha"),
            other => panic!("{other:?}"),
        }
    }
}
