//! The `verify-lemmas` suite: the Hölder-norm inequalities on a battery of
//! analytic functions, plus the potential-theory sweeps.

use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;
use crate::grid::{BallGrid, MultiIndex, PairSet, Point, ScalarField};
use crate::holder::{check_banach_algebra, check_norm_comparison, check_taylor_remainder, holder_norm};
use crate::potential::{check_potential_norm_bound, check_truncated_kernel_bound, default_probes};

type Profile = fn(f64, usize) -> f64;

// k-th derivative of the profile at t
fn exp_k(t: f64, _: usize) -> f64 {
    t.exp()
}

fn sin_k(t: f64, k: usize) -> f64 {
    match k % 4 {
        0 => t.sin(),
        1 => t.cos(),
        2 => -t.sin(),
        _ => -t.cos(),
    }
}

fn cos_k(t: f64, k: usize) -> f64 {
    sin_k(t, k + 1)
}

fn cosh_k(t: f64, k: usize) -> f64 {
    if k.is_multiple_of(2) {
        t.cosh()
    } else {
        t.sinh()
    }
}

/// `g(a . x + c)` with all derivatives.
fn plane_wave(grid: &Arc<BallGrid>, g: Profile, a: [f64; 3], c: f64) -> Result<ScalarField> {
    ScalarField::analytic(grid.clone(), move |x: &Point, b: MultiIndex| {
        let t = a[0] * x[0] + a[1] * x[1] + a[2] * x[2] + c;
        let mut coef = 1.0;
        for (ai, &e) in a.iter().zip(b.0.iter()) {
            coef *= ai.powi(e as i32);
        }
        coef * g(t, b.order())
    })
}

fn monomial(grid: &Arc<BallGrid>, e: [u8; 3]) -> Result<ScalarField> {
    ScalarField::analytic(grid.clone(), move |x: &Point, b: MultiIndex| {
        let mut v = 1.0;
        for i in 0..3 {
            if b.0[i] > e[i] {
                return 0.0;
            }
            let mut fall = 1.0;
            for k in 0..b.0[i] {
                fall *= (e[i] - k) as f64;
            }
            v *= fall * x[i].powi((e[i] - b.0[i]) as i32);
        }
        v
    })
}

/// Analytic test functions: monomials of degree 1 to 3 and plane waves
/// built from `exp`, `sin`, `cos`, `cosh`. At least 20 in either dimension.
pub fn analytic_battery(grid: &Arc<BallGrid>) -> Result<Vec<(String, ScalarField)>> {
    let dim = grid.dim();
    let mut out = Vec::new();
    for order in 1..=3 {
        for b in MultiIndex::of_order(dim, order) {
            out.push((format!("x^{b}"), monomial(grid, b.0)?));
        }
    }
    let z = if dim == 3 { 0.4 } else { 0.0 };
    let waves: [(&str, Profile, [f64; 3], f64); 12] = [
        ("exp", exp_k, [1.0, 0.0, 0.0], 0.0),
        ("exp", exp_k, [0.5, -1.2, z], 0.0),
        ("exp", exp_k, [-2.0, 0.7, z], 0.3),
        ("exp", exp_k, [0.0, 1.0, 0.0], -0.5),
        ("sin", sin_k, [1.0, 0.0, 0.0], 0.0),
        ("sin", sin_k, [2.0, 1.0, z], 0.5),
        ("sin", sin_k, [0.3, -3.0, -z], 1.0),
        ("sin", sin_k, [-1.0, -1.0, z], 0.2),
        ("cos", cos_k, [1.5, 0.5, z], 0.0),
        ("cos", cos_k, [0.0, 2.5, 0.0], -0.2),
        ("cosh", cosh_k, [1.0, 1.0, z], 0.0),
        ("cosh", cosh_k, [-0.8, 0.3, z], 0.4),
    ];
    for (name, g, a, c) in waves {
        out.push((format!("{name}({:?} . x + {c})", &a[..dim]), plane_wave(grid, g, a, c)?));
    }
    Ok(out)
}

/// `f - f(0) - Df(0) . x`, keeping the oracle.
pub fn strip_jet(f: &ScalarField) -> Result<ScalarField> {
    let oracle = f.analytic_oracle().expect("battery fields are analytic").clone();
    let dim = f.grid().dim();
    let o = [0.0; 3];
    let v0 = oracle(&o, MultiIndex::ZERO);
    let g0: Vec<f64> = (0..dim).map(|i| oracle(&o, MultiIndex::first(i))).collect();
    ScalarField::analytic(f.grid().clone(), move |x: &Point, b: MultiIndex| match b.order() {
        0 => oracle(x, b) - v0 - (0..g0.len()).map(|i| g0[i] * x[i]).sum::<f64>(),
        1 => {
            let i = b.0.iter().position(|&e| e == 1).expect("first order");
            oracle(x, b) - g0[i]
        }
        _ => oracle(x, b),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaResult {
    pub name: &'static str,
    pub pass: bool,
    pub checked: usize,
    pub violations: Vec<String>,
    pub measured: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaSuiteReport {
    pub dim: usize,
    pub radius: f64,
    pub alpha: f64,
    pub res: usize,
    pub pair_count: usize,
    pub functions: usize,
    pub lemmas: Vec<LemmaResult>,
}

impl LemmaSuiteReport {
    pub fn all_pass(&self) -> bool {
        self.lemmas.iter().all(|l| l.pass)
    }
}

fn result(name: &'static str, checked: usize, violations: Vec<String>, measured: Value) -> LemmaResult {
    LemmaResult {
        name,
        pass: violations.is_empty(),
        checked,
        violations,
        measured,
    }
}

pub fn run_suite(dim: usize, radius: f64, alpha: f64, res: usize, seed: u64, pair_cap: usize) -> Result<LemmaSuiteReport> {
    crate::holder::check_alpha(alpha)?;
    let grid = BallGrid::new(dim, radius, res)?;
    let pairs = PairSet::new(&grid, seed, pair_cap);
    let battery = analytic_battery(&grid)?;
    let mut lemmas = Vec::new();

    // coordinate functions have norm 3R
    let mut worst = 0.0_f64;
    let mut bad = Vec::new();
    for i in 0..dim {
        let f = ScalarField::from_fn(grid.clone(), |x| x[i])?;
        let err = (holder_norm(&f, alpha, &pairs)?.weighted - 3.0 * radius).abs();
        worst = worst.max(err);
        if err > 1e-12 {
            bad.push(format!("x{}", i + 1));
        }
    }
    lemmas.push(result("coordinate_norm", dim, bad, json!({ "max_error": worst })));

    let mut bad = Vec::new();
    for (name, f) in &battery {
        if !check_taylor_remainder(f, alpha, &pairs)? {
            bad.push(name.clone());
        }
    }
    lemmas.push(result("taylor_remainder", battery.len(), bad, Value::Null));

    let mut bad = Vec::new();
    for k in 0..battery.len() {
        let (nf, f) = &battery[k];
        let (ng, g) = &battery[(k + 1) % battery.len()];
        if !check_banach_algebra(f, g, alpha, &pairs)? {
            bad.push(format!("{nf} * {ng}"));
        }
    }
    lemmas.push(result("banach_algebra", battery.len(), bad, Value::Null));

    let mut bad = Vec::new();
    let mut checked = 0;
    for (name, f) in &battery {
        let g = strip_jet(f)?;
        if g.sup_norm() == 0.0 {
            continue;
        }
        checked += 1;
        if !check_norm_comparison(&g, alpha, &pairs)? {
            bad.push(name.clone());
        }
    }
    lemmas.push(result("norm_comparison", checked, bad, Value::Null));

    // truncated kernel integrals at three radii; the largest value per
    // radius should not move with R
    let radii = [radius, radius / 2.0, radius / 4.0];
    let mut per_radius = Vec::new();
    for &r in &radii {
        let g = BallGrid::new(dim, r, res)?;
        let mut m = 0.0_f64;
        for x in [[0.0, 0.0, 0.0], [r / 4.0, 0.0, 0.0], [-r / 3.0, r / 5.0, 0.0]] {
            for rho in [r / 8.0, r / 4.0, r / 2.0] {
                for i in 0..dim {
                    for j in 0..dim {
                        m = m.max(check_truncated_kernel_bound(&g, &x, rho, i, j).abs());
                    }
                }
            }
        }
        per_radius.push(m);
    }
    let (lo, hi) = spread(&per_radius);
    let bad = if hi <= 3.0 * lo + 1e-9 {
        vec![]
    } else {
        vec![format!("spread {lo}..{hi}")]
    };
    lemmas.push(result(
        "truncated_kernel",
        radii.len(),
        bad,
        json!({ "radii": radii, "max_abs": per_radius }),
    ));

    let radii = [radius, radius / 2.0, radius / 4.0, radius / 8.0];
    let mut ratios = Vec::new();
    let mut tables = Vec::new();
    for &r in &radii {
        let g = BallGrid::new(dim, r, res)?;
        let p = PairSet::new(&g, seed, pair_cap);
        let t = check_potential_norm_bound(&default_probes(&g)?, alpha, &p)?;
        ratios.push(t.max_ratio);
        tables.push(t);
    }
    let (lo, hi) = spread(&ratios);
    let bad = if hi < 3.0 * lo {
        vec![]
    } else {
        vec![format!("ratio spread {lo}..{hi}")]
    };
    lemmas.push(result("potential_norm_bound", radii.len(), bad, serde_json::to_value(&tables)?));

    Ok(LemmaSuiteReport {
        dim,
        radius,
        alpha,
        res,
        pair_count: pairs.len(),
        functions: battery.len(),
        lemmas,
    })
}

fn spread(v: &[f64]) -> (f64, f64) {
    (
        v.iter().copied().fold(f64::INFINITY, f64::min),
        v.iter().copied().fold(0.0, f64::max),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_oracles_match_differences() {
        for dim in [2, 3] {
            let g = BallGrid::new(dim, 1.0, 5).unwrap();
            let b = analytic_battery(&g).unwrap();
            assert!(b.len() >= 20);
            let x = [0.2, -0.3, 0.1];
            let e = 1e-5;
            for (name, f) in &b {
                let o = f.analytic_oracle().unwrap();
                for i in 0..dim {
                    let mut p = x;
                    let mut m = x;
                    p[i] += e;
                    m[i] -= e;
                    let fd = (o(&p, MultiIndex::ZERO) - o(&m, MultiIndex::ZERO)) / (2.0 * e);
                    assert!((fd - o(&x, MultiIndex::first(i))).abs() < 1e-7, "{name}");
                    for j in 0..dim {
                        let fd = (o(&p, MultiIndex::first(j)) - o(&m, MultiIndex::first(j))) / (2.0 * e);
                        assert!((fd - o(&x, MultiIndex::second(i, j))).abs() < 1e-6, "{name}");
                    }
                }
            }
        }
    }

    #[test]
    fn stripped_jet_vanishes() {
        let g = BallGrid::new(2, 1.0, 7).unwrap();
        for (_, f) in analytic_battery(&g).unwrap() {
            let s = strip_jet(&f).unwrap();
            let o = s.analytic_oracle().unwrap();
            assert!(o(&[0.0; 3], MultiIndex::ZERO).abs() < 1e-15);
            assert!(o(&[0.0; 3], MultiIndex::first(1)).abs() < 1e-15);
        }
    }
}
