//! Discrete weighted Hölder norms
//!
//! `||f||_a = sup |f| + (2R)^a H_a[f]` where the seminorm `H_a` is the maximum
//! of `|f(x) - f(x')| / |x - x'|^a` over a [`PairSet`], and the jet norms
//! `||f||^(l,a) = max_{|beta| = l} ||d^beta f||_a` (max over components for
//! vector fields).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{fd_derivative, MultiIndex, PairSet, ScalarField, VectorField};
use crate::par;

// relative slack for inequalities that hold exactly in real arithmetic
const ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderReport {
    pub sup_norm: f64,
    pub seminorm: f64,
    pub weighted: f64,
    pub alpha: f64,
    pub pair_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JetNormReport {
    /// `||f||^(l,a)` for `l = 0, 1, 2`.
    pub orders: [f64; 3],
    pub alpha: f64,
    pub pair_count: usize,
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// `max_p |v_i - v_j| / |x_i - x_j|^a` over the pairs.
pub fn seminorm(values: &[f64], alpha: f64, pairs: &PairSet) -> f64 {
    let list = pairs.pairs();
    par::max_range(list.len(), |p| {
        let (i, j) = list[p];
        (values[i as usize] - values[j as usize]).abs() / pairs.distance(p).powf(alpha)
    })
}

/// Weighted norm of raw node values on a ball of radius `radius`.
pub fn holder_norm_values(values: &[f64], radius: f64, alpha: f64, pairs: &PairSet) -> Result<HolderReport> {
    check_alpha(alpha)?;
    if pairs.is_empty() {
        return Err(Error::EmptyPairSet);
    }
    let sup_norm = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let semi = seminorm(values, alpha, pairs);
    Ok(HolderReport {
        sup_norm,
        seminorm: semi,
        weighted: sup_norm + (2.0 * radius).powf(alpha) * semi,
        alpha,
        pair_count: pairs.len(),
    })
}

pub fn holder_norm(field: &ScalarField, alpha: f64, pairs: &PairSet) -> Result<HolderReport> {
    holder_norm_values(field.values(), field.grid().radius(), alpha, pairs)
}

/// `||f||^(l,a)` for a single order `l <= 2`.
pub fn order_norm(field: &ScalarField, order: usize, alpha: f64, pairs: &PairSet) -> Result<f64> {
    if order > 2 {
        return Err(Error::DerivativeOrder(order));
    }
    let mut best = 0.0_f64;
    for beta in MultiIndex::of_order(field.grid().dim(), order) {
        let d = fd_derivative(field, beta)?;
        best = best.max(holder_norm(&d, alpha, pairs)?.weighted);
    }
    Ok(best)
}

pub fn jet_norm(field: &ScalarField, alpha: f64, pairs: &PairSet) -> Result<JetNormReport> {
    let mut orders = [0.0; 3];
    for (l, o) in orders.iter_mut().enumerate() {
        *o = order_norm(field, l, alpha, pairs)?;
    }
    Ok(JetNormReport {
        orders,
        alpha,
        pair_count: pairs.len(),
    })
}

/// Component-wise maximum of [`jet_norm`].
pub fn jet_norm_vector(field: &VectorField, alpha: f64, pairs: &PairSet) -> Result<JetNormReport> {
    let mut orders = [0.0_f64; 3];
    for c in field.components() {
        let r = jet_norm(c, alpha, pairs)?;
        for (o, v) in orders.iter_mut().zip(r.orders) {
            *o = o.max(v);
        }
    }
    Ok(JetNormReport {
        orders,
        alpha,
        pair_count: pairs.len(),
    })
}

/// `||f||^(2,a)` of a vector field, the solver's working norm.
pub fn second_order_norm(field: &VectorField, alpha: f64, pairs: &PairSet) -> Result<f64> {
    let mut best = 0.0_f64;
    for c in field.components() {
        best = best.max(order_norm(c, 2, alpha, pairs)?);
    }
    Ok(best)
}

/// `||fg||_a <= ||f||_a ||g||_a` on the shared pair set.
pub fn check_banach_algebra(f: &ScalarField, g: &ScalarField, alpha: f64, pairs: &PairSet) -> Result<bool> {
    let fg = f.product(g)?;
    let lhs = holder_norm(&fg, alpha, pairs)?.weighted;
    let rhs = holder_norm(f, alpha, pairs)?.weighted * holder_norm(g, alpha, pairs)?.weighted;
    Ok(lhs <= rhs * (1.0 + ROUNDING) + f64::MIN_POSITIVE)
}

/// Second-order Taylor remainder bound on every pair, in both directions:
/// `|f(x') - T_2 f(x; x')| <= 1/2 (sum_{|beta|=2} H_a[d^beta f]) |x' - x|^(2+a)`.
pub fn check_taylor_remainder(field: &ScalarField, alpha: f64, pairs: &PairSet) -> Result<bool> {
    check_alpha(alpha)?;
    let oracle = field
        .analytic_oracle()
        .ok_or(Error::MissingAnalytic("the Taylor remainder check"))?
        .clone();
    let grid = field.grid().clone();
    let dim = grid.dim();
    let mut hsum = 0.0;
    for beta in MultiIndex::of_order(dim, 2) {
        hsum += seminorm(fd_derivative(field, beta)?.values(), alpha, pairs);
    }
    let list = pairs.pairs();
    let worst = par::max_range(list.len(), |p| {
        let (i, j) = list[p];
        let mut excess = f64::NEG_INFINITY;
        for (a, b) in [(i, j), (j, i)] {
            let x = grid.node(a as usize);
            let xp = grid.node(b as usize);
            let h = [xp[0] - x[0], xp[1] - x[1], xp[2] - x[2]];
            let mut taylor = oracle(x, MultiIndex::ZERO);
            for k in 0..dim {
                taylor += oracle(x, MultiIndex::first(k)) * h[k];
                for l in 0..dim {
                    taylor += 0.5 * oracle(x, MultiIndex::second(k, l)) * h[k] * h[l];
                }
            }
            let fx = oracle(xp, MultiIndex::ZERO);
            let lhs = (fx - taylor).abs();
            let rhs = 0.5 * hsum * pairs.distance(p).powf(2.0 + alpha);
            let slack = ROUNDING * (1.0 + fx.abs() + taylor.abs());
            excess = excess.max(lhs - rhs - slack);
        }
        excess.max(0.0)
    });
    Ok(worst == 0.0)
}

/// Norm comparison in the zero-jet space:
/// `||f||_a <= (3nR)^2 ||f||^(2,a)` and `||f||^(1,a) <= 3nR ||f||^(2,a)`.
///
/// Fails with [`Error::JetNotZero`] unless `f(0) = 0` and `Df(0) = 0`.
pub fn check_norm_comparison(field: &ScalarField, alpha: f64, pairs: &PairSet) -> Result<bool> {
    check_alpha(alpha)?;
    let grid = field.grid();
    let o = grid.origin();
    let value = field.value_at(o).abs();
    let mut gradient = 0.0_f64;
    for i in 0..grid.dim() {
        gradient = gradient.max(field.derivative_at(o, MultiIndex::first(i))?.abs());
    }
    let scale = 1.0 + field.sup_norm();
    if value > 1e-12 * scale || gradient > 1e-10 * scale {
        return Err(Error::JetNotZero { value, gradient });
    }
    let r = jet_norm(field, alpha, pairs)?;
    let c = 3.0 * grid.dim() as f64 * grid.radius();
    let ok0 = r.orders[0] <= c * c * r.orders[2] * (1.0 + ROUNDING) + 1e-300;
    let ok1 = r.orders[1] <= c * r.orders[2] * (1.0 + ROUNDING) + 1e-300;
    Ok(ok0 && ok1)
}
