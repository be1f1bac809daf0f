//! Upper bounds for the Kobayashi-type metric built from harmonic disks:
//! `K(p, X) = inf 1/R` over harmonic maps `u: D_R -> M` conformal at 0 with
//! `u(0) = p` and `du/dx(0) = X`.
//!
//! Every map the solver exhibits lowers the infimum, so the search only ever
//! yields upper bounds. A failed search is reported as inconclusive.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::picard::{picard_solve, SolveConfig};
use crate::reduce::{reduce, JetSpec};
use crate::systems::{harmonic_map_system, TargetManifold};

#[derive(Debug, Clone)]
pub struct KobayashiQuery {
    pub target: TargetManifold,
    pub p: DVector<f64>,
    pub x: DVector<f64>,
    pub r_start: f64,
    pub growth: f64,
    pub max_steps: usize,
    pub conformality_tol: f64,
    /// Grid and iteration settings; `R0` and `R_min` are set per probe.
    pub solve: SolveConfig,
}

impl KobayashiQuery {
    pub fn new(target: TargetManifold, p: DVector<f64>, x: DVector<f64>) -> Self {
        KobayashiQuery {
            target,
            p,
            x,
            r_start: 0.25,
            growth: 1.5,
            max_steps: 8,
            conformality_tol: 1e-8,
            solve: SolveConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.target.dim;
        if self.p.len() != m || self.x.len() != m {
            return Err(Error::config("p", format!("p and X must have {m} components")));
        }
        if self.x.iter().chain(self.p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::config("X", "non-finite component"));
        }
        if self.p.norm() >= self.target.chart_radius {
            return Err(Error::config("p", "point lies outside the chart"));
        }
        if !(self.r_start > 0.0) {
            return Err(Error::config("r_start", "must be positive"));
        }
        if !(self.growth > 1.0) {
            return Err(Error::config("growth", "must exceed 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps", "must be positive"));
        }
        if !(self.conformality_tol > 0.0) {
            return Err(Error::config("conformality_tol", "must be positive"));
        }
        Ok(())
    }
}

/// `Y` with `h(Y, Y) = h(X, X)` and `h(X, Y) = 0` at `p`, by metric
/// Gram-Schmidt on the coordinate vector least aligned with `X`.
pub fn orthogonal_partner(target: &TargetManifold, p: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    let m = target.dim;
    if m < 2 {
        return Err(Error::NoPartner("target dimension is 1".into()));
    }
    let xx = target.inner(p, x, x);
    if !(xx > 0.0) {
        return Err(Error::NoPartner("X is zero".into()));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for k in 0..m {
        let e = DVector::from_fn(m, |i, _| if i == k { 1.0 } else { 0.0 });
        let ee = target.inner(p, &e, &e);
        let cos = target.inner(p, &e, x).abs() / (ee * xx).sqrt();
        if best.as_ref().is_none_or(|(c, _)| cos < *c) {
            best = Some((cos, e));
        }
    }
    let (_, e) = best.expect("m >= 2");
    let v = &e - x * (target.inner(p, &e, x) / xx);
    let vv = target.inner(p, &v, &v);
    Ok(v * (xx / vv).sqrt())
}

/// `|h(u_x, u_x) - h(u_y, u_y)| + |h(u_x, u_y)|` at `u0`, with `du` the
/// `m x 2` derivative.
pub fn conformality_defect(target: &TargetManifold, u0: &DVector<f64>, du: &DMatrix<f64>) -> f64 {
    let ux = du.column(0).into_owned();
    let uy = du.column(1).into_owned();
    (target.inner(u0, &ux, &ux) - target.inner(u0, &uy, &uy)).abs() + target.inner(u0, &ux, &uy).abs()
}

/// Whether a map with value `u0` and derivative `du` at 0 passes the
/// conformality test.
pub fn accept_map(target: &TargetManifold, u0: &DVector<f64>, du: &DMatrix<f64>, tol: f64) -> bool {
    conformality_defect(target, u0, du) <= tol
}

/// The affine map `p + x X + y Y` is harmonic for every radius when the
/// chart is unbounded and the quadratic term vanishes along it; checked on
/// a fixed set of points out to distance `10^4`.
pub fn linear_certificate(target: &TargetManifold, p: &DVector<f64>, c1: &DMatrix<f64>) -> Result<bool> {
    if target.chart_radius.is_finite() {
        return Ok(false);
    }
    let sys = harmonic_map_system(2, None, target)?;
    for r in [0.0, 1.0, 10.0, 1e2, 1e3, 1e4] {
        for k in 0..8 {
            let t = k as f64 * std::f64::consts::FRAC_PI_4;
            let x = DVector::from_vec(vec![r * t.cos(), r * t.sin()]);
            let u = p + c1 * &x;
            let phi = sys.eval_phi(&x, &u, c1);
            if phi.amax() > 1e-12 * (1.0 + c1.norm_squared()) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeOutcome {
    pub radius: f64,
    pub success: bool,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub conformality_defect: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateRule {
    ZeroVector,
    LinearCertificate,
    Search,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct KobayashiEstimate {
    /// An upper bound for `K(p, X)`; `None` when no radius succeeded.
    pub upper_bound: Option<f64>,
    pub r_best: Option<f64>,
    pub rule: EstimateRule,
    pub partner: Option<Vec<f64>>,
    pub probes: Vec<ProbeOutcome>,
    /// Every radius below a successful one also succeeded.
    pub monotone: bool,
    pub note: &'static str,
}

const NOTE: &str = "upper bound only: the infimum runs over all harmonic maps, the search exhibits some";

pub fn estimate(query: &KobayashiQuery) -> Result<KobayashiEstimate> {
    query.validate()?;
    let empty = |rule, partner| KobayashiEstimate {
        upper_bound: Some(0.0),
        r_best: None,
        rule,
        partner,
        probes: Vec::new(),
        monotone: true,
        note: NOTE,
    };
    if query.x.iter().all(|v| *v == 0.0) {
        return Ok(empty(EstimateRule::ZeroVector, None));
    }
    let target = &query.target;
    let y = orthogonal_partner(target, &query.p, &query.x)?;
    let m = target.dim;
    let c1 = DMatrix::from_fn(m, 2, |a, j| if j == 0 { query.x[a] } else { y[a] });
    let partner = Some(y.iter().copied().collect());
    if linear_certificate(target, &query.p, &c1)? {
        return Ok(empty(EstimateRule::LinearCertificate, partner));
    }
    let system = harmonic_map_system(2, None, target)?;
    let jet = JetSpec {
        c0: query.p.clone(),
        c1,
    };
    let sys = reduce(&system, &jet)?;
    let mut probes = Vec::with_capacity(query.max_steps);
    let mut radius = query.r_start;
    for _ in 0..query.max_steps {
        let cfg = SolveConfig {
            r0: radius,
            r_min: Some(0.99 * radius),
            ..query.solve.clone()
        };
        let outcome = match picard_solve(&sys, &cfg) {
            Ok(rep) => {
                let u0 = DVector::from_vec(rep.jet.value.clone());
                let du = DMatrix::from_fn(m, 2, |a, j| rep.jet.gradient[a][j]);
                let defect = conformality_defect(target, &u0, &du);
                ProbeOutcome {
                    radius,
                    success: rep.radius == radius && defect <= query.conformality_tol,
                    iterations: Some(rep.iterations),
                    residual: Some(rep.residual),
                    conformality_defect: Some(defect),
                    error: None,
                }
            }
            Err(e @ (Error::NoConvergence { .. } | Error::IterateEscaped { .. })) => ProbeOutcome {
                radius,
                success: false,
                iterations: None,
                residual: None,
                conformality_defect: None,
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        };
        probes.push(outcome);
        radius *= query.growth;
    }
    let r_best = probes.iter().filter(|p| p.success).map(|p| p.radius).fold(None, |a: Option<f64>, r| {
        Some(a.map_or(r, |a| a.max(r)))
    });
    let monotone = match r_best {
        Some(best) => probes.iter().filter(|p| p.radius <= best).all(|p| p.success),
        None => true,
    };
    Ok(KobayashiEstimate {
        upper_bound: r_best.map(|r| 1.0 / r),
        r_best,
        rule: if r_best.is_some() {
            EstimateRule::Search
        } else {
            EstimateRule::Inconclusive
        },
        partner,
        probes,
        monotone,
        note: NOTE,
    })
}
