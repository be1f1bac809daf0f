//! Built-in systems: Poisson baselines, the minimal surface equation, a
//! prescribed mean curvature variant and harmonic maps into chart targets.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::reduce::{SampleBox, SystemDef};

pub type PointMatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `Gamma^a_{bc}(u)` as one `m x m` matrix `[b, c]` per upper index `a`.
pub type ChristoffelFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// A Riemannian target in a single chart of radius `chart_radius`.
#[derive(Clone)]
pub struct TargetManifold {
    pub name: String,
    pub dim: usize,
    pub chart_radius: f64,
    pub metric: PointMatrixFn,
    pub christoffel: ChristoffelFn,
}

impl fmt::Debug for TargetManifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetManifold")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("chart_radius", &self.chart_radius)
            .finish_non_exhaustive()
    }
}

// Christoffel symbols of e^{2 s} delta from the gradient of s:
// Gamma^a_bc = delta^a_b s_c + delta^a_c s_b - delta_bc s_a
fn conformal_christoffel(ds: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let m = ds.len();
    (0..m)
        .map(|a| {
            DMatrix::from_fn(m, m, |b, c| {
                let mut v = 0.0;
                if a == b {
                    v += ds[c];
                }
                if a == c {
                    v += ds[b];
                }
                if b == c {
                    v -= ds[a];
                }
                v
            })
        })
        .collect()
}

impl TargetManifold {
    pub fn euclidean(m: usize) -> Self {
        TargetManifold {
            name: format!("euclidean{m}"),
            dim: m,
            chart_radius: f64::INFINITY,
            metric: Arc::new(move |_| DMatrix::identity(m, m)),
            christoffel: Arc::new(move |_| vec![DMatrix::zeros(m, m); m]),
        }
    }

    /// Unit sphere in stereographic coordinates, metric `4 / (1 + |u|^2)^2`.
    /// The chart is restricted to the hemisphere `|u| < 1`.
    pub fn sphere() -> Self {
        TargetManifold {
            name: "sphere".into(),
            dim: 2,
            chart_radius: 1.0,
            metric: Arc::new(|u| {
                let c = 4.0 / (1.0 + u.norm_squared()).powi(2);
                DMatrix::identity(2, 2) * c
            }),
            christoffel: Arc::new(|u| conformal_christoffel(&(u * (-2.0 / (1.0 + u.norm_squared()))))),
        }
    }

    /// Hyperbolic plane in the Poincaré disk, metric `4 / (1 - |u|^2)^2`.
    pub fn hyperbolic() -> Self {
        TargetManifold {
            name: "hyperbolic".into(),
            dim: 2,
            chart_radius: 1.0,
            metric: Arc::new(|u| {
                let c = 4.0 / (1.0 - u.norm_squared()).powi(2);
                DMatrix::identity(2, 2) * c
            }),
            christoffel: Arc::new(|u| conformal_christoffel(&(u * (2.0 / (1.0 - u.norm_squared()))))),
        }
    }

    pub fn by_name(name: &str, m: usize) -> Result<Self> {
        match name {
            "euclidean" => Ok(Self::euclidean(m)),
            "sphere" => Ok(Self::sphere()),
            "hyperbolic" => Ok(Self::hyperbolic()),
            other => Err(Error::config("system.params.target", format!("unknown target `{other}`"))),
        }
    }

    pub fn metric_at(&self, u: &DVector<f64>) -> DMatrix<f64> {
        (self.metric)(u)
    }

    pub fn christoffel_at(&self, u: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (self.christoffel)(u)
    }

    /// `h(u)(v, w)`
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        v.dot(&(self.metric_at(u) * w))
    }
}

pub type SourceFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// `Delta u = g(x)`.
pub fn poisson_system(n: usize, m: usize, g: SourceFn) -> SystemDef {
    SystemDef {
        name: "poisson".into(),
        n,
        m,
        a: Arc::new(move |_, _, _| DMatrix::identity(n, n)),
        phi: Arc::new(move |x, _, _| g(x)),
        lambda: 1.0,
        target_radius: f64::INFINITY,
        sample_box: SampleBox::default(),
    }
}

fn minimal_surface_leading(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.ncols();
    let qv = q.row(0).transpose();
    DMatrix::identity(n, n) - &qv * qv.transpose() / (1.0 + qv.norm_squared())
}

/// `sum (delta_ij - D_i u D_j u / (1 + |Du|^2)) D_ij u = 0`. Ellipticity
/// constant `1 / (1 + q_max^2)` on gradients of size at most `q_max = 1`.
pub fn minimal_surface_system(n: usize) -> SystemDef {
    SystemDef {
        name: "minimal_surface".into(),
        n,
        m: 1,
        a: Arc::new(|_, _, q| minimal_surface_leading(q)),
        phi: Arc::new(|_, _, _| DVector::zeros(1)),
        lambda: 0.5,
        target_radius: f64::INFINITY,
        sample_box: SampleBox::default(),
    }
}

pub type CurvatureFn = Arc<dyn Fn(&DVector<f64>, f64) -> f64 + Send + Sync>;

/// Minimal-surface leading part with right-hand side `H(x, u)`.
pub fn prescribed_mean_curvature_system(n: usize, h: CurvatureFn) -> SystemDef {
    SystemDef {
        name: "prescribed_mean_curvature".into(),
        phi: Arc::new(move |x, p, _| DVector::from_element(1, h(x, p[0]))),
        ..minimal_surface_system(n)
    }
}

/// `g^ij D_ij u^a = -g^ij Gamma^a_bc(u) D_i u^b D_j u^c`. `source_inverse`
/// is `g^ij(x)`, Euclidean when `None`; it is checked for positivity on
/// `samples` points of the unit ball.
pub fn harmonic_map_system(
    n: usize,
    source_inverse: Option<PointMatrixFn>,
    target: &TargetManifold,
) -> Result<SystemDef> {
    let g: PointMatrixFn = source_inverse.unwrap_or_else(|| Arc::new(move |_| DMatrix::identity(n, n)));
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a11);
    let mut lambda = f64::INFINITY;
    for k in 0..200 {
        let x = if k == 0 {
            DVector::zeros(n)
        } else {
            DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)) / (n as f64).sqrt()
        };
        let gx = g(&x);
        let eig = SymmetricEigen::new((&gx + gx.transpose()) * 0.5).eigenvalues;
        if eig.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::NotElliptic {
                eigenvalues: eig.iter().copied().collect(),
            });
        }
        lambda = lambda.min(eig.min());
    }
    let m = target.dim;
    let chr = target.christoffel.clone();
    let ga = g.clone();
    let phi = Arc::new(move |x: &DVector<f64>, p: &DVector<f64>, q: &DMatrix<f64>| {
        let gx = g(x);
        // t[(b, c)] = sum_ij g^ij q[b, i] q[c, j]
        let t = q * &gx * q.transpose();
        let gam = chr(p);
        DVector::from_fn(m, |a, _| -gam[a].component_mul(&t).sum())
    });
    Ok(SystemDef {
        name: format!("harmonic_map:{}", target.name),
        n,
        m,
        a: Arc::new(move |x, _, _| ga(x)),
        phi,
        lambda,
        target_radius: target.chart_radius,
        sample_box: SampleBox {
            x: 1.0,
            p: if target.chart_radius.is_finite() {
                0.9 * target.chart_radius
            } else {
                1.0
            },
            q: 1.0,
        },
    })
}

pub type SystemBuilder = Arc<dyn Fn(usize, &Value) -> Result<SystemDef> + Send + Sync>;

/// Systems selectable by name. Built-ins: `laplace`, `poisson`,
/// `minimal_surface`, `prescribed_mean_curvature`, `harmonic_map`.
#[derive(Clone)]
pub struct SystemRegistry {
    builders: BTreeMap<String, SystemBuilder>,
}

fn param_f64(params: &Value, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| Error::config(format!("system.params.{key}"), "expected a number")),
    }
}

fn param_usize(params: &Value, key: &str, default: usize) -> Result<usize> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_u64()
            .map(|v| v as usize)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::config(format!("system.params.{key}"), "expected a positive integer")),
    }
}

impl SystemRegistry {
    pub fn empty() -> Self {
        SystemRegistry {
            builders: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("laplace", |n, params| {
            let m = param_usize(params, "m", 1)?;
            Ok(SystemDef {
                name: "laplace".into(),
                ..poisson_system(n, m, Arc::new(move |_| DVector::zeros(m)))
            })
        });
        r.register("poisson", |n, params| {
            // constant right-hand side, one value per component
            let c: Vec<f64> = match params.get("c") {
                None | Some(Value::Null) => vec![0.0],
                Some(Value::Number(v)) => vec![v.as_f64().unwrap_or(0.0)],
                Some(v) => serde_json::from_value(v.clone())
                    .map_err(|_| Error::config("system.params.c", "expected a number or an array of numbers"))?,
            };
            if c.is_empty() {
                return Err(Error::config("system.params.c", "must not be empty"));
            }
            let m = c.len();
            let c = DVector::from_vec(c);
            Ok(poisson_system(n, m, Arc::new(move |_| c.clone())))
        });
        r.register("minimal_surface", |n, _| Ok(minimal_surface_system(n)));
        r.register("prescribed_mean_curvature", |n, params| {
            let h = param_f64(params, "H", 0.0)?;
            Ok(prescribed_mean_curvature_system(n, Arc::new(move |_, _| h)))
        });
        r.register("harmonic_map", |n, params| {
            let name = match params.get("target") {
                None | Some(Value::Null) => "sphere",
                Some(v) => v
                    .as_str()
                    .ok_or_else(|| Error::config("system.params.target", "expected a string"))?,
            };
            let m = param_usize(params, "m", 2)?;
            harmonic_map_system(n, None, &TargetManifold::by_name(name, m)?)
        });
        r
    }

    /// Adds or replaces a builder. Builders receive the source dimension and
    /// the `params` object of the run configuration.
    pub fn register(
        &mut self,
        name: &str,
        builder: impl Fn(usize, &Value) -> Result<SystemDef> + Send + Sync + 'static,
    ) {
        self.builders.insert(name.to_string(), Arc::new(builder));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, n: usize, params: &Value) -> Result<SystemDef> {
        let b = self
            .builders
            .get(name)
            .ok_or_else(|| Error::UnknownSystem(name.to_string()))?;
        b(n, params)
    }
}

impl Default for SystemRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
