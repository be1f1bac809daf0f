//! Reduction of `sum a^ij(x, u, Du) D_ij u = phi(x, u, Du)` with a
//! prescribed 1-jet at the origin to Poisson form `Delta v = -Psi`.
//!
//! Two steps: `u = v + c0 + c1 x` moves the jet to zero, then `x~ = P x` with
//! `P A0 P^T = I`, `A0 = a(0, c0, c1)`, turns the frozen leading part into
//! the Laplacian. What is left over is collected in `b^ij`, which vanishes
//! at `(0, 0, 0)`.
//!
//! Gradients are `m x n` matrices, `q[(a, i)] = d_i u^a`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type MatrixOracle = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DMatrix<f64>) -> DMatrix<f64> + Send + Sync>;
pub type VectorOracle = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DMatrix<f64>) -> DVector<f64> + Send + Sync>;

/// Box on which a system's coefficients are sampled: `|x| <= x`, `|p| <= p`,
/// `|q| <= q` (Frobenius).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBox {
    pub x: f64,
    pub p: f64,
    pub q: f64,
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox { x: 1.0, p: 1.0, q: 1.0 }
    }
}

#[derive(Clone)]
pub struct SystemDef {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub a: MatrixOracle,
    pub phi: VectorOracle,
    /// Ellipticity constant on `sample_box`.
    pub lambda: f64,
    /// Radius `R'` of the chart ball the solution must stay in.
    pub target_radius: f64,
    pub sample_box: SampleBox,
}

impl fmt::Debug for SystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDef")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("lambda", &self.lambda)
            .field("target_radius", &self.target_radius)
            .finish_non_exhaustive()
    }
}

impl SystemDef {
    pub fn eval_a(&self, x: &DVector<f64>, p: &DVector<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
        (self.a)(x, p, q)
    }

    pub fn eval_phi(&self, x: &DVector<f64>, p: &DVector<f64>, q: &DMatrix<f64>) -> DVector<f64> {
        (self.phi)(x, p, q)
    }

    pub fn zero_args(&self) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
        (
            DVector::zeros(self.n),
            DVector::zeros(self.m),
            DMatrix::zeros(self.m, self.n),
        )
    }
}

/// Value `c0` and gradient `c1` (`m x n`) prescribed at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct JetSpec {
    pub c0: DVector<f64>,
    pub c1: DMatrix<f64>,
}

impl JetSpec {
    pub fn zero(m: usize, n: usize) -> Self {
        JetSpec {
            c0: DVector::zeros(m),
            c1: DMatrix::zeros(m, n),
        }
    }

    /// `c0 + c1 x`
    pub fn affine(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c0 + &self.c1 * x
    }

    pub fn is_zero(&self) -> bool {
        self.c0.iter().chain(self.c1.iter()).all(|v| *v == 0.0)
    }

    /// `max_{|x| <= R} |c0 + c1 x|`, bounded by `|c0| + ||c1||_2 R`.
    pub fn reach(&self, radius: f64) -> f64 {
        let s = if self.c1.nrows() == 0 || self.c1.ncols() == 0 {
            0.0
        } else {
            self.c1.singular_values().max()
        };
        self.c0.norm() + s * radius
    }
}

/// `a'(x, p, q) = a(x, p + c0 + c1 x, q + c1)` and likewise for `phi`.
pub fn shift_jet(system: &SystemDef, jet: &JetSpec) -> Result<SystemDef> {
    if jet.c0.len() != system.m || jet.c1.shape() != (system.m, system.n) {
        return Err(Error::config(
            "jet",
            format!("expected c0 of length {} and c1 of shape {}x{}", system.m, system.m, system.n),
        ));
    }
    let norm = jet.c0.norm();
    if norm >= system.target_radius {
        return Err(Error::JetOutsideTarget {
            norm,
            radius: system.target_radius,
        });
    }
    if jet.is_zero() {
        return Ok(system.clone());
    }
    let (a, phi) = (system.a.clone(), system.phi.clone());
    let (j1, j2) = (jet.clone(), jet.clone());
    Ok(SystemDef {
        a: Arc::new(move |x, p, q| a(x, &(p + j1.affine(x)), &(q + &j1.c1))),
        phi: Arc::new(move |x, p, q| phi(x, &(p + j2.affine(x)), &(q + &j2.c1))),
        ..system.clone()
    })
}

/// Poisson form in the coordinates `x~ = P x`:
/// `psi(x~, p, q~) = phi'(P^-1 x~, p, q~ P)` and
/// `b(x~, p, q~) = P (A0 - a'(P^-1 x~, p, q~ P)) P^T`.
#[derive(Clone)]
pub struct PoissonSystem {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub psi: VectorOracle,
    pub b: MatrixOracle,
    pub p: DMatrix<f64>,
    pub p_inv: DMatrix<f64>,
    pub a0: DMatrix<f64>,
    pub jet: JetSpec,
    pub target_radius: f64,
    pub original: Option<SystemDef>,
}

impl fmt::Debug for PoissonSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PoissonSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("p", &self.p)
            .field("jet", &self.jet)
            .finish_non_exhaustive()
    }
}

impl PoissonSystem {
    pub fn eval_psi(&self, x: &DVector<f64>, p: &DVector<f64>, q: &DMatrix<f64>) -> DVector<f64> {
        (self.psi)(x, p, q)
    }

    pub fn eval_b(&self, x: &DVector<f64>, p: &DVector<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
        (self.b)(x, p, q)
    }

    /// Original coordinates of a point `x~`.
    pub fn to_original(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.p_inv * x
    }

    /// `u(x) = v(x~) + c0 + c1 x`.
    pub fn reconstruct_value(&self, x_tilde: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        v + self.jet.affine(&self.to_original(x_tilde))
    }

    /// `Du(x) = D~v(x~) P + c1`.
    pub fn reconstruct_gradient(&self, dv: &DMatrix<f64>) -> DMatrix<f64> {
        dv * &self.p + &self.jet.c1
    }
}

/// Symmetric inverse square root of the frozen leading matrix.
pub fn diagonalize(shifted: &SystemDef) -> Result<PoissonSystem> {
    let (x0, p0, q0) = shifted.zero_args();
    let a0 = shifted.eval_a(&x0, &p0, &q0);
    if a0.shape() != (shifted.n, shifted.n) || a0.iter().any(|v| !v.is_finite()) {
        return Err(Error::OracleFailure {
            node: vec![0.0; shifted.n],
            what: format!("a(0, 0, 0) is not a finite {0}x{0} matrix", shifted.n),
        });
    }
    let sym = (&a0 + a0.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::NotElliptic { eigenvalues });
    }
    let v = &eig.eigenvectors;
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let p = v * inv_sqrt * v.transpose();
    let p_inv = v * sqrt * v.transpose();

    let (a, phi) = (shifted.a.clone(), shifted.phi.clone());
    let (pa, pia, pp) = (p.clone(), p_inv.clone(), p.clone());
    let (pb, pib) = (p.clone(), p_inv.clone());
    let a0c = sym.clone();
    let psi: VectorOracle = Arc::new(move |x, u, q| phi(&(&pia * x), u, &(q * &pa)));
    let b: MatrixOracle = Arc::new(move |x, u, q| {
        let a_here = a(&(&pib * x), u, &(q * &pb));
        let a_here = (&a_here + a_here.transpose()) * 0.5;
        &pp * (&a0c - a_here) * pp.transpose()
    });
    Ok(PoissonSystem {
        name: shifted.name.clone(),
        n: shifted.n,
        m: shifted.m,
        psi,
        b,
        p,
        p_inv,
        a0: sym,
        jet: JetSpec::zero(shifted.m, shifted.n),
        target_radius: shifted.target_radius,
        original: None,
    })
}

/// `shift_jet` then `diagonalize`, keeping the original system and jet.
pub fn reduce(system: &SystemDef, jet: &JetSpec) -> Result<PoissonSystem> {
    let shifted = shift_jet(system, jet)?;
    let mut out = diagonalize(&shifted)?;
    out.jet = jet.clone();
    out.original = Some(system.clone());
    Ok(out)
}

fn sample_ball(rng: &mut ChaCha8Rng, len: usize, radius: f64) -> DVector<f64> {
    if len == 0 {
        return DVector::zeros(0);
    }
    let dir = DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0));
    let norm = dir.norm();
    if norm == 0.0 {
        return dir;
    }
    let r = radius * rng.random::<f64>().powf(1.0 / len as f64);
    dir * (r / norm)
}

/// Smallest `xi^T a xi / |xi|^2` seen over `samples` random draws of
/// `(x, p, q, xi)` from the system's sample box. Fails with the offending
/// eigenvalues when it drops below `lambda`.
pub fn check_ellipticity(system: &SystemDef, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = system.sample_box;
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let x = sample_ball(&mut rng, system.n, b.x);
        let p = sample_ball(&mut rng, system.m, b.p);
        let qv = sample_ball(&mut rng, system.m * system.n, b.q);
        let q = DMatrix::from_column_slice(system.m, system.n, qv.as_slice());
        let xi = sample_ball(&mut rng, system.n, 1.0);
        let a = system.eval_a(&x, &p, &q);
        let quad = xi.dot(&(&a * &xi)) / xi.norm_squared();
        if !quad.is_finite() {
            return Err(Error::OracleFailure {
                node: x.iter().copied().collect(),
                what: "non-finite leading coefficient".into(),
            });
        }
        if quad < system.lambda * (1.0 - 1e-12) {
            let sym = (&a + a.transpose()) * 0.5;
            let eigenvalues = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
            return Err(Error::NotElliptic { eigenvalues });
        }
        worst = worst.min(quad);
    }
    Ok(worst)
}
