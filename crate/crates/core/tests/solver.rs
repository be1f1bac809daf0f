use std::sync::Arc;

use jetsolve::kobayashi::{estimate, KobayashiQuery};
use jetsolve::picard::{picard_solve, residual_check, AttemptOutcome, SolveConfig};
use jetsolve::reduce::{diagonalize, reduce, shift_jet, JetSpec};
use jetsolve::systems::{
    harmonic_map_system, minimal_surface_system, poisson_system, prescribed_mean_curvature_system, TargetManifold,
};
use nalgebra::{DMatrix, DVector};

fn config(r0: f64, res: usize) -> SolveConfig {
    SolveConfig {
        r0,
        res,
        ..SolveConfig::default()
    }
}

#[test]
fn poisson_with_source_2n_recovers_squared_norm() {
    for (n, res) in [(2, 31), (3, 13)] {
        let g = 2.0 * n as f64;
        let sys = reduce(&poisson_system(n, 1, Arc::new(move |_| DVector::from_element(1, g))), &JetSpec::zero(1, n)).unwrap();
        let rep = picard_solve(&sys, &config(0.5, res)).unwrap();
        let r2 = rep.radius * rep.radius;
        let err = rep
            .original_rows(&sys)
            .iter()
            .map(|(x, u)| (u[0] - x.iter().map(|v| v * v).sum::<f64>()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.03 * r2, "n = {n}: error {err}");
    }
}

#[test]
fn laplace_with_jet_returns_the_affine_map() {
    let jet = JetSpec {
        c0: DVector::from_vec(vec![0.4, -1.0]),
        c1: DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 1.5, 0.7]),
    };
    let sys = reduce(&poisson_system(2, 2, Arc::new(|_| DVector::zeros(2))), &jet).unwrap();
    let rep = picard_solve(&sys, &config(0.5, 21)).unwrap();
    assert_eq!(rep.iterations, 1);
    for (x, u) in rep.original_rows(&sys) {
        let want = jet.affine(&DVector::from_vec(x));
        for a in 0..2 {
            assert!((u[a] - want[a]).abs() <= 1e-12);
        }
    }
}

#[test]
fn minimal_surface_shift_by_hand() {
    let jet = JetSpec {
        c0: DVector::zeros(1),
        c1: DMatrix::from_row_slice(1, 2, &[0.3, 0.0]),
    };
    let shifted = shift_jet(&minimal_surface_system(2), &jet).unwrap();
    let (x, p, q) = shifted.zero_args();
    let a = shifted.eval_a(&x, &p, &q);
    let want = DMatrix::from_row_slice(2, 2, &[1.0 / 1.09, 0.0, 0.0, 1.0]);
    assert!((a - want).abs().max() <= 1e-15);
    let red = diagonalize(&shifted).unwrap();
    let p_want = DMatrix::from_row_slice(2, 2, &[1.09_f64.sqrt(), 0.0, 0.0, 1.0]);
    assert!((&red.p - p_want).abs().max() <= 1e-12);
}

#[test]
fn small_gamma_is_doubled_before_the_radius_shrinks() {
    let sys = reduce(&poisson_system(2, 1, Arc::new(|_| DVector::from_element(1, 1.0))), &JetSpec::zero(1, 2)).unwrap();
    let cfg = SolveConfig {
        gamma0: Some(0.25),
        ..config(0.5, 21)
    };
    let rep = picard_solve(&sys, &cfg).unwrap();
    let first = &rep.attempts[0];
    assert!(first.doublings >= 1, "{first:?}");
    assert!(first.doublings <= cfg.max_doublings);
    assert_eq!(first.outcome, AttemptOutcome::Converged);
    assert_eq!(rep.radius, 0.5);
    assert!(rep.gamma > 0.25);
}

#[test]
fn attempts_halve_the_radius() {
    let sys = reduce(&minimal_surface_system(2), &JetSpec::zero(1, 2)).unwrap();
    let cfg = SolveConfig {
        harmonic_seed: serde_json::from_str(r#"{"components": [[{"coeff": 0.5, "powers": [2, 0]}, {"coeff": -0.5, "powers": [0, 2]}]]}"#).unwrap(),
        ..config(4.0, 21)
    };
    let rep = picard_solve(&sys, &cfg).unwrap();
    assert!(rep.attempts.len() >= 2);
    for w in rep.attempts.windows(2) {
        assert_eq!(w[1].radius, w[0].radius / 2.0);
    }
    assert_eq!(rep.attempts.last().unwrap().outcome, AttemptOutcome::Converged);
}

#[test]
fn contraction_is_strong_at_small_radius() {
    let jet = JetSpec {
        c0: DVector::zeros(1),
        c1: DMatrix::from_row_slice(1, 2, &[0.3, 0.2]),
    };
    let minimal = reduce(&minimal_surface_system(2), &jet).unwrap();
    let rep = picard_solve(&minimal, &config(0.25, 21)).unwrap();
    assert!(rep.empirical_contraction < 0.6, "{}", rep.empirical_contraction);

    let lin = reduce(
        &poisson_system(2, 1, Arc::new(|x| DVector::from_element(1, 1.0 + x[0]))),
        &JetSpec::zero(1, 2),
    )
    .unwrap();
    let rep = picard_solve(&lin, &config(0.25, 21)).unwrap();
    assert!(rep.empirical_contraction < 0.6, "{}", rep.empirical_contraction);
}

// With a nonzero source the residual is bounded by the quadrature's
// consistency error, a fixed fraction of sup |Psi| that does not shrink
// under refinement.
#[test]
fn prescribed_mean_curvature_converges() {
    let sys = reduce(
        &prescribed_mean_curvature_system(2, Arc::new(|_, _| 0.2)),
        &JetSpec::zero(1, 2),
    )
    .unwrap();
    let mut residuals = Vec::new();
    for res in [21, 41] {
        let rep = picard_solve(&sys, &config(0.5, res)).unwrap();
        assert_eq!(rep.radius, 0.5);
        assert!(rep.residual <= 0.05 * rep.psi_sup, "{} vs {}", rep.residual, rep.psi_sup);
        assert_eq!(residual_check(&sys, &rep.solution).unwrap(), rep.residual);
        // cap-like: u grows away from the origin
        let grid = rep.solution.grid();
        let edge = grid.find([(res as i32 - 1) / 2, 0, 0]).unwrap();
        assert!(rep.solution.component(0).value_at(edge) > 0.0);
        residuals.push(rep.residual / rep.psi_sup);
    }
    assert!((residuals[1] - residuals[0]).abs() < 0.005, "{residuals:?}");
}

#[test]
fn hyperbolic_harmonic_map_stays_in_the_disk() {
    let target = TargetManifold::hyperbolic();
    let jet = JetSpec {
        c0: DVector::from_vec(vec![0.2, 0.1]),
        c1: DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.1, 0.0]),
    };
    let sys = reduce(&harmonic_map_system(2, None, &target).unwrap(), &jet).unwrap();
    let rep = picard_solve(&sys, &config(0.5, 31)).unwrap();
    assert!(rep.residual <= 1e-3, "{}", rep.residual);
    let reach = rep
        .original_rows(&sys)
        .iter()
        .map(|(_, u)| (u[0] * u[0] + u[1] * u[1]).sqrt())
        .fold(0.0, f64::max);
    assert!(reach < 1.0);
}

#[test]
fn kobayashi_search_on_the_disk() {
    let q = KobayashiQuery::new(
        TargetManifold::hyperbolic(),
        DVector::from_vec(vec![0.0, 0.0]),
        DVector::from_vec(vec![0.5, 0.0]),
    );
    let est = estimate(&q).unwrap();
    let bound = est.upper_bound.expect("some radius is accepted");
    assert!(bound.is_finite() && bound > 0.0);
    assert!(est.monotone);
    assert!(est.probes.iter().any(|p| p.success));
}
