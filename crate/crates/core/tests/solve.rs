use constraint_forge::fields::{background, ellipticity, ConstraintValue, PhasePoint};
use constraint_forge::kidops::{dphi_adjoint, f_op};
use constraint_forge::linop::{assemble_columns, Diagonal, LinearOperator};
use constraint_forge::solve::*;
use constraint_forge::{Field, ForgeError, Grid, GridSpec, TensorComponents, VectorField};

fn flat(points: usize) -> Grid {
    Grid::new(GridSpec::new(3, points)).unwrap()
}

fn mean_free(g: &Grid, f: &Field) -> Field {
    let mean = g.integrate(f) / g.volume();
    f.map(|v| v - mean)
}

fn rel(a: &Field, b: &Field, g: &Grid) -> f64 {
    g.l2_norm(&(a - b)) / g.l2_norm(b)
}

fn tight() -> SolveOptions {
    SolveOptions {
        krylov_tol: 1e-13,
        ..SolveOptions::default()
    }
}

#[test]
fn zero_target_gives_zero_solution() {
    let g = flat(8);
    let t = ConstraintValue::zeros(3, g.total_points());
    let s = solve_f(&g, &background(&g), &t, g.lambda(), 0.0, &tight()).unwrap();
    assert_eq!(s.iterations, 0);
    assert_eq!(s.y.max_abs(), 0.0);
    assert_eq!(s.shift.max_abs(), 0.0);
}

#[test]
fn manufactured_lapse_is_recovered() {
    let g = flat(8);
    let y_star = mean_free(&g, &g.random_scalar(3, 2).unwrap());
    let target = ConstraintValue::new(g.laplacian(&y_star).scaled(-4.0), VectorField::zeros(3, g.total_points()));
    let s = solve_f(&g, &background(&g), &target, g.lambda(), 0.0, &tight()).unwrap();
    assert!(rel(&mean_free(&g, &s.y), &y_star, &g) <= 1e-6);
    assert!(s.shift.max_abs() <= 1e-6 * y_star.max_abs());
    // The zero mode is never touched for mean-zero data.
    assert!(g.integrate(&s.y).abs() <= 1e-10);
}

#[test]
fn manufactured_shift_is_recovered() {
    let g = flat(8);
    let y_star = VectorField::new(
        g.random_vector(4, 2)
            .unwrap()
            .components()
            .iter()
            .map(|c| mean_free(&g, c))
            .collect(),
    );
    let lap = VectorField::new(y_star.components().iter().map(|c| g.laplacian(c).scaled(2.0)).collect());
    let target = ConstraintValue::new(g.zeros(), lap);
    let s = solve_f(&g, &background(&g), &target, g.lambda(), 0.0, &tight()).unwrap();
    for i in 0..3 {
        assert!(rel(&mean_free(&g, s.shift.get(i)), y_star.get(i), &g) <= 1e-6);
    }
    assert!(g.l2_norm(&s.y) <= 1e-6 * g.l2_norm(&y_star));
}

#[test]
fn solution_reproduces_target_within_reported_residual() {
    let g = Grid::new(GridSpec::new(3, 8).with_tau(0.3)).unwrap();
    let p = PhasePoint::perturbed_background(&g, 6, 1, 0.05, 0.05).unwrap();
    let target = ConstraintValue::new(g.random_scalar(8, 2).unwrap(), g.random_vector(9, 2).unwrap());
    let s = solve_f(&g, &p, &target, g.lambda(), 0.3, &SolveOptions::default()).unwrap();
    let image = f_op(&g, &p, &s.y, &s.shift, g.lambda(), 0.3).unwrap();
    let direct = (&image - &target).l2_norm(&g);
    assert!((direct - s.residual).abs() <= 1e-9 * target.l2_norm(&g).max(1.0));
}

#[test]
fn fiber_points_are_left_unchanged() {
    let g = Grid::new(GridSpec::new(3, 8).with_tau(0.3)).unwrap();
    let p = background(&g);
    let eps = ConstraintValue::zeros(3, g.total_points());
    let out = newton_project(&g, &p, &eps, g.lambda(), 0.3, &SolveOptions::default()).unwrap();
    assert_eq!(out.iterations, 0);
    assert!(out.converged);
    assert_eq!(out.point, p);
}

#[test]
fn special_variations_reach_the_fiber() {
    let g = Grid::new(GridSpec::new(3, 8).with_tau(0.3)).unwrap();
    let p = PhasePoint::perturbed_background(&g, 2, 2, 0.05, 0.05).unwrap();
    let eps = ConstraintValue::zeros(3, g.total_points());
    let opts = SolveOptions {
        newton_tol: 1e-6,
        ..SolveOptions::default()
    };
    let out = newton_project(&g, &p, &eps, g.lambda(), 0.3, &opts).unwrap();
    assert!(out.converged, "{:?}", out.residual_history);
    assert!(out.reduction() >= 1e6);
    assert!(out.residual_history.windows(2).all(|w| w[1] < w[0]));
    assert!(ellipticity(&g, &out.point.g.0).unwrap() > 0.5);
}

#[test]
fn adjoint_composition_reduces_the_residual() {
    // Without the special-variation block the iteration plateaus a few
    // decades above the Newton tolerance, stalled or not.
    let g = Grid::new(GridSpec::new(3, 8).with_tau(0.3)).unwrap();
    let p = PhasePoint::perturbed_background(&g, 2, 1, 0.05, 0.05).unwrap();
    let eps = ConstraintValue::zeros(3, g.total_points());
    let opts = SolveOptions {
        newton_tol: 1e-6,
        strategy: Strategy::AdjointComposition,
        ..SolveOptions::default()
    };
    let history = match newton_project(&g, &p, &eps, g.lambda(), 0.3, &opts) {
        Ok(out) => out.residual_history,
        Err(ForgeError::Stalled { history, .. }) => history,
        Err(e) => panic!("{e:?}"),
    };
    assert!(history.windows(2).all(|w| w[1] < w[0]));
    assert!(history[0] / history.last().unwrap() >= 1e5, "{history:?}");
}

#[test]
fn adjoint_composition_stalls_on_aliased_data() {
    // Band N/4 data at 8 points has products landing on the Nyquist mode,
    // which the adjoint image cannot reach.
    let g = Grid::new(GridSpec::new(3, 8).with_tau(0.3)).unwrap();
    let p = PhasePoint::perturbed_background(&g, 2, 2, 0.05, 0.05).unwrap();
    let eps = ConstraintValue::zeros(3, g.total_points());
    let opts = SolveOptions {
        newton_tol: 1e-6,
        strategy: Strategy::AdjointComposition,
        ..SolveOptions::default()
    };
    assert!(matches!(
        newton_project(&g, &p, &eps, g.lambda(), 0.3, &opts),
        Err(ForgeError::Stalled { .. })
    ));
}

#[test]
fn invalid_options_are_rejected() {
    let g = flat(8);
    let opts = SolveOptions {
        krylov_tol: 0.0,
        ..SolveOptions::default()
    };
    let t = ConstraintValue::zeros(3, g.total_points());
    assert!(matches!(
        newton_project(&g, &background(&g), &t, 0.0, 0.0, &opts),
        Err(ForgeError::InvalidOptions(_))
    ));
}

#[test]
fn lsqr_solves_a_consistent_diagonal_system() {
    let d = Diagonal(vec![1.0, 2.0, 4.0, 8.0]);
    let out = lsqr(&d, &[1.0, 1.0, 1.0, 1.0], 1e-14, 50);
    assert!(out.converged);
    for (x, e) in out.x.iter().zip([1.0, 0.5, 0.25, 0.125]) {
        assert!((x - e).abs() < 1e-12);
    }
}

#[test]
fn dense_singular_values_of_simple_operators() {
    let id = Diagonal(vec![1.0; 6]);
    let t = dense_singular_triplets(&assemble_columns(&id)).unwrap();
    assert!(t.iter().all(|t| (t.sigma - 1.0).abs() < 1e-14));
    let d = Diagonal(vec![3.0, -1.0, 0.5, -7.0]);
    let s: Vec<f64> = dense_singular_triplets(&assemble_columns(&d))
        .unwrap()
        .iter()
        .map(|t| t.sigma)
        .collect();
    for (a, b) in s.iter().zip([0.5, 1.0, 3.0, 7.0]) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn matrix_free_triplets_match_dense_on_a_diagonal() {
    let entries: Vec<f64> = (1..=60).map(|i| i as f64 * 0.25).collect();
    let d = Diagonal(entries.clone());
    let precond: Vec<f64> = entries.iter().map(|e| 1.0 / (e * e)).collect();
    let opts = SolveOptions::default();
    let t = smallest_singular_triplets(&d, 3, &precond, 15.0, &opts).unwrap();
    for (tr, e) in t.iter().zip([0.25, 0.5, 0.75]) {
        assert!((tr.sigma - e).abs() <= 1e-6 * e);
        let av = d.apply(&tr.right);
        let r: f64 = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((r - tr.sigma).abs() <= 0.1 * tr.sigma);
    }
}

#[test]
fn dense_assembly_respects_the_budget() {
    let g = flat(16);
    let d = Diagonal(vec![1.0; g.total_points()]);
    assert!(matches!(
        assemble_dense(&d, &g, 1000),
        Err(ForgeError::MemoryBudget { .. })
    ));
}

#[test]
fn flat_kernel_dimension_is_resolution_independent() {
    for points in [6, 8] {
        let g = Grid::new(GridSpec::new(3, points).with_lambda(0.0)).unwrap();
        let r = kid_kernel(&g, &background(&g), 0.0, 1e-8, &SolveOptions::default()).unwrap();
        assert_eq!(r.kernel_dim, 4, "{points} points: {:?}", r.singular_values);
        assert!(r.gap_ratio >= 1e3);
        assert!(r.singular_values.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn kernel_basis_is_orthonormal_and_consistent() {
    let g = Grid::new(GridSpec::new(3, 6).with_lambda(0.0)).unwrap();
    let p = background(&g);
    let r = kid_kernel(&g, &p, 0.0, 1e-8, &SolveOptions::default()).unwrap();
    for (i, a) in r.basis.iter().enumerate() {
        for (j, b) in r.basis.iter().enumerate() {
            let ip = a.pairing(&g, b);
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((ip - expect).abs() < 1e-8, "⟨ξ{i}, ξ{j}⟩ = {ip}");
        }
    }
    for ((xi, res), sigma) in r.basis.iter().zip(&r.basis_residuals).zip(&r.singular_values) {
        let again = dphi_adjoint(&g, &p, xi, 0.0).unwrap().l2_norm(&g);
        assert!((again - res).abs() <= 1e-12);
        assert!(*res <= 1.1 * sigma + 1e-10 * r.sigma_max);
    }
}

#[test]
fn translations_span_the_kernel_at_nonzero_tau() {
    let g = Grid::new(GridSpec::new(3, 6).with_tau(0.3)).unwrap();
    let r = kid_kernel(&g, &background(&g), g.lambda(), 1e-8, &SolveOptions::default()).unwrap();
    assert_eq!(r.kernel_dim, 3, "{:?}", r.singular_values);
    for xi in &r.basis {
        assert!(g.l2_norm(&xi.lapse) < 1e-8);
        for c in xi.shift.components() {
            let mean = g.integrate(c) / g.volume();
            assert!(c.as_slice().iter().all(|v| (v - mean).abs() < 1e-8));
        }
    }
}

#[test]
fn scalar_map_kernel_contains_constants() {
    let g = flat(6);
    let metric = background(&g).g.0;
    let r = scalar_kernel(&g, &metric, &g.zeros(), 1e-8, &SolveOptions::default()).unwrap();
    assert!(r.kernel_dim >= 1);
    let c = &r.basis[0].lapse;
    let mean = g.integrate(c) / g.volume();
    assert!(mean.abs() > 0.0);
    assert!(c.as_slice().iter().all(|v| (v - mean).abs() < 1e-8));
}

#[test]
fn perturbed_point_has_no_kernel_on_either_path() {
    let g = Grid::new(GridSpec::new(3, 6).with_tau(0.3)).unwrap();
    let p = PhasePoint::perturbed_background(&g, 2, 1, 0.1, 0.1).unwrap();
    let dense = kid_kernel(&g, &p, g.lambda(), 1e-8, &SolveOptions::default()).unwrap();
    let free = kid_kernel(
        &g,
        &p,
        g.lambda(),
        1e-8,
        &SolveOptions {
            dense_threshold: 0,
            ..SolveOptions::default()
        },
    )
    .unwrap();
    assert_eq!(dense.kernel_dim, 0);
    assert_eq!(free.kernel_dim, 0);
    assert!(dense.gap_ratio.is_infinite());
    let a = dense.singular_values[0];
    let b = free.singular_values[0];
    assert!((a - b).abs() <= 1e-6 * a);
}
