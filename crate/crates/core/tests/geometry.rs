use constraint_forge::constraint::{hamiltonian, momentum, phi, scalar_map};
use constraint_forge::curvature::{ricci, scalar_curvature};
use constraint_forge::fields::{background, metric_inverse, pi_from_k, sqrt_det, PhasePoint};
use constraint_forge::{Field, Grid, GridSpec, SymField, TensorComponents};

fn flat(points: usize) -> Grid {
    Grid::new(GridSpec::new(3, points)).unwrap()
}

fn conformal(g: &Grid, u: &Field) -> SymField {
    let e = u.map(|v| (2.0 * v).exp());
    SymField::from_fn(3, |i, j| if i == j { e.clone() } else { g.zeros() })
}

fn bump(g: &Grid) -> Field {
    g.sample(|x| 0.1 * x[0].sin())
}

/// `e^{−2u}(−4Δu − 2|∇u|²)` for `g = e^{2u}δ` in three dimensions.
fn conformal_scalar(g: &Grid, u: &Field) -> Field {
    let lap = g.laplacian(u);
    let du = g.gradient(u);
    let sq = du.components().iter().fold(g.zeros(), |acc, d| &acc + &d.pointwise_mul(d));
    let inner = &lap.scaled(-4.0) - &sq.scaled(2.0);
    inner.pointwise_mul(&u.map(|v| (-2.0 * v).exp()))
}

#[test]
fn conformal_ricci_oracle() {
    let g = flat(16);
    let u = bump(&g);
    let ric = ricci(&g, &conformal(&g, &u)).unwrap();
    let h = g.hessian(&u);
    let du = g.gradient(&u);
    let lap = g.laplacian(&u);
    let sq = du.components().iter().fold(g.zeros(), |acc, d| &acc + &d.pointwise_mul(d));
    let trace_part = &lap + &sq;
    for i in 0..3 {
        for j in i..3 {
            let mut want = (h.get(i, j) - &du.get(i).pointwise_mul(du.get(j))).scaled(-1.0);
            if i == j {
                want -= &trace_part;
            }
            assert!((ric.get(i, j) - &want).max_abs() <= 1e-8);
        }
    }
}

#[test]
fn conformal_scalar_curvature_and_hamiltonian() {
    let g = flat(16);
    let u = bump(&g);
    let metric = conformal(&g, &u);
    let want = conformal_scalar(&g, &u);
    assert!((&scalar_curvature(&g, &metric).unwrap() - &want).max_abs() <= 1e-8);

    let volume = u.map(|v| (3.0 * v).exp());
    assert!((&sqrt_det(&g, &metric).unwrap() - &volume).max_abs() <= 1e-12);
    let p = PhasePoint::new(metric.clone(), SymField::zeros(3, g.total_points()));
    let density = want.pointwise_mul(&volume);
    assert!((&hamiltonian(&g, &p, 0.0).unwrap() - &density).max_abs() <= 1e-8);
    let f = g.constant(0.25);
    let shifted = want.map(|r| r - 0.5).pointwise_mul(&volume);
    assert!((&scalar_map(&g, &metric, &f).unwrap() - &shifted).max_abs() <= 1e-8);
}

#[test]
fn constant_metrics_are_flat() {
    let g = flat(8);
    let len = g.total_points();
    let diag = SymField::from_fn(3, |i, j| match (i, j) {
        (0, 0) => Field::constant(len, 4.0),
        (1, 1) => Field::constant(len, 1.0),
        (2, 2) => Field::constant(len, 2.25),
        _ => Field::zeros(len),
    });
    assert!(ricci(&g, &diag).unwrap().max_abs() <= 1e-14);
    assert!(scalar_curvature(&g, &diag).unwrap().max_abs() <= 1e-14);
}

#[test]
fn metric_times_inverse_is_identity() {
    let g = flat(8);
    let metric = PhasePoint::perturbed_background(&g, 3, 2, 0.1, 0.0).unwrap().g.0;
    let inv = metric_inverse(&g, &metric).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let prod = (0..3).fold(g.zeros(), |acc, k| &acc + &metric.get(i, k).pointwise_mul(inv.get(k, j)));
            let want = if i == j { 1.0 } else { 0.0 };
            assert!(prod.as_slice().iter().all(|v| (v - want).abs() <= 1e-12));
        }
    }
}

#[test]
fn vanishing_second_fundamental_form_has_no_momentum() {
    let g = flat(8);
    let metric = PhasePoint::perturbed_background(&g, 4, 1, 0.1, 0.0).unwrap().g.0;
    assert_eq!(pi_from_k(&g, &metric, &SymField::zeros(3, g.total_points())).unwrap().max_abs(), 0.0);
}

#[test]
fn flat_momentum_is_twice_the_divergence() {
    let g = flat(16);
    let len = g.total_points();
    let metric = SymField::identity_scaled(3, len, 1.0);
    let pi = g.random_sym(5, 3).unwrap();
    let out = momentum(&g, &PhasePoint::new(metric.clone(), pi.clone())).unwrap();
    for i in 0..3 {
        let div = (0..3).fold(g.zeros(), |acc, k| &acc + &g.derivative(pi.get(i, k), k).unwrap());
        assert!((out.get(i) - &div.scaled(2.0)).max_abs() <= 1e-10 * div.max_abs().max(1.0));
    }

    // δΔψ − ∂∂ψ is divergence free.
    let psi = g.random_scalar(6, 3).unwrap();
    let h = g.hessian(&psi);
    let lap = g.laplacian(&psi);
    let free = SymField::from_fn(3, |i, j| if i == j { &lap - h.get(i, j) } else { h.get(i, j).scaled(-1.0) });
    let out = momentum(&g, &PhasePoint::new(metric, free)).unwrap();
    assert!(out.max_abs() <= 1e-10);
    assert!(momentum(&g, &PhasePoint::new(conformal(&g, &bump(&g)), SymField::zeros(3, len))).unwrap().max_abs() == 0.0);
}

#[test]
fn constraint_map_grows_linearly_off_the_background() {
    let g = Grid::new(GridSpec::new(3, 8).with_tau(0.3)).unwrap();
    let bg = background(&g);
    let h = g.random_sym(7, 1).unwrap();
    let q = g.random_sym(8, 1).unwrap();
    let ts = [1e-2, 1e-3, 1e-4];
    let norms: Vec<f64> = ts
        .iter()
        .map(|&t| phi(&g, &bg.displaced(t, &h, &q), g.lambda()).unwrap().l2_norm(&g))
        .collect();
    for k in 0..2 {
        let slope = (norms[k] / norms[k + 1]).ln() / (ts[k] / ts[k + 1]).ln();
        assert!(slope >= 0.9, "{slope}");
    }
}
