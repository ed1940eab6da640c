use constraint_forge::constraint::scalar_map;
use constraint_forge::fields::{background, metric_inverse, sqrt_det, trace, LapseShift, PhasePoint};
use constraint_forge::kidops::{
    dphi_adjoint, dr_adjoint, dscalar_map, killing, p_star, special_variation, t_ring, t_shift, u_ring,
    u_second_derivative_identity, Mutant,
};
use constraint_forge::{Field, Grid, GridSpec, SymField, TensorComponents, VectorField};

fn grid(points: usize, tau: f64) -> Grid {
    Grid::new(GridSpec::new(3, points).with_tau(tau)).unwrap()
}

fn max_diff<T: TensorComponents>(a: &T, b: &T) -> f64 {
    a.components()
        .iter()
        .zip(b.components())
        .fold(0.0, |m, (x, y)| m.max((x - y).max_abs()))
}

fn flat_hessian_minus_laplacian(g: &Grid, lapse: &Field) -> SymField {
    let h = g.hessian(lapse);
    let lap = g.laplacian(lapse);
    SymField::from_fn(3, |i, j| if i == j { h.get(i, j) - &lap } else { h.get(i, j).clone() })
}

#[test]
fn killing_of_a_shear() {
    let g = grid(16, 0.0);
    let len = g.total_points();
    let x = VectorField::new(vec![g.sample(|c| c[1].sin()), g.zeros(), g.zeros()]);
    let s = killing(&g, &x).unwrap();
    let half_cos = g.sample(|c| 0.5 * c[1].cos());
    let want = SymField::from_fn(3, |i, j| if (i, j) == (0, 1) { half_cos.clone() } else { Field::zeros(len) });
    assert!(max_diff(&s, &want) <= 1e-12);
    let constant = VectorField::new(vec![g.constant(1.0), g.constant(-2.0), g.constant(0.5)]);
    assert!(killing(&g, &constant).unwrap().max_abs() <= 1e-14);
}

#[test]
fn killing_of_a_gradient_is_the_hessian() {
    let g = grid(16, 0.0);
    let f = g.random_scalar(1, 4).unwrap();
    let s = killing(&g, &g.gradient(&f)).unwrap();
    assert!(max_diff(&s, &g.hessian(&f)) <= 1e-10);
}

#[test]
fn second_derivative_identity_on_gradients() {
    let g = grid(16, 0.0);
    let f = g.random_scalar(2, 4).unwrap();
    let (lhs, rhs) = u_second_derivative_identity(&g, &g.gradient(&f), Mutant::None).unwrap();
    assert!(max_diff(&lhs, &rhs) <= 1e-10);
    let third = |k: usize, j: usize, i: usize| {
        g.derivative(&g.derivative2(&f, j, i).unwrap(), k).unwrap()
    };
    for k in 0..3 {
        for j in 0..3 {
            for i in 0..3 {
                assert!((lhs.get(k, j, i) - &third(k, j, i)).max_abs() <= 1e-9);
            }
        }
    }
    let constant = VectorField::new(vec![g.constant(3.0), g.zeros(), g.constant(1.0)]);
    let (l, r) = u_second_derivative_identity(&g, &constant, Mutant::None).unwrap();
    assert!(l.max_abs() <= 1e-13 && r.max_abs() <= 1e-13);
}

#[test]
fn u_ring_examples() {
    let g = grid(8, 0.0);
    let c = [1.5, -0.5, 2.0];
    let x = VectorField::new(c.iter().map(|&v| g.constant(v)).collect());
    assert!(u_ring(&g, &x, 0.0).unwrap().max_abs() <= 1e-13);
    let u = u_ring(&g, &x, 1.0).unwrap();
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    for k in 0..3 {
        for j in 0..3 {
            for i in 0..3 {
                let want = delta(j, k) * c[i] - delta(i, k) * c[j];
                assert!(u.get(k, j, i).as_slice().iter().all(|v| (v - want).abs() <= 1e-13));
            }
        }
    }
    let x = g.random_vector(3, 2).unwrap();
    let (lhs, _) = u_second_derivative_identity(&g, &x, Mutant::None).unwrap();
    assert!(max_diff(&u_ring(&g, &x, 0.0).unwrap(), &lhs) <= 1e-12);
}

#[test]
fn t_ring_examples() {
    let g = grid(16, 0.0);
    assert!(t_ring(&g, &g.constant(2.0), 0.0).unwrap().max_abs() <= 1e-13);
    let c = t_ring(&g, &g.constant(2.0), 1.0).unwrap();
    assert!(max_diff(&c, &SymField::identity_scaled(3, g.total_points(), 2.0)) <= 1e-13);
    let s = g.sample(|x| x[0].sin());
    let t = t_ring(&g, &s, 0.0).unwrap();
    let len = g.total_points();
    let want = SymField::from_fn(3, |i, j| if (i, j) == (0, 0) { s.scaled(-1.0) } else { Field::zeros(len) });
    assert!(max_diff(&t, &want) <= 1e-12);
}

#[test]
fn shifted_hessian_reduces_on_flat_metric() {
    let g = grid(16, 0.0);
    let metric = background(&g).g.0;
    let zero = t_shift(&g, &metric, &g.zeros(), 0.0, Mutant::None).unwrap();
    assert_eq!(zero.t.max_abs(), 0.0);
    assert_eq!(zero.l.max_abs(), 0.0);
    let n = g.random_scalar(4, 3).unwrap();
    let out = t_shift(&g, &metric, &n, 0.0, Mutant::None).unwrap();
    assert!(max_diff(&out.t, &g.hessian(&n)) <= 1e-11);
    assert!(max_diff(&out.l, &flat_hessian_minus_laplacian(&g, &n)) <= 1e-11);
}

#[test]
fn shifted_hessian_trace_identity() {
    let g = grid(16, 0.3);
    let p = PhasePoint::perturbed_background(&g, 5, 2, 0.1, 0.0).unwrap();
    let ginv = metric_inverse(&g, &p.g).unwrap();
    for seed in 0..4 {
        let n = g.random_scalar(10 + seed, 3).unwrap();
        let out = t_shift(&g, &p.g, &n, g.lambda(), Mutant::None).unwrap();
        let tr_t = trace(&ginv, &out.t);
        let tr_l = trace(&ginv, &out.l);
        let err = (&tr_l - &tr_t.scaled(-2.0)).max_abs();
        assert!(err <= 1e-10 * tr_t.max_abs().max(1.0), "{err}");
    }
}

#[test]
fn scalar_map_adjoint_flat_examples() {
    let g = grid(16, 0.0);
    let metric = background(&g).g.0;
    assert!(dr_adjoint(&g, &metric, &g.zeros(), &g.constant(1.0)).unwrap().max_abs() <= 1e-14);
    let n = g.sample(|x| x[0].sin());
    let out = dr_adjoint(&g, &metric, &g.zeros(), &n).unwrap();
    assert!(max_diff(&out, &flat_hessian_minus_laplacian(&g, &n)) <= 1e-12);
}

#[test]
fn scalar_map_adjoint_pairs_with_its_linearization() {
    let g = grid(16, 0.0);
    let metric = PhasePoint::perturbed_background(&g, 6, 1, 0.05, 0.0).unwrap().g.0;
    let f = g.random_scalar(7, 2).unwrap();
    for seed in 0..3 {
        let h = g.random_sym(20 + seed, 3).unwrap();
        let n = g.random_scalar(30 + seed, 3).unwrap();
        let lhs = g.inner(&dscalar_map(&g, &metric, &f, &h).unwrap(), &n);
        let rhs = g.pairing(&h, &dr_adjoint(&g, &metric, &f, &n).unwrap());
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
    }
}

#[test]
fn p_star_first_slot_and_flat_kernel() {
    let g = grid(8, 0.3);
    let p = PhasePoint::perturbed_background(&g, 8, 1, 0.1, 0.1).unwrap();
    let xi = LapseShift::random(&g, 9, 2).unwrap();
    let ps = p_star(&g, &p, &xi, g.lambda()).unwrap();
    let adj = dphi_adjoint(&g, &p, &xi, g.lambda()).unwrap();
    let weight = sqrt_det(&g, &p.g).unwrap().map(|s| s.powf(-0.5));
    let want = SymField::from_fn(3, |i, j| adj.slot_h.get(i, j).pointwise_mul(&weight));
    assert!(max_diff(&ps.first, &want) <= 1e-12);

    let flat = grid(8, 0.0);
    let bg = background(&flat);
    let len = flat.total_points();
    let xi = LapseShift::new(
        flat.constant(0.4),
        VectorField::new(vec![flat.constant(1.0), flat.constant(-1.0), Field::zeros(len)]),
    );
    assert!(p_star(&flat, &bg, &xi, 0.0).unwrap().l2_norm(&flat) <= 1e-12);
}

#[test]
fn special_variation_examples() {
    let g = grid(8, 0.3);
    let p = PhasePoint::perturbed_background(&g, 11, 1, 0.1, 0.1).unwrap();
    let zero = special_variation(&g, &p, &g.zeros(), &VectorField::zeros(3, g.total_points()), 0.3).unwrap();
    assert_eq!(zero.h.max_abs(), 0.0);
    assert_eq!(zero.p.max_abs(), 0.0);

    let flat = grid(16, 0.0);
    let bg = background(&flat);
    let cap = flat.random_vector(12, 3).unwrap();
    let v = special_variation(&flat, &bg, &flat.zeros(), &cap, 0.0).unwrap();
    let s = killing(&flat, &cap).unwrap();
    let div = (0..3).fold(flat.zeros(), |acc, i| &acc + &flat.derivative(cap.get(i), i).unwrap());
    let want = SymField::from_fn(3, |i, j| if i == j { &s.get(i, j).scaled(2.0) - &div } else { s.get(i, j).scaled(2.0) });
    assert!(v.h.max_abs() == 0.0);
    assert!(max_diff(&v.p, &want) <= 1e-12);

    let unit = grid(8, 1.0);
    let bg = background(&unit);
    let len = unit.total_points();
    let v = special_variation(&unit, &bg, &unit.constant(1.0), &VectorField::zeros(3, len), 1.0).unwrap();
    assert!(max_diff(&v.h, &SymField::identity_scaled(3, len, 2.0)) <= 1e-14);
    assert!(max_diff(&v.p, &SymField::identity_scaled(3, len, -2.0)) <= 1e-14);
}

#[test]
fn scalar_map_linearization_matches_differences() {
    let g = grid(16, 0.0);
    let metric = PhasePoint::perturbed_background(&g, 13, 1, 0.1, 0.0).unwrap().g.0;
    let f = g.random_scalar(14, 1).unwrap();
    let h = g.random_sym(15, 1).unwrap();
    let lin = dscalar_map(&g, &metric, &f, &h).unwrap();
    let at = |t: f64| {
        let mut m = metric.clone();
        m.axpy(t, &h);
        scalar_map(&g, &m, &f).unwrap()
    };
    let t = 1e-4;
    let fd = (&at(t) - &at(-t)).scaled(0.5 / t);
    assert!((&fd - &lin).max_abs() <= 1e-6 * lin.max_abs());
}
