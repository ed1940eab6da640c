use constraint_forge::fields::{background, PhasePoint};
use constraint_forge::kidops::Mutant;
use constraint_forge::verify::{
    check_adjoint, check_adjoint_with, check_linearization_with, korn_quotient, Comparison, Difference,
};
use constraint_forge::{Grid, GridSpec};

fn grid(points: usize, tau: f64) -> Grid {
    Grid::new(GridSpec::new(3, points).with_tau(tau)).unwrap()
}

#[test]
fn one_sided_differences_are_first_order() {
    let g = grid(16, 0.3);
    let p = PhasePoint::perturbed_background(&g, 1, 1, 0.05, 0.05).unwrap();
    let forward = check_linearization_with(&g, &p, g.lambda(), 3, 2, 2, Difference::Forward).unwrap();
    assert!(forward.pass, "{forward:?}");
    assert!(forward.statistic >= 0.9 && forward.statistic < 1.5);
    let central = check_linearization_with(&g, &p, g.lambda(), 3, 2, 2, Difference::Central).unwrap();
    assert!(central.statistic >= 1.9 && central.statistic <= 2.1, "{}", central.statistic);
    assert_eq!(central.comparison, Comparison::AtLeast);
    assert_eq!(central.curve.len(), 5);
}

#[test]
fn adjoint_check_passes_flat_and_catches_sign_flips() {
    let g = grid(16, 0.0);
    let bg = background(&g);
    let clean = check_adjoint(&g, &bg, 0.0, 20, 3).unwrap();
    assert!(clean.pass && clean.statistic <= 1e-8);
    // π vanishes here, so the momentum-gradient mutants need a perturbed point.
    let g = grid(16, 0.3);
    let p = PhasePoint::perturbed_background(&g, 5, 1, 0.05, 0.05).unwrap();
    for m in [Mutant::FlipPiHatGrad, Mutant::FlipDphiPiGrad] {
        let flipped = check_adjoint_with(&g, &p, g.lambda(), 5, 3, 4, m).unwrap();
        assert!(!flipped.pass && flipped.statistic >= 1e-2, "{m:?}: {}", flipped.statistic);
    }
}

#[test]
fn korn_quotient_of_a_gradient_is_finite() {
    let g = grid(16, 0.0);
    let f = g.random_scalar(4, 4).unwrap();
    let q = korn_quotient(&g, &g.gradient(&f), 1).unwrap();
    assert!(q.is_finite() && q > 0.0);
}
