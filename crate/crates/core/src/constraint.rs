//! The vacuum constraint operator `Φ = (Φ₀, Φᵢ)` and the scalar-curvature map.

use crate::curvature::{christoffel_with, metric_gradient};
use crate::error::Result;
use crate::fields::{k_from_pi, metric_data, norm_sq, trace, ConstraintValue, PhasePoint};
use crate::grid::Grid;
use crate::tensor::{Field, SymField, VectorField};

/// `Φ₀ = (R(g) − 2Λ)√g − (‖π‖²_g − (tr_g π)²/(n−1))/√g`.
pub fn hamiltonian(grid: &Grid, p: &PhasePoint, lambda: f64) -> Result<Field> {
    p.check(grid)?;
    let md = metric_data(grid, &p.g)?;
    let r = crate::curvature::scalar_from_ricci(grid, &p.g)?;
    let n = p.dim() as f64;
    let tr = trace(&p.g, &p.pi);
    let nsq = norm_sq(&p.g, &p.pi);
    let mut out = grid.zeros();
    let o = out.as_mut_slice();
    for (i, v) in o.iter_mut().enumerate() {
        let s = md.sqrt_det.as_slice()[i];
        let t = tr.as_slice()[i];
        *v = (r.as_slice()[i] - 2.0 * lambda) * s - (nsq.as_slice()[i] - t * t / (n - 1.0)) / s;
    }
    Ok(out)
}

/// `Φ₀` in terms of the second fundamental form: `(R − 2Λ − |K|²_g + (tr_g K)²)√g`.
pub fn hamiltonian_k_form(grid: &Grid, g: &SymField, k: &SymField, lambda: f64) -> Result<Field> {
    let md = metric_data(grid, g)?;
    let r = crate::curvature::scalar_from_ricci(grid, g)?;
    let tr = trace(&md.inverse, k);
    let nsq = norm_sq(&md.inverse, k);
    let mut out = grid.zeros();
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        let t = tr.as_slice()[i];
        *v = (r.as_slice()[i] - 2.0 * lambda - nsq.as_slice()[i] + t * t) * md.sqrt_det.as_slice()[i];
    }
    Ok(out)
}

/// `Φ₀` of a phase point evaluated through `K = K(g, π)` and the K-form.
pub fn hamiltonian_via_k(grid: &Grid, p: &PhasePoint, lambda: f64) -> Result<Field> {
    let k = k_from_pi(grid, &p.g, &p.pi)?;
    hamiltonian_k_form(grid, &p.g, &k, lambda)
}

/// `Φᵢ = 2 g_ij ∇_k π^{jk} = 2 g_ij (∂_k π^{jk} + A^j_kl π^{kl})`.
pub fn momentum(grid: &Grid, p: &PhasePoint) -> Result<VectorField> {
    p.check(grid)?;
    let md = metric_data(grid, &p.g)?;
    let n = p.dim();
    let a = christoffel_with(&md.inverse, &metric_gradient(grid, &p.g));
    let mut div: Vec<Field> = (0..n).map(|_| grid.zeros()).collect();
    for j in 0..n {
        for k in 0..n {
            div[j] += &grid.derivative(p.pi.get(j, k), k)?;
            for l in 0..n {
                div[j] += &a.get(j, k, l).pointwise_mul(p.pi.get(k, l));
            }
        }
    }
    Ok(VectorField::new(
        (0..n)
            .map(|i| {
                let mut acc = grid.zeros();
                for (j, d) in div.iter().enumerate() {
                    acc += &p.g.get(i, j).pointwise_mul(d);
                }
                acc.scaled(2.0)
            })
            .collect(),
    ))
}

/// `Φ(g, π)`.
pub fn phi(grid: &Grid, p: &PhasePoint, lambda: f64) -> Result<ConstraintValue> {
    Ok(ConstraintValue {
        phi0: hamiltonian(grid, p, lambda)?,
        phii: momentum(grid, p)?,
    })
}

/// `(R(g) − 2f)√g` for a scalar field `f`.
pub fn scalar_map(grid: &Grid, g: &SymField, f: &Field) -> Result<Field> {
    grid.check(f)?;
    let md = metric_data(grid, g)?;
    let r = crate::curvature::scalar_from_ricci(grid, g)?;
    Ok(r.zip_map(f, |r, f| r - 2.0 * f).pointwise_mul(&md.sqrt_det))
}
