//! Christoffel differences, Ricci and scalar curvature, and the quadratic
//! tensors `E` and `Π` of the linearised constraints.
//!
//! With `g̊ = δ` every background connection term vanishes, so `A = Γ(g)` and
//! `Ric(g) = Ric(g) − Ric(g̊)`. Two independent routes to `R(g)` are provided:
//! the trace of the Ricci difference formula and the covariant second-order
//! formula in `g⁻¹` and `∂g`.

use crate::error::Result;
use crate::fields::{metric_data, norm_sq, sym_pointwise, trace, MetricData};
use crate::grid::Grid;
use crate::tensor::{sym_pairs, Field, Rank3Field, SymField, TensorComponents};

/// `∂_l g_ij`, indexed `[l]`.
pub fn metric_gradient(grid: &Grid, g: &SymField) -> Vec<SymField> {
    let n = g.dim();
    let grads: Vec<_> = g.components().iter().map(|c| grid.gradient(c)).collect();
    (0..n)
        .map(|l| SymField::new(n, grads.iter().map(|v| v.get(l).clone()).collect()))
        .collect()
}

/// `A^k_ij = ½ g^{kl}(∂_i g_jl + ∂_j g_il − ∂_l g_ij)`, stored at `(k, i, j)`.
pub fn christoffel_delta(grid: &Grid, g: &SymField) -> Result<Rank3Field> {
    let md = metric_data(grid, g)?;
    Ok(christoffel_with(&md.inverse, &metric_gradient(grid, g)))
}

pub(crate) fn christoffel_with(ginv: &SymField, dg: &[SymField]) -> Rank3Field {
    let n = ginv.dim();
    let len = ginv.components()[0].len();
    let mut a = Rank3Field::zeros(n, len);
    for p in 0..len {
        let d = |l: usize, i: usize, j: usize| dg[l].get(i, j).as_slice()[p];
        for i in 0..n {
            for j in i..n {
                for k in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += ginv.get(k, l).as_slice()[p] * (d(i, j, l) + d(j, i, l) - d(l, i, j));
                    }
                    a.get_mut(k, i, j).as_mut_slice()[p] = 0.5 * s;
                    a.get_mut(k, j, i).as_mut_slice()[p] = 0.5 * s;
                }
            }
        }
    }
    a
}

/// `∂_l A^k_ij`, indexed `[l]`.
pub fn christoffel_gradient(grid: &Grid, a: &Rank3Field) -> Vec<Rank3Field> {
    let n = a.dim();
    let grads: Vec<_> = a.components().iter().map(|c| grid.gradient(c)).collect();
    (0..n)
        .map(|l| Rank3Field::new(n, grads.iter().map(|v| v.get(l).clone()).collect()))
        .collect()
}

/// `Ric_jk = ∂_i A^i_jk − ∂_j A^i_ik + A^l_jk A^i_il − A^i_jl A^l_ki`.
pub fn ricci(grid: &Grid, g: &SymField) -> Result<SymField> {
    let a = christoffel_delta(grid, g)?;
    Ok(ricci_with(&a, &christoffel_gradient(grid, &a)))
}

pub(crate) fn ricci_with(a: &Rank3Field, da: &[Rank3Field]) -> SymField {
    let n = a.dim();
    let len = a.components()[0].len();
    let mut out = SymField::zeros(n, len);
    for p in 0..len {
        let av = |k: usize, i: usize, j: usize| a.get(k, i, j).as_slice()[p];
        let dv = |l: usize, k: usize, i: usize, j: usize| da[l].get(k, i, j).as_slice()[p];
        for (j, k) in sym_pairs(n) {
            let mut s = 0.0;
            for i in 0..n {
                s += dv(i, i, j, k) - dv(j, i, i, k);
                for l in 0..n {
                    s += av(l, j, k) * av(i, i, l) - av(i, j, l) * av(l, k, i);
                }
            }
            out.get_mut(j, k).as_mut_slice()[p] = s;
        }
    }
    out
}

/// `R(g)` from the covariant formula
/// `g^{jk}g^{il}(∂_i∂_j g_kl − ∂_i∂_l g_jk) + Q(g⁻¹, ∂g)`, where `Q` collects the
/// products of first derivatives (derivatives of `g⁻¹` plus the `A·A` terms).
pub fn scalar_curvature(grid: &Grid, g: &SymField) -> Result<Field> {
    let md = metric_data(grid, g)?;
    let n = g.dim();
    let dg = metric_gradient(grid, g);
    let a = christoffel_with(&md.inverse, &dg);
    let hess: Vec<SymField> = g.components().iter().map(|c| grid.hessian(c)).collect();
    let len = grid.total_points();
    let mut r = Field::zeros(len);
    let w = |p: usize, i: usize, j: usize| md.inverse.get(i, j).as_slice()[p];
    let d = |p: usize, l: usize, i: usize, j: usize| dg[l].get(i, j).as_slice()[p];
    let dd = |p: usize, a: usize, b: usize, i: usize, j: usize| {
        hess[crate::tensor::sym_index(n, i, j)].get(a, b).as_slice()[p]
    };
    let mut dinv = vec![0.0; n * n * n];
    for p in 0..len {
        // ∂_m g^{il} = −g^{ia} g^{lb} ∂_m g_ab
        for m in 0..n {
            for i in 0..n {
                for l in 0..n {
                    let mut s = 0.0;
                    for x in 0..n {
                        for y in 0..n {
                            s -= w(p, i, x) * w(p, l, y) * d(p, m, x, y);
                        }
                    }
                    dinv[(m * n + i) * n + l] = s;
                }
            }
        }
        let mut second = 0.0;
        let mut quad = 0.0;
        for j in 0..n {
            for k in 0..n {
                let gjk = w(p, j, k);
                for i in 0..n {
                    for l in 0..n {
                        second += gjk * w(p, i, l) * (dd(p, i, j, k, l) - dd(p, i, l, j, k));
                        quad += 0.5
                            * gjk
                            * (dinv[(i * n + i) * n + l]
                                * (d(p, j, k, l) + d(p, k, j, l) - d(p, l, j, k))
                                - dinv[(j * n + i) * n + l]
                                    * (d(p, i, k, l) + d(p, k, i, l) - d(p, l, i, k)));
                        let av = |x: usize, y: usize, z: usize| a.get(x, y, z).as_slice()[p];
                        quad += gjk * (av(l, j, k) * av(i, i, l) - av(i, j, l) * av(l, k, i));
                    }
                }
            }
        }
        r.as_mut_slice()[p] = second + quad;
    }
    Ok(r)
}

/// `g^{jk} Ric_jk`.
pub fn scalar_from_ricci(grid: &Grid, g: &SymField) -> Result<Field> {
    let md = metric_data(grid, g)?;
    Ok(trace(&md.inverse, &ricci(grid, g)?))
}

/// Curvature quantities entering the linearised constraints.
#[derive(Clone, Debug)]
pub struct CurvaturePack {
    /// `Ric_ij`, covariant.
    pub ricci: SymField,
    pub scalar: Field,
    /// `E^{ij} = R^{ij} − ½(R − 2Λ) g^{ij}`.
    pub einstein: SymField,
    /// `Π^{ij}`, the momentum-quadratic tensor.
    pub pi_tensor: SymField,
}

/// `E^{ij}` and `Π^{ij}` together with `Ric` and `R`.
pub fn e_and_pi(grid: &Grid, g: &SymField, pi: &SymField, lambda: f64) -> Result<CurvaturePack> {
    let md = metric_data(grid, g)?;
    let a = christoffel_with(&md.inverse, &metric_gradient(grid, g));
    let ric = ricci_with(&a, &christoffel_gradient(grid, &a));
    Ok(pack_with(&md, g, pi, ric, lambda))
}

pub(crate) fn pack_with(
    md: &MetricData,
    g: &SymField,
    pi: &SymField,
    ric: SymField,
    lambda: f64,
) -> CurvaturePack {
    let scalar = trace(&md.inverse, &ric);
    let einstein = einstein_upper(&md.inverse, &ric, &scalar, lambda);
    let pi_tensor = pi_tensor(md, g, pi);
    CurvaturePack {
        ricci: ric,
        scalar,
        einstein,
        pi_tensor,
    }
}

fn einstein_upper(ginv: &SymField, ric: &SymField, scalar: &Field, lambda: f64) -> SymField {
    let n = ginv.dim();
    let len = scalar.len();
    sym_pointwise(n, len, &[ginv, ric], |p, l, out| {
        let (w, r) = (&l[0], &l[1]);
        let half = 0.5 * (scalar.as_slice()[p] - 2.0 * lambda);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += w[i * n + a] * w[j * n + b] * r[a * n + b];
                    }
                }
                out[i * n + j] = s - half * w[i * n + j];
            }
        }
    })
}

/// `Π^{ij} = (2/(n−1) tr π π^{ij} − 2π^i_k π^{kj} + ½‖π‖² g^{ij} − (tr π)²/(2(n−1)) g^{ij}) / (√g)²`.
pub fn pi_tensor(md: &MetricData, g: &SymField, pi: &SymField) -> SymField {
    let n = g.dim();
    let len = md.sqrt_det.len();
    let tr = trace(g, pi);
    let nsq = norm_sq(g, pi);
    let c = 1.0 / (n as f64 - 1.0);
    sym_pointwise(n, len, &[&md.inverse, g, pi], |p, l, out| {
        let (w, gl, x) = (&l[0], &l[1], &l[2]);
        let t = tr.as_slice()[p];
        let q = nsq.as_slice()[p];
        let vol = md.sqrt_det.as_slice()[p].powi(2);
        for i in 0..n {
            for j in 0..n {
                let mut sq = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        sq += x[i * n + a] * gl[a * n + b] * x[b * n + j];
                    }
                }
                out[i * n + j] = (2.0 * c * t * x[i * n + j] - 2.0 * sq
                    + 0.5 * q * w[i * n + j]
                    - 0.5 * c * t * t * w[i * n + j])
                    / vol;
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::background;
    use crate::grid::GridSpec;

    pub(crate) fn conformal(grid: &Grid, u: &Field) -> SymField {
        let e = u.map(|u| (2.0 * u).exp());
        SymField::from_fn(grid.dim(), |i, j| if i == j { e.clone() } else { grid.zeros() })
    }

    #[test]
    fn flat_metrics_have_no_curvature() {
        let grid = Grid::new(GridSpec::new(3, 8)).unwrap();
        let bg = background(&grid);
        assert_eq!(christoffel_delta(&grid, &bg.g).unwrap().max_abs(), 0.0);
        let mut diag = SymField::identity_scaled(3, grid.total_points(), 1.0);
        *diag.get_mut(0, 0) = grid.constant(4.0);
        *diag.get_mut(1, 1) = grid.constant(2.25);
        *diag.get_mut(2, 2) = grid.constant(0.49);
        assert!(ricci(&grid, &diag).unwrap().max_abs() <= 1e-14);
        assert!(scalar_curvature(&grid, &diag).unwrap().max_abs() <= 1e-14);
        let scaled = SymField::identity_scaled(3, grid.total_points(), 3.0);
        assert!(christoffel_delta(&grid, &scaled).unwrap().max_abs() <= 1e-14);
    }

    #[test]
    fn conformal_christoffel() {
        let grid = Grid::new(GridSpec::new(3, 16)).unwrap();
        let u = grid.sample(|x| 0.1 * x[0].sin() + 0.05 * (x[1] + x[2]).cos());
        let a = christoffel_delta(&grid, &conformal(&grid, &u)).unwrap();
        let du = grid.gradient(&u);
        let mut worst = 0.0_f64;
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let d = |x: usize, y: usize| if x == y { 1.0 } else { 0.0 };
                    let want = &(&(du.get(j) * d(k, i)) + &(du.get(i) * d(k, j))) - &(du.get(k) * d(i, j));
                    worst = worst.max((a.get(k, i, j) - &want).max_abs());
                }
            }
        }
        assert!(worst <= 1e-10, "{worst}");
    }
}
