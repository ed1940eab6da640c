//! Linearised constraints `DΦ`, the KID operator `DΦ*`, the reweighted `P*`,
//! the scalar-curvature adjoint, the flat auxiliary operators and the special
//! variations that turn `DΦ` into the elliptic system `F`.
//!
//! `DΦ`, `DΦ*` and the special variations are pointwise kernels over jets of
//! their arguments (see [`crate::jet`]); the two displays are coded
//! independently, so the integration-by-parts identity between them is a real
//! check.

use crate::error::Result;
use crate::fields::{join_components, split_components, ConstraintValue, LapseShift, PhasePoint};
use crate::geometry::{Geometry, LocalGeometry};
use crate::grid::Grid;
use crate::jet::{evaluate, JetKernel, JetOperator, Jets};
use crate::tensor::{sym_index, sym_pairs, Field, Rank3Field, SymField, TensorComponents, VectorField};

/// Direction `(h_ij, p^ij)` in phase space.
#[derive(Clone, Debug, PartialEq)]
pub struct Variation {
    pub h: SymField,
    pub p: SymField,
}

impl Variation {
    pub fn zeros(n: usize, len: usize) -> Self {
        Self {
            h: SymField::zeros(n, len),
            p: SymField::zeros(n, len),
        }
    }

    pub fn random(grid: &Grid, seed: u64, band: usize) -> Result<Self> {
        Ok(Self {
            h: grid.random_sym(seed, band)?,
            p: grid.random_sym(seed.wrapping_add(0xa5a5), band)?,
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        join_components(self.h.components().iter().chain(self.p.components()))
    }

    pub fn from_flat(n: usize, data: &[f64]) -> Self {
        let s = n * (n + 1) / 2;
        let mut comps = split_components(data, 2 * s);
        let p = comps.split_off(s);
        Self {
            h: SymField::new(n, comps),
            p: SymField::new(n, p),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            h: self.h.scaled(a),
            p: self.p.scaled(a),
        }
    }

    /// Flat `L²` pairing with an adjoint value (full index contraction).
    pub fn pairing(&self, grid: &Grid, a: &AdjointValue) -> f64 {
        grid.pairing(&self.h, &a.slot_h) + grid.pairing(&self.p, &a.slot_p)
    }

    pub fn l2_norm(&self, grid: &Grid) -> f64 {
        (grid.pairing(&self.h, &self.h) + grid.pairing(&self.p, &self.p)).sqrt()
    }
}

/// Value of `DΦ*ξ`: `slot_h^{ij}` (contravariant density, pairs with `h_ij`)
/// and `slot_p_ij` (covariant, pairs with `p^ij`).
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointValue {
    pub slot_h: SymField,
    pub slot_p: SymField,
}

impl AdjointValue {
    pub fn l2_norm(&self, grid: &Grid) -> f64 {
        (grid.pairing(&self.slot_h, &self.slot_h) + grid.pairing(&self.slot_p, &self.slot_p)).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.slot_h.max_abs().max(self.slot_p.max_abs())
    }
}

/// Injected sign errors used to show that the checks are not vacuous.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mutant {
    #[default]
    None,
    /// Flips `π^{ki}∇_k X^j + π^{kj}∇_k X^i − π^{ij}∇_k X^k` inside `L_X π`.
    FlipPiHatGrad,
    /// Flips the `π^{jk}(2∇_k h_ij − ∇_i h_jk)` term of `DΦᵢ`.
    FlipDphiPiGrad,
    /// Flips the last term of the flat second-derivative identity.
    FlipSecondDerivativeLast,
    /// Flips the `g ΔN` term of `L(N)`.
    FlipTraceTerm,
}

fn sdim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// `DΦ(h, p)` at a fixed phase point.
pub struct DphiKernel<'a> {
    pub geometry: &'a Geometry,
    pub mutant: Mutant,
}

impl JetKernel for DphiKernel<'_> {
    type Local = LocalGeometry;

    fn dim(&self) -> usize {
        self.geometry.dim()
    }
    fn inputs(&self) -> usize {
        2 * sdim(self.dim())
    }
    fn outputs(&self) -> usize {
        1 + self.dim()
    }
    fn order(&self) -> usize {
        2
    }
    fn local(&self, point: usize) -> LocalGeometry {
        self.geometry.local(point)
    }

    fn eval(&self, l: &LocalGeometry, j: Jets<'_>, out: &mut [f64]) {
        let n = l.n;
        let s = sdim(n);
        let h = |a: usize, b: usize| j.val(sym_index(n, a, b));
        let dh = |c: usize, a: usize, b: usize| j.d(sym_index(n, a, b), c);
        let ddh = |c: usize, d: usize, a: usize, b: usize| j.dd(sym_index(n, a, b), c, d);
        let p = |a: usize, b: usize| j.val(s + sym_index(n, a, b));
        let dp = |c: usize, a: usize, b: usize| j.d(s + sym_index(n, a, b), c);
        let at3 = |a: usize, b: usize, c: usize| (a * n + b) * n + c;

        // ∇_a h_ij
        let mut nh = vec![0.0; n * n * n];
        for a in 0..n {
            for i in 0..n {
                for k in 0..n {
                    let mut v = dh(a, i, k);
                    for m in 0..n {
                        v -= l.gam(m, a, i) * h(m, k) + l.gam(m, a, k) * h(i, m);
                    }
                    nh[at3(a, i, k)] = v;
                }
            }
        }
        // ∇_b ∇_a h_ij, contracted straight into ∇^i∇^j h_ij and Δ tr h
        let mut divdiv = 0.0;
        let mut lap_tr = 0.0;
        for b in 0..n {
            for a in 0..n {
                for i in 0..n {
                    for k in 0..n {
                        let w1 = l.m(&l.ginv, i, b) * l.m(&l.ginv, k, a);
                        let w2 = l.m(&l.ginv, a, b) * l.m(&l.ginv, i, k);
                        if w1 == 0.0 && w2 == 0.0 {
                            continue;
                        }
                        let mut v = ddh(b, a, i, k);
                        for m in 0..n {
                            v -= l.dgam(b, m, a, i) * h(m, k)
                                + l.gam(m, a, i) * dh(b, m, k)
                                + l.dgam(b, m, a, k) * h(i, m)
                                + l.gam(m, a, k) * dh(b, i, m);
                            v -= l.gam(m, b, a) * nh[at3(m, i, k)]
                                + l.gam(m, b, i) * nh[at3(a, m, k)]
                                + l.gam(m, b, k) * nh[at3(a, i, m)];
                        }
                        divdiv += w1 * v;
                        lap_tr += w2 * v;
                    }
                }
            }
        }
        let pil = l.pi_lower();
        let c = 2.0 / (n as f64 - 1.0) * l.trace_pi;
        let mut zero = (divdiv - lap_tr) * l.sqrt_det;
        for a in 0..n {
            for b in 0..n {
                zero += h(a, b) * (l.m(&l.pi_tensor, a, b) - l.m(&l.einstein, a, b)) * l.sqrt_det;
                zero += p(a, b) * (c * l.m(&l.g, a, b) - 2.0 * pil[a * n + b]) / l.sqrt_det;
            }
        }
        out[0] = zero;

        let flip = if self.mutant == Mutant::FlipDphiPiGrad { -1.0 } else { 1.0 };
        // ∇_k p^{jk}
        let mut divp = vec![0.0; n];
        for (jj, d) in divp.iter_mut().enumerate() {
            for k in 0..n {
                *d += dp(k, jj, k);
                for m in 0..n {
                    *d += l.gam(jj, k, m) * p(k, m);
                }
            }
        }
        for i in 0..n {
            let mut v = 0.0;
            for jj in 0..n {
                for k in 0..n {
                    v += flip * l.m(&l.pi, jj, k) * (2.0 * nh[at3(k, i, jj)] - nh[at3(i, jj, k)]);
                }
                v += 2.0 * h(i, jj) * l.div_pi[jj];
                v += 2.0 * l.m(&l.g, i, jj) * divp[jj];
            }
            out[1 + i] = v;
        }
    }
}

/// `DΦ*(N, X)` at a fixed phase point.
pub struct AdjointKernel<'a> {
    pub geometry: &'a Geometry,
    pub mutant: Mutant,
}

impl JetKernel for AdjointKernel<'_> {
    type Local = LocalGeometry;

    fn dim(&self) -> usize {
        self.geometry.dim()
    }
    fn inputs(&self) -> usize {
        1 + self.dim()
    }
    fn outputs(&self) -> usize {
        2 * sdim(self.dim())
    }
    fn order(&self) -> usize {
        2
    }
    fn local(&self, point: usize) -> LocalGeometry {
        self.geometry.local(point)
    }

    fn eval(&self, l: &LocalGeometry, j: Jets<'_>, out: &mut [f64]) {
        let n = l.n;
        let s = sdim(n);
        let lapse = j.val(0);
        let x = |i: usize| j.val(1 + i);
        // ∇_a ∇_b N
        let mut hn = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let mut v = j.dd(0, a, b);
                for m in 0..n {
                    v -= l.gam(m, a, b) * j.d(0, m);
                }
                hn[a * n + b] = v;
            }
        }
        let mut lap = 0.0;
        for a in 0..n {
            for b in 0..n {
                lap += l.m(&l.ginv, a, b) * hn[a * n + b];
            }
        }
        // ∇_k X^i at [k n + i]
        let mut nx = vec![0.0; n * n];
        for k in 0..n {
            for i in 0..n {
                let mut v = j.d(1 + i, k);
                for m in 0..n {
                    v += l.gam(i, k, m) * x(m);
                }
                nx[k * n + i] = v;
            }
        }
        let div: f64 = (0..n).map(|k| nx[k * n + k]).sum();
        let sign = if self.mutant == Mutant::FlipPiHatGrad { -1.0 } else { 1.0 };

        for (i, k) in sym_pairs(n) {
            let idx = sym_index(n, i, k);
            let mut hess_up = 0.0;
            for a in 0..n {
                for b in 0..n {
                    hess_up += l.m(&l.ginv, i, a) * l.m(&l.ginv, k, b) * hn[a * n + b];
                }
            }
            let mut v = l.sqrt_det
                * (hess_up - l.m(&l.ginv, i, k) * lap
                    + (l.m(&l.pi_tensor, i, k) - l.m(&l.einstein, i, k)) * lapse);
            let mut hat = -div * l.m(&l.pi, i, k);
            for m in 0..n {
                v += x(m) * l.npi(m, i, k);
                hat += nx[m * n + i] * l.m(&l.pi, m, k) + nx[m * n + k] * l.m(&l.pi, i, m);
            }
            out[idx] = v - sign * hat;

            // −2 K_ik N − (∇_i X_k + ∇_k X_i) with ∇_i X_k = g_km ∇_i X^m
            let mut sym = 0.0;
            for m in 0..n {
                sym += l.m(&l.g, k, m) * nx[i * n + m] + l.m(&l.g, i, m) * nx[k * n + m];
            }
            out[s + idx] = -2.0 * l.m(&l.k, i, k) * lapse - sym;
        }
    }
}

/// Special variation `(y, Y) ↦ (h, p)`.
pub struct SpecialVariationKernel<'a> {
    pub geometry: &'a Geometry,
    pub tau: f64,
}

impl JetKernel for SpecialVariationKernel<'_> {
    type Local = LocalGeometry;

    fn dim(&self) -> usize {
        self.geometry.dim()
    }
    fn inputs(&self) -> usize {
        1 + self.dim()
    }
    fn outputs(&self) -> usize {
        2 * sdim(self.dim())
    }
    fn order(&self) -> usize {
        1
    }
    fn local(&self, point: usize) -> LocalGeometry {
        self.geometry.local(point)
    }

    fn eval(&self, l: &LocalGeometry, j: Jets<'_>, out: &mut [f64]) {
        let n = l.n;
        let s = sdim(n);
        let y = j.val(0);
        let mut ny = vec![0.0; n * n];
        for a in 0..n {
            for m in 0..n {
                let mut v = j.d(1 + m, a);
                for q in 0..n {
                    v += l.gam(m, a, q) * j.val(1 + q);
                }
                ny[a * n + m] = v;
            }
        }
        let tr: f64 = (0..n).map(|a| ny[a * n + a]).sum();
        let nf = n as f64;
        for (i, k) in sym_pairs(n) {
            let idx = sym_index(n, i, k);
            out[idx] = 2.0 * y * l.m(&l.g, i, k);
            // S^{ik} = ½(g^{ia} ∇_a Y^k + g^{ka} ∇_a Y^i)
            let mut s_up = 0.0;
            for a in 0..n {
                s_up += 0.5 * (l.m(&l.ginv, i, a) * ny[a * n + k] + l.m(&l.ginv, k, a) * ny[a * n + i]);
            }
            let gik = l.m(&l.ginv, i, k);
            out[s + idx] = (2.0 * s_up - gik * tr - (nf - 1.0) * (nf - 2.0) * self.tau * y * gik) * l.sqrt_det;
        }
    }
}

/// `Dφ(g)*N` for `φ(g) = (R(g) − 2f)√g`, as a kernel for matrix-free use.
pub struct DrAdjointKernel<'a> {
    pub geometry: &'a Geometry,
    pub f: &'a Field,
}

impl JetKernel for DrAdjointKernel<'_> {
    type Local = (LocalGeometry, f64);

    fn dim(&self) -> usize {
        self.geometry.dim()
    }
    fn inputs(&self) -> usize {
        1
    }
    fn outputs(&self) -> usize {
        sdim(self.dim())
    }
    fn order(&self) -> usize {
        2
    }
    fn local(&self, point: usize) -> (LocalGeometry, f64) {
        (self.geometry.local(point), self.f.as_slice()[point])
    }

    fn eval(&self, (l, f): &(LocalGeometry, f64), j: Jets<'_>, out: &mut [f64]) {
        let n = l.n;
        let lapse = j.val(0);
        let mut hn = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let mut v = j.dd(0, a, b);
                for m in 0..n {
                    v -= l.gam(m, a, b) * j.d(0, m);
                }
                hn[a * n + b] = v;
            }
        }
        let lap: f64 = (0..n * n).map(|q| l.ginv[q] * hn[q]).sum();
        let half = 0.5 * (l.scalar - 2.0 * f);
        for (i, k) in sym_pairs(n) {
            let mut hess_up = 0.0;
            let mut ric_up = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let w = l.m(&l.ginv, i, a) * l.m(&l.ginv, k, b);
                    hess_up += w * hn[a * n + b];
                    ric_up += w * l.m(&l.ricci, a, b);
                }
            }
            let gik = l.m(&l.ginv, i, k);
            out[sym_index(n, i, k)] = (hess_up - gik * lap - (ric_up - half * gik) * lapse) * l.sqrt_det;
        }
    }
}

fn lapse_shift_inputs(xi: &LapseShift) -> Vec<&Field> {
    std::iter::once(&xi.lapse).chain(xi.shift.components()).collect()
}

fn variation_inputs(v: &Variation) -> Vec<&Field> {
    v.h.components().iter().chain(v.p.components()).collect()
}

fn to_constraint(mut comps: Vec<Field>) -> ConstraintValue {
    let phi0 = comps.remove(0);
    ConstraintValue::new(phi0, VectorField::new(comps))
}

fn to_pair(n: usize, mut comps: Vec<Field>) -> (SymField, SymField) {
    let second = comps.split_off(sdim(n));
    (SymField::new(n, comps), SymField::new(n, second))
}

/// `DΦ_{(g,π)}(h, p)` from precomputed geometry.
pub fn dphi_geometry(geo: &Geometry, v: &Variation, mutant: Mutant) -> ConstraintValue {
    let k = DphiKernel { geometry: geo, mutant };
    to_constraint(evaluate(&geo.grid, &k, &variation_inputs(v)))
}

/// `DΦ_{(g,π)}(h, p)`.
pub fn dphi(grid: &Grid, p: &PhasePoint, v: &Variation, lambda: f64) -> Result<ConstraintValue> {
    grid.check_components(&v.h)?;
    grid.check_components(&v.p)?;
    Ok(dphi_geometry(&Geometry::new(grid, p, lambda)?, v, Mutant::None))
}

/// `DΦ*_{(g,π)}(N, X)` from precomputed geometry.
pub fn dphi_adjoint_geometry(geo: &Geometry, xi: &LapseShift, mutant: Mutant) -> AdjointValue {
    let k = AdjointKernel { geometry: geo, mutant };
    let (slot_h, slot_p) = to_pair(geo.dim(), evaluate(&geo.grid, &k, &lapse_shift_inputs(xi)));
    AdjointValue { slot_h, slot_p }
}

/// `DΦ*_{(g,π)}(N, X)`.
pub fn dphi_adjoint(grid: &Grid, p: &PhasePoint, xi: &LapseShift, lambda: f64) -> Result<AdjointValue> {
    xi.check(grid)?;
    Ok(dphi_adjoint_geometry(&Geometry::new(grid, p, lambda)?, xi, Mutant::None))
}

/// Special variation `h = 2y g`, `p = (2S(Y) − g⁻¹ tr S(Y) − (n−1)(n−2)τ y g⁻¹)√g`.
pub fn special_variation_geometry(geo: &Geometry, y: &Field, cap_y: &VectorField, tau: f64) -> Variation {
    let k = SpecialVariationKernel { geometry: geo, tau };
    let inputs: Vec<&Field> = std::iter::once(y).chain(cap_y.components()).collect();
    let (h, p) = to_pair(geo.dim(), evaluate(&geo.grid, &k, &inputs));
    Variation { h, p }
}

pub fn special_variation(
    grid: &Grid,
    p: &PhasePoint,
    y: &Field,
    cap_y: &VectorField,
    tau: f64,
) -> Result<Variation> {
    grid.check(y)?;
    grid.check_components(cap_y)?;
    Ok(special_variation_geometry(&Geometry::new(grid, p, grid.lambda())?, y, cap_y, tau))
}

/// `F(y, Y) = DΦ(special_variation(y, Y))`.
pub fn f_op(
    grid: &Grid,
    p: &PhasePoint,
    y: &Field,
    cap_y: &VectorField,
    lambda: f64,
    tau: f64,
) -> Result<ConstraintValue> {
    let geo = Geometry::new(grid, p, lambda)?;
    let v = special_variation_geometry(&geo, y, cap_y, tau);
    Ok(dphi_geometry(&geo, &v, Mutant::None))
}

/// Matrix-free `DΦ`, input `(h, p)` components, output `(Φ₀, Φᵢ)`.
pub fn dphi_operator(geo: &Geometry) -> JetOperator {
    JetOperator::from_kernel(&geo.grid, &DphiKernel { geometry: geo, mutant: Mutant::None })
}

/// Matrix-free `DΦ*`, input `(N, X)`, output `(slot_h, slot_p)`.
pub fn adjoint_operator(geo: &Geometry) -> JetOperator {
    JetOperator::from_kernel(&geo.grid, &AdjointKernel { geometry: geo, mutant: Mutant::None })
}

/// Matrix-free special variation, input `(y, Y)`, output `(h, p)`.
pub fn special_variation_operator(geo: &Geometry, tau: f64) -> JetOperator {
    JetOperator::from_kernel(&geo.grid, &SpecialVariationKernel { geometry: geo, tau })
}

/// Flat Killing operator `S̊(X)_ij = ½(∂_i X_j + ∂_j X_i)`.
pub fn killing(grid: &Grid, x: &VectorField) -> Result<SymField> {
    grid.check_components(x)?;
    let grads: Vec<VectorField> = x.components().iter().map(|c| grid.gradient(c)).collect();
    Ok(SymField::from_fn(grid.dim(), |i, j| {
        (grads[j].get(i) + grads[i].get(j)).scaled(0.5)
    }))
}

/// Both sides of `∂_k∂_j X_i = ∂_k S̊_ij + ∂_j S̊_ik − ∂_i S̊_jk` (flat `Riem = 0`),
/// stored at `(k, j, i)`.
pub fn u_second_derivative_identity(grid: &Grid, x: &VectorField, mutant: Mutant) -> Result<(Rank3Field, Rank3Field)> {
    let n = grid.dim();
    let s = killing(grid, x)?;
    let ds: Vec<VectorField> = s.components().iter().map(|c| grid.gradient(c)).collect();
    let dsv = |a: usize, i: usize, j: usize| ds[sym_index(n, i, j)].get(a);
    let hx: Vec<SymField> = x.components().iter().map(|c| grid.hessian(c)).collect();
    let len = grid.total_points();
    let mut lhs = Rank3Field::zeros(n, len);
    let mut rhs = Rank3Field::zeros(n, len);
    let last = if mutant == Mutant::FlipSecondDerivativeLast { -1.0 } else { 1.0 };
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                *lhs.get_mut(k, j, i) = hx[i].get(k, j).clone();
                *rhs.get_mut(k, j, i) = &(dsv(k, i, j) + dsv(j, i, k)) - &(dsv(i, j, k) * last);
            }
        }
    }
    Ok((lhs, rhs))
}

/// `Ů_{kji}(X) = ∂_k∂_j X_i + κ(δ_jk X_i − δ_ik X_j)`.
pub fn u_ring(grid: &Grid, x: &VectorField, kappa: f64) -> Result<Rank3Field> {
    grid.check_components(x)?;
    let n = grid.dim();
    let hx: Vec<SymField> = x.components().iter().map(|c| grid.hessian(c)).collect();
    let mut out = Rank3Field::zeros(n, grid.total_points());
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let mut v = hx[i].get(k, j).clone();
                if j == k {
                    v.axpy(kappa, x.get(i));
                }
                if i == k {
                    v.axpy(-kappa, x.get(j));
                }
                *out.get_mut(k, j, i) = v;
            }
        }
    }
    Ok(out)
}

/// `T̊(N) = ∂∂N + κ δ N`.
pub fn t_ring(grid: &Grid, lapse: &Field, kappa: f64) -> Result<SymField> {
    grid.check(lapse)?;
    let h = grid.hessian(lapse);
    Ok(SymField::from_fn(grid.dim(), |i, j| {
        let mut v = h.get(i, j).clone();
        if i == j {
            v.axpy(kappa, lapse);
        }
        v
    }))
}

/// Covariant Hessian `∇_a∇_b N = ∂_a∂_b N − Γ^m_ab ∂_m N`.
fn covariant_hessian(geo: &Geometry, lapse: &Field) -> SymField {
    let grid = &geo.grid;
    let n = geo.dim();
    let h = grid.hessian(lapse);
    let d = grid.gradient(lapse);
    SymField::from_fn(n, |a, b| {
        let mut v = h.get(a, b).clone();
        for m in 0..n {
            v -= &geo.gamma.get(m, a, b).pointwise_mul(d.get(m));
        }
        v
    })
}

/// Shifted Hessians `T(N)` and `L(N)`, each from its own display.
#[derive(Clone, Debug)]
pub struct ShiftedHessian {
    pub t: SymField,
    pub l: SymField,
}

/// `T(N) = ∇∇N − [Ric − (R+2Λ)/(2(n−1)) g]N` and
/// `L(N) = ∇∇N − g ΔN − [Ric − ½(R−2Λ) g]N`.
pub fn t_shift(grid: &Grid, g: &SymField, lapse: &Field, lambda: f64, mutant: Mutant) -> Result<ShiftedHessian> {
    grid.check(lapse)?;
    let n = g.dim();
    let p = PhasePoint::new(g.clone(), SymField::zeros(n, grid.total_points()));
    let geo = Geometry::new(grid, &p, lambda)?;
    let hess = covariant_hessian(&geo, lapse);
    let lap = crate::fields::trace(&geo.ginv, &hess);
    let ric = &geo.curvature.ricci;
    let r = &geo.curvature.scalar;
    let nf = n as f64;
    let flip = if mutant == Mutant::FlipTraceTerm { -1.0 } else { 1.0 };
    let t = SymField::from_fn(n, |i, j| {
        let shift = r.map(|r| (r + 2.0 * lambda) / (2.0 * (nf - 1.0)));
        let bracket = ric.get(i, j) - &shift.pointwise_mul(g.get(i, j));
        hess.get(i, j) - &bracket.pointwise_mul(lapse)
    });
    let l = SymField::from_fn(n, |i, j| {
        let half = r.map(|r| 0.5 * (r - 2.0 * lambda));
        let bracket = ric.get(i, j) - &half.pointwise_mul(g.get(i, j));
        let mut v = hess.get(i, j) - &(&g.get(i, j).pointwise_mul(&lap) * flip);
        v -= &bracket.pointwise_mul(lapse);
        v
    });
    Ok(ShiftedHessian { t, l })
}

/// `Dφ(g)*N = [∇^i∇^j N − g^{ij} ΔN − (R^{ij} − ½(R − 2f) g^{ij}) N] √g`
/// for `φ(g) = (R(g) − 2f)√g`.
pub fn dr_adjoint(grid: &Grid, g: &SymField, f: &Field, lapse: &Field) -> Result<SymField> {
    grid.check(f)?;
    grid.check(lapse)?;
    let n = g.dim();
    let p = PhasePoint::new(g.clone(), SymField::zeros(n, grid.total_points()));
    let geo = Geometry::new(grid, &p, 0.0)?;
    let hess = covariant_hessian(&geo, lapse);
    let hess_up = crate::fields::congruence(&geo.ginv, &hess);
    let lap = crate::fields::trace(&geo.ginv, &hess);
    let ric_up = crate::fields::congruence(&geo.ginv, &geo.curvature.ricci);
    let half = geo.curvature.scalar.zip_map(f, |r, f| 0.5 * (r - 2.0 * f));
    Ok(SymField::from_fn(n, |i, j| {
        let gij = geo.ginv.get(i, j);
        let mut v = hess_up.get(i, j) - &gij.pointwise_mul(&lap);
        let bracket = ric_up.get(i, j) - &half.pointwise_mul(gij);
        v -= &bracket.pointwise_mul(lapse);
        v.pointwise_mul(&geo.sqrt_det)
    }))
}

/// Linearisation of `(R(g) − 2f)√g` in the direction `h` with `f` fixed.
pub fn dscalar_map(grid: &Grid, g: &SymField, f: &Field, h: &SymField) -> Result<Field> {
    grid.check(f)?;
    let n = g.dim();
    let p = PhasePoint::new(g.clone(), SymField::zeros(n, grid.total_points()));
    let geo = Geometry::new(grid, &p, 0.0)?;
    let v = Variation {
        h: h.clone(),
        p: SymField::zeros(n, grid.total_points()),
    };
    let base = dphi_geometry(&geo, &v, Mutant::None).phi0;
    let tr = crate::fields::trace(&geo.ginv, h);
    Ok(&base - &f.pointwise_mul(&tr).pointwise_mul(&geo.sqrt_det))
}

/// `P*ξ = (g^{−1/4} DΦ*₁ξ, g^{1/4} ∇(DΦ*₂ξ))`, the second slot at `(l, i, j)`.
#[derive(Clone, Debug)]
pub struct PStarValue {
    pub first: SymField,
    pub second: Rank3Field,
}

impl PStarValue {
    pub fn l2_norm(&self, grid: &Grid) -> f64 {
        (grid.pairing(&self.first, &self.first) + grid.pairing(&self.second, &self.second)).sqrt()
    }

    pub fn sub(&self, other: &PStarValue) -> PStarValue {
        PStarValue {
            first: &self.first - &other.first,
            second: &self.second - &other.second,
        }
    }
}

pub fn p_star_geometry(geo: &Geometry, xi: &LapseShift) -> PStarValue {
    let grid = &geo.grid;
    let n = geo.dim();
    let adj = dphi_adjoint_geometry(geo, xi, Mutant::None);
    let quarter = geo.sqrt_det.map(f64::sqrt);
    let inv_quarter = quarter.map(|q| 1.0 / q);
    let first = SymField::from_fn(n, |i, j| adj.slot_h.get(i, j).pointwise_mul(&inv_quarter));
    let grads: Vec<VectorField> = adj.slot_p.components().iter().map(|c| grid.gradient(c)).collect();
    let mut second = Rank3Field::zeros(n, grid.total_points());
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut v = grads[sym_index(n, i, j)].get(l).clone();
                for m in 0..n {
                    v -= &geo.gamma.get(m, l, i).pointwise_mul(adj.slot_p.get(m, j));
                    v -= &geo.gamma.get(m, l, j).pointwise_mul(adj.slot_p.get(i, m));
                }
                *second.get_mut(l, i, j) = v.pointwise_mul(&quarter);
            }
        }
    }
    PStarValue { first, second }
}

pub fn p_star(grid: &Grid, p: &PhasePoint, xi: &LapseShift, lambda: f64) -> Result<PStarValue> {
    xi.check(grid)?;
    Ok(p_star_geometry(&Geometry::new(grid, p, lambda)?, xi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::background;
    use crate::grid::GridSpec;
    use crate::linop::LinearOperator;

    fn grid(points: usize, tau: f64) -> Grid {
        Grid::new(GridSpec::new(3, points).with_tau(tau)).unwrap()
    }

    #[test]
    fn zero_inputs_give_zero() {
        let g = grid(8, 0.4);
        let p = PhasePoint::perturbed_background(&g, 1, 1, 0.05, 0.05).unwrap();
        let v = Variation::zeros(3, g.total_points());
        assert_eq!(dphi(&g, &p, &v, g.lambda()).unwrap().max_abs(), 0.0);
        let xi = LapseShift::zeros(3, g.total_points());
        assert_eq!(dphi_adjoint(&g, &p, &xi, g.lambda()).unwrap().max_abs(), 0.0);
        assert_eq!(p_star(&g, &p, &xi, g.lambda()).unwrap().l2_norm(&g), 0.0);
    }

    #[test]
    fn flat_kernel_elements() {
        let g = grid(8, 0.0);
        let bg = background(&g);
        let len = g.total_points();
        let mut xi = LapseShift::zeros(3, len);
        xi.lapse = g.constant(1.0);
        assert!(dphi_adjoint(&g, &bg, &xi, 0.0).unwrap().max_abs() <= 1e-14);
        let mut xi = LapseShift::zeros(3, len);
        *xi.shift.get_mut(1) = g.constant(0.7);
        assert!(dphi_adjoint(&g, &bg, &xi, 0.0).unwrap().max_abs() <= 1e-14);
        assert!(p_star(&g, &bg, &xi, 0.0).unwrap().l2_norm(&g) <= 1e-13);
    }

    #[test]
    fn flat_hamiltonian_of_conformal_direction() {
        let g = grid(16, 0.0);
        let bg = background(&g);
        let y = g.random_scalar(3, 3).unwrap();
        let v = Variation {
            h: SymField::from_fn(3, |i, j| if i == j { y.scaled(2.0) } else { g.zeros() }),
            p: SymField::zeros(3, g.total_points()),
        };
        let out = dphi(&g, &bg, &v, 0.0).unwrap();
        let want = g.laplacian(&y).scaled(-4.0);
        assert!((&out.phi0 - &want).max_abs() <= 1e-11 * want.max_abs());
        assert!(out.phii.max_abs() <= 1e-14);
    }

    #[test]
    fn operators_match_literal_evaluation() {
        let g = grid(8, 0.3);
        let p = PhasePoint::perturbed_background(&g, 2, 1, 0.05, 0.05).unwrap();
        let geo = Geometry::new(&g, &p, g.lambda()).unwrap();
        let xi = LapseShift::random(&g, 4, 2).unwrap();
        let lit = dphi_adjoint_geometry(&geo, &xi, Mutant::None);
        let op = adjoint_operator(&geo).apply(&xi.to_flat());
        let flat: Vec<f64> = join_components(lit.slot_h.components().iter().chain(lit.slot_p.components()));
        let err = op.iter().zip(&flat).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-12, "{err}");
        let v = Variation::random(&g, 5, 2).unwrap();
        let lit = dphi_geometry(&geo, &v, Mutant::None).to_flat();
        let op = dphi_operator(&geo).apply(&v.to_flat());
        let err = op.iter().zip(&lit).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-11, "{err}");
    }
}
