//! Phase-space containers and pointwise metric algebra.
//!
//! Index placement follows the storage type: a [`MetricField`] is covariant,
//! a [`MomentumField`] is a contravariant density of weight one. Because the
//! background metric is the identity, relative and absolute densities coincide
//! and `√g` below is simply `√det g`.

use std::ops::{Deref, DerefMut};

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Side};

use crate::error::{ForgeError, Result};
use crate::grid::Grid;
use crate::tensor::{sym_pairs, Field, Shape, SymField, TensorField, VectorField};

/// Covariant symmetric metric `g_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField(pub SymField);

/// Contravariant symmetric momentum density `π^ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumField(pub SymField);

macro_rules! sym_newtype {
    ($ty:ident) => {
        impl Deref for $ty {
            type Target = SymField;
            fn deref(&self) -> &SymField {
                &self.0
            }
        }

        impl DerefMut for $ty {
            fn deref_mut(&mut self) -> &mut SymField {
                &mut self.0
            }
        }

        impl From<SymField> for $ty {
            fn from(s: SymField) -> Self {
                $ty(s)
            }
        }
    };
}

sym_newtype!(MetricField);
sym_newtype!(MomentumField);

/// One point `(g, π)` of the phase space.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub g: MetricField,
    pub pi: MomentumField,
}

impl PhasePoint {
    pub fn new(g: SymField, pi: SymField) -> Self {
        Self {
            g: MetricField(g),
            pi: MomentumField(pi),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    pub fn check(&self, grid: &Grid) -> Result<()> {
        grid.check_components(&self.g.0)?;
        grid.check_components(&self.pi.0)
    }

    /// `(g + s h, π + s q)`.
    pub fn displaced(&self, s: f64, h: &SymField, q: &SymField) -> PhasePoint {
        let mut out = self.clone();
        out.g.axpy(s, h);
        out.pi.axpy(s, q);
        out
    }

    /// Background data plus band-limited random perturbations of the given amplitudes.
    ///
    /// Each perturbation is normalised to unit max-norm before scaling, so the
    /// amplitudes are pointwise bounds.
    pub fn perturbed_background(
        grid: &Grid,
        seed: u64,
        band: usize,
        g_amplitude: f64,
        pi_amplitude: f64,
    ) -> Result<PhasePoint> {
        let bg = background(grid);
        let h = unit_max(grid.random_sym(seed, band)?);
        let q = unit_max(grid.random_sym(seed.wrapping_add(0x9e37_79b9), band)?);
        let mut out = bg;
        out.g.axpy(g_amplitude, &h);
        out.pi.axpy(pi_amplitude, &q);
        Ok(out)
    }
}

fn unit_max(s: SymField) -> SymField {
    let m = s.max_abs();
    if m > 0.0 {
        s.scaled(1.0 / m)
    } else {
        s
    }
}

/// Lapse-shift pair `ξ = (N, X)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LapseShift {
    pub lapse: Field,
    pub shift: VectorField,
}

/// Constraint values `(Φ₀, Φᵢ)`, a scalar density and a one-form density.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintValue {
    pub phi0: Field,
    pub phii: VectorField,
}

macro_rules! scalar_vector_pair {
    ($ty:ident, $s:ident, $v:ident) => {
        impl $ty {
            pub fn new($s: Field, $v: VectorField) -> Self {
                Self { $s, $v }
            }

            pub fn zeros(n: usize, len: usize) -> Self {
                Self {
                    $s: Field::zeros(len),
                    $v: VectorField::zeros(n, len),
                }
            }

            pub fn dim(&self) -> usize {
                self.$v.components().len()
            }

            /// Components concatenated: scalar first, then the vector.
            pub fn to_flat(&self) -> Vec<f64> {
                let mut out = self.$s.as_slice().to_vec();
                for c in self.$v.components() {
                    out.extend_from_slice(c.as_slice());
                }
                out
            }

            pub fn from_flat(n: usize, data: &[f64]) -> Self {
                let mut comps = split_components(data, n + 1);
                let $s = comps.remove(0);
                Self {
                    $s,
                    $v: VectorField::new(comps),
                }
            }

            pub fn scaled(&self, a: f64) -> Self {
                Self {
                    $s: self.$s.scaled(a),
                    $v: self.$v.scaled(a),
                }
            }

            pub fn axpy(&mut self, a: f64, x: &$ty) {
                self.$s.axpy(a, &x.$s);
                self.$v.axpy(a, &x.$v);
            }

            pub fn max_abs(&self) -> f64 {
                self.$s.max_abs().max(self.$v.max_abs())
            }

            /// `(∫ s² + Σ_i ∫ v_i²)^{1/2}` in the flat measure.
            pub fn l2_norm(&self, grid: &Grid) -> f64 {
                (grid.pairing(&self.$s, &self.$s) + grid.pairing(&self.$v, &self.$v))
                    .max(0.0)
                    .sqrt()
            }

            /// Flat `L²` pairing.
            pub fn pairing(&self, grid: &Grid, other: &$ty) -> f64 {
                grid.pairing(&self.$s, &other.$s) + grid.pairing(&self.$v, &other.$v)
            }

            pub fn check(&self, grid: &Grid) -> Result<()> {
                grid.check(&self.$s)?;
                grid.check_components(&self.$v)
            }
        }

        impl std::ops::Sub for &$ty {
            type Output = $ty;
            fn sub(self, rhs: &$ty) -> $ty {
                $ty {
                    $s: &self.$s - &rhs.$s,
                    $v: &self.$v - &rhs.$v,
                }
            }
        }

        impl std::ops::Add for &$ty {
            type Output = $ty;
            fn add(self, rhs: &$ty) -> $ty {
                $ty {
                    $s: &self.$s + &rhs.$s,
                    $v: &self.$v + &rhs.$v,
                }
            }
        }
    };
}

use crate::tensor::TensorComponents;

scalar_vector_pair!(LapseShift, lapse, shift);
scalar_vector_pair!(ConstraintValue, phi0, phii);

impl LapseShift {
    pub fn random(grid: &Grid, seed: u64, band: usize) -> Result<Self> {
        Ok(Self {
            lapse: grid.random_scalar(seed, band)?,
            shift: grid.random_vector(seed.wrapping_add(0x51_7cc1), band)?,
        })
    }
}

impl ConstraintValue {
    /// `∫ Φ₀ N + Φᵢ Xⁱ`.
    pub fn dual_pairing(&self, grid: &Grid, xi: &LapseShift) -> f64 {
        grid.inner(&self.phi0, &xi.lapse) + grid.pairing(&self.phii, &xi.shift)
    }
}

/// Splits a flat vector into `count` equal-length fields.
pub fn split_components(data: &[f64], count: usize) -> Vec<Field> {
    let len = data.len() / count;
    data.chunks(len).map(|c| Field::from_vec(c.to_vec())).collect()
}

/// Concatenates field components into one flat vector.
pub fn join_components<'a>(fields: impl IntoIterator<Item = &'a Field>) -> Vec<f64> {
    let mut out = Vec::new();
    for f in fields {
        out.extend_from_slice(f.as_slice());
    }
    out
}

/// Pointwise inverse and volume factor of a metric.
#[derive(Clone, Debug)]
pub struct MetricData {
    pub inverse: SymField,
    pub sqrt_det: Field,
}

fn local_matrix(n: usize, m: &[f64]) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| m[i * n + j])
}

fn eigenvalues(n: usize, m: &[f64]) -> Vec<f64> {
    local_matrix(n, m)
        .self_adjoint_eigenvalues(Side::Lower)
        .unwrap_or_else(|_| vec![f64::NAN; n])
}

/// `g^{ij}` and `√det g`, failing at the first non-positive point.
pub fn metric_data(grid: &Grid, g: &SymField) -> Result<MetricData> {
    grid.check_components(g)?;
    let n = g.dim();
    let len = grid.total_points();
    let mut inverse = SymField::zeros(n, len);
    let mut sqrt_det = Field::zeros(len);
    let mut m = vec![0.0; n * n];
    for p in 0..len {
        g.matrix_at(p, &mut m);
        let mat = local_matrix(n, &m);
        let llt = match mat.llt(Side::Lower) {
            Ok(llt) => llt,
            Err(_) => return Err(degenerate(grid, p, n, &m)),
        };
        let l = llt.L();
        let mut root = 1.0;
        for i in 0..n {
            root *= l[(i, i)];
        }
        if !(root.is_finite() && root > 0.0) {
            return Err(degenerate(grid, p, n, &m));
        }
        let inv = llt.inverse();
        for (i, j) in sym_pairs(n) {
            inverse.get_mut(i, j).as_mut_slice()[p] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
        }
        sqrt_det.as_mut_slice()[p] = root;
    }
    Ok(MetricData { inverse, sqrt_det })
}

fn degenerate(grid: &Grid, p: usize, n: usize, m: &[f64]) -> ForgeError {
    let ev = eigenvalues(n, m);
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ev.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
    if min.abs() <= 1e-14 * max.max(1.0) {
        ForgeError::SingularMetric {
            point: grid.unravel(p),
        }
    } else {
        ForgeError::NotElliptic {
            point: grid.unravel(p),
            min_eigenvalue: min,
        }
    }
}

/// Pointwise `g^{ij}`.
pub fn metric_inverse(grid: &Grid, g: &SymField) -> Result<SymField> {
    Ok(metric_data(grid, g)?.inverse)
}

/// Pointwise `√(det g / det g̊) = √det g`.
pub fn sqrt_det(grid: &Grid, g: &SymField) -> Result<Field> {
    Ok(metric_data(grid, g)?.sqrt_det)
}

/// Largest `λ ∈ (0, 1]` with `λ g̊ ≤ g ≤ λ⁻¹ g̊` at every point.
pub fn ellipticity(grid: &Grid, g: &SymField) -> Result<f64> {
    grid.check_components(g)?;
    let n = g.dim();
    let mut m = vec![0.0; n * n];
    let mut lambda = 1.0_f64;
    for p in 0..grid.total_points() {
        g.matrix_at(p, &mut m);
        let ev = eigenvalues(n, &m);
        let (lo, hi) = (ev[0], ev[n - 1]);
        if !(lo > 0.0) {
            return Err(if lo.abs() <= 1e-14 * hi.abs().max(1.0) {
                ForgeError::SingularMetric {
                    point: grid.unravel(p),
                }
            } else {
                ForgeError::NotElliptic {
                    point: grid.unravel(p),
                    min_eigenvalue: lo,
                }
            });
        }
        lambda = lambda.min(lo).min(1.0 / hi);
    }
    Ok(lambda)
}

/// Builds a symmetric field from a pointwise map over full local matrices.
///
/// `f(p, inputs, out)` receives the row-major `n x n` matrices of `syms` at point `p`.
pub fn sym_pointwise(
    n: usize,
    len: usize,
    syms: &[&SymField],
    mut f: impl FnMut(usize, &[Vec<f64>], &mut [f64]),
) -> SymField {
    let mut out = SymField::zeros(n, len);
    let mut locals = vec![vec![0.0; n * n]; syms.len()];
    let mut m = vec![0.0; n * n];
    for p in 0..len {
        for (s, l) in syms.iter().zip(locals.iter_mut()) {
            s.matrix_at(p, l);
        }
        f(p, &locals, &mut m);
        for (i, j) in sym_pairs(n) {
            out.get_mut(i, j).as_mut_slice()[p] = m[i * n + j];
        }
    }
    out
}

/// `M T M` pointwise: raises a covariant tensor with `M = g⁻¹`, or lowers a
/// contravariant one with `M = g`.
pub fn congruence(metric: &SymField, t: &SymField) -> SymField {
    let n = metric.dim();
    let len = t.len_points();
    sym_pointwise(n, len, &[metric, t], |_, l, out| {
        let (m, t) = (&l[0], &l[1]);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += m[i * n + a] * m[j * n + b] * t[a * n + b];
                    }
                }
                out[i * n + j] = s;
            }
        }
    })
}

/// `M v` pointwise for a vector field.
pub fn contract_vector(metric: &SymField, v: &VectorField) -> VectorField {
    let n = metric.dim();
    VectorField::new(
        (0..n)
            .map(|i| {
                let mut acc = Field::zeros(v.get(0).len());
                for a in 0..n {
                    acc = &acc + &metric.get(i, a).pointwise_mul(v.get(a));
                }
                acc
            })
            .collect(),
    )
}

/// Full contraction `M_ij T_ij` of a symmetric tensor with a metric of opposite variance.
pub fn trace(metric: &SymField, t: &SymField) -> Field {
    let n = metric.dim();
    let mut acc = Field::zeros(t.len_points());
    for (i, j) in sym_pairs(n) {
        let w = if i == j { 1.0 } else { 2.0 };
        acc.axpy(w, &metric.get(i, j).pointwise_mul(t.get(i, j)));
    }
    acc
}

/// `‖T‖²` with both indices moved by `M` (`M = g` for contravariant `T`,
/// `M = g⁻¹` for covariant `T`).
pub fn norm_sq(metric: &SymField, t: &SymField) -> Field {
    let n = metric.dim();
    let len = t.len_points();
    let mut out = Field::zeros(len);
    let mut m = vec![0.0; n * n];
    let mut x = vec![0.0; n * n];
    for p in 0..len {
        metric.matrix_at(p, &mut m);
        t.matrix_at(p, &mut x);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        s += m[i * n + a] * m[j * n + b] * x[i * n + j] * x[a * n + b];
                    }
                }
            }
        }
        out.as_mut_slice()[p] = s;
    }
    out
}

/// Variance of a tensor argument to [`tensor_norm_sq`] and [`tensor_trace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variance {
    Covariant,
    Contravariant,
}

/// `‖T‖²_g` for a scalar, vector or symmetric rank-2 field of the given variance.
pub fn tensor_norm_sq(
    grid: &Grid,
    g: &SymField,
    t: &TensorField,
    variance: Variance,
) -> Result<Field> {
    grid.check_components(t)?;
    let inv;
    let metric = match variance {
        Variance::Contravariant => g,
        Variance::Covariant => {
            inv = metric_inverse(grid, g)?;
            &inv
        }
    };
    let n = g.dim();
    match t.shape {
        Shape::Scalar => Ok(t.comps[0].pointwise_mul(&t.comps[0])),
        Shape::Vector => {
            let v = VectorField::new(t.comps.clone());
            let mv = contract_vector(metric, &v);
            let mut acc = grid.zeros();
            for i in 0..n {
                acc.axpy(1.0, &v.get(i).pointwise_mul(mv.get(i)));
            }
            Ok(acc)
        }
        Shape::Sym2 => Ok(norm_sq(metric, &SymField::new(n, t.comps.clone()))),
        Shape::Rank3 => Err(ForgeError::ShapeMismatch(
            "norms of rank-3 fields are not defined here".into(),
        )),
    }
}

/// `g_ij T^ij` or `g^ij T_ij`.
pub fn tensor_trace(grid: &Grid, g: &SymField, t: &TensorField, variance: Variance) -> Result<Field> {
    grid.check_components(t)?;
    if t.shape != Shape::Sym2 {
        return Err(ForgeError::ShapeMismatch(format!(
            "trace needs a sym2 field, got {}",
            t.shape.name()
        )));
    }
    let s = SymField::new(g.dim(), t.comps.clone());
    Ok(match variance {
        Variance::Contravariant => trace(g, &s),
        Variance::Covariant => trace(&metric_inverse(grid, g)?, &s),
    })
}

/// `π^{ij} = (K^{ij} − tr_g K g^{ij}) √g`.
pub fn pi_from_k(grid: &Grid, g: &SymField, k: &SymField) -> Result<SymField> {
    let md = metric_data(grid, g)?;
    let k_up = congruence(&md.inverse, k);
    let tr = trace(&md.inverse, k);
    let n = g.dim();
    Ok(SymField::from_fn(n, |i, j| {
        let mut c = k_up.get(i, j) - &tr.pointwise_mul(md.inverse.get(i, j));
        c = c.pointwise_mul(&md.sqrt_det);
        c
    }))
}

/// Inverse of [`pi_from_k`]: `K = (π̃ − tr_g π̃/(n−1) g⁻¹)` lowered, `π̃ = π/√g`.
pub fn k_from_pi(grid: &Grid, g: &SymField, pi: &SymField) -> Result<SymField> {
    let md = metric_data(grid, g)?;
    let n = g.dim();
    let inv_root = md.sqrt_det.map(|x| 1.0 / x);
    let tilde = SymField::from_fn(n, |i, j| pi.get(i, j).pointwise_mul(&inv_root));
    let tr = trace(g, &tilde);
    let c = 1.0 / (n as f64 - 1.0);
    let k_up = SymField::from_fn(n, |i, j| tilde.get(i, j) - &(&tr.pointwise_mul(md.inverse.get(i, j)) * c));
    Ok(congruence(g, &k_up))
}

/// Background data `g̊ = δ`, `π̊^{ij} = τ(1−n)δ^{ij}` (from `K̊ = τ g̊`).
pub fn background(grid: &Grid) -> PhasePoint {
    let n = grid.dim();
    let len = grid.total_points();
    let tau = grid.spec().tau;
    PhasePoint::new(
        SymField::identity_scaled(n, len, 1.0),
        SymField::identity_scaled(n, len, tau * (1.0 - n as f64)),
    )
}

trait LenPoints {
    fn len_points(&self) -> usize;
}

impl LenPoints for SymField {
    fn len_points(&self) -> usize {
        self.components()[0].len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn grid(tau: f64) -> Grid {
        Grid::new(GridSpec::new(3, 8).with_tau(tau)).unwrap()
    }

    #[test]
    fn inverse_of_identity_and_scaled_identity() {
        let g = grid(0.0);
        let id = SymField::identity_scaled(3, g.total_points(), 1.0);
        assert_eq!(metric_inverse(&g, &id).unwrap(), id);
        let two = SymField::identity_scaled(3, g.total_points(), 2.0);
        let inv = metric_inverse(&g, &two).unwrap();
        assert!((&inv - &SymField::identity_scaled(3, g.total_points(), 0.5)).max_abs() <= 1e-15);
    }

    #[test]
    fn sqrt_det_of_diagonal() {
        let g = grid(0.0);
        let mut m = SymField::identity_scaled(3, g.total_points(), 1.0);
        *m.get_mut(0, 0) = g.constant(4.0);
        assert!((&sqrt_det(&g, &m).unwrap() - &g.constant(2.0)).max_abs() <= 1e-15);
    }

    #[test]
    fn degenerate_metrics_are_rejected_with_location() {
        let g = grid(0.0);
        let mut m = SymField::identity_scaled(3, g.total_points(), 1.0);
        m.get_mut(1, 1).as_mut_slice()[5] = 0.0;
        match metric_inverse(&g, &m) {
            Err(ForgeError::SingularMetric { point }) => assert_eq!(point, g.unravel(5)),
            other => panic!("{other:?}"),
        }
        m.get_mut(1, 1).as_mut_slice()[5] = -0.5;
        assert!(matches!(
            ellipticity(&g, &m),
            Err(ForgeError::NotElliptic { .. })
        ));
    }

    #[test]
    fn ellipticity_of_scaled_identity() {
        let g = grid(0.0);
        let m = SymField::identity_scaled(3, g.total_points(), 2.0);
        assert!((ellipticity(&g, &m).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn background_values() {
        let g = grid(1.0);
        let bg = background(&g);
        assert!((bg.pi.get(0, 0).as_slice()[0] + 2.0).abs() < 1e-15);
        assert_eq!(bg.pi.get(0, 1).max_abs(), 0.0);
        assert_eq!(g.lambda(), 3.0);
        let g0 = grid(0.0);
        assert_eq!(background(&g0).pi.max_abs(), 0.0);
        assert_eq!(g0.lambda(), 0.0);
    }

    #[test]
    fn background_norms_and_traces() {
        let tau = 0.7;
        let g = grid(tau);
        let bg = background(&g);
        let n = 3.0;
        let pi = TensorField::from(&bg.pi.0);
        let tr = tensor_trace(&g, &bg.g, &pi, Variance::Contravariant).unwrap();
        assert!((tr.as_slice()[0] - tau * (1.0 - n) * n).abs() < 1e-14);
        let nsq = tensor_norm_sq(&g, &bg.g, &pi, Variance::Contravariant).unwrap();
        assert!((nsq.as_slice()[0] - tau * tau * (1.0 - n).powi(2) * n).abs() < 1e-13);
        let gn = tensor_norm_sq(&g, &bg.g, &TensorField::from(&bg.g.0), Variance::Covariant).unwrap();
        assert!((gn.as_slice()[3] - n).abs() < 1e-14);
        let combo = nsq.as_slice()[0] - tr.as_slice()[0].powi(2) / (n - 1.0);
        assert!((combo + tau * tau * n * (n - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn pi_of_background_k() {
        let tau = 1.3;
        let g = grid(tau);
        let bg = background(&g);
        let k = SymField::identity_scaled(3, g.total_points(), tau);
        let pi = pi_from_k(&g, &bg.g, &k).unwrap();
        assert!((&pi - &bg.pi.0).max_abs() <= 1e-14);
        let zero = SymField::zeros(3, g.total_points());
        assert_eq!(pi_from_k(&g, &bg.g, &zero).unwrap().max_abs(), 0.0);
    }
}
