//! Component storage for scalar and tensor fields sampled on a grid.
//!
//! Every field is a list of scalar component arrays. Symmetric rank-2 fields
//! store only the upper triangle (`i <= j`), which makes `T_ij = T_ji` exact.
//! Index placement (co- or contravariant) is a property of the domain type
//! that wraps the storage, not of the storage itself.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Samples of one scalar function on the grid, row-major, last axis fastest.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Field {
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(len: usize) -> Self {
        Self { data: vec![0.0; len] }
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self { data: vec![value; len] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Field) {
        debug_assert_eq!(self.len(), x.len());
        for (s, &v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|x| a * x)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
    }

    pub fn pointwise_mul(&self, other: &Field) -> Self {
        self.zip_map(other, |a, b| a * b)
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.scaled(rhs)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scaled(-1.0)
    }
}

impl AddAssign<&Field> for Field {
    fn add_assign(&mut self, rhs: &Field) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&Field> for Field {
    fn sub_assign(&mut self, rhs: &Field) {
        self.axpy(-1.0, rhs);
    }
}

/// Tensor rank descriptor used by norms, random generation and the CFF1 format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Scalar,
    Vector,
    Sym2,
    Rank3,
}

impl Shape {
    pub fn component_count(self, n: usize) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector => n,
            Shape::Sym2 => n * (n + 1) / 2,
            Shape::Rank3 => n * n * n,
        }
    }

    /// Multiplicity of each stored component in the full flat-metric contraction.
    pub fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Shape::Sym2 => sym_pairs(n)
                .map(|(i, j)| if i == j { 1.0 } else { 2.0 })
                .collect(),
            other => vec![1.0; other.component_count(n)],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Scalar => "scalar",
            Shape::Vector => "vector",
            Shape::Sym2 => "sym2",
            Shape::Rank3 => "rank3",
        }
    }

    pub fn parse(s: &str) -> Option<Shape> {
        match s {
            "scalar" => Some(Shape::Scalar),
            "vector" => Some(Shape::Vector),
            "sym2" => Some(Shape::Sym2),
            "rank3" => Some(Shape::Rank3),
            _ => None,
        }
    }
}

/// Position of `(i, j)` in upper-triangular storage; symmetric in its arguments.
#[inline]
pub fn sym_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * n - a * (a + 1) / 2 + b
}

/// Stored `(i, j)` pairs in storage order.
pub fn sym_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i..n).map(move |j| (i, j)))
}

/// Anything made of grid-sampled components with a known shape.
pub trait TensorComponents {
    fn shape(&self) -> Shape;
    fn components(&self) -> &[Field];
}

impl TensorComponents for Field {
    fn shape(&self) -> Shape {
        Shape::Scalar
    }
    fn components(&self) -> &[Field] {
        std::slice::from_ref(self)
    }
}

macro_rules! component_ops {
    ($ty:ident) => {
        impl $ty {
            pub fn len(&self) -> usize {
                self.comps.len()
            }

            pub fn is_empty(&self) -> bool {
                self.comps.is_empty()
            }

            pub fn components_mut(&mut self) -> &mut [Field] {
                &mut self.comps
            }

            pub fn into_components(self) -> Vec<Field> {
                self.comps
            }

            pub fn axpy(&mut self, a: f64, x: &$ty) {
                for (s, c) in self.comps.iter_mut().zip(&x.comps) {
                    s.axpy(a, c);
                }
            }

            pub fn scaled(&self, a: f64) -> Self {
                let mut out = self.clone();
                for c in out.comps.iter_mut() {
                    *c = c.scaled(a);
                }
                out
            }

            pub fn max_abs(&self) -> f64 {
                self.comps.iter().fold(0.0_f64, |m, c| m.max(c.max_abs()))
            }
        }

        impl Add for &$ty {
            type Output = $ty;
            fn add(self, rhs: &$ty) -> $ty {
                let mut out = self.clone();
                out.axpy(1.0, rhs);
                out
            }
        }

        impl Sub for &$ty {
            type Output = $ty;
            fn sub(self, rhs: &$ty) -> $ty {
                let mut out = self.clone();
                out.axpy(-1.0, rhs);
                out
            }
        }
    };
}

/// `n` scalar components.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    comps: Vec<Field>,
}

impl VectorField {
    pub fn new(comps: Vec<Field>) -> Self {
        Self { comps }
    }

    pub fn zeros(n: usize, len: usize) -> Self {
        Self {
            comps: vec![Field::zeros(len); n],
        }
    }

    pub fn get(&self, i: usize) -> &Field {
        &self.comps[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Field {
        &mut self.comps[i]
    }
}

component_ops!(VectorField);

impl TensorComponents for VectorField {
    fn shape(&self) -> Shape {
        Shape::Vector
    }
    fn components(&self) -> &[Field] {
        &self.comps
    }
}

/// Symmetric rank-2 field in upper-triangular storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SymField {
    n: usize,
    comps: Vec<Field>,
}

impl SymField {
    pub fn new(n: usize, comps: Vec<Field>) -> Self {
        assert_eq!(comps.len(), n * (n + 1) / 2, "symmetric storage size");
        Self { n, comps }
    }

    pub fn zeros(n: usize, len: usize) -> Self {
        Self::new(n, vec![Field::zeros(len); n * (n + 1) / 2])
    }

    /// `c * δ_ij` at every point.
    pub fn identity_scaled(n: usize, len: usize, c: f64) -> Self {
        let comps = sym_pairs(n)
            .map(|(i, j)| Field::constant(len, if i == j { c } else { 0.0 }))
            .collect();
        Self::new(n, comps)
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Field) -> Self {
        Self::new(n, sym_pairs(n).map(|(i, j)| f(i, j)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &Field {
        &self.comps[sym_index(self.n, i, j)]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut Field {
        let k = sym_index(self.n, i, j);
        &mut self.comps[k]
    }

    /// The full `n x n` matrix at grid point `p`, row-major.
    pub fn matrix_at(&self, p: usize, out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            for j in i..n {
                let v = self.comps[sym_index(n, i, j)].as_slice()[p];
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
    }
}

component_ops!(SymField);

impl TensorComponents for SymField {
    fn shape(&self) -> Shape {
        Shape::Sym2
    }
    fn components(&self) -> &[Field] {
        &self.comps
    }
}

/// Rank-3 field with all `n^3` components, index `(a, b, c)` at `(a n + b) n + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rank3Field {
    n: usize,
    comps: Vec<Field>,
}

impl Rank3Field {
    pub fn new(n: usize, comps: Vec<Field>) -> Self {
        assert_eq!(comps.len(), n * n * n, "rank-3 storage size");
        Self { n, comps }
    }

    pub fn zeros(n: usize, len: usize) -> Self {
        Self::new(n, vec![Field::zeros(len); n * n * n])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> &Field {
        &self.comps[(a * self.n + b) * self.n + c]
    }

    pub fn get_mut(&mut self, a: usize, b: usize, c: usize) -> &mut Field {
        let n = self.n;
        &mut self.comps[(a * n + b) * n + c]
    }
}

component_ops!(Rank3Field);

impl TensorComponents for Rank3Field {
    fn shape(&self) -> Shape {
        Shape::Rank3
    }
    fn components(&self) -> &[Field] {
        &self.comps
    }
}

/// Shape-tagged component list, used where the rank is only known at runtime.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    pub shape: Shape,
    pub comps: Vec<Field>,
}

impl TensorComponents for TensorField {
    fn shape(&self) -> Shape {
        self.shape
    }
    fn components(&self) -> &[Field] {
        &self.comps
    }
}

impl TensorField {
    pub fn into_sym(self, n: usize) -> SymField {
        SymField::new(n, self.comps)
    }

    pub fn into_vector(self) -> VectorField {
        VectorField::new(self.comps)
    }

    pub fn into_scalar(mut self) -> Field {
        self.comps.swap_remove(0)
    }
}

impl<T: TensorComponents + ?Sized> From<&T> for TensorField {
    fn from(t: &T) -> Self {
        TensorField {
            shape: t.shape(),
            comps: t.components().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_index_is_dense_and_symmetric() {
        for n in 1..6 {
            let idx: Vec<usize> = sym_pairs(n).map(|(i, j)| sym_index(n, i, j)).collect();
            assert_eq!(idx, (0..n * (n + 1) / 2).collect::<Vec<_>>());
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(sym_index(n, i, j), sym_index(n, j, i));
                }
            }
        }
    }

    #[test]
    fn sym2_weights_count_off_diagonals_twice() {
        let w = Shape::Sym2.weights(3);
        assert_eq!(w.iter().sum::<f64>(), 9.0);
    }
}
