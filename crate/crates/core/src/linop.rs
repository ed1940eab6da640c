//! Matrix-free linear operators on flat component vectors.
//!
//! Vectors are the concatenation of grid fields, one block of `total_points`
//! values per component. Every operator exposes an exact transpose with
//! respect to the Euclidean inner product on these vectors.

use rustfft::num_complex::Complex64;

use crate::grid::{Grid, Spectrum};

pub trait LinearOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64>;
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }
    fn ncols(&self) -> usize {
        (**self).ncols()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (**self).apply(x)
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        (**self).apply_transpose(y)
    }
}

impl<T: LinearOperator + ?Sized + Send> LinearOperator for Box<T> {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }
    fn ncols(&self) -> usize {
        (**self).ncols()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (**self).apply(x)
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        (**self).apply_transpose(y)
    }
}

/// `outer ∘ inner`.
pub struct Compose<A, B> {
    pub outer: A,
    pub inner: B,
}

impl<A: LinearOperator, B: LinearOperator> Compose<A, B> {
    pub fn new(outer: A, inner: B) -> Self {
        assert_eq!(outer.ncols(), inner.nrows(), "composition shape");
        Self { outer, inner }
    }
}

impl<A: LinearOperator, B: LinearOperator> LinearOperator for Compose<A, B> {
    fn nrows(&self) -> usize {
        self.outer.nrows()
    }
    fn ncols(&self) -> usize {
        self.inner.ncols()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.outer.apply(&self.inner.apply(x))
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.inner.apply_transpose(&self.outer.apply_transpose(y))
    }
}

/// `Aᵀ A`, symmetric positive semidefinite.
pub struct Normal<A>(pub A);

impl<A: LinearOperator> LinearOperator for Normal<A> {
    fn nrows(&self) -> usize {
        self.0.ncols()
    }
    fn ncols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.apply_transpose(&self.0.apply(x))
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.apply(y)
    }
}

/// Diagonal scaling.
#[derive(Clone, Debug)]
pub struct Diagonal(pub Vec<f64>);

impl LinearOperator for Diagonal {
    fn nrows(&self) -> usize {
        self.0.len()
    }
    fn ncols(&self) -> usize {
        self.0.len()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.0).map(|(a, b)| a * b).collect()
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.apply(y)
    }
}

/// Dense row-major matrix, mostly for tests and small problems.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl LinearOperator for DenseOperator {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(&self.data[i * self.cols..(i + 1) * self.cols]) {
                *o += a * yi;
            }
        }
        out
    }
}

/// Block-diagonal real Fourier multiplier, one symbol per component.
///
/// Symbols must be even in the wavevector, which makes the operator symmetric.
pub struct FourierMultiplier {
    grid: Grid,
    /// `symbols[c][p]` for component `c` at spectral index `p`.
    symbols: Vec<Vec<f64>>,
}

impl FourierMultiplier {
    pub fn new(grid: &Grid, components: usize, symbol: impl Fn(usize, &[f64], bool) -> f64) -> Self {
        let symbols = (0..components)
            .map(|c| {
                (0..grid.total_points())
                    .map(|p| symbol(c, grid.wavevector(p), grid.is_nyquist(p)))
                    .collect()
            })
            .collect();
        Self {
            grid: grid.clone(),
            symbols,
        }
    }
}

impl LinearOperator for FourierMultiplier {
    fn nrows(&self) -> usize {
        self.symbols.len() * self.grid.total_points()
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let len = self.grid.total_points();
        let mut out = Vec::with_capacity(x.len());
        for (c, sym) in self.symbols.iter().enumerate() {
            let f = crate::tensor::Field::from_vec(x[c * len..(c + 1) * len].to_vec());
            let mut s = self.grid.spectrum(&f);
            for (z, m) in s.0.iter_mut().zip(sym) {
                *z *= *m;
            }
            out.extend_from_slice(self.grid.synthesize(&s).as_slice());
        }
        out
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.apply(y)
    }
}

/// Orthonormal real trigonometric basis of the non-Nyquist subspace.
///
/// Columns are `1/√V`, `√(2/V) cos(m·x)` and `√(2/V) sin(m·x)` for every mode
/// pair `±m` with all `|m_a| < N/2`; they are orthonormal in the discrete
/// `L²` inner product. `apply` maps coefficients to grid values of
/// `components` fields; `apply_transpose` is the Euclidean transpose, so
/// `Bᵀ B = I / cell_volume`.
pub struct TrigBasis {
    grid: Grid,
    components: usize,
    /// `(spectral index, partner index)` of every retained mode class.
    modes: Vec<(usize, usize)>,
    per_component: usize,
}

impl TrigBasis {
    pub fn new(grid: &Grid, components: usize) -> Self {
        let m = grid.points_per_axis() as i64;
        let mut modes = Vec::new();
        let mut per_component = 0;
        for p in 0..grid.total_points() {
            if grid.is_nyquist(p) {
                continue;
            }
            let partner = grid
                .mode(p)
                .iter()
                .fold(0usize, |acc, &q| acc * m as usize + (-q).rem_euclid(m) as usize);
            if partner < p {
                continue;
            }
            per_component += if partner == p { 1 } else { 2 };
            modes.push((p, partner));
        }
        Self {
            grid: grid.clone(),
            components,
            modes,
            per_component,
        }
    }

    pub fn per_component(&self) -> usize {
        self.per_component
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// `|m|²` of each coefficient slot within one component.
    pub fn wavenumbers_sq(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.per_component);
        for &(p, q) in &self.modes {
            let k2: f64 = self.grid.wavevector(p).iter().map(|k| k * k).sum();
            out.push(k2);
            if p != q {
                out.push(k2);
            }
        }
        out
    }
}

impl LinearOperator for TrigBasis {
    fn nrows(&self) -> usize {
        self.components * self.grid.total_points()
    }
    fn ncols(&self) -> usize {
        self.components * self.per_component
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let total = self.grid.total_points();
        let vol = self.grid.volume();
        let c0 = total as f64 / vol.sqrt();
        let c1 = total as f64 * (2.0 / vol).sqrt() * 0.5;
        let mut out = Vec::with_capacity(self.nrows());
        for c in 0..self.components {
            let coeffs = &x[c * self.per_component..(c + 1) * self.per_component];
            let mut s = vec![Complex64::new(0.0, 0.0); total];
            let mut k = 0;
            for &(p, q) in &self.modes {
                if p == q {
                    s[p] = Complex64::new(c0 * coeffs[k], 0.0);
                    k += 1;
                } else {
                    let (a, b) = (coeffs[k], coeffs[k + 1]);
                    s[p] = Complex64::new(c1 * a, -c1 * b);
                    s[q] = Complex64::new(c1 * a, c1 * b);
                    k += 2;
                }
            }
            out.extend_from_slice(self.grid.synthesize(&Spectrum(s)).as_slice());
        }
        out
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let total = self.grid.total_points();
        let vol = self.grid.volume();
        let c0 = 1.0 / vol.sqrt();
        let c1 = (2.0 / vol).sqrt();
        let mut out = Vec::with_capacity(self.ncols());
        for c in 0..self.components {
            let f = crate::tensor::Field::from_vec(y[c * total..(c + 1) * total].to_vec());
            let s = self.grid.spectrum(&f);
            for &(p, q) in &self.modes {
                if p == q {
                    out.push(c0 * s.0[p].re);
                } else {
                    out.push(c1 * s.0[p].re);
                    out.push(-c1 * s.0[p].im);
                }
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn scale(y: &mut [f64], a: f64) {
    for v in y {
        *v *= a;
    }
}

/// Assembles the dense matrix of an operator column by column.
pub fn assemble_columns(op: &dyn LinearOperator) -> faer::Mat<f64> {
    let (m, n) = (op.nrows(), op.ncols());
    let mut mat = faer::Mat::zeros(m, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply(&e);
        for (i, v) in col.into_iter().enumerate() {
            mat[(i, j)] = v;
        }
        e[j] = 0.0;
    }
    mat
}

/// `[A | B]` acting on concatenated unknowns.
pub struct Stacked<A, B> {
    pub left: A,
    pub right: B,
}

impl<A: LinearOperator, B: LinearOperator> LinearOperator for Stacked<A, B> {
    fn nrows(&self) -> usize {
        self.left.nrows()
    }
    fn ncols(&self) -> usize {
        self.left.ncols() + self.right.ncols()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let k = self.left.ncols();
        let mut out = self.left.apply(&x[..k]);
        axpy(&mut out, 1.0, &self.right.apply(&x[k..]));
        out
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.left.apply_transpose(y);
        out.extend(self.right.apply_transpose(y));
        out
    }
}
