//! Pointwise linear differential operators of order at most two.
//!
//! A [`JetKernel`] maps, at one grid point, the jets of its input components
//! (value, gradient, Hessian) to output component values. The same kernel is
//! used two ways:
//!
//! * [`evaluate`] computes spectral jets and runs the kernel point by point;
//! * [`JetOperator`] extracts the variable coefficients `C[o][c, α]` once by
//!   feeding unit jets, then applies `Σ C ⊙ D^α u` and its exact transpose
//!   `Σ (−1)^{|α|} D^α (C ⊙ y)`.

use rustfft::num_complex::Complex64;

use crate::grid::{Grid, Spectrum};
use crate::linop::LinearOperator;
use crate::tensor::{sym_index, Field};

/// Jet slots per input component: value, `n` first and `n(n+1)/2` second derivatives.
pub fn slots_per_component(n: usize) -> usize {
    1 + n + n * (n + 1) / 2
}

/// Read access to the jets of all input components at one point.
#[derive(Clone, Copy)]
pub struct Jets<'a> {
    n: usize,
    data: &'a [f64],
}

impl<'a> Jets<'a> {
    pub fn new(n: usize, data: &'a [f64]) -> Self {
        Self { n, data }
    }

    #[inline]
    pub fn val(&self, c: usize) -> f64 {
        self.data[c * slots_per_component(self.n)]
    }

    /// `∂_a u_c`.
    #[inline]
    pub fn d(&self, c: usize, a: usize) -> f64 {
        self.data[c * slots_per_component(self.n) + 1 + a]
    }

    /// `∂_a ∂_b u_c`.
    #[inline]
    pub fn dd(&self, c: usize, a: usize, b: usize) -> f64 {
        self.data[c * slots_per_component(self.n) + 1 + self.n + sym_index(self.n, a, b)]
    }
}

/// A linear pointwise map from input jets to output values.
pub trait JetKernel: Sync {
    /// Point-local data reused across evaluations at the same point.
    type Local;

    fn dim(&self) -> usize;
    fn inputs(&self) -> usize;
    fn outputs(&self) -> usize;
    /// Highest derivative order read from the jets (1 or 2).
    fn order(&self) -> usize;
    fn local(&self, point: usize) -> Self::Local;
    /// Must be linear in `jets`.
    fn eval(&self, local: &Self::Local, jets: Jets<'_>, out: &mut [f64]);
}

fn derivative_list(n: usize, order: usize) -> Vec<Vec<usize>> {
    let mut list = vec![vec![]];
    list.extend((0..n).map(|a| vec![a]));
    if order >= 2 {
        for a in 0..n {
            for b in a..n {
                list.push(vec![a, b]);
            }
        }
    }
    list
}

/// Spectral jets of the given fields, `jets[c * slots + s]` per point.
fn field_jets(grid: &Grid, fields: &[&Field], order: usize) -> Vec<Vec<Field>> {
    let n = grid.dim();
    let derivs = derivative_list(n, order);
    fields
        .iter()
        .map(|f| {
            let s = grid.spectrum(f);
            derivs.iter().map(|ax| grid.derivative_from(&s, ax)).collect()
        })
        .collect()
}

/// Literal evaluation of a kernel on input fields.
pub fn evaluate<K: JetKernel>(grid: &Grid, kernel: &K, inputs: &[&Field]) -> Vec<Field> {
    assert_eq!(inputs.len(), kernel.inputs(), "kernel input count");
    let n = grid.dim();
    let slots = slots_per_component(n);
    let jets = field_jets(grid, inputs, kernel.order());
    let len = grid.total_points();
    let mut outs = vec![vec![0.0; len]; kernel.outputs()];
    let mut buf = vec![0.0; slots * inputs.len()];
    let mut o = vec![0.0; kernel.outputs()];
    for p in 0..len {
        for (c, js) in jets.iter().enumerate() {
            for (s, f) in js.iter().enumerate() {
                buf[c * slots + s] = f.as_slice()[p];
            }
        }
        let local = kernel.local(p);
        kernel.eval(&local, Jets::new(n, &buf), &mut o);
        for (k, v) in o.iter().enumerate() {
            outs[k][p] = *v;
        }
    }
    outs.into_iter().map(Field::from_vec).collect()
}

/// Variable-coefficient operator `u ↦ Σ_{c,α} C[o][c,α] ⊙ D^α u_c` with exact transpose.
pub struct JetOperator {
    grid: Grid,
    inputs: usize,
    outputs: usize,
    derivs: Vec<Vec<usize>>,
    /// `coeffs[o][c * derivs.len() + s]`, `None` where identically zero.
    coeffs: Vec<Vec<Option<Field>>>,
}

impl JetOperator {
    pub fn from_kernel<K: JetKernel>(grid: &Grid, kernel: &K) -> Self {
        let n = grid.dim();
        let slots = slots_per_component(n);
        let derivs = derivative_list(n, kernel.order());
        let nd = derivs.len();
        let (ni, no) = (kernel.inputs(), kernel.outputs());
        let len = grid.total_points();
        let mut raw = vec![vec![vec![0.0; len]; ni * nd]; no];
        let mut buf = vec![0.0; slots * ni];
        let mut o = vec![0.0; no];
        for p in 0..len {
            let local = kernel.local(p);
            for c in 0..ni {
                for s in 0..nd {
                    buf[c * slots + s] = 1.0;
                    kernel.eval(&local, Jets::new(n, &buf), &mut o);
                    buf[c * slots + s] = 0.0;
                    for (k, v) in o.iter().enumerate() {
                        raw[k][c * nd + s][p] = *v;
                    }
                }
            }
        }
        let coeffs = raw
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|v| {
                        if v.iter().all(|x| *x == 0.0) {
                            None
                        } else {
                            Some(Field::from_vec(v))
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            grid: grid.clone(),
            inputs: ni,
            outputs: no,
            derivs,
            coeffs,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn input_components(&self) -> usize {
        self.inputs
    }

    pub fn output_components(&self) -> usize {
        self.outputs
    }

    /// Applies the operator to component fields.
    pub fn apply_fields(&self, inputs: &[&Field]) -> Vec<Field> {
        let flat: Vec<f64> = inputs.iter().flat_map(|f| f.as_slice().iter().copied()).collect();
        crate::fields::split_components(&self.apply(&flat), self.outputs)
    }
}

impl LinearOperator for JetOperator {
    fn nrows(&self) -> usize {
        self.outputs * self.grid.total_points()
    }

    fn ncols(&self) -> usize {
        self.inputs * self.grid.total_points()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let len = self.grid.total_points();
        let nd = self.derivs.len();
        let mut out = vec![0.0; self.outputs * len];
        for c in 0..self.inputs {
            let used: Vec<bool> = (0..nd)
                .map(|s| self.coeffs.iter().any(|row| row[c * nd + s].is_some()))
                .collect();
            if !used.iter().any(|u| *u) {
                continue;
            }
            let f = Field::from_vec(x[c * len..(c + 1) * len].to_vec());
            let spec = self.grid.spectrum(&f);
            for (s, ax) in self.derivs.iter().enumerate() {
                if !used[s] {
                    continue;
                }
                let d = if ax.is_empty() {
                    f.clone()
                } else {
                    self.grid.derivative_from(&spec, ax)
                };
                for (o, row) in self.coeffs.iter().enumerate() {
                    if let Some(cf) = &row[c * nd + s] {
                        let dst = &mut out[o * len..(o + 1) * len];
                        for ((y, a), b) in dst.iter_mut().zip(cf.as_slice()).zip(d.as_slice()) {
                            *y += a * b;
                        }
                    }
                }
            }
        }
        out
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let len = self.grid.total_points();
        let nd = self.derivs.len();
        let mut out = vec![0.0; self.inputs * len];
        for c in 0..self.inputs {
            let mut acc_spec: Option<Vec<Complex64>> = None;
            let mut acc_plain = vec![0.0; len];
            for (s, ax) in self.derivs.iter().enumerate() {
                let mut w = vec![0.0; len];
                let mut any = false;
                for (o, row) in self.coeffs.iter().enumerate() {
                    if let Some(cf) = &row[c * nd + s] {
                        any = true;
                        for ((wi, a), b) in w.iter_mut().zip(cf.as_slice()).zip(&y[o * len..(o + 1) * len]) {
                            *wi += a * b;
                        }
                    }
                }
                if !any {
                    continue;
                }
                if ax.is_empty() {
                    for (a, b) in acc_plain.iter_mut().zip(&w) {
                        *a += b;
                    }
                    continue;
                }
                let spec = self.grid.spectrum(&Field::from_vec(w));
                let acc = acc_spec.get_or_insert_with(|| vec![Complex64::new(0.0, 0.0); len]);
                for (p, (a, z)) in acc.iter_mut().zip(spec.coefficients()).enumerate() {
                    *a += self.grid.derivative_symbol(p, ax).conj() * z;
                }
            }
            let dst = &mut out[c * len..(c + 1) * len];
            if let Some(acc) = acc_spec {
                let f = self.grid.synthesize(&Spectrum(acc));
                for (d, v) in dst.iter_mut().zip(f.as_slice()) {
                    *d += v;
                }
            }
            for (d, v) in dst.iter_mut().zip(&acc_plain) {
                *d += v;
            }
        }
        out
    }
}
