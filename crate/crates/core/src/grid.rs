//! Periodic uniform lattice on the flat n-torus.
//!
//! Derivatives are Fourier-spectral: `D_a = F⁻¹ diag(i k_a) F` with the
//! Nyquist wavenumber set to zero, so every `D_a` is a real skew-symmetric
//! matrix and all `D_a` commute. Higher derivatives are always products of
//! first-derivative symbols. Consequences that the rest of the crate relies on:
//! summation by parts `Σ f D_a g = -Σ (D_a f) g` holds to rounding for any grid
//! functions, and `Σ D_a f = 0`.
//!
//! Sobolev norms follow the sum-of-derivative-norms definition
//! `‖u‖_k = Σ_{|α| ≤ k} ‖∂^α u‖_{L²}` over multi-indices `α`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::tensor::{sym_pairs, Field, Shape, SymField, TensorComponents, TensorField, VectorField};

/// Discretisation and background parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Spatial dimension, at least 3.
    pub n: usize,
    /// Samples per axis; even and at least 4.
    pub points_per_axis: usize,
    #[serde(default = "default_period")]
    pub period: f64,
    /// Trace parameter of the background second fundamental form `K̊ = τ g̊`.
    #[serde(default)]
    pub tau: f64,
    /// Model curvature constant.
    #[serde(default)]
    pub kappa: f64,
    /// Cosmological constant; normalised from `τ, κ` when unset.
    #[serde(default)]
    pub lambda: Option<f64>,
}

fn default_period() -> f64 {
    2.0 * PI
}

impl GridSpec {
    pub fn new(n: usize, points_per_axis: usize) -> Self {
        Self {
            n,
            points_per_axis,
            period: default_period(),
            tau: 0.0,
            kappa: 0.0,
            lambda: None,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    /// `Λ`, defaulting to the background normalisation `2Λ = n(n-1)(τ² + κ)`.
    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| normalized_lambda(self.n, self.tau, self.kappa))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(ForgeError::InvalidGrid(format!(
                "dimension n = {} (need n >= 3)",
                self.n
            )));
        }
        if self.points_per_axis < 4 || !self.points_per_axis.is_multiple_of(2) {
            return Err(ForgeError::InvalidGrid(format!(
                "points_per_axis = {} (need an even number >= 4)",
                self.points_per_axis
            )));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(ForgeError::InvalidGrid(format!("period = {}", self.period)));
        }
        Ok(())
    }
}

/// `Λ` with `2Λ = n(n-1)(τ² + κ)`.
pub fn normalized_lambda(n: usize, tau: f64, kappa: f64) -> f64 {
    let n = n as f64;
    0.5 * n * (n - 1.0) * (tau * tau + kappa)
}

/// Fourier coefficients of one real field (unnormalised forward DFT).
#[derive(Clone, Debug)]
pub struct Spectrum(pub(crate) Vec<Complex64>);

impl Spectrum {
    pub fn coefficients(&self) -> &[Complex64] {
        &self.0
    }
}

/// A sampled periodic lattice with its FFT plans.
#[derive(Clone)]
pub struct Grid {
    spec: GridSpec,
    total: usize,
    cell_volume: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Signed integer mode per 1-D index, in `(-N/2, N/2]`.
    modes: Vec<i64>,
    /// Derivative wavevectors of every spectral index, `total * n` entries.
    ktable: Arc<Vec<f64>>,
    nyquist: Arc<Vec<bool>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("spec", &self.spec)
            .field("total", &self.total)
            .field("cell_volume", &self.cell_volume)
            .finish()
    }
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let m = spec.points_per_axis;
        let total = m.pow(spec.n as u32);
        let h = spec.period / m as f64;
        let cell_volume = h.powi(spec.n as i32);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let scale = 2.0 * PI / spec.period;
        let modes: Vec<i64> = (0..m)
            .map(|j| if j <= m / 2 { j as i64 } else { j as i64 - m as i64 })
            .collect();
        let wavenumbers: Vec<f64> = modes
            .iter()
            .map(|&q| {
                if q.unsigned_abs() as usize == m / 2 {
                    0.0
                } else {
                    scale * q as f64
                }
            })
            .collect();
        let mut ktable = Vec::with_capacity(total * spec.n);
        let mut nyquist = Vec::with_capacity(total);
        for p in 0..total {
            let mut rest = p;
            let mut idx = vec![0; spec.n];
            for a in (0..spec.n).rev() {
                idx[a] = rest % m;
                rest /= m;
            }
            ktable.extend(idx.iter().map(|&i| wavenumbers[i]));
            nyquist.push(idx.contains(&(m / 2)));
        }
        Ok(Self {
            spec,
            total,
            cell_volume,
            forward,
            inverse,
            modes,
            ktable: Arc::new(ktable),
            nyquist: Arc::new(nyquist),
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.n
    }

    pub fn points_per_axis(&self) -> usize {
        self.spec.points_per_axis
    }

    pub fn total_points(&self) -> usize {
        self.total
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn volume(&self) -> f64 {
        self.spec.period.powi(self.spec.n as i32)
    }

    pub fn spacing(&self) -> f64 {
        self.spec.period / self.spec.points_per_axis as f64
    }

    pub fn lambda(&self) -> f64 {
        self.spec.lambda()
    }

    /// Lattice multi-index of a flat point index.
    pub fn unravel(&self, mut p: usize) -> Vec<usize> {
        let m = self.spec.points_per_axis;
        let mut idx = vec![0; self.spec.n];
        for a in (0..self.spec.n).rev() {
            idx[a] = p % m;
            p /= m;
        }
        idx
    }

    /// Coordinates of a flat point index.
    pub fn coordinates(&self, p: usize) -> Vec<f64> {
        let h = self.spacing();
        self.unravel(p).into_iter().map(|i| i as f64 * h).collect()
    }

    /// Signed Fourier mode of a flat spectral index.
    pub fn mode(&self, p: usize) -> Vec<i64> {
        self.unravel(p).into_iter().map(|i| self.modes[i]).collect()
    }

    /// Derivative wavenumber vector of a flat spectral index (zero along Nyquist axes).
    pub fn wavevector(&self, p: usize) -> &[f64] {
        let n = self.spec.n;
        &self.ktable[p * n..(p + 1) * n]
    }

    /// True when some axis of the spectral index sits on the Nyquist mode.
    pub fn is_nyquist(&self, p: usize) -> bool {
        self.nyquist[p]
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.total)
    }

    pub fn constant(&self, value: f64) -> Field {
        Field::constant(self.total, value)
    }

    /// Samples `f(x)` at every lattice point.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Field {
        Field::from_vec((0..self.total).map(|p| f(&self.coordinates(p))).collect())
    }

    pub fn check(&self, f: &Field) -> Result<()> {
        if f.len() != self.total {
            return Err(ForgeError::GridMismatch {
                expected: self.total,
                found: f.len(),
            });
        }
        Ok(())
    }

    pub fn check_components<T: TensorComponents + ?Sized>(&self, t: &T) -> Result<()> {
        let want = t.shape().component_count(self.spec.n);
        if t.components().len() != want {
            return Err(ForgeError::ShapeMismatch(format!(
                "{} field with {} components, expected {}",
                t.shape().name(),
                t.components().len(),
                want
            )));
        }
        t.components().iter().try_for_each(|c| self.check(c))
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.spec.n {
            return Err(ForgeError::AxisOutOfRange {
                axis,
                n: self.spec.n,
            });
        }
        Ok(())
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let m = self.spec.points_per_axis;
        let n = self.spec.n;
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..n {
            let stride = m.pow((n - 1 - axis) as u32);
            let block = stride * m;
            for outer in (0..self.total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, slot) in line.iter().enumerate() {
                        data[base + j * stride] = *slot;
                    }
                }
            }
        }
        if inverse {
            let s = 1.0 / self.total as f64;
            for z in data.iter_mut() {
                *z *= s;
            }
        }
    }

    pub fn spectrum(&self, f: &Field) -> Spectrum {
        let mut data: Vec<Complex64> = f
            .as_slice()
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect();
        self.transform(&mut data, false);
        Spectrum(data)
    }

    /// Real part of the inverse transform.
    pub fn synthesize(&self, s: &Spectrum) -> Field {
        let mut data = s.0.clone();
        self.transform(&mut data, true);
        Field::from_vec(data.into_iter().map(|z| z.re).collect())
    }

    /// Symbol `Π_a (i k_a)` of the derivative along `axes` at spectral index `p`.
    pub fn derivative_symbol(&self, p: usize, axes: &[usize]) -> Complex64 {
        let k = self.wavevector(p);
        let mut z = Complex64::new(1.0, 0.0);
        for &a in axes {
            z *= Complex64::new(0.0, k[a]);
        }
        z
    }

    /// `∂_{axes} f` computed from a precomputed spectrum.
    pub fn derivative_from(&self, s: &Spectrum, axes: &[usize]) -> Field {
        if axes.is_empty() {
            return self.synthesize(s);
        }
        let mut data = s.0.clone();
        for (p, z) in data.iter_mut().enumerate() {
            *z *= self.derivative_symbol(p, axes);
        }
        self.transform(&mut data, true);
        Field::from_vec(data.into_iter().map(|z| z.re).collect())
    }

    pub fn derivative(&self, f: &Field, axis: usize) -> Result<Field> {
        self.check_axis(axis)?;
        self.check(f)?;
        Ok(self.derivative_from(&self.spectrum(f), &[axis]))
    }

    /// Mixed derivative `∂_a ∂_b f`.
    pub fn derivative2(&self, f: &Field, a: usize, b: usize) -> Result<Field> {
        self.check_axis(a)?;
        self.check_axis(b)?;
        Ok(self.derivative_from(&self.spectrum(f), &[a, b]))
    }

    pub fn gradient(&self, f: &Field) -> VectorField {
        let s = self.spectrum(f);
        VectorField::new((0..self.spec.n).map(|a| self.derivative_from(&s, &[a])).collect())
    }

    /// Flat Hessian `∂_a ∂_b f` in symmetric storage.
    pub fn hessian(&self, f: &Field) -> SymField {
        let s = self.spectrum(f);
        SymField::from_fn(self.spec.n, |a, b| self.derivative_from(&s, &[a, b]))
    }

    /// Flat Laplacian `Σ_a ∂_a ∂_a f`.
    pub fn laplacian(&self, f: &Field) -> Field {
        self.fourier_multiply(f, |k| -k.iter().map(|x| x * x).sum::<f64>())
    }

    /// Applies a real Fourier multiplier `symbol(k)` (k = derivative wavevector).
    pub fn fourier_multiply(&self, f: &Field, symbol: impl Fn(&[f64]) -> f64) -> Field {
        let mut s = self.spectrum(f);
        for (p, z) in s.0.iter_mut().enumerate() {
            *z *= symbol(self.wavevector(p));
        }
        self.synthesize(&s)
    }

    /// `∫ f dμ(g̊)` by the rectangle rule.
    pub fn integrate(&self, f: &Field) -> f64 {
        f.as_slice().iter().sum::<f64>() * self.cell_volume
    }

    /// `∫ f g dμ(g̊)`.
    pub fn inner(&self, f: &Field, g: &Field) -> f64 {
        f.as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.cell_volume
    }

    /// Flat `L²` pairing of two tensors of the same shape (full index contraction).
    pub fn pairing<T: TensorComponents + ?Sized>(&self, a: &T, b: &T) -> f64 {
        let w = a.shape().weights(self.spec.n);
        a.components()
            .iter()
            .zip(b.components())
            .zip(&w)
            .map(|((x, y), w)| w * self.inner(x, y))
            .sum()
    }

    pub fn l2_norm<T: TensorComponents + ?Sized>(&self, u: &T) -> f64 {
        self.pairing(u, u).max(0.0).sqrt()
    }

    /// `Σ_{|α| ≤ k} ‖∂^α u‖_{L²}` with norms measured in `g̊`.
    pub fn sobolev_norm<T: TensorComponents + ?Sized>(&self, u: &T, k: usize) -> f64 {
        let w = u.shape().weights(self.spec.n);
        let spectra: Vec<Spectrum> = u.components().iter().map(|c| self.spectrum(c)).collect();
        let parseval = self.cell_volume / self.total as f64;
        multi_indices(self.spec.n, k)
            .iter()
            .map(|alpha| {
                let mut sq = 0.0;
                for (s, wc) in spectra.iter().zip(&w) {
                    for (p, z) in s.0.iter().enumerate() {
                        let mut sym = 1.0;
                        for (a, &e) in alpha.iter().enumerate() {
                            sym *= self.wavevector(p)[a].powi(e as i32);
                        }
                        sq += wc * sym * sym * z.norm_sqr();
                    }
                }
                (sq * parseval).sqrt()
            })
            .sum()
    }

    /// Deterministic pseudorandom field with Fourier support in `|m|_∞ <= band`.
    ///
    /// Each retained mode `e^{i m·x}` gets a coefficient with real and
    /// imaginary parts uniform in `[-1, 1]`, divided by the square root of the
    /// number of retained modes so values are O(1).
    pub fn band_limited_random(&self, seed: u64, band: usize, shape: Shape) -> Result<TensorField> {
        let max = self.spec.points_per_axis / 4;
        if band > max {
            return Err(ForgeError::BandTooLarge { band, max });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = shape.component_count(self.spec.n);
        let retained = (2 * band + 1).pow(self.spec.n as u32) as f64;
        let amp = self.total as f64 / retained.sqrt();
        let comps = (0..count)
            .map(|_| {
                let mut s = vec![Complex64::new(0.0, 0.0); self.total];
                for p in 0..self.total {
                    let m = self.mode(p);
                    if m.iter().any(|q| q.unsigned_abs() as usize > band) {
                        continue;
                    }
                    let partner = self.flat_spectral_index(&m.iter().map(|q| -q).collect::<Vec<_>>());
                    if partner < p {
                        continue;
                    }
                    let re: f64 = rng.random_range(-1.0..=1.0);
                    if partner == p {
                        s[p] = Complex64::new(re * amp, 0.0);
                    } else {
                        let im: f64 = rng.random_range(-1.0..=1.0);
                        s[p] = Complex64::new(re, im) * amp;
                        s[partner] = s[p].conj();
                    }
                }
                self.synthesize(&Spectrum(s))
            })
            .collect();
        Ok(TensorField { shape, comps })
    }

    pub fn random_scalar(&self, seed: u64, band: usize) -> Result<Field> {
        Ok(self.band_limited_random(seed, band, Shape::Scalar)?.into_scalar())
    }

    pub fn random_vector(&self, seed: u64, band: usize) -> Result<VectorField> {
        Ok(self.band_limited_random(seed, band, Shape::Vector)?.into_vector())
    }

    pub fn random_sym(&self, seed: u64, band: usize) -> Result<SymField> {
        Ok(self
            .band_limited_random(seed, band, Shape::Sym2)?
            .into_sym(self.spec.n))
    }

    fn flat_spectral_index(&self, mode: &[i64]) -> usize {
        let m = self.spec.points_per_axis as i64;
        mode.iter().fold(0usize, |acc, &q| {
            acc * m as usize + q.rem_euclid(m) as usize
        })
    }

    /// Largest spectral coefficient magnitude (normalised as a Fourier-series
    /// amplitude) among modes with `|m|_∞ > band`.
    pub fn max_coefficient_beyond(&self, f: &Field, band: usize) -> f64 {
        let s = self.spectrum(f);
        s.0.iter()
            .enumerate()
            .filter(|(p, _)| self.mode(*p).iter().any(|q| q.unsigned_abs() as usize > band))
            .fold(0.0_f64, |m, (_, z)| m.max(z.norm() / self.total as f64))
    }

    /// Removes every Fourier mode that sits on a Nyquist axis.
    pub fn remove_nyquist(&self, f: &Field) -> Field {
        let mut s = self.spectrum(f);
        for (p, z) in s.0.iter_mut().enumerate() {
            if self.is_nyquist(p) {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        self.synthesize(&s)
    }

    /// Fields of an ordered flat-symmetric tensor built from `f(i, j)`.
    pub fn sym_from_fn(&self, f: impl FnMut(usize, usize) -> Field) -> SymField {
        SymField::from_fn(self.spec.n, f)
    }

    /// Pairs `(i, j)` in symmetric storage order.
    pub fn sym_pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        sym_pairs(self.spec.n)
    }
}

/// All multi-indices `α ∈ ℕⁿ` with `|α| <= k`, ordered by total degree.
pub fn multi_indices(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for degree in 0..=k {
        let mut cur = vec![0; n];
        fill(&mut out, &mut cur, 0, degree);
    }
    out
}

fn fill(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, axis: usize, remaining: usize) {
    if axis + 1 == cur.len() {
        cur[axis] = remaining;
        out.push(cur.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        cur[axis] = e;
        fill(out, cur, axis + 1, remaining - e);
    }
    cur[axis] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(points: usize) -> Grid {
        Grid::new(GridSpec::new(3, points)).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(Grid::new(GridSpec::new(2, 8)).is_err());
        assert!(Grid::new(GridSpec::new(3, 7)).is_err());
        assert!(Grid::new(GridSpec::new(3, 2)).is_err());
    }

    #[test]
    fn cell_volume_times_points_is_torus_volume() {
        let g = t3(6);
        assert!((g.cell_volume() * g.total_points() as f64 - (2.0 * PI).powi(3)).abs() < 1e-10);
    }

    #[test]
    fn lambda_normalisation() {
        assert_eq!(GridSpec::new(3, 8).with_tau(1.0).lambda(), 3.0);
        assert_eq!(GridSpec::new(3, 8).with_tau(1.0).with_lambda(0.5).lambda(), 0.5);
        assert_eq!(GridSpec::new(4, 8).with_tau(1.0).with_kappa(1.0).lambda(), 12.0);
    }

    #[test]
    fn derivative_of_single_mode() {
        let g = t3(16);
        let f = g.sample(|x| x[0].sin());
        let d = g.derivative(&f, 0).unwrap();
        let want = g.sample(|x| x[0].cos());
        assert!((&d - &want).max_abs() <= 1e-12);
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let g = t3(8);
        let f = g.constant(3.5);
        for a in 0..3 {
            assert!(g.derivative(&f, a).unwrap().max_abs() <= 1e-13);
        }
    }

    #[test]
    fn mixed_mode_derivative() {
        let g = t3(16);
        let f = g.sample(|x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos());
        let d = g.derivative(&f, 1).unwrap();
        let want = g.sample(|x| -2.0 * (3.0 * x[0]).sin() * (2.0 * x[1]).sin());
        assert!((&d - &want).max_abs() <= 1e-12);
    }

    #[test]
    fn axis_out_of_range() {
        let g = t3(8);
        assert!(matches!(
            g.derivative(&g.zeros(), 3),
            Err(ForgeError::AxisOutOfRange { axis: 3, n: 3 })
        ));
    }

    #[test]
    fn quadrature_examples() {
        let g = t3(16);
        let vol = (2.0 * PI).powi(3);
        assert!((g.integrate(&g.constant(1.0)) - vol).abs() < 1e-10);
        assert!((vol - 248.0502).abs() < 1e-4);
        assert!(g.integrate(&g.sample(|x| x[0].sin())).abs() <= 1e-12);
        let s2 = g.integrate(&g.sample(|x| x[0].sin().powi(2)));
        assert!((s2 - vol / 2.0).abs() < 1e-10);
        assert!((vol / 2.0 - 124.0251).abs() < 1e-4);
    }

    #[test]
    fn sobolev_examples() {
        let g = t3(16);
        let c = -1.7;
        let n0 = g.sobolev_norm(&g.constant(c), 0);
        assert!((n0 - c.abs() * (2.0 * PI).powf(1.5)).abs() < 1e-10);
        assert!(((2.0 * PI).powf(1.5) - 15.7496).abs() < 1e-4);
        let half = ((2.0 * PI).powi(3) / 2.0).sqrt();
        assert!((half - 11.1371).abs() < 1e-3);
        let n1 = g.sobolev_norm(&g.sample(|x| x[0].sin()), 1);
        assert!((n1 - 2.0 * half).abs() < 1e-9, "{n1}");
        assert!((2.0 * half - 22.2742).abs() < 1e-3);
        for k in 0..4 {
            assert_eq!(g.sobolev_norm(&g.zeros(), k), 0.0);
        }
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(3, 0).len(), 1);
        assert_eq!(multi_indices(3, 1).len(), 4);
        assert_eq!(multi_indices(3, 2).len(), 10);
        assert_eq!(multi_indices(3, 3).len(), 20);
    }

    #[test]
    fn random_fields_are_deterministic_and_band_limited() {
        let g = t3(16);
        let a = g.random_scalar(0, 2).unwrap();
        let b = g.random_scalar(0, 2).unwrap();
        assert_eq!(a, b);
        assert!(g.max_coefficient_beyond(&a, 2) <= 1e-14);
        let c = g.random_scalar(1, 2).unwrap();
        assert!(g.l2_norm(&(&a - &c)) > 1e-3);
        assert!(matches!(
            g.random_scalar(0, 5),
            Err(ForgeError::BandTooLarge { band: 5, max: 4 })
        ));
    }
}
