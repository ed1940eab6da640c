//! Background quantities of a phase point, precomputed once for the linear operators.

use crate::curvature::{christoffel_gradient, christoffel_with, metric_gradient, pack_with, ricci_with, CurvaturePack};
use crate::tensor::TensorComponents;
use crate::error::Result;
use crate::fields::{k_from_pi, metric_data, trace, PhasePoint};
use crate::grid::Grid;
use crate::tensor::{Field, Rank3Field, SymField, VectorField};

/// Everything the linearised operators need about `(g, π)`.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub grid: Grid,
    pub lambda: f64,
    pub g: SymField,
    pub ginv: SymField,
    pub sqrt_det: Field,
    /// `Γ^k_ij` at `(k, i, j)`.
    pub gamma: Rank3Field,
    /// `∂_l Γ^k_ij`, indexed `[l]`.
    pub dgamma: Vec<Rank3Field>,
    pub curvature: CurvaturePack,
    pub pi: SymField,
    /// Covariant second fundamental form recovered from `π`.
    pub k: SymField,
    /// `∇_l π^{ij}` of the weight-one density, indexed `[l]`.
    pub nabla_pi: Vec<SymField>,
    /// `∇_k π^{jk}`.
    pub div_pi: VectorField,
    /// `tr_g π`.
    pub trace_pi: Field,
}

impl Geometry {
    pub fn new(grid: &Grid, p: &PhasePoint, lambda: f64) -> Result<Self> {
        p.check(grid)?;
        let n = p.dim();
        let md = metric_data(grid, &p.g)?;
        let gamma = christoffel_with(&md.inverse, &metric_gradient(grid, &p.g));
        let dgamma = christoffel_gradient(grid, &gamma);
        let ric = ricci_with(&gamma, &dgamma);
        let curvature = pack_with(&md, &p.g, &p.pi, ric, lambda);
        let k = k_from_pi(grid, &p.g, &p.pi)?;
        let dpi: Vec<_> = p.pi.components().iter().map(|c| grid.gradient(c)).collect();
        let len = grid.total_points();
        let mut nabla_pi: Vec<SymField> = (0..n).map(|_| SymField::zeros(n, len)).collect();
        let pv = |i: usize, j: usize, q: usize| p.pi.get(i, j).as_slice()[q];
        let gv = |k: usize, i: usize, j: usize, q: usize| gamma.get(k, i, j).as_slice()[q];
        for q in 0..len {
            for (l, out) in nabla_pi.iter_mut().enumerate() {
                for (i, j) in crate::tensor::sym_pairs(n) {
                    let mut s = dpi[crate::tensor::sym_index(n, i, j)].get(l).as_slice()[q];
                    for m in 0..n {
                        s += gv(i, l, m, q) * pv(m, j, q) + gv(j, l, m, q) * pv(i, m, q)
                            - gv(m, m, l, q) * pv(i, j, q);
                    }
                    out.get_mut(i, j).as_mut_slice()[q] = s;
                }
            }
        }
        let div_pi = VectorField::new(
            (0..n)
                .map(|j| {
                    let mut acc = grid.zeros();
                    for (k, npi) in nabla_pi.iter().enumerate() {
                        acc += npi.get(j, k);
                    }
                    acc
                })
                .collect(),
        );
        let trace_pi = trace(&p.g, &p.pi);
        Ok(Self {
            grid: grid.clone(),
            lambda,
            g: p.g.0.clone(),
            ginv: md.inverse,
            sqrt_det: md.sqrt_det,
            gamma,
            dgamma,
            curvature,
            pi: p.pi.0.clone(),
            k,
            nabla_pi,
            div_pi,
            trace_pi,
        })
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    /// Point-local copy of all quantities, full (unsymmetrised) index storage.
    pub fn local(&self, q: usize) -> LocalGeometry {
        let n = self.dim();
        let mat = |s: &SymField| {
            let mut m = vec![0.0; n * n];
            s.matrix_at(q, &mut m);
            m
        };
        let mut gamma = vec![0.0; n * n * n];
        let mut nabla_pi = vec![0.0; n * n * n];
        let mut dgamma = vec![0.0; n * n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    gamma[(a * n + b) * n + c] = self.gamma.get(a, b, c).as_slice()[q];
                    nabla_pi[(a * n + b) * n + c] = self.nabla_pi[a].get(b, c).as_slice()[q];
                    for l in 0..n {
                        dgamma[((l * n + a) * n + b) * n + c] = self.dgamma[l].get(a, b, c).as_slice()[q];
                    }
                }
            }
        }
        LocalGeometry {
            n,
            lambda: self.lambda,
            g: mat(&self.g),
            ginv: mat(&self.ginv),
            sqrt_det: self.sqrt_det.as_slice()[q],
            gamma,
            dgamma,
            ricci: mat(&self.curvature.ricci),
            scalar: self.curvature.scalar.as_slice()[q],
            einstein: mat(&self.curvature.einstein),
            pi_tensor: mat(&self.curvature.pi_tensor),
            pi: mat(&self.pi),
            k: mat(&self.k),
            nabla_pi,
            div_pi: (0..n).map(|j| self.div_pi.get(j).as_slice()[q]).collect(),
            trace_pi: self.trace_pi.as_slice()[q],
        }
    }
}

/// Geometry at one grid point. Matrices are row-major `n x n`; rank-3 arrays
/// are indexed `(a n + b) n + c`, rank-4 `((l n + a) n + b) n + c`.
#[derive(Clone, Debug)]
pub struct LocalGeometry {
    pub n: usize,
    pub lambda: f64,
    pub g: Vec<f64>,
    pub ginv: Vec<f64>,
    pub sqrt_det: f64,
    pub gamma: Vec<f64>,
    pub dgamma: Vec<f64>,
    pub ricci: Vec<f64>,
    pub scalar: f64,
    pub einstein: Vec<f64>,
    pub pi_tensor: Vec<f64>,
    pub pi: Vec<f64>,
    pub k: Vec<f64>,
    pub nabla_pi: Vec<f64>,
    pub div_pi: Vec<f64>,
    pub trace_pi: f64,
}

impl LocalGeometry {
    #[inline]
    pub fn m(&self, v: &[f64], i: usize, j: usize) -> f64 {
        v[i * self.n + j]
    }

    /// `Γ^k_ij`.
    #[inline]
    pub fn gam(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[(k * self.n + i) * self.n + j]
    }

    /// `∂_l Γ^k_ij`.
    #[inline]
    pub fn dgam(&self, l: usize, k: usize, i: usize, j: usize) -> f64 {
        let n = self.n;
        self.dgamma[((l * n + k) * n + i) * n + j]
    }

    /// `∇_l π^{ij}`.
    #[inline]
    pub fn npi(&self, l: usize, i: usize, j: usize) -> f64 {
        self.nabla_pi[(l * self.n + i) * self.n + j]
    }

    /// `π_ij = g_ia g_jb π^{ab}`.
    pub fn pi_lower(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += self.g[i * n + a] * self.g[j * n + b] * self.pi[a * n + b];
                    }
                }
                out[i * n + j] = s;
            }
        }
        out
    }
}
