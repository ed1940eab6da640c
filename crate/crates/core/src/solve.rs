//! Least-squares solves of the special-variation system `F`, Newton projection
//! onto constraint fibers and detection of Killing initial data.

use std::time::Instant;

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::phi;
use crate::error::{ForgeError, Result};
use crate::fields::{ConstraintValue, LapseShift, PhasePoint};
use crate::geometry::Geometry;
use crate::grid::Grid;
use crate::jet::JetOperator;
use crate::kidops::{adjoint_operator, dphi_operator, special_variation_operator, DrAdjointKernel, Variation};
use crate::linop::{assemble_columns, axpy, norm, scale, Compose, Diagonal, FourierMultiplier, LinearOperator, Stacked, TrigBasis};
use crate::tensor::{Field, SymField, TensorComponents, VectorField};

/// How Newton builds its update direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Solve `F(y, Y) = ε − Φ(p)` and move along the special variation.
    #[default]
    SpecialVariations,
    /// Minimum-norm solve of `DΦ v = ε − Φ(p)`, so `v = DΦ*ξ` with `DΦ DΦ*ξ = ε − Φ(p)`.
    AdjointComposition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_newton_iters: usize,
    /// Relative residual reduction at which Newton stops.
    pub newton_tol: f64,
    pub krylov_tol: f64,
    pub krylov_max_iters: usize,
    /// Relative tolerance of the inner solve in each Newton step, floored at `krylov_tol`.
    pub newton_forcing: f64,
    pub strategy: Strategy,
    /// Largest grid-point count for dense assembly.
    pub dense_threshold: usize,
    /// Residual below which a point counts as on the fiber.
    pub absolute_tol: f64,
    pub max_halvings: usize,
    /// Number of smallest singular values reported by kernel scans.
    pub singular_count: usize,
    pub eigen_tol: f64,
    pub eigen_max_iters: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_newton_iters: 10,
            newton_tol: 1e-8,
            krylov_tol: 1e-10,
            krylov_max_iters: 2000,
            newton_forcing: 1e-3,
            strategy: Strategy::SpecialVariations,
            dense_threshold: 1000,
            absolute_tol: 1e-9,
            max_halvings: 8,
            singular_count: 8,
            eigen_tol: 1e-9,
            eigen_max_iters: 1000,
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.newton_tol, self.krylov_tol, self.newton_forcing, self.absolute_tol, self.eigen_tol];
        if positive.iter().any(|t| !(*t > 0.0)) {
            return Err(ForgeError::InvalidOptions("tolerances must be positive".into()));
        }
        if self.krylov_max_iters == 0 || self.singular_count == 0 {
            return Err(ForgeError::InvalidOptions("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

/// Result of [`lsqr`].
#[derive(Clone, Debug)]
pub struct KrylovOutcome {
    pub x: Vec<f64>,
    /// Estimated `‖b − A x‖` per iteration, starting with `‖b‖`.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// `‖b − A x‖ ≤ tol ‖b‖`.
    pub converged: bool,
    /// Least-squares optimum reached with the residual above tolerance.
    pub stagnated: bool,
}

impl KrylovOutcome {
    pub fn relative_residual(&self) -> f64 {
        let b = self.history[0];
        if b == 0.0 {
            0.0
        } else {
            self.history.last().copied().unwrap_or(0.0) / b
        }
    }
}

/// LSQR least-squares solve of `A x ≈ b` (Paige and Saunders), starting at zero.
pub fn lsqr(op: &dyn LinearOperator, b: &[f64], tol: f64, max_iters: usize) -> KrylovOutcome {
    lsqr_split(op, b, tol, tol, max_iters)
}

/// [`lsqr`] with separate tolerances: converged once `‖r‖ ≤ btol‖b‖`,
/// stagnated once `‖Aᵀr‖ ≤ atol‖A‖‖r‖`.
pub fn lsqr_split(op: &dyn LinearOperator, b: &[f64], btol: f64, atol: f64, max_iters: usize) -> KrylovOutcome {
    let mut x = vec![0.0; op.ncols()];
    let mut beta = norm(b);
    let mut history = vec![beta];
    if beta == 0.0 {
        return KrylovOutcome {
            x,
            history,
            iterations: 0,
            converged: true,
            stagnated: false,
        };
    }
    let b_norm = beta;
    let mut u: Vec<f64> = b.iter().map(|v| v / beta).collect();
    let mut v = op.apply_transpose(&u);
    let mut alpha = norm(&v);
    if alpha == 0.0 {
        return KrylovOutcome {
            x,
            history,
            iterations: 0,
            converged: false,
            stagnated: true,
        };
    }
    scale(&mut v, 1.0 / alpha);
    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm_sq = 0.0;
    for it in 1..=max_iters {
        let mut au = op.apply(&v);
        axpy(&mut au, -alpha, &u);
        u = au;
        beta = norm(&u);
        if beta > 0.0 {
            scale(&mut u, 1.0 / beta);
        }
        anorm_sq += alpha * alpha + beta * beta;
        let mut atv = op.apply_transpose(&u);
        axpy(&mut atv, -beta, &v);
        v = atv;
        alpha = norm(&v);
        if alpha > 0.0 {
            scale(&mut v, 1.0 / alpha);
        }
        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;
        axpy(&mut x, phi / rho, &w);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi = vi - theta / rho * *wi;
        }
        history.push(phibar);
        if phibar <= btol * b_norm {
            return KrylovOutcome {
                x,
                history,
                iterations: it,
                converged: true,
                stagnated: false,
            };
        }
        let normal = phibar * alpha * c.abs();
        if normal <= atol * anorm_sq.sqrt() * phibar || alpha == 0.0 {
            return KrylovOutcome {
                x,
                history,
                iterations: it,
                converged: false,
                stagnated: true,
            };
        }
    }
    KrylovOutcome {
        x,
        history,
        iterations: max_iters,
        converged: false,
        stagnated: false,
    }
}

/// Inverse of the constant-coefficient leading parts of `F`, `(−2(n−1)(Δ̊ + κn))⁻¹`
/// on `y` and `(2(Δ̊ + κ(n−1)))⁻¹` on `Y`, in absolute value. Modes where the
/// symbol vanishes and the Nyquist modes (where spectral derivatives vanish)
/// are pseudo-inverted to zero.
pub fn f_preconditioner(grid: &Grid) -> FourierMultiplier {
    let n = grid.dim() as f64;
    let kappa = grid.spec().kappa;
    FourierMultiplier::new(grid, grid.dim() + 1, |c, k, nyquist| {
        let k2: f64 = k.iter().map(|x| x * x).sum();
        let sym = if c == 0 {
            2.0 * (n - 1.0) * (k2 - kappa * n)
        } else {
            2.0 * (k2 - kappa * (n - 1.0))
        };
        if nyquist || sym.abs() < 1e-12 {
            0.0
        } else {
            1.0 / sym.abs()
        }
    })
}

/// The discretised `F = DΦ ∘ special_variation` at a fixed phase point.
pub struct FOperator {
    pub dphi: JetOperator,
    pub variation: JetOperator,
}

impl FOperator {
    pub fn new(geo: &Geometry, tau: f64) -> Self {
        Self {
            dphi: dphi_operator(geo),
            variation: special_variation_operator(geo, tau),
        }
    }
}

impl LinearOperator for FOperator {
    fn nrows(&self) -> usize {
        self.dphi.nrows()
    }
    fn ncols(&self) -> usize {
        self.variation.ncols()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.dphi.apply(&self.variation.apply(x))
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.variation.apply_transpose(&self.dphi.apply_transpose(y))
    }
}

/// Least-squares solution of `F(y, Y) = target`.
#[derive(Clone, Debug)]
pub struct FSolution {
    pub y: Field,
    pub shift: VectorField,
    /// `‖F(y, Y) − target‖_{L²}`, recomputed after the solve.
    pub residual: f64,
    pub relative_residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub converged: bool,
    pub stagnated: bool,
}

fn solve_f_geometry(geo: &Geometry, target: &ConstraintValue, tau: f64, opts: &SolveOptions) -> FSolution {
    let grid = &geo.grid;
    let n = geo.dim();
    let f = FOperator::new(geo, tau);
    let m = f_preconditioner(grid);
    let b = target.to_flat();
    let out = lsqr(&Compose::new(&f, &m), &b, opts.krylov_tol, opts.krylov_max_iters);
    let x = m.apply(&out.x);
    let mut r = f.apply(&x);
    axpy(&mut r, -1.0, &b);
    let residual = norm(&r) * grid.cell_volume().sqrt();
    let b_norm = norm(&b) * grid.cell_volume().sqrt();
    let xi = LapseShift::from_flat(n, &x);
    FSolution {
        y: xi.lapse,
        shift: xi.shift,
        residual,
        relative_residual: if b_norm > 0.0 { residual / b_norm } else { 0.0 },
        iterations: out.iterations,
        history: out.history,
        converged: out.converged,
        stagnated: out.stagnated,
    }
}

/// Solves `F(y, Y) = target` in the least-squares sense with LSQR and the
/// Fourier preconditioner. A stagnating residual (cokernel obstruction) is
/// reported through `stagnated`; exhausting the iteration cap is an error.
pub fn solve_f(
    grid: &Grid,
    p: &PhasePoint,
    target: &ConstraintValue,
    lambda: f64,
    tau: f64,
    opts: &SolveOptions,
) -> Result<FSolution> {
    opts.validate()?;
    target.check(grid)?;
    let geo = Geometry::new(grid, p, lambda)?;
    let sol = solve_f_geometry(&geo, target, tau, opts);
    if !sol.converged && !sol.stagnated {
        return Err(ForgeError::KrylovNonConvergence {
            iterations: sol.iterations,
            relative_residual: sol.relative_residual,
            history: sol.history,
        });
    }
    Ok(sol)
}

/// Outcome of [`newton_project`].
#[derive(Clone, Debug, Serialize)]
pub struct Projection {
    #[serde(skip)]
    pub point: PhasePoint,
    /// `‖Φ(p_k) − ε‖_{L²}` for every iterate, starting with the input.
    pub residual_history: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub krylov_iterations: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub runtime_seconds: f64,
}

impl Projection {
    pub fn reduction(&self) -> f64 {
        let first = self.residual_history[0];
        let last = *self.residual_history.last().unwrap();
        if last == 0.0 {
            f64::INFINITY
        } else {
            first / last
        }
    }
}

fn residual(grid: &Grid, p: &PhasePoint, eps: &ConstraintValue, lambda: f64) -> Result<ConstraintValue> {
    Ok(eps - &phi(grid, p, lambda)?)
}

/// Right preconditioner for `DΦ DΦ*`: inverse of `1 + 2|k|⁴` on the lapse and
/// `1 + 3|k|²` on the shift.
pub fn normal_preconditioner(grid: &Grid) -> FourierMultiplier {
    FourierMultiplier::new(grid, grid.dim() + 1, |c, k, _| {
        let k2: f64 = k.iter().map(|x| x * x).sum();
        1.0 / (1.0 + if c == 0 { 2.0 * k2 * k2 } else { 3.0 * k2 })
    })
}

fn newton_direction(geo: &Geometry, r: &ConstraintValue, tau: f64, tol: f64, opts: &SolveOptions) -> (Variation, usize) {
    let n = geo.dim();
    let adj = adjoint_operator(geo);
    let mn = normal_preconditioner(&geo.grid);
    match opts.strategy {
        Strategy::SpecialVariations => {
            // Away from the background, products alias into modes `F` cannot
            // reach; the `DΦ*` block covers them.
            let f = FOperator::new(geo, tau);
            let mf = f_preconditioner(&geo.grid);
            let normal = Compose::new(&f.dphi, Compose::new(&adj, &mn));
            let op = Stacked {
                left: Compose::new(&f, &mf),
                right: &normal,
            };
            let out = lsqr_split(&op, &r.to_flat(), tol, opts.krylov_tol, opts.krylov_max_iters);
            let k = f.ncols();
            let mut v = f.variation.apply(&mf.apply(&out.x[..k]));
            axpy(&mut v, 1.0, &adj.apply(&mn.apply(&out.x[k..])));
            (Variation::from_flat(n, &v), out.iterations)
        }
        Strategy::AdjointComposition => {
            let d = dphi_operator(geo);
            let op = Compose::new(&d, Compose::new(&adj, &mn));
            let out = lsqr_split(&op, &r.to_flat(), tol, opts.krylov_tol, opts.krylov_max_iters);
            (Variation::from_flat(n, &adj.apply(&mn.apply(&out.x))), out.iterations)
        }
    }
}

/// Newton projection of `p` onto the fiber `Φ = ε`, with residual-monotone
/// step halving and an ellipticity check on every trial point.
pub fn newton_project(
    grid: &Grid,
    p: &PhasePoint,
    eps: &ConstraintValue,
    lambda: f64,
    tau: f64,
    opts: &SolveOptions,
) -> Result<Projection> {
    opts.validate()?;
    eps.check(grid)?;
    let start = Instant::now();
    let mut point = p.clone();
    let mut r = residual(grid, &point, eps, lambda)?;
    let r0 = r.l2_norm(grid);
    let mut history = vec![r0];
    let mut steps = Vec::new();
    let mut krylov = Vec::new();
    let mut converged = r0 <= opts.absolute_tol;
    let mut iterations = 0;
    while !converged && iterations < opts.max_newton_iters {
        let current = *history.last().unwrap();
        let geo = Geometry::new(grid, &point, lambda)?;
        let tol = opts.newton_forcing.max(opts.krylov_tol);
        let (dir, its) = newton_direction(&geo, &r, tau, tol, opts);
        krylov.push(its);
        let mut t = 1.0;
        let mut accepted = None;
        let mut elliptic_failures = 0;
        for _ in 0..=opts.max_halvings {
            let cand = point.displaced(t, &dir.h, &dir.p);
            match residual(grid, &cand, eps, lambda) {
                Ok(rc) => {
                    let nrm = rc.l2_norm(grid);
                    if nrm < current {
                        accepted = Some((cand, rc, nrm));
                        break;
                    }
                }
                Err(ForgeError::SingularMetric { .. } | ForgeError::NotElliptic { .. }) => elliptic_failures += 1,
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((cand, rc, nrm)) = accepted else {
            if elliptic_failures == opts.max_halvings + 1 {
                return Err(ForgeError::EllipticityLost {
                    iteration: iterations,
                    halvings: opts.max_halvings,
                });
            }
            return Err(ForgeError::Stalled {
                residual: current,
                history,
            });
        };
        debug_assert!(dir.h.components().len() == point.g.components().len());
        point = cand;
        r = rc;
        history.push(nrm);
        steps.push(t);
        converged = nrm <= opts.newton_tol * r0 || nrm <= opts.absolute_tol;
    }
    Ok(Projection {
        point,
        residual_history: history,
        step_sizes: steps,
        krylov_iterations: krylov,
        converged,
        iterations,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Singular triplet `A v = σ u`; `v` has unit Euclidean norm.
#[derive(Clone, Debug)]
pub struct Triplet {
    pub sigma: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Dense assembly, refused above `dense_threshold` grid points.
pub fn assemble_dense(op: &dyn LinearOperator, grid: &Grid, dense_threshold: usize) -> Result<Mat<f64>> {
    if grid.total_points() > dense_threshold {
        return Err(ForgeError::MemoryBudget {
            unknowns: op.ncols(),
            budget: dense_threshold,
        });
    }
    Ok(assemble_columns(op))
}

/// All singular triplets of a dense matrix, ascending in `σ`.
pub fn dense_singular_triplets(mat: &Mat<f64>) -> Result<Vec<Triplet>> {
    let svd = mat
        .thin_svd()
        .map_err(|e| ForgeError::EigensolverNonConvergence(format!("dense SVD: {e:?}")))?;
    let s = svd.S().column_vector();
    let (u, v) = (svd.U(), svd.V());
    let mut out: Vec<Triplet> = (0..s.nrows())
        .map(|j| Triplet {
            sigma: s[j],
            left: (0..u.nrows()).map(|i| u[(i, j)]).collect(),
            right: (0..v.nrows()).map(|i| v[(i, j)]).collect(),
        })
        .collect();
    out.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
    Ok(out)
}

/// Largest singular value by power iteration on `AᵀA` (a lower estimate).
pub fn largest_singular_value(op: &dyn LinearOperator, iters: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..op.ncols()).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut sigma = 0.0;
    for _ in 0..iters {
        let nx = norm(&x);
        if nx == 0.0 {
            return 0.0;
        }
        scale(&mut x, 1.0 / nx);
        let ax = op.apply(&x);
        sigma = norm(&ax);
        x = op.apply_transpose(&ax);
    }
    sigma
}

fn columns(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols()).map(|j| (0..m.nrows()).map(|i| m[(i, j)]).collect()).collect()
}

fn to_mat(cols: &[Vec<f64>], rows: usize) -> Mat<f64> {
    Mat::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// Orthonormalises the columns of `s`, dropping near-dependent directions.
fn svqb(s: &Mat<f64>) -> Result<Mat<f64>> {
    let mut s = s.clone();
    for _ in 0..2 {
        let d: Vec<f64> = (0..s.ncols())
            .map(|j| {
                let nrm = (0..s.nrows()).map(|i| s[(i, j)] * s[(i, j)]).sum::<f64>().sqrt();
                if nrm > 0.0 { 1.0 / nrm } else { 0.0 }
            })
            .collect();
        let sd = Mat::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)] * d[j]);
        let gram = sd.transpose() * &sd;
        let eig = gram
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| ForgeError::EigensolverNonConvergence(format!("Gram eigen: {e:?}")))?;
        let vals = eig.S().column_vector();
        let vecs = eig.U();
        let top = (0..vals.nrows()).map(|i| vals[i]).fold(0.0_f64, f64::max);
        let keep: Vec<usize> = (0..vals.nrows()).filter(|&i| vals[i] > 1e-10 * top).collect();
        let c = Mat::from_fn(vecs.nrows(), keep.len(), |i, j| vecs[(i, keep[j])] / vals[keep[j]].sqrt());
        s = &sd * &c;
    }
    Ok(s)
}

fn apply_columns(op: &dyn LinearOperator, q: &Mat<f64>) -> Mat<f64> {
    let cols: Vec<Vec<f64>> = columns(q).iter().map(|c| op.apply(c)).collect();
    to_mat(&cols, op.nrows())
}

/// Smallest singular triplets of `A` by LOBPCG on `AᵀA`, with Rayleigh-Ritz
/// done through an SVD of `A Q` so small `σ` are not squared away.
///
/// `precond` is a positive diagonal approximating `(AᵀA)⁻¹`.
pub fn smallest_singular_triplets(
    op: &dyn LinearOperator,
    m: usize,
    precond: &[f64],
    sigma_max: f64,
    opts: &SolveOptions,
) -> Result<Vec<Triplet>> {
    let dim = op.ncols();
    let block = (m + 4).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x10bc_9c63);
    let x0: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..dim).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    let mut x = svqb(&to_mat(&x0, dim))?;
    let mut ax = apply_columns(op, &x);
    let mut p: Option<Mat<f64>> = None;
    let scale_sq = sigma_max * sigma_max;
    for _ in 0..opts.eigen_max_iters {
        let xs = columns(&x);
        let axs = columns(&ax);
        let mut active = false;
        let mut w = Vec::new();
        for (j, (xj, axj)) in xs.iter().zip(&axs).enumerate() {
            let sigma = norm(axj);
            let mut r = op.apply_transpose(axj);
            axpy(&mut r, -sigma * sigma, xj);
            let rn = norm(&r);
            if j < m && rn > opts.eigen_tol * scale_sq {
                active = true;
            }
            if rn > opts.eigen_tol * scale_sq * 1e-3 {
                w.push(r.iter().zip(precond).map(|(a, b)| a * b).collect::<Vec<f64>>());
            }
        }
        if !active {
            return Ok(finish(&x, &ax, m));
        }
        let mut s_cols = xs;
        s_cols.extend(w);
        if let Some(pm) = &p {
            s_cols.extend(columns(pm));
        }
        let q = svqb(&to_mat(&s_cols, dim))?;
        let aq = apply_columns(op, &q);
        let svd = aq
            .thin_svd()
            .map_err(|e| ForgeError::EigensolverNonConvergence(format!("Ritz SVD: {e:?}")))?;
        let sv = svd.S().column_vector();
        let mut order: Vec<usize> = (0..sv.nrows()).collect();
        order.sort_by(|a, b| sv[*a].total_cmp(&sv[*b]));
        let keep = block.min(order.len());
        let y = Mat::from_fn(q.ncols(), keep, |i, j| svd.V()[(i, order[j])]);
        let xn = &q * &y;
        let c = x.transpose() * &xn;
        p = Some(&xn - &x * &c);
        ax = &aq * &y;
        x = xn;
    }
    Err(ForgeError::EigensolverNonConvergence(format!(
        "LOBPCG did not converge in {} iterations",
        opts.eigen_max_iters
    )))
}

fn finish(x: &Mat<f64>, ax: &Mat<f64>, m: usize) -> Vec<Triplet> {
    let mut out: Vec<Triplet> = columns(x)
        .into_iter()
        .zip(columns(ax))
        .map(|(v, av)| {
            let nv = norm(&v);
            let sigma = norm(&av) / nv;
            let left = if sigma > 0.0 { av.iter().map(|a| a / (sigma * nv)).collect() } else { vec![0.0; av.len()] };
            Triplet {
                sigma,
                left,
                right: v.iter().map(|a| a / nv).collect(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
    out.truncate(m);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SvdMethod {
    Dense,
    MatrixFree,
}

/// Smallest singular values of an adjoint operator and its numerical kernel.
#[derive(Clone, Debug, Serialize)]
pub struct KernelReport {
    /// Ascending, the `singular_count` smallest.
    pub singular_values: Vec<f64>,
    pub kernel_dim: usize,
    #[serde(skip)]
    pub basis: Vec<LapseShift>,
    /// `σ_{dim+1}/σ_dim`; infinite when the kernel is empty or exactly resolved.
    pub gap_ratio: f64,
    pub sigma_max: f64,
    pub threshold: f64,
    pub method: SvdMethod,
    /// `‖DΦ*ξ‖` of each basis element, re-applied.
    pub basis_residuals: Vec<f64>,
}

/// `L²`-isometric view `W · op · B`, where `B` is the orthonormal trigonometric
/// basis on the inputs and `W` carries quadrature and symmetric-tensor weights.
struct Isometric<'a> {
    op: &'a JetOperator,
    basis: TrigBasis,
    weights: Diagonal,
}

impl<'a> Isometric<'a> {
    fn new(grid: &Grid, op: &'a JetOperator, output_weights: &[f64]) -> Self {
        let len = grid.total_points();
        let w: Vec<f64> = output_weights
            .iter()
            .flat_map(|w| std::iter::repeat_n((w * grid.cell_volume()).sqrt(), len))
            .collect();
        Self {
            op,
            basis: TrigBasis::new(grid, op.input_components()),
            weights: Diagonal(w),
        }
    }
}

impl LinearOperator for Isometric<'_> {
    fn nrows(&self) -> usize {
        self.op.nrows()
    }
    fn ncols(&self) -> usize {
        self.basis.ncols()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights.apply(&self.op.apply(&self.basis.apply(x)))
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.basis.apply_transpose(&self.op.apply_transpose(&self.weights.apply(y)))
    }
}

fn sym_weights(n: usize) -> Vec<f64> {
    crate::tensor::sym_pairs(n).map(|(i, j)| if i == j { 1.0 } else { 2.0 }).collect()
}

struct Spectrum {
    triplets: Vec<Triplet>,
    sigma_max: f64,
    method: SvdMethod,
}

fn spectrum(grid: &Grid, iso: &Isometric<'_>, leading: &[f64], opts: &SolveOptions) -> Result<Spectrum> {
    let m = opts.singular_count;
    if grid.total_points() <= opts.dense_threshold {
        let mat = assemble_dense(iso, grid, opts.dense_threshold)?;
        let all = dense_singular_triplets(&mat)?;
        let sigma_max = all.last().map(|t| t.sigma).unwrap_or(0.0);
        return Ok(Spectrum {
            triplets: all.into_iter().take(m).collect(),
            sigma_max,
            method: SvdMethod::Dense,
        });
    }
    let k2 = iso.basis.wavenumbers_sq();
    let precond: Vec<f64> = leading
        .iter()
        .flat_map(|&order| {
            k2.iter().map(move |k| 1.0 / (1.0 + if order == 2.0 { 2.0 * k * k } else { 3.0 * k }))
        })
        .collect();
    let sigma_max = largest_singular_value(iso, 60, opts.seed);
    let triplets = smallest_singular_triplets(iso, m, &precond, sigma_max, opts)?;
    Ok(Spectrum {
        triplets,
        sigma_max,
        method: SvdMethod::MatrixFree,
    })
}

fn report(sp: Spectrum, threshold: f64, basis: Vec<LapseShift>, residuals: Vec<f64>) -> KernelReport {
    let values: Vec<f64> = sp.triplets.iter().map(|t| t.sigma).collect();
    let dim = values.iter().filter(|s| **s < threshold * sp.sigma_max).count();
    let gap_ratio = if dim == 0 || values[dim - 1] == 0.0 {
        f64::INFINITY
    } else if dim < values.len() {
        values[dim] / values[dim - 1]
    } else {
        f64::NAN
    };
    KernelReport {
        singular_values: values,
        kernel_dim: dim,
        basis,
        gap_ratio,
        sigma_max: sp.sigma_max,
        threshold,
        method: sp.method,
        basis_residuals: residuals,
    }
}

/// Numerical kernel of `DΦ*` at `p`: `σ < threshold · σ_max` counts as kernel.
pub fn kid_kernel(grid: &Grid, p: &PhasePoint, lambda: f64, threshold: f64, opts: &SolveOptions) -> Result<KernelReport> {
    opts.validate()?;
    let n = p.dim();
    let geo = Geometry::new(grid, p, lambda)?;
    let adj = adjoint_operator(&geo);
    let w: Vec<f64> = sym_weights(n).into_iter().chain(sym_weights(n)).collect();
    let iso = Isometric::new(grid, &adj, &w);
    let leading: Vec<f64> = std::iter::once(2.0).chain(std::iter::repeat_n(1.0, n)).collect();
    let sp = spectrum(grid, &iso, &leading, opts)?;
    let dim = sp
        .triplets
        .iter()
        .filter(|t| t.sigma < threshold * sp.sigma_max)
        .count();
    let mut basis = Vec::new();
    let mut residuals = Vec::new();
    for t in sp.triplets.iter().take(dim) {
        let xi = LapseShift::from_flat(n, &iso.basis.apply(&t.right));
        residuals.push(crate::kidops::dphi_adjoint_geometry(&geo, &xi, Default::default()).l2_norm(grid));
        basis.push(xi);
    }
    Ok(report(sp, threshold, basis, residuals))
}

/// Numerical kernel of `Dφ(g)*` for `φ(g) = (R(g) − 2f)√g`; basis elements carry
/// the lapse only.
pub fn scalar_kernel(grid: &Grid, g: &SymField, f: &Field, threshold: f64, opts: &SolveOptions) -> Result<KernelReport> {
    opts.validate()?;
    grid.check(f)?;
    let n = g.dim();
    let len = grid.total_points();
    let p = PhasePoint::new(g.clone(), SymField::zeros(n, len));
    let geo = Geometry::new(grid, &p, 0.0)?;
    let op = JetOperator::from_kernel(grid, &DrAdjointKernel { geometry: &geo, f });
    let iso = Isometric::new(grid, &op, &sym_weights(n));
    let sp = spectrum(grid, &iso, &[2.0], opts)?;
    let dim = sp
        .triplets
        .iter()
        .filter(|t| t.sigma < threshold * sp.sigma_max)
        .count();
    let mut basis = Vec::new();
    let mut residuals = Vec::new();
    for t in sp.triplets.iter().take(dim) {
        let lapse = Field::from_vec(iso.basis.apply(&t.right));
        residuals.push(grid.l2_norm(&crate::kidops::dr_adjoint(grid, g, f, &lapse)?));
        basis.push(LapseShift::new(lapse, VectorField::zeros(n, len)));
    }
    Ok(report(sp, threshold, basis, residuals))
}

