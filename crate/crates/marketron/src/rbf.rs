//! Gaussian RBF machinery: collocation grids, basis matrices, spectral
//! regularization, a MINRES solver and field evaluation.
//!
//! Coefficient tensors are flattened with `k` (x) outermost and `l` (θ)
//! innermost: `p = (k·n_y + j)·n_θ + l`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, State};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapeMode {
    /// Shape per axis after scaling each axis by its interval half-width.
    #[default]
    Anisotropic,
    /// One shape for all axes in raw coordinates.
    Isotropic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ShapeOptions {
    #[serde(default)]
    pub mode: ShapeMode,
    /// Shape in scaled units (anisotropic) or raw units (isotropic); the
    /// default is `1/(2h²)` from the mean node spacing.
    #[serde(default)]
    pub eps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollocationGrid {
    pub taus: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub thetas: Vec<f64>,
    /// Shape per axis in raw coordinates.
    pub eps: [f64; 3],
}

impl CollocationGrid {
    pub fn dims(&self) -> [usize; 3] {
        [self.xs.len(), self.ys.len(), self.thetas.len()]
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len() * self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, k: usize, j: usize, l: usize) -> usize {
        (k * self.ys.len() + j) * self.thetas.len() + l
    }

    pub fn axis(&self, a: usize) -> &[f64] {
        match a {
            0 => &self.xs,
            1 => &self.ys,
            _ => &self.thetas,
        }
    }

    pub fn node(&self, p: usize) -> State {
        let nt = self.thetas.len();
        let ny = self.ys.len();
        let l = p % nt;
        let j = (p / nt) % ny;
        let k = p / (nt * ny);
        State::new(self.xs[k], self.ys[j], self.thetas[l])
    }

    pub fn dt(&self) -> f64 {
        self.taus[1] - self.taus[0]
    }

    pub fn maturity(&self) -> f64 {
        *self.taus.last().expect("non-empty time axis")
    }

    /// Same spatial grid with a different number of time steps.
    pub fn with_time_steps(&self, n_tau: usize) -> Self {
        let t = self.maturity();
        Self { taus: uniform(0.0, t, n_tau + 1), ..self.clone() }
    }
}

fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Interval around the observed values, widened by 30% and never narrower
/// than `[-0.5, 0.5]`.
pub fn axis_interval(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ((lo - 0.3 * lo.abs()).min(-0.5), (hi + 0.3 * hi.abs()).max(0.5))
}

pub fn build_grid(spots: &[f64], params: &ModelParams, n_x: usize, n_y: usize, n_theta: usize, n_tau: usize, t: f64) -> Result<CollocationGrid> {
    build_grid_with(spots, params, [n_x, n_y, n_theta], n_tau, t, ShapeOptions::default())
}

pub fn build_grid_with(spots: &[f64], params: &ModelParams, n: [usize; 3], n_tau: usize, t: f64, shape: ShapeOptions) -> Result<CollocationGrid> {
    if spots.is_empty() {
        return Err(Error::Domain("grid needs at least one spot".into()));
    }
    if spots.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Domain("spots must be positive and finite".into()));
    }
    if n.iter().any(|&m| m < 2) || n_tau < 1 {
        return Err(Error::Domain(format!("grid counts too small: {n:?}, n_tau = {n_tau}")));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("maturity must be positive, got {t}")));
    }
    let xs: Vec<f64> = spots.iter().map(|s| params.x0_for_spot(*s)).collect();
    let bounds = [axis_interval(&xs), axis_interval(&[params.y0]), axis_interval(&[params.theta0])];
    let axes: Vec<Vec<f64>> = (0..3).map(|a| uniform(bounds[a].0, bounds[a].1, n[a])).collect();
    let spacing: Vec<f64> = (0..3).map(|a| (bounds[a].1 - bounds[a].0) / (n[a] - 1) as f64).collect();
    let eps = match shape.mode {
        ShapeMode::Anisotropic => {
            let mut e = [0.0; 3];
            for a in 0..3 {
                let half = 0.5 * (bounds[a].1 - bounds[a].0);
                let scaled = shape.eps.unwrap_or_else(|| {
                    let u = spacing[a] / half;
                    0.5 / (u * u)
                });
                e[a] = scaled / (half * half);
            }
            e
        }
        ShapeMode::Isotropic => {
            let h = spacing.iter().sum::<f64>() / 3.0;
            [shape.eps.unwrap_or(0.5 / (h * h)); 3]
        }
    };
    if eps.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::Domain(format!("RBF shape must be positive, got {eps:?}")));
    }
    let mut it = axes.into_iter();
    Ok(CollocationGrid {
        taus: uniform(0.0, t, n_tau + 1),
        xs: it.next().unwrap_or_default(),
        ys: it.next().unwrap_or_default(),
        thetas: it.next().unwrap_or_default(),
        eps,
    })
}

/// 1D basis matrix `exp(-ε (z_p - z_q)²)` for one axis.
pub fn axis_basis(nodes: &[f64], eps: f64) -> DMatrix<f64> {
    DMatrix::from_fn(nodes.len(), nodes.len(), |p, q| (-eps * (nodes[p] - nodes[q]).powi(2)).exp())
}

/// Full 3D basis matrix over all collocation triples.
pub fn basis_matrix(grid: &CollocationGrid) -> DMatrix<f64> {
    let n = grid.len();
    let ax = [axis_basis(&grid.xs, grid.eps[0]), axis_basis(&grid.ys, grid.eps[1]), axis_basis(&grid.thetas, grid.eps[2])];
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let (kp, jp, lp) = split_index(grid, p);
            (0..n)
                .map(|q| {
                    let (kq, jq, lq) = split_index(grid, q);
                    ax[0][(kp, kq)] * ax[1][(jp, jq)] * ax[2][(lp, lq)]
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |p, q| rows[p][q])
}

pub(crate) fn split_index(grid: &CollocationGrid, p: usize) -> (usize, usize, usize) {
    let nt = grid.thetas.len();
    let ny = grid.ys.len();
    (p / (nt * ny), (p / nt) % ny, p % nt)
}

/// Nearest symmetric matrix with spectrum clipped to `[δ λ_max, ∞)`, δ = 1e-12.
pub fn regularize_spd(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Domain(format!("regularize_spd needs a square matrix, got {}x{}", n, matrix.ncols())));
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.max();
    if !(lmax > 0.0) {
        return Err(Error::Degenerate("matrix has no positive eigenvalue".into()));
    }
    let floor = 1e-12 * lmax;
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = m;
            out[(j, i)] = m;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    /// Iteration cap as a multiple of the system size.
    pub max_iter_factor: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter_factor: 10 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MinresInfo {
    pub iterations: usize,
    pub residual: f64,
}

/// MINRES for a symmetric (possibly indefinite) system, started from zero.
pub fn minres(a: &DMatrix<f64>, b: &[f64], opts: SolverOptions) -> Result<(Vec<f64>, MinresInfo)> {
    let n = a.nrows();
    let bv = DVector::from_column_slice(b);
    let beta1 = bv.norm();
    if beta1 == 0.0 {
        return Ok((vec![0.0; n], MinresInfo { iterations: 0, residual: 0.0 }));
    }
    let max_iter = opts.max_iter_factor.max(1) * n.max(1);
    let mut x = DVector::zeros(n);
    let mut r1 = bv.clone();
    let mut r2 = bv.clone();
    let mut y = bv.clone();
    let mut w = DVector::zeros(n);
    let mut w2 = DVector::zeros(n);
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut itn = 0;
    let mut true_res = 1.0;
    while itn < max_iter {
        itn += 1;
        let v = &y / beta;
        y = a * &v;
        if itn >= 2 {
            y -= &r1 * (beta / oldb);
        }
        let alfa = v.dot(&y);
        y -= &r2 * (alfa / beta);
        r1 = std::mem::replace(&mut r2, y.clone());
        oldb = beta;
        beta = y.norm();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let w1 = std::mem::replace(&mut w2, w.clone());
        w = (&v - &w1 * oldeps - &w2 * delta) / gamma;
        x += &w * phi;
        if phibar / beta1 <= opts.tol || beta == 0.0 {
            true_res = (&bv - a * &x).norm() / beta1;
            if true_res <= opts.tol {
                return Ok((x.as_slice().to_vec(), MinresInfo { iterations: itn, residual: true_res }));
            }
            if beta == 0.0 {
                return Err(Error::Breakdown { iterations: itn, residual: true_res });
            }
        }
        if !phibar.is_finite() {
            return Err(Error::Breakdown { iterations: itn, residual: f64::NAN });
        }
    }
    if true_res > opts.tol {
        true_res = (&bv - a * &x).norm() / beta1;
    }
    if true_res <= opts.tol {
        return Ok((x.as_slice().to_vec(), MinresInfo { iterations: itn, residual: true_res }));
    }
    Err(Error::NotConverged { iterations: itn, residual: true_res })
}

/// Column-wise MINRES solve of `A X = B`.
pub fn solve(matrix: &DMatrix<f64>, rhs_block: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve_with(matrix, rhs_block, SolverOptions::default())
}

pub fn solve_with(matrix: &DMatrix<f64>, rhs_block: &DMatrix<f64>, opts: SolverOptions) -> Result<DMatrix<f64>> {
    if matrix.nrows() != matrix.ncols() || rhs_block.nrows() != matrix.nrows() {
        return Err(Error::Domain("solve: dimension mismatch".into()));
    }
    let cols: Vec<Vec<f64>> = (0..rhs_block.ncols())
        .into_par_iter()
        .map(|c| minres(matrix, rhs_block.column(c).as_slice(), opts).map(|(x, _)| x))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(matrix.nrows(), rhs_block.ncols(), |i, j| cols[j][i]))
}

/// Gaussian RBF field `Σ c_kjl φ_kjl` on a collocation grid.
#[derive(Clone, Debug)]
pub struct RbfField {
    pub grid: Arc<CollocationGrid>,
    pub coeffs: Vec<f64>,
}

impl RbfField {
    pub fn new(grid: Arc<CollocationGrid>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::Domain(format!("expected {} coefficients, got {}", grid.len(), coeffs.len())));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("non-finite RBF coefficient".into()));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: Arc<CollocationGrid>) -> Self {
        let n = grid.len();
        Self { grid, coeffs: vec![0.0; n] }
    }

    /// Interpolate nodal values by solving the per-axis basis systems.
    pub fn fit(grid: Arc<CollocationGrid>, nodal: &[f64]) -> Result<Self> {
        let coeffs = tensor_solve(&grid, nodal)?;
        Self::new(grid, coeffs)
    }

    /// Values at the collocation nodes.
    pub fn nodal_values(&self) -> Vec<f64> {
        let g = &self.grid;
        let ax = [axis_basis(&g.xs, g.eps[0]), axis_basis(&g.ys, g.eps[1]), axis_basis(&g.thetas, g.eps[2])];
        tensor_apply(g.dims(), [&ax[0], &ax[1], &ax[2]], &self.coeffs)
    }

    fn weights(&self, s: &State) -> [Vec<f64>; 3] {
        let g = &self.grid;
        let w = |nodes: &[f64], e: f64, z: f64| nodes.iter().map(|c| (-e * (z - c).powi(2)).exp()).collect::<Vec<_>>();
        [w(&g.xs, g.eps[0], s.x), w(&g.ys, g.eps[1], s.y), w(&g.thetas, g.eps[2], s.theta)]
    }

    fn contract(&self, w: &[Vec<f64>; 3]) -> f64 {
        let [nx, ny, nt] = self.grid.dims();
        let mut acc = 0.0;
        for k in 0..nx {
            for j in 0..ny {
                let base = (k * ny + j) * nt;
                let inner: f64 = (0..nt).map(|l| self.coeffs[base + l] * w[2][l]).sum();
                acc += w[0][k] * w[1][j] * inner;
            }
        }
        acc
    }

    pub fn value_at(&self, s: &State) -> f64 {
        self.contract(&self.weights(s))
    }

    /// Partial derivative in x.
    pub fn dx_at(&self, s: &State) -> f64 {
        let mut w = self.weights(s);
        let e = self.grid.eps[0];
        for (wk, xk) in w[0].iter_mut().zip(&self.grid.xs) {
            *wk *= -2.0 * e * (s.x - xk);
        }
        self.contract(&w)
    }
}

pub fn evaluate(field: &RbfField, points: &[State]) -> Vec<f64> {
    points.iter().map(|s| field.value_at(s)).collect()
}

/// Apply `A_x ⊗ A_y ⊗ A_θ` to a flattened tensor.
pub fn tensor_apply(dims: [usize; 3], a: [&DMatrix<f64>; 3], v: &[f64]) -> Vec<f64> {
    let [nx, ny, nt] = dims;
    let mut t1 = vec![0.0; v.len()];
    for kj in 0..nx * ny {
        for l in 0..nt {
            t1[kj * nt + l] = (0..nt).map(|m| a[2][(l, m)] * v[kj * nt + m]).sum();
        }
    }
    let mut t2 = vec![0.0; v.len()];
    for k in 0..nx {
        for j in 0..ny {
            for l in 0..nt {
                t2[(k * ny + j) * nt + l] = (0..ny).map(|m| a[1][(j, m)] * t1[(k * ny + m) * nt + l]).sum();
            }
        }
    }
    let mut out = vec![0.0; v.len()];
    for k in 0..nx {
        for jl in 0..ny * nt {
            out[k * ny * nt + jl] = (0..nx).map(|m| a[0][(k, m)] * t2[m * ny * nt + jl]).sum();
        }
    }
    out
}

/// Coefficients of the interpolant of `nodal`, axis by axis with MINRES.
pub fn tensor_solve(grid: &CollocationGrid, nodal: &[f64]) -> Result<Vec<f64>> {
    if nodal.len() != grid.len() {
        return Err(Error::Domain("nodal vector length does not match grid".into()));
    }
    let inv: Vec<DMatrix<f64>> = (0..3)
        .map(|a| {
            let b = axis_basis(grid.axis(a), grid.eps[a]);
            let n = b.nrows();
            solve(&b, &DMatrix::identity(n, n))
        })
        .collect::<Result<_>>()?;
    Ok(tensor_apply(grid.dims(), [&inv[0], &inv[1], &inv[2]], nodal))
}

/// One axis of Gaussian RBFs augmented with an affine tail, constrained by
/// `Σ d_k = Σ d_k z_k = 0`. Constants and linear functions are reproduced
/// exactly, so heat-kernel smoothing does not leak mass at the grid edges.
#[derive(Clone, Debug)]
pub struct AugmentedAxis {
    pub nodes: Vec<f64>,
    pub eps: f64,
    /// Maps nodal values to `(d_1..d_n, β_0, β_1)`.
    pub coef: DMatrix<f64>,
}

impl AugmentedAxis {
    /// A single node gives the constant interpolant.
    pub fn new(nodes: &[f64], eps: f64) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Domain("axis needs at least one node".into()));
        }
        if n == 1 {
            return Ok(Self { nodes: nodes.to_vec(), eps, coef: DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]) });
        }
        let mut z = DMatrix::zeros(n + 2, n + 2);
        z.view_mut((0, 0), (n, n)).copy_from(&axis_basis(nodes, eps));
        for (k, &zk) in nodes.iter().enumerate() {
            z[(k, n)] = 1.0;
            z[(n, k)] = 1.0;
            z[(k, n + 1)] = zk;
            z[(n + 1, k)] = zk;
        }
        let rhs = DMatrix::from_fn(n + 2, n, |i, j| if i == j { 1.0 } else { 0.0 });
        let coef = solve(&z, &rhs)?;
        Ok(Self { nodes: nodes.to_vec(), eps, coef })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Basis row `[φ_1(z) .. φ_n(z), 1, z]`.
    pub fn basis_row(&self, z: f64) -> Vec<f64> {
        let mut r: Vec<f64> = self.nodes.iter().map(|c| (-self.eps * (z - c).powi(2)).exp()).collect();
        r.push(1.0);
        r.push(z);
        r
    }

    /// Cardinal weights: interpolant at `z` is `Σ w_i v_i`.
    pub fn cardinal(&self, z: f64) -> Vec<f64> {
        let row = DVector::from_vec(self.basis_row(z));
        (self.coef.transpose() * row).as_slice().to_vec()
    }

    pub fn cardinal_dz(&self, z: f64) -> Vec<f64> {
        let mut row: Vec<f64> = self.nodes.iter().map(|c| -2.0 * self.eps * (z - c) * (-self.eps * (z - c).powi(2)).exp()).collect();
        row.push(0.0);
        row.push(1.0);
        (self.coef.transpose() * DVector::from_vec(row)).as_slice().to_vec()
    }
}

/// Tensor product of augmented axes evaluating fields stored as nodal values.
#[derive(Clone, Debug)]
pub struct NodalInterpolant {
    pub axes: [AugmentedAxis; 3],
}

impl NodalInterpolant {
    pub fn new(grid: &CollocationGrid) -> Result<Self> {
        Ok(Self {
            axes: [
                AugmentedAxis::new(&grid.xs, grid.eps[0])?,
                AugmentedAxis::new(&grid.ys, grid.eps[1])?,
                AugmentedAxis::new(&grid.thetas, grid.eps[2])?,
            ],
        })
    }

    fn contract(&self, w: [Vec<f64>; 3], v: &[f64]) -> f64 {
        let (ny, nt) = (w[1].len(), w[2].len());
        let mut acc = 0.0;
        for (k, wk) in w[0].iter().enumerate() {
            for (j, wj) in w[1].iter().enumerate() {
                let base = (k * ny + j) * nt;
                let inner: f64 = w[2].iter().enumerate().map(|(l, wl)| wl * v[base + l]).sum();
                acc += wk * wj * inner;
            }
        }
        acc
    }

    pub fn value(&self, v: &[f64], s: &State) -> f64 {
        self.contract([self.axes[0].cardinal(s.x), self.axes[1].cardinal(s.y), self.axes[2].cardinal(s.theta)], v)
    }

    pub fn dx(&self, v: &[f64], s: &State) -> f64 {
        self.contract([self.axes[0].cardinal_dz(s.x), self.axes[1].cardinal(s.y), self.axes[2].cardinal(s.theta)], v)
    }

    /// `(∂_x, ∂_y, ∂_θ)` of the interpolant.
    pub fn gradient(&self, v: &[f64], s: &State) -> [f64; 3] {
        let w = [self.axes[0].cardinal(s.x), self.axes[1].cardinal(s.y), self.axes[2].cardinal(s.theta)];
        let d = [self.axes[0].cardinal_dz(s.x), self.axes[1].cardinal_dz(s.y), self.axes[2].cardinal_dz(s.theta)];
        [
            self.contract([d[0].clone(), w[1].clone(), w[2].clone()], v),
            self.contract([w[0].clone(), d[1].clone(), w[2].clone()], v),
            self.contract([w[0].clone(), w[1].clone(), d[2].clone()], v),
        ]
    }
}

const DUMP_MAGIC: &[u8; 4] = b"MKRB";
const DUMP_VERSION: u32 = 1;

/// Debug dump of a basis matrix or coefficient tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Dump {
    pub n_x: u64,
    pub n_y: u64,
    pub n_theta: u64,
    pub eps: [f64; 3],
    pub data: Vec<f64>,
}

pub fn write_dump(dump: &Dump) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * dump.data.len());
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    for n in [dump.n_x, dump.n_y, dump.n_theta] {
        out.extend_from_slice(&n.to_le_bytes());
    }
    for e in dump.eps {
        out.extend_from_slice(&e.to_le_bytes());
    }
    out.extend_from_slice(&(dump.data.len() as u64).to_le_bytes());
    for v in &dump.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_dump(bytes: &[u8]) -> Result<Dump> {
    let bad = |m: &str| Error::Domain(format!("malformed dump: {m}"));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != DUMP_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().map_err(|_| bad("version"))?);
    if version != DUMP_VERSION {
        return Err(bad("unsupported version"));
    }
    let mut u64s = [0u64; 3];
    for v in &mut u64s {
        *v = u64::from_le_bytes(take(8)?.try_into().map_err(|_| bad("dims"))?);
    }
    let mut eps = [0.0; 3];
    for e in &mut eps {
        *e = f64::from_le_bytes(take(8)?.try_into().map_err(|_| bad("eps"))?);
    }
    let count = u64::from_le_bytes(take(8)?.try_into().map_err(|_| bad("count"))?);
    let n = u64s[0]
        .checked_mul(u64s[1])
        .and_then(|m| m.checked_mul(u64s[2]))
        .ok_or_else(|| bad("dimension overflow"))?;
    let square = n.checked_mul(n);
    if count != n && Some(count) != square {
        return Err(bad("payload length matches neither the tensor nor the matrix size"));
    }
    let byte_len = usize::try_from(count).ok().and_then(|c| c.checked_mul(8)).ok_or_else(|| bad("payload too large"))?;
    let payload = take(byte_len)?;
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Dump { n_x: u64s[0], n_y: u64s[1], n_theta: u64s[2], eps, data })
}
