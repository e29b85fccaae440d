//! Full 3D pricer: the pricing equation as a Volterra equation of the second
//! kind, discretized with Gaussian RBFs in space and the trapezoid rule in
//! time, with the quadratic system of each layer solved by fixed-point
//! iteration.
//!
//! The price surface is split as `𝓒 = 𝓘 + 𝓙`, with `𝓘` the payoff under the
//! x heat kernel and `𝓙` a tensor product of augmented 1D RBF interpolants
//! (see [`AugmentedAxis`]), stored as its values at the nodes. Each layer
//! restarts the Duhamel integral from the previous one:
//!
//! `(Θ − ½Δτ Ψ̄₁) 𝓙_i − ½Δτ Q(𝓙_i) = Ω 𝓙_{i−1} + ½Δτ [K 𝓙_{i−1} + Q̄(𝓙_{i−1})] + g_i`
//!
//! where `Ψ̄₁`, `Q` are the linear and quadratic parts of the operator at the
//! nodes, `K`, `Q̄` the same under the heat kernel over one step, and `g_i`
//! collects the source and the drift and discount terms acting on `𝓘`.
//! Every operator factorizes over the axes, so all integrals are the 1D
//! closed forms of [`Measure`].

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rayon::prelude::*;

use crate::kernels::{source_from_measures, source_kernel, terminal_convolution, terminal_convolution_dx, KernelContext, Measure};
use crate::model::{drifts, ModelParams, Regularizer, SignalModel, State};
use crate::rbf::{tensor_apply, AugmentedAxis, CollocationGrid, NodalInterpolant};
use crate::splitting::{far_field, OptionSpec, PayoffMode, PriceResult};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct VolterraOptions {
    /// Stop when the sup-norm update falls below `tol · max(1, ‖c‖_∞)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations after which the update is relaxed.
    pub damp_after: usize,
    pub relaxation: f64,
    /// Consecutive growing updates that count as divergence.
    pub divergence_run: usize,
    pub payoff_mode: PayoffMode,
}

impl Default for VolterraOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 50, damp_after: 25, relaxation: 0.5, divergence_run: 5, payoff_mode: PayoffMode::FarField }
    }
}

#[derive(Clone, Copy)]
enum Basis {
    Rbf(f64),
    One,
    Z,
}

fn basis_of(axis: &AugmentedAxis) -> Vec<Basis> {
    axis.nodes.iter().map(|&c| Basis::Rbf(c)).chain([Basis::One, Basis::Z]).collect()
}

/// `∫ b w dN(·; z_m, var)` for every node `m` and basis function `b`, mapped
/// to the cardinal functions of the axis.
fn axis_factor(axis: &AugmentedAxis, var: f64, w: impl Fn(&Measure, Basis) -> f64) -> DMatrix<f64> {
    let basis = basis_of(axis);
    let raw = DMatrix::from_fn(axis.len(), basis.len(), |m, b| w(&Measure::heat(axis.nodes[m], var), basis[b]));
    raw * &axis.coef
}

/// Pair integrals `∫ b b' w dN(·; z_m, var)`, mapped to cardinal pairs and
/// stored as `[m][i][i']`.
fn pair_factor(axis: &AugmentedAxis, var: f64, w: impl Fn(&Measure, Basis, Basis) -> f64 + Sync) -> Vec<f64> {
    let basis = basis_of(axis);
    let n = axis.len();
    let nb = basis.len();
    let mut out = vec![0.0; n * n * n];
    for m in 0..n {
        let g = Measure::heat(axis.nodes[m], var);
        let raw = DMatrix::from_fn(nb, nb, |a, b| w(&g, basis[a], basis[b]));
        let card = axis.coef.transpose() * raw * &axis.coef;
        for i in 0..n {
            for j in 0..n {
                out[(m * n + i) * n + j] = card[(i, j)];
            }
        }
    }
    out
}

fn mass(eps: f64) -> impl Fn(&Measure, Basis) -> f64 {
    move |g, b| match b {
        Basis::Rbf(c) => g.rbf(c, eps).mass(),
        Basis::One => g.mass(),
        Basis::Z => g.mass() * g.mean(),
    }
}

fn dmass(eps: f64) -> impl Fn(&Measure, Basis) -> f64 {
    move |g, b| match b {
        Basis::Rbf(c) => -2.0 * eps * g.rbf(c, eps).int_shift(c),
        Basis::One => 0.0,
        Basis::Z => g.mass(),
    }
}

/// `∫ (u − z) b'(z)`.
fn reversion(eps: f64, u: f64) -> impl Fn(&Measure, Basis) -> f64 {
    move |g, b| match b {
        Basis::Rbf(c) => 2.0 * eps * g.rbf(c, eps).int_quad(u, c),
        Basis::One => 0.0,
        Basis::Z => g.mass() * (u - g.mean()),
    }
}

/// `∫ (a/2)(1 + erf(bz/2)) b(z)`; the affine basis function uses Stein's
/// identity `E[z h] = m E[h] + v E[h']`.
fn sigmoid(eps: f64, a: f64, bb: f64) -> impl Fn(&Measure, Basis) -> f64 {
    move |g, b| match b {
        Basis::Rbf(c) => g.rbf(c, eps).int_erf_sigmoid(a, bb),
        Basis::One => g.int_erf_sigmoid(a, bb),
        Basis::Z => {
            let (m, v) = (g.mean(), g.var());
            let alpha = 0.25 * bb * bb;
            let s = 1.0 + 2.0 * alpha * v;
            let dh = 0.5 * a * bb / PI.sqrt() * (-alpha * m * m / s).exp() / s.sqrt();
            m * g.int_erf_sigmoid(a, bb) + v * dh
        }
    }
}

/// `∫ V_M b`, with Stein's identity for the affine basis function.
fn potential(eps: f64, p: ModelParams) -> impl Fn(&Measure, Basis) -> f64 {
    move |g, b| match b {
        Basis::Rbf(c) => g.rbf(c, eps).int_vm(&p),
        Basis::One => g.int_vm(&p),
        Basis::Z => g.mean() * g.int_vm(&p) + g.var() * g.int_vm_prime(&p),
    }
}

fn mass_pair(eps: f64) -> impl Fn(&Measure, Basis, Basis) -> f64 {
    move |g, a, b| match (a, b) {
        (Basis::Rbf(c), Basis::Rbf(d)) => g.rbf(c, eps).rbf(d, eps).mass(),
        (Basis::Rbf(c), o) | (o, Basis::Rbf(c)) => mass(eps)(&g.rbf(c, eps), o),
        (Basis::One, Basis::One) => 1.0,
        (Basis::One, Basis::Z) | (Basis::Z, Basis::One) => g.mean(),
        (Basis::Z, Basis::Z) => g.mean() * g.mean() + g.var(),
    }
}

fn grad_pair(eps: f64) -> impl Fn(&Measure, Basis, Basis) -> f64 {
    move |g, a, b| match (a, b) {
        (Basis::Rbf(c), Basis::Rbf(d)) => 4.0 * eps * eps * g.rbf(c, eps).rbf(d, eps).int_quad(c, d),
        (Basis::Rbf(c), Basis::Z) | (Basis::Z, Basis::Rbf(c)) => -2.0 * eps * g.rbf(c, eps).int_shift(c),
        (Basis::Z, Basis::Z) => 1.0,
        _ => 0.0,
    }
}

/// One separable operator `coef · F_x ⊗ F_y ⊗ F_θ`.
struct Term {
    coef: f64,
    f: [DMatrix<f64>; 3],
}

fn apply_terms(dims: [usize; 3], terms: &[Term], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for t in terms {
        let y = tensor_apply(dims, [&t.f[0], &t.f[1], &t.f[2]], v);
        for (o, yi) in out.iter_mut().zip(y) {
            *o += t.coef * yi;
        }
    }
    out
}

fn dense_terms(dims: [usize; 3], terms: &[Term]) -> DMatrix<f64> {
    let [_, ny, nt] = dims;
    let n = dims.iter().product();
    DMatrix::from_fn(n, n, |p, q| {
        let (kp, jp, lp) = (p / (ny * nt), (p / nt) % ny, p % nt);
        let (kq, jq, lq) = (q / (ny * nt), (q / nt) % ny, q % nt);
        terms.iter().map(|t| t.coef * t.f[0][(kp, kq)] * t.f[1][(jp, jq)] * t.f[2][(lp, lq)]).sum()
    })
}

/// Linear part of the operator, `η̄∂_x + μ_y∂_y + μ_θ∂_θ − r`, as separable
/// terms for one variance per axis (zero variances give pointwise values).
fn linear_terms(axes: &[AugmentedAxis; 3], vars: [f64; 3], p: &ModelParams, a2: f64, b2: f64) -> Vec<Term> {
    let [ex, ey, et] = [axes[0].eps, axes[1].eps, axes[2].eps];
    let mx = axis_factor(&axes[0], vars[0], mass(ex));
    let my = axis_factor(&axes[1], vars[1], mass(ey));
    let mt = axis_factor(&axes[2], vars[2], mass(et));
    let dx = axis_factor(&axes[0], vars[0], dmass(ex));
    let dy = axis_factor(&axes[1], vars[1], dmass(ey));
    let ry = axis_factor(&axes[1], vars[1], reversion(ey, p.y_bar));
    let rt = axis_factor(&axes[2], vars[2], reversion(et, p.theta_hat));
    let ht = axis_factor(&axes[2], vars[2], sigmoid(et, a2, b2));
    let vx = axis_factor(&axes[0], vars[0], potential(ex, p.clone()));
    vec![
        Term { coef: p.eta_bar, f: [dx, my.clone(), mt.clone()] },
        Term { coef: -p.r, f: [mx.clone(), my.clone(), mt.clone()] },
        Term { coef: p.k, f: [mx.clone(), my.clone(), rt] },
        Term { coef: p.mu, f: [mx.clone(), ry, mt.clone()] },
        Term { coef: 1.0, f: [mx, dy.clone(), ht] },
        Term { coef: -p.c, f: [vx, dy, mt] },
    ]
}

struct PairFactors {
    n: usize,
    mass: Vec<f64>,
    grad: Vec<f64>,
}

impl PairFactors {
    fn new(axis: &AugmentedAxis, var: f64) -> Self {
        Self { n: axis.len(), mass: pair_factor(axis, var, mass_pair(axis.eps)), grad: pair_factor(axis, var, grad_pair(axis.eps)) }
    }

    fn at(f: &[f64], n: usize, m: usize, p: usize, q: usize) -> f64 {
        f[(m * n + p) * n + q]
    }
}

pub struct VolterraWorkspace {
    pub grid: Arc<CollocationGrid>,
    pub params: ModelParams,
    pub options: Vec<OptionSpec>,
    pub interp: Arc<NodalInterpolant>,
    pub dt: f64,
    /// `Θ − ½Δτ Ψ̄₁`.
    pub a: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    /// Interpolation matrix; the identity up to the 1D solver tolerance.
    pub theta: DMatrix<f64>,
    /// `½Δτ` times the source at the nodes plus its heat-kernel smoothing.
    pub source: Vec<f64>,
    omega: [DMatrix<f64>; 3],
    k_lin: Vec<Term>,
    point_mass: [DMatrix<f64>; 3],
    point_d: [DMatrix<f64>; 3],
    pairs: [PairFactors; 3],
}

pub fn assemble(grid: Arc<CollocationGrid>, params: &ModelParams, options: &[OptionSpec]) -> Result<VolterraWorkspace> {
    params.validate()?;
    let (a2, b2) = match params.signal {
        SignalModel::ErfSigmoid { a2, b2, .. } => (a2, b2),
        _ => return Err(Error::Unsupported("the Volterra pricer needs the erf-sigmoid signal".into())),
    };
    if grid.taus.len() < 2 {
        return Err(Error::Domain("time grid needs at least one step".into()));
    }
    let dt = grid.dt();
    let mut p = params.clone();
    p.regularizer = Regularizer::R2;
    let interp = Arc::new(NodalInterpolant::new(&grid)?);
    let axes = &interp.axes;
    let dims = grid.dims();
    let vars = [p.sigma * p.sigma * dt, p.sigma_y * p.sigma_y * dt, p.sigma_theta * p.sigma_theta * dt];
    let zero = [0.0; 3];
    let point_mass: [DMatrix<f64>; 3] = std::array::from_fn(|a| axis_factor(&axes[a], 0.0, mass(axes[a].eps)));
    let point_d: [DMatrix<f64>; 3] = std::array::from_fn(|a| axis_factor(&axes[a], 0.0, dmass(axes[a].eps)));
    let omega: [DMatrix<f64>; 3] = std::array::from_fn(|a| axis_factor(&axes[a], vars[a], mass(axes[a].eps)));
    let theta = dense_terms(dims, &[Term { coef: 1.0, f: point_mass.clone() }]);
    let psi = dense_terms(dims, &linear_terms(axes, zero, &p, a2, b2));
    let k_lin = linear_terms(axes, vars, &p, a2, b2);
    let a = &theta - psi * (0.5 * dt);
    let lu = a.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::Degenerate("Volterra system matrix is singular".into()));
    }
    let ctx = KernelContext::with_axis_shapes(dt, grid.eps, p.clone(), 0.0)?;
    let source = (0..grid.len())
        .into_par_iter()
        .map(|m| {
            let s = grid.node(m);
            let point = source_from_measures(&Measure::heat(s.x, 0.0), &Measure::heat(s.y, 0.0), &Measure::heat(s.theta, 0.0), &p)?;
            Ok(0.5 * dt * (point + source_kernel(s, &ctx)?))
        })
        .collect::<Result<_>>()?;
    let pairs = std::array::from_fn(|a| PairFactors::new(&axes[a], vars[a]));
    Ok(VolterraWorkspace { grid, params: p, options: options.to_vec(), interp, dt, a, lu, theta, source, omega, k_lin, point_mass, point_d, pairs })
}

impl VolterraWorkspace {
    /// Heat kernel over one step applied to the field, at the nodes.
    pub fn omega_apply(&self, v: &[f64]) -> Vec<f64> {
        tensor_apply(self.grid.dims(), [&self.omega[0], &self.omega[1], &self.omega[2]], v)
    }

    /// Heat kernel over one step applied to the linear operator, at the nodes.
    pub fn linear_apply(&self, v: &[f64]) -> Vec<f64> {
        apply_terms(self.grid.dims(), &self.k_lin, v)
    }

    /// `½γ(σ_y² 𝓙_y² + σ_θ² 𝓙_θ²)` at the nodes.
    pub fn quadratic_at_nodes(&self, v: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let dims = self.grid.dims();
        let [mx, my, mt] = &self.point_mass;
        let jy = tensor_apply(dims, [mx, &self.point_d[1], mt], v);
        let jt = tensor_apply(dims, [mx, my, &self.point_d[2]], v);
        jy.iter().zip(&jt).map(|(a, b)| 0.5 * p.gamma * (p.sigma_y * p.sigma_y * a * a + p.sigma_theta * p.sigma_theta * b * b)).collect()
    }

    /// The quadratic term under the heat kernel over one step, at the nodes.
    /// Contracted axis by axis: θ pairs, then y pairs, then x pairs.
    pub fn quadratic_smoothed(&self, c: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let [nx, ny, nt] = self.grid.dims();
        let [px, py, pt] = &self.pairs;
        let terms = [(p.sigma_y * p.sigma_y, &py.grad, &pt.mass), (p.sigma_theta * p.sigma_theta, &py.mass, &pt.grad)];
        let nkj = nx * ny;
        let mut out = vec![0.0; c.len()];
        for (weight, yf, tf) in terms {
            // w1[a = (kp, jp)][b = (kq, jq)][ml]
            let mut w1 = vec![0.0; nkj * nkj * nt];
            w1.par_chunks_mut(nkj * nt).enumerate().for_each(|(a, row)| {
                let ca = &c[a * nt..(a + 1) * nt];
                for b in 0..nkj {
                    let cb = &c[b * nt..(b + 1) * nt];
                    for ml in 0..nt {
                        let mut s = 0.0;
                        for (lp, cap) in ca.iter().enumerate() {
                            let inner: f64 = cb.iter().enumerate().map(|(lq, cbq)| PairFactors::at(tf, pt.n, ml, lp, lq) * cbq).sum();
                            s += cap * inner;
                        }
                        row[b * nt + ml] = s;
                    }
                }
            });
            // w2[kp][kq][mj][ml]
            let mut w2 = vec![0.0; nx * nx * ny * nt];
            for kp in 0..nx {
                for kq in 0..nx {
                    for mj in 0..ny {
                        for ml in 0..nt {
                            let mut s = 0.0;
                            for jp in 0..ny {
                                for jq in 0..ny {
                                    s += PairFactors::at(yf, py.n, mj, jp, jq) * w1[((kp * ny + jp) * nkj + kq * ny + jq) * nt + ml];
                                }
                            }
                            w2[((kp * nx + kq) * ny + mj) * nt + ml] = s;
                        }
                    }
                }
            }
            for mk in 0..nx {
                for mj in 0..ny {
                    for ml in 0..nt {
                        let mut s = 0.0;
                        for kp in 0..nx {
                            for kq in 0..nx {
                                s += PairFactors::at(&px.mass, px.n, mk, kp, kq) * w2[((kp * nx + kq) * ny + mj) * nt + ml];
                            }
                        }
                        out[(mk * ny + mj) * nt + ml] += 0.5 * p.gamma * weight * s;
                    }
                }
            }
        }
        out
    }

    /// Right-hand side of layer `i` given the previous values; `option`
    /// selects the payoff term (`None` for the zero-payoff surface).
    pub fn layer_rhs(&self, i: usize, prev: &[f64], option: Option<&OptionSpec>) -> Result<Vec<f64>> {
        let h = self.dt;
        let om = self.omega_apply(prev);
        let kl = self.linear_apply(prev);
        let qs = self.quadratic_smoothed(prev);
        let tau = self.grid.taus[i];
        let p = &self.params;
        let mut g = Vec::with_capacity(prev.len());
        for m in 0..prev.len() {
            let mut v = om[m] + 0.5 * h * (kl[m] + qs[m]) + self.source[m];
            if let Some(o) = option {
                let x = self.grid.node(m).x;
                let iv = terminal_convolution(tau, x, o.strike, o.kind, p)?;
                let ix = terminal_convolution_dx(tau, x, o.strike, o.kind, p)?;
                v += h * (p.eta_bar * ix - p.r * iv);
            }
            g.push(v);
        }
        Ok(g)
    }

    /// One iterate `A⁻¹[g + ½Δτ Q(c)]`.
    pub fn fixed_point_step(&self, g: &[f64], c_prev: &[f64]) -> Vec<f64> {
        let q = self.quadratic_at_nodes(c_prev);
        let rhs = DVector::from_fn(g.len(), |m, _| g[m] + 0.5 * self.dt * q[m]);
        self.lu.solve(&rhs).map(|v| v.as_slice().to_vec()).unwrap_or_else(|| vec![f64::NAN; g.len()])
    }

    /// Fixed-point solve of one layer; returns the values and the iteration
    /// count.
    pub fn solve_layer(&self, g: &[f64], start: &[f64], opts: &VolterraOptions) -> Result<(Vec<f64>, usize)> {
        let mut c = start.to_vec();
        let mut history = Vec::new();
        let mut growth = 0;
        for it in 1..=opts.max_iter {
            let mut next = self.fixed_point_step(g, &c);
            if it > opts.damp_after {
                for (n, o) in next.iter_mut().zip(&c) {
                    *n = opts.relaxation * *n + (1.0 - opts.relaxation) * o;
                }
            }
            let delta = next.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = next.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if !delta.is_finite() {
                history.push(delta);
                return Err(Error::Divergence { iterations: it, history });
            }
            if history.last().is_some_and(|&prev| delta > prev) {
                growth += 1;
            } else {
                growth = 0;
            }
            history.push(delta);
            c = next;
            if delta < opts.tol * scale {
                return Ok((c, it));
            }
            if growth >= opts.divergence_run {
                return Err(Error::Divergence { iterations: it, history });
            }
        }
        Err(Error::NotConverged { iterations: opts.max_iter, residual: history.last().copied().unwrap_or(f64::NAN) })
    }

    /// March all layers for one surface; returns the nodal values of `𝓙` at
    /// maturity and the largest iteration count of any layer.
    pub fn march(&self, option: Option<&OptionSpec>, opts: &VolterraOptions) -> Result<(Vec<f64>, usize)> {
        let mut c = vec![0.0; self.grid.len()];
        let mut max_it = 0;
        for i in 1..self.grid.taus.len() {
            let g = self.layer_rhs(i, &c, option)?;
            let (next, it) = self.solve_layer(&g, &c, opts)?;
            max_it = max_it.max(it);
            c = next;
        }
        Ok((c, max_it))
    }
}

/// Price every option at `state0`.
pub fn price(grid: Arc<CollocationGrid>, params: &ModelParams, options: &[OptionSpec], state0: State, opts: &VolterraOptions) -> Result<Vec<PriceResult>> {
    if !state0.is_finite() {
        return Err(Error::Domain("state0 must be finite".into()));
    }
    if let Some(o) = options.iter().find(|o| !(o.strike > 0.0) || !o.strike.is_finite()) {
        return Err(Error::Domain(format!("strike must be positive, got {}", o.strike)));
    }
    let ws = assemble(grid, params, options)?;
    let (base, _) = ws.march(None, opts)?;
    let c0 = ws.interp.value(&base, &state0);
    let t_mat = ws.grid.maturity();
    let p = &ws.params;
    let spot = p.s_star * state0.x.exp();
    let (mu_x, _, _) = drifts(state0, 0.0, p)?;
    let excess = mu_x + 0.5 * p.sigma * p.sigma - p.r;
    let hedge = |c_x: f64| c_x / spot + excess / (p.gamma * spot * p.sigma * p.sigma);
    match opts.payoff_mode {
        PayoffMode::FarField => {
            let c0_x = ws.interp.dx(&base, &state0);
            options
                .iter()
                .map(|o| {
                    let (pv, px) = far_field(t_mat, state0.x, o, p)?;
                    Ok(PriceResult { strike: o.strike, kind: o.kind, price: pv, c_value: pv + c0, c0_value: c0, hedge: hedge(px + c0_x), clamped: 0, fallbacks: 0 })
                })
                .collect()
        }
        PayoffMode::Nodal => options
            .par_iter()
            .map(|o| {
                let (field, _) = ws.march(Some(o), opts)?;
                let c = terminal_convolution(t_mat, state0.x, o.strike, o.kind, p)? + ws.interp.value(&field, &state0);
                let c_x = terminal_convolution_dx(t_mat, state0.x, o.strike, o.kind, p)? + ws.interp.dx(&field, &state0);
                Ok(PriceResult { strike: o.strike, kind: o.kind, price: c - c0, c_value: c, c0_value: c0, hedge: hedge(c_x), clamped: 0, fallbacks: 0 })
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use crate::oracle::{dense_solve, quad3d_gh, QuadratureSpec};
    use crate::rbf::build_grid;
    use crate::OptionKind;

    fn erf_params() -> ModelParams {
        let mut p = presets::calib_param();
        p.signal = SignalModel::ErfSigmoid { b1: 1.2, b2: -0.8, a1: 0.3, a2: -0.2 };
        p
    }

    fn tiny_grid(n: [usize; 3], n_tau: usize) -> Arc<CollocationGrid> {
        Arc::new(build_grid(&[1000.0], &erf_params(), n[0], n[1], n[2], n_tau, 0.25).unwrap())
    }

    fn test_field(ws: &VolterraWorkspace) -> Vec<f64> {
        (0..ws.grid.len())
            .map(|i| {
                let s = ws.grid.node(i);
                (2.0 * s.x).sin() + 0.5 * s.y * s.y - 0.3 * s.theta + 0.2 * s.x * s.theta
            })
            .collect()
    }

    fn gh_spec() -> QuadratureSpec {
        QuadratureSpec { nodes_per_axis: 40, ..QuadratureSpec::default() }
    }

    #[test]
    fn rejects_other_signals() {
        let g = tiny_grid([4, 2, 2], 2);
        assert!(matches!(assemble(g, &presets::calib_param(), &[]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn small_dt_gives_interpolation_matrix() {
        let g = Arc::new(tiny_grid([4, 3, 2], 2).with_time_steps(1_000_000));
        let ws = assemble(g, &erf_params(), &[]).unwrap();
        assert!((&ws.a - &ws.theta).amax() < 1e-3);
        assert!((&ws.theta - DMatrix::identity(ws.grid.len(), ws.grid.len())).amax() < 1e-8);
    }

    #[test]
    fn zero_gamma_has_no_quadratic_part() {
        let mut p = erf_params();
        p.gamma = 1e-300;
        let ws = assemble(tiny_grid([4, 3, 3], 2), &p, &[]).unwrap();
        let c = test_field(&ws);
        assert!(ws.quadratic_smoothed(&c).iter().all(|v| v.abs() < 1e-200));
        assert!(ws.quadratic_at_nodes(&c).iter().all(|v| v.abs() < 1e-200));
    }

    #[test]
    fn heat_step_preserves_functions_constant_in_y_theta() {
        let ws = assemble(tiny_grid([8, 5, 5], 10), &erf_params(), &[]).unwrap();
        let ones = vec![1.0; ws.grid.len()];
        assert!(ws.omega_apply(&ones).iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn smoothed_operators_match_quadrature() {
        let ws = assemble(tiny_grid([8, 5, 5], 10), &erf_params(), &[]).unwrap();
        let v = test_field(&ws);
        let p = ws.params.clone();
        let kl = ws.linear_apply(&v);
        let qs = ws.quadratic_smoothed(&v);
        let om = ws.omega_apply(&v);
        let sd = [p.sigma * ws.dt.sqrt(), p.sigma_y * ws.dt.sqrt(), p.sigma_theta * ws.dt.sqrt()];
        for m in [0, 37, 101, ws.grid.len() - 1] {
            let s = ws.grid.node(m);
            let c = [s.x, s.y, s.theta];
            let lin = quad3d_gh(
                |x, y, z| {
                    let st = State::new(x, y, z);
                    let g = ws.interp.gradient(&v, &st);
                    let (_, my, mt) = drifts(st, 0.0, &p).unwrap();
                    p.eta_bar * g[0] + my * g[1] + mt * g[2] - p.r * ws.interp.value(&v, &st)
                },
                c,
                sd,
                &gh_spec(),
            );
            let quad = quad3d_gh(
                |x, y, z| {
                    let g = ws.interp.gradient(&v, &State::new(x, y, z));
                    0.5 * p.gamma * (p.sigma_y * p.sigma_y * g[1] * g[1] + p.sigma_theta * p.sigma_theta * g[2] * g[2])
                },
                c,
                sd,
                &gh_spec(),
            );
            let heat = quad3d_gh(|x, y, z| ws.interp.value(&v, &State::new(x, y, z)), c, sd, &gh_spec());
            assert!((kl[m] - lin).abs() < 1e-8 * (1.0 + lin.abs()), "{m}: {} vs {lin}", kl[m]);
            assert!((qs[m] - quad).abs() < 1e-8 * (1.0 + quad.abs()), "{m}: {} vs {quad}", qs[m]);
            assert!((om[m] - heat).abs() < 1e-10 * (1.0 + heat.abs()), "{m}: {} vs {heat}", om[m]);
        }
    }

    #[test]
    fn linear_case_converges_in_one_step() {
        let mut p = erf_params();
        p.gamma = 1e-300;
        let ws = assemble(tiny_grid([5, 3, 3], 4), &p, &[]).unwrap();
        let g: Vec<f64> = (0..ws.grid.len()).map(|i| 1.0 + 0.1 * i as f64).collect();
        let c = ws.fixed_point_step(&g, &vec![0.0; g.len()]);
        let r = &ws.a * DVector::from_column_slice(&c) - DVector::from_column_slice(&g);
        assert!(r.norm() / DVector::from_column_slice(&g).norm() < 1e-9);
        let (_, it) = ws.solve_layer(&g, &c, &VolterraOptions::default()).unwrap();
        assert_eq!(it, 1);
    }

    #[test]
    fn single_node_scalar_equation() {
        let p = erf_params();
        let g = Arc::new(CollocationGrid { taus: vec![0.0, 0.01], xs: vec![0.02], ys: vec![0.1], thetas: vec![0.5], eps: [30.0, 4.0, 4.0] });
        let ws = assemble(g, &p, &[]).unwrap();
        let ctx = KernelContext::with_axis_shapes(0.01, [30.0, 4.0, 4.0], ws.params.clone(), 0.0).unwrap();
        let s = State::new(0.02, 0.1, 0.5);
        // A constant field has no gradient: Ψ̄₁ reduces to −r.
        assert!((ws.a[(0, 0)] - (1.0 + 0.5 * 0.01 * p.r)).abs() < 1e-15);
        let src = 0.5 * 0.01 * (source_from_measures(&Measure::heat(0.02, 0.0), &Measure::heat(0.1, 0.0), &Measure::heat(0.5, 0.0), &ws.params).unwrap() + source_kernel(s, &ctx).unwrap());
        assert!((ws.source[0] - src).abs() < 1e-15);
        let (field, _) = ws.march(None, &VolterraOptions::default()).unwrap();
        assert!((field[0] - src / ws.a[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn two_node_fixed_point_matches_newton() {
        let mut p = erf_params();
        p.gamma = 3.0;
        let g = Arc::new(CollocationGrid { taus: vec![0.0, 0.02], xs: vec![0.0], ys: vec![-0.2, 0.3], thetas: vec![0.5], eps: [30.0, 4.0, 4.0] });
        let ws = assemble(g, &p, &[]).unwrap();
        let rhs = vec![0.7, -0.4];
        let (fp, _) = ws.solve_layer(&rhs, &[0.0, 0.0], &VolterraOptions::default()).unwrap();
        // Newton on F(c) = A c − ½Δτ Q(c) − g with a finite-difference Jacobian.
        let f = |c: &[f64]| -> Vec<f64> {
            let q = ws.quadratic_at_nodes(c);
            let ac = &ws.a * DVector::from_column_slice(c);
            (0..2).map(|m| ac[m] - 0.5 * ws.dt * q[m] - rhs[m]).collect()
        };
        let mut c = vec![0.0, 0.0];
        for _ in 0..30 {
            let f0 = f(&c);
            let mut jac = DMatrix::zeros(2, 2);
            for j in 0..2 {
                let mut cp = c.clone();
                cp[j] += 1e-7;
                let fj = f(&cp);
                for i in 0..2 {
                    jac[(i, j)] = (fj[i] - f0[i]) / 1e-7;
                }
            }
            let step = dense_solve(&jac, &f0).unwrap();
            c[0] -= step[0];
            c[1] -= step[1];
        }
        assert!((fp[0] - c[0]).abs() < 1e-8 && (fp[1] - c[1]).abs() < 1e-8, "{fp:?} vs {c:?}");
    }

    #[test]
    fn divergence_is_reported() {
        let mut p = erf_params();
        p.gamma = 3.0;
        // Two y nodes give a linear interpolant whose gradient only shifts
        // both nodes alike, so a third node is needed to make Q bite.
        let g = Arc::new(CollocationGrid { taus: vec![0.0, 0.02], xs: vec![0.0], ys: vec![-0.2, 0.3, 0.7], thetas: vec![0.5], eps: [30.0, 4.0, 4.0] });
        let ws = assemble(g, &p, &[]).unwrap();
        let r = ws.solve_layer(&[1e6, -1e6, 1e6], &[0.0; 3], &VolterraOptions::default());
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
    }

    #[test]
    fn zero_payoff_gives_zero_price() {
        let p = erf_params();
        let r = price(tiny_grid([6, 3, 3], 4), &p, &[OptionSpec { strike: 1e9, kind: OptionKind::Call }], p.state0(1000.0), &VolterraOptions::default()).unwrap();
        assert!(r[0].price.abs() < 1e-9, "{}", r[0].price);
    }
}
