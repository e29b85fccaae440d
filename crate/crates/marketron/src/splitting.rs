//! Strang-split pricer: an x-step carrying drift, discounting and the source,
//! and Cole–Hopf linearized y- and θ-steps.
//!
//! Fields are stored as values at the collocation nodes. Each axis uses
//! Gaussian RBFs plus an affine tail (see [`AugmentedAxis`]), so every 1D
//! sub-step is a nodal-to-nodal matrix built from closed-form heat-kernel
//! convolutions and the trapezoid rule in time.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernels::{terminal_convolution, terminal_convolution_dx, Measure};
use crate::special::{norm_cdf, norm_pdf};
use crate::model::{drifts, signal_f_frozen, signal_h_frozen, v_m_prime_with, v_m_with, ModelParams, OptionKind, Regularizer, State};
use crate::rbf::{AugmentedAxis, CollocationGrid, NodalInterpolant};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operator {
    L1,
    L2,
    L3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitStepPlan {
    steps: Vec<(Operator, f64)>,
}

impl SplitStepPlan {
    /// `½L₁, ½L₂, L₃, ½L₂, ½L₁`.
    pub fn strang() -> Self {
        use Operator::*;
        Self { steps: vec![(L1, 0.5), (L2, 0.5), (L3, 1.0), (L2, 0.5), (L1, 0.5)] }
    }

    pub fn new(steps: Vec<(Operator, f64)>) -> Result<Self> {
        let plan = Self { steps };
        if !plan.is_palindromic() {
            return Err(Error::Domain("splitting plan must be palindromic".into()));
        }
        if plan.fraction_sums().iter().any(|s| (s - 1.0).abs() > 1e-12) {
            return Err(Error::Domain("fractions of each operator must sum to one".into()));
        }
        Ok(plan)
    }

    pub fn steps(&self) -> &[(Operator, f64)] {
        &self.steps
    }

    pub fn is_palindromic(&self) -> bool {
        let n = self.steps.len();
        (0..n / 2).all(|i| self.steps[i] == self.steps[n - 1 - i])
    }

    pub fn fraction_sums(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for (op, f) in &self.steps {
            s[*op as usize] += f;
        }
        s
    }
}

impl Default for SplitStepPlan {
    fn default() -> Self {
        Self::strang()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HopfNormalization {
    pub e_max: f64,
    pub a_shift: f64,
}

/// How the payoff enters the march.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PayoffMode {
    /// March `𝓒 − P`, where `P` is the discounted payoff convolved with the
    /// x heat kernel along the drift `η̄`. `P` solves the x-part of the
    /// equation exactly and carries the far-field growth, so the residual
    /// starts at zero and is bounded at the grid edges.
    #[default]
    FarField,
    /// March the payoff surface itself, one surface per strike.
    Nodal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitOptions {
    pub plan: SplitStepPlan,
    pub payoff_mode: PayoffMode,
    pub e_max: f64,
    pub clamp_floor: f64,
    /// On a line where the transformed step leaves a value at or below the
    /// clamp floor, redo the transformed step with a non-negative transition
    /// matrix on the piecewise-linear interpolant instead of clamping.
    pub positive_fallback: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self { plan: SplitStepPlan::strang(), payoff_mode: PayoffMode::FarField, e_max: 350.0, clamp_floor: 1e-300, positive_fallback: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    pub kind: OptionKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceResult {
    pub strike: f64,
    pub kind: OptionKind,
    /// Indifference price `𝓒 − 𝓒⁰`.
    pub price: f64,
    pub c_value: f64,
    pub c0_value: f64,
    /// Optimal hedge ratio in shares of the underlying.
    pub hedge: f64,
    /// Nodes that reached the clamp floor, over both surfaces.
    pub clamped: u64,
    /// Lines advanced by the non-negative fallback step, over both surfaces.
    pub fallbacks: u64,
}

/// Shared data for the sub-steps of one time layer.
#[derive(Clone, Debug)]
pub struct SplitContext {
    pub params: ModelParams,
    pub grid: Arc<CollocationGrid>,
    pub interp: Arc<NodalInterpolant>,
    /// Calendar interval whose endpoint average freezes the signals.
    pub window: (f64, f64),
    pub e_max: f64,
    pub clamp_floor: f64,
    pub positive_fallback: bool,
}

impl SplitContext {
    pub fn new(params: &ModelParams, grid: Arc<CollocationGrid>) -> Result<Self> {
        params.validate()?;
        let interp = Arc::new(NodalInterpolant::new(&grid)?);
        let mut params = params.clone();
        params.regularizer = Regularizer::R2;
        let d = SplitOptions::default();
        Ok(Self { params, grid, interp, window: (0.0, 0.0), e_max: d.e_max, clamp_floor: d.clamp_floor, positive_fallback: d.positive_fallback })
    }
}

/// Nodal values on a collocation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitField {
    pub values: Vec<f64>,
    /// Running count of nodes whose transformed value fell to the clamp floor.
    pub clamped: u64,
    /// Running count of lines advanced by the non-negative fallback step.
    pub fallbacks: u64,
}

impl SplitField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, clamped: 0, fallbacks: 0 }
    }

    pub fn constant(grid: &CollocationGrid, v: f64) -> Self {
        Self::new(vec![v; grid.len()])
    }

    pub fn from_fn(grid: &CollocationGrid, f: impl Fn(State) -> f64) -> Self {
        Self::new((0..grid.len()).map(|p| f(grid.node(p))).collect())
    }

    pub fn value_at(&self, ctx: &SplitContext, s: &State) -> f64 {
        ctx.interp.value(&self.values, s)
    }

    pub fn dx_at(&self, ctx: &SplitContext, s: &State) -> f64 {
        ctx.interp.dx(&self.values, s)
    }
}

/// Nodal trapezoid step for `u_τ = ½D u_zz + (a + b z) u_z + ρ u + s(z)`:
/// `(I − ½hL) u' = (M + ½hK) u + ½h (s + M s)`, with `M` the heat kernel
/// over `h` and `K` the heat kernel applied to `L = (a + b z)∂_z + ρ`.
#[derive(Clone)]
struct LineStep {
    transfer: DMatrix<f64>,
    lhs: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    nodes: Vec<f64>,
    coeffs: [f64; 3],
    h: f64,
}

impl LineStep {
    fn new(axis: &AugmentedAxis, diffusion: f64, h: f64, a: f64, b: f64, rho: f64) -> Result<Self> {
        let n = axis.len();
        let eps = axis.eps;
        let var = diffusion * h;
        let mut point = DMatrix::zeros(n, n + 2);
        let mut point_l = DMatrix::zeros(n, n + 2);
        let mut heat = DMatrix::zeros(n, n + 2);
        let mut heat_l = DMatrix::zeros(n, n + 2);
        let mut point_d = DMatrix::zeros(n, n + 2);
        for (m, &zm) in axis.nodes.iter().enumerate() {
            let drift = a + b * zm;
            for (k, &zk) in axis.nodes.iter().enumerate() {
                let phi = (-eps * (zm - zk).powi(2)).exp();
                point[(m, k)] = phi;
                point_d[(m, k)] = -2.0 * eps * (zm - zk) * phi;
                point_l[(m, k)] = drift * -2.0 * eps * (zm - zk) * phi + rho * phi;
                let g = Measure::heat(zm, var).rbf(zk, eps);
                heat[(m, k)] = g.mass();
                heat_l[(m, k)] = -2.0 * eps * (a * g.int_shift(zk) + b * g.int_quad(0.0, zk)) + rho * g.mass();
            }
            point[(m, n)] = 1.0;
            point[(m, n + 1)] = zm;
            point_d[(m, n + 1)] = 1.0;
            point_l[(m, n)] = rho;
            point_l[(m, n + 1)] = drift + rho * zm;
            heat[(m, n)] = 1.0;
            heat[(m, n + 1)] = zm;
            heat_l[(m, n)] = rho;
            heat_l[(m, n + 1)] = drift + rho * zm;
        }
        let to_nodal = |basis: DMatrix<f64>| basis * &axis.coef;
        let lhs = to_nodal(point) - to_nodal(point_l) * (0.5 * h);
        let heat = to_nodal(heat);
        let rhs = &heat + to_nodal(heat_l) * (0.5 * h);
        let lu = lhs.lu();
        let transfer = lu.solve(&rhs).ok_or_else(|| Error::Degenerate("singular line-step matrix".into()))?;
        Ok(Self { transfer, lhs: lu, nodes: axis.nodes.clone(), coeffs: [diffusion, a, b], h })
    }

    /// Advance one line; `source` holds `(s(z_m), (M s)(z_m))` when present.
    fn apply(&self, u: &[f64], source: Option<(&[f64], &[f64])>) -> Vec<f64> {
        let mut out = &self.transfer * nalgebra::DVector::from_column_slice(u);
        if let Some((s, g)) = source {
            let f = nalgebra::DVector::from_fn(u.len(), |m, _| 0.5 * self.h * (s[m] + g[m]));
            if let Some(x) = self.lhs.solve(&f) {
                out += x;
            }
        }
        out.as_slice().to_vec()
    }
}

/// Transition matrix of `w_τ = ½D w_zz + (a + b z) w_z` over `h` acting on
/// the piecewise-linear interpolant of nodal values, held constant past the
/// end nodes. The transition density is Gaussian (Ornstein–Uhlenbeck for
/// `b ≠ 0`), so the entries are non-negative and every row sums to one.
fn positive_transition(nodes: &[f64], diffusion: f64, h: f64, a: f64, b: f64) -> DMatrix<f64> {
    let n = nodes.len();
    let (growth, var) = if b == 0.0 {
        (1.0, diffusion * h)
    } else {
        ((b * h).exp(), diffusion * (2.0 * b * h).exp_m1() / (2.0 * b))
    };
    let shift = if b == 0.0 { a * h } else { a * (b * h).exp_m1() / b };
    let sd = var.sqrt();
    DMatrix::from_fn(n, n, |m, k| {
        let mean = nodes[m] * growth + shift;
        let cdf = |z: f64| norm_cdf((z - mean) / sd);
        // ∫_lo^hi (z − c) dN(z; mean, var)
        let first = |lo: f64, hi: f64, c: f64| (mean - c) * (cdf(hi) - cdf(lo)) - sd * (norm_pdf((hi - mean) / sd) - norm_pdf((lo - mean) / sd));
        let mut v = 0.0;
        if k > 0 {
            let (lo, hi) = (nodes[k - 1], nodes[k]);
            v += first(lo, hi, lo) / (hi - lo);
        } else {
            v += cdf(nodes[0]);
        }
        if k + 1 < n {
            let (lo, hi) = (nodes[k], nodes[k + 1]);
            v += (cdf(hi) - cdf(lo)) - first(lo, hi, lo) / (hi - lo);
        } else {
            v += 1.0 - cdf(nodes[n - 1]);
        }
        v.max(0.0)
    })
}

/// Indices of the 1D lines along `axis`, one vector per line.
fn lines(grid: &CollocationGrid, axis: usize) -> Vec<Vec<usize>> {
    let [nx, ny, nt] = grid.dims();
    match axis {
        0 => (0..ny).flat_map(|j| (0..nt).map(move |l| (j, l))).map(|(j, l)| (0..nx).map(|k| grid.index(k, j, l)).collect()).collect(),
        1 => (0..nx).flat_map(|k| (0..nt).map(move |l| (k, l))).map(|(k, l)| (0..ny).map(|j| grid.index(k, j, l)).collect()).collect(),
        _ => (0..nx).flat_map(|k| (0..ny).map(move |j| (k, j))).map(|(k, j)| (0..nt).map(|l| grid.index(k, j, l)).collect()).collect(),
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Domain(format!("sub-step length must be positive, got {dt}")));
    }
    Ok(())
}

/// x-step: `½σ² u_xx + η̄ u_x − r u − μ̄_x²/(2γσ²)`, the source being optional.
pub fn substep_l1(field: &SplitField, dt: f64, ctx: &SplitContext, include_source: bool) -> Result<SplitField> {
    check_dt(dt)?;
    let p = &ctx.params;
    let g = &ctx.grid;
    let sig2 = p.sigma * p.sigma;
    let step = LineStep::new(&ctx.interp.axes[0], sig2, dt, p.eta_bar, 0.0, -p.r)?;
    // V_M' and its square, pointwise and heat-smoothed, depend on x only.
    let vp: Vec<(f64, f64, f64, f64)> = g
        .xs
        .iter()
        .map(|&x| {
            let v = v_m_prime_with(x, p, Regularizer::R2)?;
            let m = Measure::heat(x, sig2 * dt);
            Ok((v, v * v, m.int_vm_prime(p), m.int_vm_prime_sq(p)))
        })
        .collect::<Result<_>>()?;
    let off = p.excess_drift_offset();
    let scale = -1.0 / (2.0 * p.gamma * sig2);
    let mut out = field.values.clone();
    for line in lines(g, 0) {
        let u: Vec<f64> = line.iter().map(|&i| field.values[i]).collect();
        let next = if include_source {
            let node = g.node(line[0]);
            let f = signal_f_frozen(node.theta, ctx.window.0, ctx.window.1, p) + off;
            let cy = p.c * node.y;
            let s: Vec<f64> = vp.iter().map(|&(v, _, _, _)| scale * (f - cy * v).powi(2)).collect();
            let sm: Vec<f64> = vp.iter().map(|&(_, _, e1, e2)| scale * (f * f - 2.0 * cy * f * e1 + cy * cy * e2)).collect();
            step.apply(&u, Some((&s, &sm)))
        } else {
            step.apply(&u, None)
        };
        for (&i, v) in line.iter().zip(next) {
            out[i] = v;
        }
    }
    Ok(SplitField { values: out, ..field.clone() })
}

/// `w = exp(γv − A)` with `A = max(0, max γv − e_max)`.
pub fn hopf_forward(values: &[f64], gamma: f64, e_max: f64) -> Result<(Vec<f64>, HopfNormalization)> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("Cole–Hopf map needs gamma > 0, got {gamma}")));
    }
    let top = values.iter().map(|v| gamma * v).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Domain("non-finite values in Cole–Hopf map".into()));
    }
    let a_shift = (top - e_max).max(0.0);
    Ok((values.iter().map(|v| (gamma * v - a_shift).exp()).collect(), HopfNormalization { e_max, a_shift }))
}

/// `v = (log(w)⁺ + A)/γ`, with `w` floored at `floor`; returns the number of
/// floored nodes.
pub fn hopf_inverse(w: &[f64], norm: &HopfNormalization, gamma: f64, floor: f64) -> Result<(Vec<f64>, u64)> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("Cole–Hopf map needs gamma > 0, got {gamma}")));
    }
    let mut clamped = 0u64;
    let out: Vec<f64> = w
        .iter()
        .map(|&wi| {
            let v = if wi > floor {
                wi
            } else {
                clamped += 1;
                floor
            };
            (v.ln() + norm.a_shift) / gamma
        })
        .collect();
    if !w.is_empty() && clamped as usize == w.len() {
        return Err(Error::Degenerate("every node clamped in the inverse Cole–Hopf map".into()));
    }
    Ok((out, clamped))
}

fn hopf_line_step(field: &SplitField, axis: usize, ctx: &SplitContext, step_for: impl Fn(usize) -> Result<LineStep>) -> Result<SplitField> {
    let gamma = ctx.params.gamma;
    let mut out = field.values.clone();
    let mut clamped = field.clamped;
    let mut fallbacks = field.fallbacks;
    for line in lines(&ctx.grid, axis) {
        let u: Vec<f64> = line.iter().map(|&i| field.values[i]).collect();
        let step = step_for(line[0])?;
        let (w, norm) = hopf_forward(&u, gamma, ctx.e_max)?;
        let w = step.apply(&w, None);
        let low = w.iter().filter(|&&wi| !(wi > ctx.clamp_floor)).count() as u64;
        let v = if low > 0 && ctx.positive_fallback {
            fallbacks += 1;
            let [d, a, b] = step.coeffs;
            let (w, norm) = hopf_forward(&u, gamma, ctx.e_max)?;
            let w = positive_transition(&step.nodes, d, step.h, a, b) * nalgebra::DVector::from_vec(w);
            hopf_inverse(w.as_slice(), &norm, gamma, ctx.clamp_floor)?.0
        } else {
            hopf_inverse(&w, &norm, gamma, ctx.clamp_floor)?.0
        };
        clamped += low;
        for (&i, vi) in line.iter().zip(v) {
            out[i] = vi;
        }
    }
    Ok(SplitField { values: out, clamped, fallbacks })
}

/// y-step: `½σ_y² u_yy + μ_y u_y + ½γσ_y² u_y²` through the Cole–Hopf map.
pub fn substep_l2(field: &SplitField, dt: f64, ctx: &SplitContext) -> Result<SplitField> {
    check_dt(dt)?;
    let p = &ctx.params;
    let axis = &ctx.interp.axes[1];
    let diffusion = p.sigma_y * p.sigma_y;
    hopf_line_step(field, 1, ctx, |first| {
        let node = ctx.grid.node(first);
        let beta = signal_h_frozen(node.theta, ctx.window.0, ctx.window.1, p) + p.mu * p.y_bar - p.c * v_m_with(node.x, p, Regularizer::R2)?;
        LineStep::new(axis, diffusion, dt, beta, -p.mu, 0.0)
    })
}

/// θ-step: `½σ_θ² u_θθ + k(θ̂ − θ) u_θ + ½γσ_θ² u_θ²` through the Cole–Hopf map.
pub fn substep_l3(field: &SplitField, dt: f64, ctx: &SplitContext) -> Result<SplitField> {
    check_dt(dt)?;
    let p = &ctx.params;
    let diffusion = p.sigma_theta * p.sigma_theta;
    let step = LineStep::new(&ctx.interp.axes[2], diffusion, dt, p.k * p.theta_hat, -p.k, 0.0)?;
    hopf_line_step(field, 2, ctx, |_| Ok(step.clone()))
}

/// March a surface over every time layer of the grid.
pub fn march(initial: SplitField, ctx: &SplitContext, plan: &SplitStepPlan) -> Result<SplitField> {
    let g = &ctx.grid;
    if initial.values.len() != g.len() {
        return Err(Error::Domain("initial field does not match the grid".into()));
    }
    let t_mat = g.maturity();
    let mut ctx = ctx.clone();
    let mut field = initial;
    for w in g.taus.windows(2) {
        let dt = w[1] - w[0];
        ctx.window = (t_mat - w[1], t_mat - w[0]);
        for &(op, frac) in plan.steps() {
            let h = frac * dt;
            field = match op {
                Operator::L1 => substep_l1(&field, h, &ctx, true)?,
                Operator::L2 => substep_l2(&field, h, &ctx)?,
                Operator::L3 => substep_l3(&field, h, &ctx)?,
            };
        }
        if field.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite values during the splitting march".into()));
        }
    }
    Ok(field)
}

/// Discounted payoff convolved with the x heat kernel along `η̄`, and its
/// x-derivative.
pub fn far_field(tau: f64, x: f64, opt: &OptionSpec, p: &ModelParams) -> Result<(f64, f64)> {
    let disc = (-p.r * tau).exp();
    let xs = x + p.eta_bar * tau;
    Ok((disc * terminal_convolution(tau, xs, opt.strike, opt.kind, p)?, disc * terminal_convolution_dx(tau, xs, opt.strike, opt.kind, p)?))
}

/// `h = 𝓒_x/S + μ̄_x/(γSσ²)` at `state0`.
fn hedge(c_x: f64, state0: State, p: &ModelParams) -> Result<f64> {
    let spot = p.s_star * state0.x.exp();
    let (mu_x, _, _) = drifts(state0, 0.0, p)?;
    let excess = mu_x + 0.5 * p.sigma * p.sigma - p.r;
    Ok(c_x / spot + excess / (p.gamma * spot * p.sigma * p.sigma))
}

pub fn price_indifference(grid: Arc<CollocationGrid>, params: &ModelParams, options: &[OptionSpec], state0: State, opts: &SplitOptions) -> Result<Vec<PriceResult>> {
    if !state0.is_finite() {
        return Err(Error::Domain("state0 must be finite".into()));
    }
    if let Some(o) = options.iter().find(|o| !(o.strike > 0.0) || !o.strike.is_finite()) {
        return Err(Error::Domain(format!("strike must be positive, got {}", o.strike)));
    }
    let mut ctx = SplitContext::new(params, grid)?;
    ctx.e_max = opts.e_max;
    ctx.clamp_floor = opts.clamp_floor;
    ctx.positive_fallback = opts.positive_fallback;
    let g = &ctx.grid;
    let inside = |v: f64, a: &[f64]| v >= a[0] && v <= a[a.len() - 1];
    if !(inside(state0.x, &g.xs) && inside(state0.y, &g.ys) && inside(state0.theta, &g.thetas)) {
        log::warn!("state0 {state0:?} lies outside the collocation box; values are extrapolated");
    }
    let p = &ctx.params;
    let t_mat = g.maturity();
    let base = march(SplitField::constant(g, 0.0), &ctx, &opts.plan)?;
    let c0 = base.value_at(&ctx, &state0);
    let c0_x = base.dx_at(&ctx, &state0);
    match opts.payoff_mode {
        PayoffMode::FarField => options
            .iter()
            .map(|o| {
                let (pv, px) = far_field(t_mat, state0.x, o, p)?;
                Ok(PriceResult {
                    strike: o.strike,
                    kind: o.kind,
                    price: pv,
                    c_value: pv + c0,
                    c0_value: c0,
                    hedge: hedge(px + c0_x, state0, p)?,
                    clamped: base.clamped,
                    fallbacks: base.fallbacks,
                })
            })
            .collect(),
        PayoffMode::Nodal => options
            .par_iter()
            .map(|o| {
                let init = SplitField::from_fn(g, |s| o.kind.payoff(p.s_star * s.x.exp(), o.strike));
                let f = march(init, &ctx, &opts.plan)?;
                let c = f.value_at(&ctx, &state0);
                Ok(PriceResult {
                    strike: o.strike,
                    kind: o.kind,
                    price: c - c0,
                    c_value: c,
                    c0_value: c0,
                    hedge: hedge(f.dx_at(&ctx, &state0), state0, p)?,
                    clamped: base.clamped + f.clamped,
                    fallbacks: base.fallbacks + f.fallbacks,
                })
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use crate::oracle::{fd_reference_1d, SubPdeSpec};
    use crate::rbf::build_grid;

    fn ctx_for(p: &ModelParams, n: [usize; 3]) -> SplitContext {
        let g = build_grid(&[1000.0], p, n[0], n[1], n[2], 30, 0.25).unwrap();
        SplitContext::new(p, Arc::new(g)).unwrap()
    }

    #[test]
    fn strang_plan_shape() {
        let plan = SplitStepPlan::strang();
        assert!(plan.is_palindromic());
        assert_eq!(plan.fraction_sums(), [1.0, 1.0, 1.0]);
        assert!(SplitStepPlan::new(vec![(Operator::L1, 1.0), (Operator::L2, 1.0), (Operator::L3, 1.0)]).is_err());
        assert!(SplitStepPlan::new(vec![(Operator::L1, 0.5), (Operator::L2, 1.0), (Operator::L1, 0.5), (Operator::L3, 1.0)]).is_err());
    }

    #[test]
    fn positive_transition_is_stochastic() {
        let nodes: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).collect();
        for (a, b) in [(0.0, 0.0), (0.8, 0.0), (1.0, -1.3)] {
            let m = positive_transition(&nodes, 0.7, 0.01, a, b);
            for r in 0..nodes.len() {
                let row = m.row(r);
                assert!(row.iter().all(|v| *v >= 0.0));
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
            // Affine data is reproduced away from the ends, where the mean of
            // the transition density is all that matters.
            let w: Vec<f64> = nodes.iter().map(|z| 2.0 + 0.5 * z).collect();
            let out = &m * nalgebra::DVector::from_column_slice(&w);
            let z = nodes[4];
            let mean = if b == 0.0 { z + a * 0.01 } else { z * (b * 0.01f64).exp() + a * (b * 0.01f64).exp_m1() / b };
            assert!((out[4] - (2.0 + 0.5 * mean)).abs() < 1e-12, "{} vs {}", out[4], 2.0 + 0.5 * mean);
        }
    }

    #[test]
    fn hopf_normalization_rule() {
        let (w, n) = hopf_forward(&[0.0; 4], 1.0, 350.0).unwrap();
        assert_eq!(n.a_shift, 0.0);
        assert!(w.iter().all(|v| *v == 1.0));
        let (w, n) = hopf_forward(&[100.0, 400.0], 1.0, 350.0).unwrap();
        assert_eq!(n.a_shift, 50.0);
        assert!((w[1].ln() - 350.0).abs() < 1e-12);
        assert!(hopf_forward(&[1.0], 0.0, 350.0).is_err());
        let (v, c) = hopf_inverse(&[1.0, 0.0], &HopfNormalization { e_max: 350.0, a_shift: 0.0 }, 1.0, 1e-300).unwrap();
        assert_eq!(c, 1);
        assert!((v[1] - 1e-300f64.ln()).abs() < 1e-9 && v[0] == 0.0);
        assert!(hopf_inverse(&[0.0, -1.0], &HopfNormalization { e_max: 350.0, a_shift: 0.0 }, 1.0, 1e-300).is_err());
    }

    #[test]
    fn hopf_round_trip() {
        let vals: Vec<f64> = (0..50).map(|i| 100.0 * ((i as f64) * 0.37).sin()).collect();
        for gamma in [0.2, 1.0, 3.0] {
            let (w, n) = hopf_forward(&vals, gamma, 350.0).unwrap();
            let (back, c) = hopf_inverse(&w, &n, gamma, 1e-300).unwrap();
            assert_eq!(c, 0);
            let err = back.iter().zip(&vals).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-7, "{gamma}: {err}");
        }
    }

    #[test]
    fn l1_preserves_constants_without_drift() {
        let mut p = presets::black_scholes_limit(0.37, 0.0);
        p.eta_bar = 0.0;
        let ctx = ctx_for(&p, [20, 5, 5]);
        let f = substep_l1(&SplitField::constant(&ctx.grid, 3.5), 0.01, &ctx, false).unwrap();
        assert!(f.values.iter().all(|v| (v - 3.5).abs() < 1e-8));
    }

    #[test]
    fn l2_l3_preserve_constants() {
        let ctx = ctx_for(&presets::calib_param(), [20, 5, 5]);
        let f = SplitField::constant(&ctx.grid, 2.0);
        for g in [substep_l2(&f, 0.01, &ctx).unwrap(), substep_l3(&f, 0.01, &ctx).unwrap()] {
            assert!(g.values.iter().all(|v| (v - 2.0).abs() < 1e-8));
        }
    }

    #[test]
    fn l1_source_only_small_step() {
        let mut p = presets::calib_param();
        p.signal = crate::SignalModel::zero();
        p.eta_bar = 0.0;
        p.r = 0.0;
        let mut ctx = ctx_for(&p, [20, 5, 5]);
        ctx.window = (0.0, 0.0);
        let dt = 1e-6;
        let f = substep_l1(&SplitField::constant(&ctx.grid, 0.0), dt, &ctx, true).unwrap();
        for (i, v) in f.values.iter().enumerate() {
            let s = ctx.grid.node(i);
            let (mu_x, _, _) = drifts(s, 0.0, &ctx.params).unwrap();
            let ex = mu_x + 0.5 * p.sigma * p.sigma - p.r;
            let expect = -dt * ex * ex / (2.0 * p.gamma * p.sigma * p.sigma);
            assert!((v - expect).abs() < 1e-6 * expect.abs() + 1e-14, "{i}: {v} vs {expect}");
        }
    }

    #[test]
    fn l1_matches_finite_differences() {
        let p = presets::calib_param();
        let ctx = ctx_for(&p, [40, 5, 5]);
        let init = |x: f64| (-(x - 0.05).powi(2) / 0.02).exp() + 0.3 * x;
        let field = SplitField::from_fn(&ctx.grid, |s| init(s.x));
        let mut ctx = ctx.clone();
        ctx.window = (0.1, 0.12);
        let dt = 0.02;
        let out = substep_l1(&field, dt, &ctx, false).unwrap();
        let sig2 = p.sigma * p.sigma;
        let drift = |_: f64| p.eta_bar;
        let zero = |_: f64| 0.0;
        let fd = fd_reference_1d(
            &SubPdeSpec { lo: -3.0, hi: 3.0, n_nodes: 3001, n_steps: 400, diffusion: 0.5 * sig2, drift: &drift, reaction: -p.r, source: &zero, quad: 0.0 },
            &init,
            dt,
        )
        .unwrap();
        let j = 2;
        let l = 2;
        // Interior nodes only: past the grid edge the affine tail extrapolates, the reference does not.
        for k in 7..33 {
            let i = ctx.grid.index(k, j, l);
            let x = ctx.grid.xs[k];
            assert!((out.values[i] - fd.at(x)).abs() < 1e-4, "x = {x}: {} vs {}", out.values[i], fd.at(x));
        }
    }

    #[test]
    fn l2_matches_finite_differences() {
        let mut p = presets::calib_param();
        p.signal = crate::model::SignalModel::ErfSigmoid { b1: 0.0, b2: 1.0, a1: 0.0, a2: 0.4 };
        let g = build_grid(&[1000.0], &p, 6, 30, 5, 30, 0.25).unwrap();
        let ctx = SplitContext::new(&p, Arc::new(g)).unwrap();
        let init = |y: f64| 2.0 * (-(y - 0.1).powi(2) / 0.1).exp();
        let field = SplitField::from_fn(&ctx.grid, |s| init(s.y));
        let dt = 0.01;
        let out = substep_l2(&field, dt, &ctx).unwrap();
        let (k, l) = (3, 1);
        let node = ctx.grid.node(ctx.grid.index(k, 0, l));
        let beta = signal_h_frozen(node.theta, 0.0, 0.0, &p) + p.mu * p.y_bar - p.c * v_m_with(node.x, &p, Regularizer::R2).unwrap();
        let drift = |y: f64| beta - p.mu * y;
        let zero = |_: f64| 0.0;
        let fd = fd_reference_1d(
            &SubPdeSpec {
                lo: -4.0,
                hi: 4.0,
                n_nodes: 4001,
                n_steps: 400,
                diffusion: 0.5 * p.sigma_y * p.sigma_y,
                drift: &drift,
                reaction: 0.0,
                source: &zero,
                quad: 0.5 * p.gamma * p.sigma_y * p.sigma_y,
            },
            &init,
            dt,
        )
        .unwrap();
        // Interior nodes only, as above.
        for j in 8..26 {
            let y = ctx.grid.ys[j];
            let v = out.values[ctx.grid.index(k, j, l)];
            assert!((v - fd.at(y)).abs() < 1e-3, "y = {y}: {v} vs {}", fd.at(y));
        }
    }

    #[test]
    fn zero_payoff_prices_zero() {
        let p = presets::calib_param();
        let g = Arc::new(build_grid(&[1000.0], &p, 12, 5, 5, 10, 0.25).unwrap());
        let opts = SplitOptions { payoff_mode: PayoffMode::Nodal, ..SplitOptions::default() };
        let r = price_indifference(g, &p, &[OptionSpec { strike: 1e9, kind: OptionKind::Call }], p.state0(1000.0), &opts).unwrap();
        assert!(r[0].price.abs() < 1e-9, "{}", r[0].price);
    }
}
