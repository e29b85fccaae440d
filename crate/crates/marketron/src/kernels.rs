//! Closed-form convolutions of the heat kernel with Gaussian RBFs, payoffs and
//! the drift and source terms of the pricing equation.
//!
//! Every integral factorizes over the axes into Gaussian expectations of
//! polynomials, `erf` and `erf²` terms and exponential tilts, evaluated by
//! [`Measure`]. With zero variance the same code evaluates pointwise, which is
//! how the collocation rows of the linear operators are built.
//!
//! Pricing always uses the erf-based regularizer `R₂`, whatever the flag on
//! the parameters says: only it has closed-form convolutions.

use std::f64::consts::PI;

use crate::model::{ModelParams, OptionKind, SignalModel, State};
use crate::special::{erfc, erf, norm_cdf, GaussWeight};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct KernelContext {
    pub dt: f64,
    /// RBF shape per axis (x, y, θ).
    pub eps: [f64; 3],
    pub params: ModelParams,
    pub tau: f64,
}

impl KernelContext {
    pub fn new(dt: f64, eps_rbf: f64, params: ModelParams, tau: f64) -> Result<Self> {
        Self::with_axis_shapes(dt, [eps_rbf; 3], params, tau)
    }

    pub fn with_axis_shapes(dt: f64, eps: [f64; 3], params: ModelParams, tau: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        if eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Domain(format!("RBF shapes must be positive, got {eps:?}")));
        }
        Ok(Self { dt, eps, params, tau })
    }

    fn vars(&self) -> [f64; 3] {
        let p = &self.params;
        [p.sigma * p.sigma * self.dt, p.sigma_y * p.sigma_y * self.dt, p.sigma_theta * p.sigma_theta * self.dt]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollocationPoint {
    pub xk: f64,
    pub yj: f64,
    pub thetal: f64,
}

impl CollocationPoint {
    pub fn new(xk: f64, yj: f64, thetal: f64) -> Self {
        Self { xk, yj, thetal }
    }
}

/// A one-dimensional positive measure: a Gaussian weight, or a weighted
/// point mass when the variance is zero.
#[derive(Clone, Copy, Debug)]
pub enum Measure {
    Gauss(GaussWeight),
    Point { at: f64, weight: f64 },
}

impl Measure {
    /// Heat kernel `N(·; center, var)`; a unit point mass for `var == 0`.
    pub fn heat(center: f64, var: f64) -> Self {
        if var > 0.0 {
            Measure::Gauss(GaussWeight::heat(center, var))
        } else {
            Measure::Point { at: center, weight: 1.0 }
        }
    }

    /// Multiply by the RBF `exp(-eps (ξ - c)²)`.
    pub fn rbf(self, c: f64, eps: f64) -> Self {
        match self {
            Measure::Gauss(g) => Measure::Gauss(g.times(GaussWeight::rbf(c, eps))),
            Measure::Point { at, weight } => Measure::Point { at, weight: weight * (-eps * (at - c) * (at - c)).exp() },
        }
    }

    /// Multiply by `exp(lambda ξ)`.
    pub fn tilt(self, lambda: f64) -> Self {
        match self {
            Measure::Gauss(g) => Measure::Gauss(g.tilt(lambda)),
            Measure::Point { at, weight } => Measure::Point { at, weight: weight * (lambda * at).exp() },
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            Measure::Gauss(g) => g.mass(),
            Measure::Point { weight, .. } => *weight,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Measure::Gauss(g) => g.mean,
            Measure::Point { at, .. } => *at,
        }
    }

    pub fn var(&self) -> f64 {
        match self {
            Measure::Gauss(g) => g.var(),
            Measure::Point { .. } => 0.0,
        }
    }

    /// Normalized `E[erf(pξ + q)]`.
    pub fn erf(&self, p: f64, q: f64) -> f64 {
        match self {
            Measure::Gauss(g) => g.mean_erf(p, q),
            Measure::Point { at, .. } => erf(p * at + q),
        }
    }

    /// Normalized `E[erf(pξ + q)²]`.
    pub fn erf_sq(&self, p: f64, q: f64) -> f64 {
        match self {
            Measure::Gauss(g) => g.mean_erf_sq(p, q),
            Measure::Point { at, .. } => erf(p * at + q).powi(2),
        }
    }

    /// `∫ (ξ - u) dm`.
    pub fn int_shift(&self, u: f64) -> f64 {
        self.mass() * (self.mean() - u)
    }

    /// `∫ (ξ - u)(ξ - v) dm`.
    pub fn int_quad(&self, u: f64, v: f64) -> f64 {
        let m = self.mean();
        self.mass() * ((m - u) * (m - v) + self.var())
    }

    /// `∫ (a/2)(1 + erf(b ξ/2)) dm`.
    pub fn int_erf_sigmoid(&self, a: f64, b: f64) -> f64 {
        self.mass() * 0.5 * a * (1.0 + self.erf(0.5 * b, 0.0))
    }

    /// `∫ (off + (a/2)(1 + erf(b ξ/2)))² dm`.
    pub fn int_erf_sigmoid_sq(&self, a: f64, b: f64, off: f64) -> f64 {
        let c0 = off + 0.5 * a;
        let c1 = 0.5 * a;
        self.mass() * (c0 * c0 + 2.0 * c0 * c1 * self.erf(0.5 * b, 0.0) + c1 * c1 * self.erf_sq(0.5 * b, 0.0))
    }

    /// `∫ V_M dm` for the erf regularizer.
    pub fn int_vm(&self, p: &ModelParams) -> f64 {
        let b = p.r2_shift();
        let eb2 = 2.0 * p.eps_bar;
        let m = self.mass();
        let t = self.tilt(-1.0);
        let mt = t.mass();
        let tail = erfc(b) * m - mt * (1.0 - t.erf(1.0, b))
            + (b + 0.25).exp() * m * (erf(b + 0.5) - self.erf(1.0, b + 0.5));
        mt - m + tail / eb2
    }

    /// `∫ V_M' dm` for the erf regularizer.
    pub fn int_vm_prime(&self, p: &ModelParams) -> f64 {
        let b = p.r2_shift();
        let eb2 = 2.0 * p.eps_bar;
        let t = self.tilt(-1.0);
        -t.mass() * ((1.0 - 1.0 / eb2) + t.erf(1.0, b) / eb2)
    }

    /// `∫ V_M'² dm` for the erf regularizer.
    pub fn int_vm_prime_sq(&self, p: &ModelParams) -> f64 {
        let b = p.r2_shift();
        let eb2 = 2.0 * p.eps_bar;
        let a0 = 1.0 - 1.0 / eb2;
        let t = self.tilt(-2.0);
        t.mass() * (a0 * a0 + 2.0 * a0 * t.erf(1.0, b) / eb2 + t.erf_sq(1.0, b) / (eb2 * eb2))
    }
}

fn erf_sigmoid(params: &ModelParams) -> Result<(f64, f64, f64, f64)> {
    match params.signal {
        SignalModel::ErfSigmoid { b1, b2, a1, a2 } => Ok((a1, b1, a2, b2)),
        _ => Err(Error::Unsupported("closed-form kernels need the erf-sigmoid signal".into())),
    }
}

/// Product of the three heat kernels with variances `σ²τ`, `σ_y²τ`, `σ_θ²τ`.
pub fn green3d(tau: f64, field: State, source: State, params: &ModelParams) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("Green's function needs tau > 0, got {tau}")));
    }
    let g = |d: f64, s: f64| {
        let v = s * s * tau;
        (-d * d / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
    };
    Ok(g(field.x - source.x, params.sigma) * g(field.y - source.y, params.sigma_y) * g(field.theta - source.theta, params.sigma_theta))
}

/// Payoff convolved with the x heat kernel over `tau` (no drift, no discounting).
pub fn terminal_convolution(tau: f64, x: f64, strike: f64, kind: OptionKind, params: &ModelParams) -> Result<f64> {
    check_terminal(tau, strike)?;
    let s = params.s_star;
    if tau == 0.0 {
        return Ok(kind.payoff(s * x.exp(), strike));
    }
    let sd = params.sigma * tau.sqrt();
    let d = (x + (s / strike).ln()) / sd;
    let fwd = s * (0.5 * sd * sd + x).exp();
    Ok(match kind {
        OptionKind::Call => fwd * norm_cdf(d + sd) - strike * norm_cdf(d),
        OptionKind::Put => strike * norm_cdf(-d) - fwd * norm_cdf(-d - sd),
    })
}

/// x-derivative of [`terminal_convolution`].
pub fn terminal_convolution_dx(tau: f64, x: f64, strike: f64, kind: OptionKind, params: &ModelParams) -> Result<f64> {
    check_terminal(tau, strike)?;
    let s = params.s_star;
    if tau == 0.0 {
        let spot = s * x.exp();
        return Ok(match kind {
            OptionKind::Call if spot > strike => spot,
            OptionKind::Put if spot < strike => -spot,
            _ => 0.0,
        });
    }
    let sd = params.sigma * tau.sqrt();
    let d = (x + (s / strike).ln()) / sd;
    let fwd = s * (0.5 * sd * sd + x).exp();
    Ok(match kind {
        OptionKind::Call => fwd * norm_cdf(d + sd),
        OptionKind::Put => -fwd * norm_cdf(-d - sd),
    })
}

fn check_terminal(tau: f64, strike: f64) -> Result<()> {
    if !(strike > 0.0) {
        return Err(Error::Domain(format!("strike must be positive, got {strike}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("tau must be non-negative, got {tau}")));
    }
    Ok(())
}

/// `∫ erf(ξ + b) exp(-(αξ + β)²) dξ`.
pub fn erf_gauss_integral(alpha: f64, beta: f64, b: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    Ok(PI.sqrt() / alpha * erf((alpha * b - beta) / (1.0 + alpha * alpha).sqrt()))
}

/// `√(1 + 2 ε σ² Δτ)`.
pub fn a_factor(sigma: f64, dt: f64, eps_rbf: f64) -> f64 {
    (1.0 + 2.0 * eps_rbf * sigma * sigma * dt).sqrt()
}

/// Axis measures `N(·; field, σ²Δτ) · φ_c` for the three axes.
fn axis_measures(field: State, c: &CollocationPoint, ctx: &KernelContext) -> [Measure; 3] {
    let v = ctx.vars();
    [
        Measure::heat(field.x, v[0]).rbf(c.xk, ctx.eps[0]),
        Measure::heat(field.y, v[1]).rbf(c.yj, ctx.eps[1]),
        Measure::heat(field.theta, v[2]).rbf(c.thetal, ctx.eps[2]),
    ]
}

/// Heat kernel over one step applied to the RBF centered at `c`.
pub fn omega_kjl(field: State, c: &CollocationPoint, ctx: &KernelContext) -> f64 {
    axis_measures(field, c, ctx).iter().map(Measure::mass).product()
}

/// Heat kernel over one step applied to the linear part of the operator,
/// `η̄ ∂_x φ + μ_y ∂_y φ + μ_θ ∂_θ φ - r φ`, for the RBF centered at `c`.
pub fn linear_kernel(field: State, c: &CollocationPoint, ctx: &KernelContext) -> Result<f64> {
    let [mx, my, mt] = axis_measures(field, c, ctx);
    linear_from_measures(&mx, &my, &mt, c, ctx)
}

pub(crate) fn linear_from_measures(mx: &Measure, my: &Measure, mt: &Measure, c: &CollocationPoint, ctx: &KernelContext) -> Result<f64> {
    let p = &ctx.params;
    let (_, _, a2, b2) = erf_sigmoid(p)?;
    let [ex, ey, et] = ctx.eps;
    let (px, py, pt) = (mx.mass(), my.mass(), mt.mass());
    let dy = -2.0 * ey * my.int_shift(c.yj);
    let x_drift = p.eta_bar * -2.0 * ex * mx.int_shift(c.xk) * py * pt;
    let discount = -p.r * px * py * pt;
    let theta_drift = p.k * 2.0 * et * mt.int_quad(p.theta_hat, c.thetal) * px * py;
    let y_reversion = p.mu * 2.0 * ey * my.int_quad(p.y_bar, c.yj) * px * pt;
    let y_signal = dy * mt.int_erf_sigmoid(a2, b2) * px;
    let y_potential = -p.c * mx.int_vm(p) * dy * pt;
    Ok(x_drift + discount + theta_drift + y_reversion + y_signal + y_potential)
}

/// Heat kernel over one step applied to the source `-μ̄_x²/(2γσ²)`.
pub fn source_kernel(field: State, ctx: &KernelContext) -> Result<f64> {
    let v = ctx.vars();
    source_from_measures(&Measure::heat(field.x, v[0]), &Measure::heat(field.y, v[1]), &Measure::heat(field.theta, v[2]), &ctx.params)
}

pub(crate) fn source_from_measures(mx: &Measure, my: &Measure, mt: &Measure, p: &ModelParams) -> Result<f64> {
    let (a1, b1, _, _) = erf_sigmoid(p)?;
    let off = p.excess_drift_offset();
    // μ̄_x = F(θ) - c y V_M'(x) with F = f₁ + off; each axis measure has unit mass.
    let f1 = mt.int_erf_sigmoid(a1, b1) + off * mt.mass();
    let f2 = mt.int_erf_sigmoid_sq(a1, b1, off);
    let y1 = my.mass() * my.mean();
    let y2 = my.int_quad(0.0, 0.0);
    let v1 = mx.int_vm_prime(p);
    let v2 = mx.int_vm_prime_sq(p);
    let mean_sq = f2 * my.mass() * mx.mass() - 2.0 * p.c * f1 * y1 * v1 + p.c * p.c * mt.mass() * y2 * v2;
    Ok(-mean_sq / (2.0 * p.gamma * p.sigma * p.sigma))
}

/// Heat kernel over one step applied to `½γσ_y² φ₁_y φ₂_y + ½γσ_θ² φ₁_θ φ₂_θ`.
pub fn quadratic_kernel(field: State, c1: &CollocationPoint, c2: &CollocationPoint, ctx: &KernelContext) -> f64 {
    let v = ctx.vars();
    let [ex, ey, et] = ctx.eps;
    let p = &ctx.params;
    let mx = Measure::heat(field.x, v[0]).rbf(c1.xk, ex).rbf(c2.xk, ex);
    let my = Measure::heat(field.y, v[1]).rbf(c1.yj, ey).rbf(c2.yj, ey);
    let mt = Measure::heat(field.theta, v[2]).rbf(c1.thetal, et).rbf(c2.thetal, et);
    let qy = 4.0 * ey * ey * my.int_quad(c1.yj, c2.yj);
    let qt = 4.0 * et * et * mt.int_quad(c1.thetal, c2.thetal);
    0.5 * p.gamma * mx.mass() * (p.sigma_y * p.sigma_y * qy * mt.mass() + p.sigma_theta * p.sigma_theta * my.mass() * qt)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxKind {
    /// `∫ f₁ φ G` over θ.
    If1,
    /// `∫ f₁² φ G` over θ.
    If2,
    /// `∫ V_M' φ G` over x.
    Iv1,
    /// `∫ V_M'² φ G` over x.
    Iv2,
}

/// Field coordinate and RBF center on the axis the integral runs over.
#[derive(Clone, Copy, Debug)]
pub struct AuxArgs {
    pub point: f64,
    pub center: f64,
}

pub fn aux_integrals(kind: AuxKind, args: AuxArgs, ctx: &KernelContext) -> Result<f64> {
    let p = &ctx.params;
    let v = ctx.vars();
    match kind {
        AuxKind::If1 | AuxKind::If2 => {
            let (a1, b1, _, _) = erf_sigmoid(p)?;
            let m = Measure::heat(args.point, v[2]).rbf(args.center, ctx.eps[2]);
            Ok(if kind == AuxKind::If1 { m.int_erf_sigmoid(a1, b1) } else { m.int_erf_sigmoid_sq(a1, b1, 0.0) })
        }
        AuxKind::Iv1 | AuxKind::Iv2 => {
            let m = Measure::heat(args.point, v[0]).rbf(args.center, ctx.eps[0]);
            Ok(if kind == AuxKind::Iv1 { m.int_vm_prime(p) } else { m.int_vm_prime_sq(p) })
        }
    }
}
