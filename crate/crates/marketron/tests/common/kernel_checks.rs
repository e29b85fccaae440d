//! Closed-form kernels against direct quadrature of their defining integrals.
//!
//! Errors are relative to the integral of the absolute integrand, so that
//! draws where signed contributions nearly cancel are not penalized for
//! round-off in the oracle.

use std::f64::consts::PI;

use marketron::kernels::{
    aux_integrals, erf_gauss_integral, linear_kernel, quadratic_kernel, source_kernel, terminal_convolution, AuxArgs,
    AuxKind, CollocationPoint, KernelContext,
};
use marketron::model::{drifts, presets, signal_f, v_m_prime_with, Regularizer};
use marketron::oracle::{quad1d, quad1d_gaussian_support, quad3d_gh, QuadratureSpec};
use marketron::{ModelParams, OptionKind, SignalModel, State};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct KernelDraw {
    pub field: [f64; 3],
    /// Center offsets in units of `1/√ε` per axis.
    pub off1: [f64; 3],
    pub off2: [f64; 3],
    pub dt: f64,
    pub eps: [f64; 3],
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub c: f64,
    pub k: f64,
    pub mu: f64,
    pub g: f64,
    pub eps_bar: f64,
    pub gamma: f64,
}

impl KernelDraw {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut u3 = |lo: f64, hi: f64| [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let field = u3(-0.6, 0.6);
        let off1 = u3(-1.5, 1.5);
        let off2 = u3(-1.5, 1.5);
        let eps = [rng.random_range(2.0..120.0), rng.random_range(0.5..12.0), rng.random_range(0.5..12.0)];
        Self {
            field,
            off1,
            off2,
            dt: rng.random_range(0.001..0.05),
            eps,
            a1: rng.random_range(-2.0..2.0),
            b1: rng.random_range(-2.0..2.0),
            a2: rng.random_range(-2.0..2.0),
            b2: rng.random_range(-2.0..2.0),
            c: rng.random_range(0.0..4.0),
            k: rng.random_range(0.0..3.0),
            mu: rng.random_range(0.0..5.0),
            g: rng.random_range(0.05..1.5),
            eps_bar: rng.random_range(0.1..1.0),
            gamma: rng.random_range(0.1..3.0),
        }
    }

    pub fn params(&self) -> ModelParams {
        let mut p = presets::calib_param();
        p.signal = SignalModel::ErfSigmoid { b1: self.b1, b2: self.b2, a1: self.a1, a2: self.a2 };
        p.c = self.c;
        p.k = self.k;
        p.mu = self.mu;
        p.g = self.g;
        p.eps_bar = self.eps_bar;
        p.gamma = self.gamma;
        p.regularizer = Regularizer::R2;
        p
    }

    pub fn ctx(&self) -> KernelContext {
        KernelContext::with_axis_shapes(self.dt, self.eps, self.params(), 0.1).unwrap()
    }

    pub fn state(&self) -> State {
        State::new(self.field[0], self.field[1], self.field[2])
    }

    fn center(&self, off: [f64; 3]) -> CollocationPoint {
        let c: Vec<f64> = (0..3).map(|i| self.field[i] + off[i] / self.eps[i].sqrt()).collect();
        CollocationPoint::new(c[0], c[1], c[2])
    }

    fn scales(&self, p: &ModelParams) -> [f64; 3] {
        let s = self.dt.sqrt();
        [p.sigma * s, p.sigma_y * s, p.sigma_theta * s]
    }
}

pub fn draws(seed: u64, n: usize) -> Vec<KernelDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| KernelDraw::random(&mut rng)).collect()
}

fn spec3() -> QuadratureSpec {
    QuadratureSpec { nodes_per_axis: 32, ..QuadratureSpec::default() }
}

fn spec1() -> QuadratureSpec {
    QuadratureSpec { rel_tol: 1e-12, abs_tol: 1e-300, max_subdivisions: 4000, nodes_per_axis: 32 }
}

fn rel(closed: f64, oracle: f64, scale: f64) -> f64 {
    (closed - oracle).abs() / scale.max(f64::MIN_POSITIVE)
}

fn rbf(e: [f64; 3], c: &CollocationPoint, x: f64, y: f64, z: f64) -> f64 {
    (-e[0] * (x - c.xk).powi(2) - e[1] * (y - c.yj).powi(2) - e[2] * (z - c.thetal).powi(2)).exp()
}

pub fn check_linear(d: &KernelDraw) -> f64 {
    let p = d.params();
    let c = d.center(d.off1);
    let e = d.eps;
    let integrand = |x: f64, y: f64, z: f64| {
        let phi = rbf(e, &c, x, y, z);
        let (_, mu_y, mu_t) = drifts(State::new(x, y, z), 0.0, &p).unwrap();
        phi * (p.eta_bar * -2.0 * e[0] * (x - c.xk) + mu_y * -2.0 * e[1] * (y - c.yj) + mu_t * -2.0 * e[2] * (z - c.thetal) - p.r)
    };
    let oracle = quad3d_gh(integrand, d.field, d.scales(&p), &spec3());
    let scale = quad3d_gh(|x, y, z| integrand(x, y, z).abs(), d.field, d.scales(&p), &spec3());
    rel(linear_kernel(d.state(), &c, &d.ctx()).unwrap(), oracle, scale)
}

pub fn check_source(d: &KernelDraw) -> f64 {
    let p = d.params();
    let integrand = |x: f64, y: f64, z: f64| {
        let (mu_x, _, _) = drifts(State::new(x, y, z), 0.0, &p).unwrap();
        let excess = mu_x + 0.5 * p.sigma * p.sigma - p.r;
        -excess * excess / (2.0 * p.gamma * p.sigma * p.sigma)
    };
    let oracle = quad3d_gh(integrand, d.field, d.scales(&p), &spec3());
    rel(source_kernel(d.state(), &d.ctx()).unwrap(), oracle, oracle.abs())
}

pub fn check_quadratic(d: &KernelDraw) -> f64 {
    let p = d.params();
    let c1 = d.center(d.off1);
    let c2 = d.center(d.off2);
    let e = d.eps;
    let integrand = |x: f64, y: f64, z: f64| {
        let pp = rbf(e, &c1, x, y, z) * rbf(e, &c2, x, y, z);
        let dy = 4.0 * e[1] * e[1] * (y - c1.yj) * (y - c2.yj);
        let dz = 4.0 * e[2] * e[2] * (z - c1.thetal) * (z - c2.thetal);
        0.5 * p.gamma * pp * (p.sigma_y * p.sigma_y * dy + p.sigma_theta * p.sigma_theta * dz)
    };
    let oracle = quad3d_gh(integrand, d.field, d.scales(&p), &spec3());
    let scale = quad3d_gh(|x, y, z| integrand(x, y, z).abs(), d.field, d.scales(&p), &spec3());
    rel(quadratic_kernel(d.state(), &c1, &c2, &d.ctx()), oracle, scale)
}

pub fn check_aux(d: &KernelDraw, kind: AuxKind) -> f64 {
    let p = d.params();
    let c = d.center(d.off1);
    let sc = d.scales(&p);
    let (axis, center) = match kind {
        AuxKind::If1 | AuxKind::If2 => (2, c.thetal),
        AuxKind::Iv1 | AuxKind::Iv2 => (0, c.xk),
    };
    let pt = d.field[axis];
    let s = sc[axis];
    let eps = d.eps[axis];
    let weight = move |v: f64| (-(v - pt).powi(2) / (2.0 * s * s)).exp() / (2.0 * PI * s * s).sqrt() * (-eps * (v - center).powi(2)).exp();
    let f = |v: f64| match kind {
        AuxKind::If1 => signal_f(v, 0.0, &p),
        AuxKind::If2 => signal_f(v, 0.0, &p).powi(2),
        AuxKind::Iv1 => v_m_prime_with(v, &p, Regularizer::R2).unwrap(),
        AuxKind::Iv2 => v_m_prime_with(v, &p, Regularizer::R2).unwrap().powi(2),
    };
    let oracle = quad1d_gaussian_support(|v| f(v) * weight(v), pt, s, &spec1()).unwrap().value;
    let scale = quad1d_gaussian_support(|v| (f(v) * weight(v)).abs(), pt, s, &spec1()).unwrap().value;
    let closed = aux_integrals(kind, AuxArgs { point: pt, center }, &d.ctx()).unwrap();
    rel(closed, oracle, scale)
}

pub fn check_erf_gauss(alpha: f64, beta: f64, b: f64) -> f64 {
    let m = -beta / alpha;
    let s = 1.0 / (alpha * 2f64.sqrt());
    let f = |x: f64| libm::erf(x + b) * (-(alpha * x + beta).powi(2)).exp();
    let oracle = quad1d_gaussian_support(f, m, s, &spec1()).unwrap().value;
    let scale = quad1d_gaussian_support(|x| f(x).abs(), m, s, &spec1()).unwrap().value;
    rel(erf_gauss_integral(alpha, beta, b).unwrap(), oracle, scale)
}

pub fn check_terminal(tau: f64, x: f64, strike: f64, kind: OptionKind, sigma: f64) -> f64 {
    let mut p = presets::calib_param();
    p.sigma = sigma;
    let s = sigma * tau.sqrt();
    let kink = (strike / p.s_star).ln();
    let f = |v: f64| kind.payoff(p.s_star * v.exp(), strike) * (-(v - x).powi(2) / (2.0 * s * s)).exp() / (2.0 * PI * s * s).sqrt();
    let (lo, hi) = match kind {
        OptionKind::Call => (kink, x.max(kink) + 14.0 * s),
        OptionKind::Put => (x.min(kink) - 14.0 * s, kink),
    };
    let oracle = if hi > lo { quad1d(f, lo, hi, &spec1()).unwrap().value } else { 0.0 };
    rel(terminal_convolution(tau, x, strike, kind, &p).unwrap(), oracle, oracle.abs())
}
