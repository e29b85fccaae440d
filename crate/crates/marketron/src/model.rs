//! Model parameters, the potential `V_M`, the signal functions and drifts.

use serde::{Deserialize, Serialize};

use crate::special::{erf, erf_inv, erfc};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Regularizer {
    R1,
    #[default]
    R2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

impl OptionKind {
    pub fn payoff(self, spot: f64, strike: f64) -> f64 {
        match self {
            OptionKind::Call => (spot - strike).max(0.0),
            OptionKind::Put => (strike - spot).max(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalModel {
    /// Sigmoid in θ with amplitudes `k1x cos(k2x + k3x t)` and `k1y sin(k2y + k3y t)`.
    SigmoidTimeDependent { b1: f64, b2: f64, k1x: f64, k2x: f64, k3x: f64, k1y: f64, k2y: f64, k3y: f64 },
    Trig { b1: f64, b2: f64 },
    /// `f = (a1/2)(1 + erf(b1 θ/2))`, `h = (a2/2)(1 + erf(b2 θ/2))`.
    ErfSigmoid { b1: f64, b2: f64, a1: f64, a2: f64 },
}

impl SignalModel {
    pub fn zero() -> Self {
        SignalModel::ErfSigmoid { b1: 0.0, b2: 0.0, a1: 0.0, a2: 0.0 }
    }

    pub fn b1(&self) -> f64 {
        match *self {
            SignalModel::SigmoidTimeDependent { b1, .. } | SignalModel::Trig { b1, .. } | SignalModel::ErfSigmoid { b1, .. } => b1,
        }
    }

    pub fn b2(&self) -> f64 {
        match *self {
            SignalModel::SigmoidTimeDependent { b2, .. } | SignalModel::Trig { b2, .. } | SignalModel::ErfSigmoid { b2, .. } => b2,
        }
    }

    pub fn set_b1(&mut self, v: f64) {
        match self {
            SignalModel::SigmoidTimeDependent { b1, .. } | SignalModel::Trig { b1, .. } | SignalModel::ErfSigmoid { b1, .. } => *b1 = v,
        }
    }

    pub fn set_b2(&mut self, v: f64) {
        match self {
            SignalModel::SigmoidTimeDependent { b2, .. } | SignalModel::Trig { b2, .. } | SignalModel::ErfSigmoid { b2, .. } => *b2 = v,
        }
    }

    fn values(&self) -> Vec<f64> {
        match *self {
            SignalModel::SigmoidTimeDependent { b1, b2, k1x, k2x, k3x, k1y, k2y, k3y } => vec![b1, b2, k1x, k2x, k3x, k1y, k2y, k3y],
            SignalModel::Trig { b1, b2 } => vec![b1, b2],
            SignalModel::ErfSigmoid { b1, b2, a1, a2 } => vec![b1, b2, a1, a2],
        }
    }
}

/// Flat parameter set of the three-factor model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub sigma: f64,
    pub sigma_y: f64,
    pub sigma_theta: f64,
    pub k: f64,
    pub theta_hat: f64,
    pub mu: f64,
    pub y_bar: f64,
    pub c: f64,
    pub g: f64,
    pub eps_bar: f64,
    pub eta_bar: f64,
    pub gamma: f64,
    pub r: f64,
    pub q: f64,
    pub s_star: f64,
    pub y0: f64,
    pub theta0: f64,
    pub signal: SignalModel,
    #[serde(default)]
    pub regularizer: Regularizer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl State {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

impl ModelParams {
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let p: ModelParams = serde_json::from_slice(bytes)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("sigma", self.sigma),
            ("sigma_y", self.sigma_y),
            ("sigma_theta", self.sigma_theta),
            ("k", self.k),
            ("theta_hat", self.theta_hat),
            ("mu", self.mu),
            ("y_bar", self.y_bar),
            ("c", self.c),
            ("g", self.g),
            ("eps_bar", self.eps_bar),
            ("eta_bar", self.eta_bar),
            ("gamma", self.gamma),
            ("r", self.r),
            ("q", self.q),
            ("s_star", self.s_star),
            ("y0", self.y0),
            ("theta0", self.theta0),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("{name} is not finite")));
        }
        if self.signal.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("signal parameters must be finite".into()));
        }
        let positive = [
            ("sigma", self.sigma),
            ("sigma_y", self.sigma_y),
            ("sigma_theta", self.sigma_theta),
            ("gamma", self.gamma),
            ("eps_bar", self.eps_bar),
            ("s_star", self.s_star),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v <= 0.0) {
            return Err(Error::InvalidParams(format!("{name} must be positive")));
        }
        let nonneg = [("mu", self.mu), ("k", self.k), ("c", self.c)];
        if let Some((name, _)) = nonneg.iter().find(|(_, v)| *v < 0.0) {
            return Err(Error::InvalidParams(format!("{name} must be non-negative")));
        }
        if self.kappa() <= -1.0 {
            return Err(Error::InvalidParams("g * eps_bar must exceed -1".into()));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.g * self.eps_bar
    }

    /// Shift `b` of the erf regularizer, chosen so that it matches the
    /// logistic one at x = -4.
    pub fn r2_shift(&self) -> f64 {
        let arg = 1.0 - 2.0 / (1.0 + 4f64.exp() * self.kappa());
        if !(arg > -1.0) {
            return 10.0;
        }
        if arg >= 1.0 {
            return -10.0;
        }
        (4.0 - erf_inv(arg)).clamp(-10.0, 10.0)
    }

    /// Drift offset of `μ̄_x` that does not depend on the state: `η̄ + σ²/2 - r`.
    pub fn excess_drift_offset(&self) -> f64 {
        self.eta_bar + 0.5 * self.sigma * self.sigma - self.r
    }

    pub fn x0_for_spot(&self, spot: f64) -> f64 {
        (spot / self.s_star).ln()
    }

    pub fn state0(&self, spot: f64) -> State {
        State::new(self.x0_for_spot(spot), self.y0, self.theta0)
    }
}

/// Potential `V_M(x)` for the regularizer selected in `params`.
pub fn v_m(x: f64, params: &ModelParams) -> Result<f64> {
    v_m_with(x, params, params.regularizer)
}

pub fn v_m_prime(x: f64, params: &ModelParams) -> Result<f64> {
    v_m_prime_with(x, params, params.regularizer)
}

pub fn v_m_with(x: f64, params: &ModelParams, reg: Regularizer) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("V_M at non-finite x = {x}")));
    }
    let eb = params.eps_bar;
    match reg {
        Regularizer::R1 => {
            let kappa = params.kappa();
            let u = (-x).exp();
            let log_term = if kappa.abs() < 1e-10 {
                // (1/κ) log((1 + κu)/(1 + κ)) → u - 1 - κ(u² - 1)/2
                (u - 1.0) - 0.5 * kappa * (u * u - 1.0)
            } else {
                let num = kappa * u;
                if num <= -1.0 {
                    return Err(Error::Domain(format!("V_M log argument non-positive at x = {x}")));
                }
                (num.ln_1p() - kappa.ln_1p()) / kappa
            };
            Ok(((eb - 1.0) * (u - 1.0) + log_term) / eb)
        }
        Regularizer::R2 => {
            let b = params.r2_shift();
            let u = (-x).exp();
            let tail = erfc(b) - u * erfc(x + b) + (b + 0.25).exp() * (erf(b + 0.5) - erf(x + b + 0.5));
            Ok((u - 1.0) + tail / (2.0 * eb))
        }
    }
}

pub fn v_m_prime_with(x: f64, params: &ModelParams, reg: Regularizer) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("V_M' at non-finite x = {x}")));
    }
    Ok(-(-x).exp() * (1.0 - regularizer_value(x, params, reg)))
}

/// `R(x)` in `V_M' = -e^{-x}(1 - R(x))`.
pub fn regularizer_value(x: f64, params: &ModelParams, reg: Regularizer) -> f64 {
    match reg {
        Regularizer::R1 => params.g / (x.exp() + params.kappa()),
        Regularizer::R2 => erfc(x + params.r2_shift()) / (2.0 * params.eps_bar),
    }
}

pub fn signal_f(theta: f64, t: f64, params: &ModelParams) -> f64 {
    match params.signal {
        SignalModel::SigmoidTimeDependent { b1, k1x, k2x, k3x, .. } => {
            k1x * (k2x + k3x * t).cos() / (1.0 + (-b1 * theta).exp())
        }
        SignalModel::Trig { b1, .. } => b1 * theta.cos(),
        SignalModel::ErfSigmoid { b1, a1, .. } => 0.5 * a1 * (1.0 + erf(0.5 * b1 * theta)),
    }
}

pub fn signal_h(theta: f64, t: f64, params: &ModelParams) -> f64 {
    match params.signal {
        SignalModel::SigmoidTimeDependent { b2, k1y, k2y, k3y, .. } => {
            k1y * (k2y + k3y * t).sin() / (1.0 + (-b2 * theta).exp())
        }
        SignalModel::Trig { b2, .. } => b2 * theta.sin(),
        SignalModel::ErfSigmoid { b2, a2, .. } => 0.5 * a2 * (1.0 + erf(0.5 * b2 * theta)),
    }
}

/// Signals averaged over the endpoints of `[t0, t1]`; the time dependence
/// is frozen at this value over one pricing step.
pub fn signal_f_frozen(theta: f64, t0: f64, t1: f64, params: &ModelParams) -> f64 {
    0.5 * (signal_f(theta, t0, params) + signal_f(theta, t1, params))
}

pub fn signal_h_frozen(theta: f64, t0: f64, t1: f64, params: &ModelParams) -> f64 {
    0.5 * (signal_h(theta, t0, params) + signal_h(theta, t1, params))
}

pub fn drifts(state: State, t: f64, params: &ModelParams) -> Result<(f64, f64, f64)> {
    if !state.is_finite() {
        return Err(Error::Domain(format!("non-finite state {state:?}")));
    }
    let vp = v_m_prime(state.x, params)?;
    let v = v_m(state.x, params)?;
    let mu_x = signal_f(state.theta, t, params) + params.eta_bar - params.c * state.y * vp;
    let mu_y = signal_h(state.theta, t, params) + params.mu * (params.y_bar - state.y) - params.c * v;
    let mu_theta = params.k * (params.theta_hat - state.theta);
    Ok((mu_x, mu_y, mu_theta))
}

pub fn market_price_of_risk_x(state: State, t: f64, params: &ModelParams) -> Result<f64> {
    let (mu_x, _, _) = drifts(state, t, params)?;
    Ok((mu_x - params.r) / params.sigma)
}

/// Parameter sets used throughout the tests and examples.
pub mod presets {
    use super::*;

    /// Pricing set with time-dependent sigmoid signals, `S_* = 1000`.
    pub fn calib_param() -> ModelParams {
        let sigma = 0.37;
        let r = 0.01;
        ModelParams {
            sigma,
            sigma_y: 0.38,
            sigma_theta: 0.8334,
            k: 1.2869,
            theta_hat: 6.7865,
            mu: 1.6671,
            y_bar: 0.4731,
            c: 3.9305,
            g: 0.6831,
            eps_bar: 0.2,
            eta_bar: r - 0.5 * sigma * sigma,
            gamma: 0.2,
            r,
            q: 0.005,
            s_star: 1000.0,
            y0: 0.1,
            theta0: 0.5,
            signal: SignalModel::SigmoidTimeDependent {
                b1: 1.6819,
                b2: -1.2102,
                k1x: -3.2002,
                k2x: 2.7417,
                k3x: -1.8832,
                k1y: -0.7855,
                k2y: 3.8901,
                k3y: 1.5588,
            },
            regularizer: Regularizer::R2,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn trig_set(sigma: f64, sigma_y: f64, sigma_theta: f64, k: f64, mu: f64, g: f64, theta_hat: f64, c: f64, b1: f64, b2: f64, y_bar: f64, gamma: f64, y0: f64, theta0: f64) -> ModelParams {
        let r = 0.01;
        ModelParams {
            sigma,
            sigma_y,
            sigma_theta,
            k,
            theta_hat,
            mu,
            y_bar,
            c,
            g,
            eps_bar: 0.2,
            eta_bar: r - 0.5 * sigma * sigma,
            gamma,
            r,
            q: 0.0,
            s_star: 1.0,
            y0,
            theta0,
            signal: SignalModel::Trig { b1, b2 },
            regularizer: Regularizer::R2,
        }
    }

    /// SPX calibration at maturity 0.425 with trigonometric signals.
    pub fn res_t0_425() -> ModelParams {
        trig_set(0.3934, 1.008, 0.8912, 2.7069, 4.6154, 0.3173, 6.9242, 0.8897, 0.1220, -0.0549, 1.6208, 1.1031, -0.0589, 1.1007)
    }

    /// SPX calibration at maturity 0.041 with trigonometric signals.
    pub fn res_t0_041() -> ModelParams {
        trig_set(0.8950, 0.1244, 0.2004, 1.8831, 4.5869, 0.3108, 7.5284, 1.1189, 0.2455, 1.1286, 1.1148, 5.4118, -0.2356, -0.2014)
    }

    /// Constant-coefficient limit: no coupling, no signals, risk-neutral drift.
    pub fn black_scholes_limit(sigma: f64, r: f64) -> ModelParams {
        let mut p = calib_param();
        p.sigma = sigma;
        p.r = r;
        p.q = 0.0;
        p.eta_bar = r - 0.5 * sigma * sigma;
        p.c = 0.0;
        p.signal = SignalModel::zero();
        p
    }
}
