//! Euler–Maruyama simulation of the (x, y, θ) dynamics with default
//! absorption, and the statistics computed from simulated ensembles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{drifts, market_price_of_risk_x, ModelParams, State};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Initial log-price; the scale `S_*` is the initial spot by default.
    pub x0: f64,
    /// Default level for x; `None` means `x0 − 2`.
    pub default_threshold: Option<f64>,
    /// Freeze defaulted paths at the threshold. Otherwise they keep evolving
    /// and are only flagged.
    pub absorb: bool,
    /// Store every `record_every`-th step (the last step is always stored).
    pub record_every: usize,
    /// Extra times to store, rounded to the nearest step.
    pub record_times: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            dt: 1.0 / 252.0,
            horizon: 1.0,
            seed: 42,
            x0: 0.0,
            default_threshold: None,
            absorb: true,
            record_every: 1,
            record_times: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Domain("n_paths must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon && self.horizon.is_finite()) {
            return Err(Error::Domain(format!("need 0 < dt <= horizon, got dt = {}, horizon = {}", self.dt, self.horizon)));
        }
        if self.record_every == 0 {
            return Err(Error::Domain("record_every must be at least 1".into()));
        }
        if !self.x0.is_finite() || self.default_threshold.is_some_and(f64::is_nan) {
            return Err(Error::Domain("x0 and default_threshold must be numbers".into()));
        }
        if self.record_times.iter().any(|t| !(*t >= 0.0 && *t <= self.horizon + self.dt)) {
            return Err(Error::Domain("record_times must lie in [0, horizon]".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }

    pub fn threshold(&self) -> f64 {
        self.default_threshold.unwrap_or(self.x0 - 2.0)
    }

    /// Also store the steps nearest to these times.
    pub fn record_horizons(&mut self, horizons: &[f64]) {
        self.record_times.extend(horizons.iter().filter(|h| (0.0..=self.horizon).contains(*h)));
    }

    /// Step indices that are stored, ascending and starting at 0.
    pub fn recorded_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut steps: Vec<usize> = (0..=n).step_by(self.record_every).collect();
        steps.push(n);
        steps.extend(self.record_times.iter().map(|t| ((t / self.dt).round() as usize).min(n)));
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathStatus {
    Alive,
    /// First step at which x fell below the threshold.
    Defaulted { step: usize },
    /// First step at which the state stopped being finite.
    Diverged { step: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub dt: f64,
    pub times: Vec<f64>,
    /// `states[path][record]`.
    pub states: Vec<Vec<State>>,
    pub status: Vec<PathStatus>,
    pub threshold: f64,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.states.len()
    }

    pub fn is_alive(&self, path: usize) -> bool {
        self.status[path] == PathStatus::Alive
    }

    pub fn default_time(&self, path: usize) -> Option<f64> {
        match self.status[path] {
            PathStatus::Defaulted { step } => Some(step as f64 * self.dt),
            _ => None,
        }
    }

    /// Index of the stored time closest to `t`.
    pub fn record_at(&self, t: f64) -> Result<usize> {
        let (i, d) = self
            .times
            .iter()
            .enumerate()
            .map(|(i, s)| (i, (s - t).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::Insufficient("empty ensemble".into()))?;
        if d > 0.5 * self.dt {
            return Err(Error::Domain(format!("time {t} is not a stored time (closest {})", self.times[i])));
        }
        Ok(i)
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn simulate_path(params: &ModelParams, cfg: &SimConfig, path: usize, recorded: &[usize]) -> (Vec<State>, PathStatus) {
    let mut rng = path_rng(cfg.seed, path);
    let n = cfg.n_steps();
    let sq = cfg.dt.sqrt();
    let threshold = cfg.threshold();
    let mut s = State::new(cfg.x0, params.y0, params.theta0);
    let mut status = if s.x < threshold { PathStatus::Defaulted { step: 0 } } else { PathStatus::Alive };
    let mut out = Vec::with_capacity(recorded.len());
    let mut next = recorded.iter().peekable();
    for step in 0..=n {
        if next.peek() == Some(&&step) {
            out.push(s);
            next.next();
        }
        if step == n {
            break;
        }
        // Draws happen on every step so that a path's noise does not depend
        // on when it stopped.
        let z: [f64; 3] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
        let frozen = matches!(status, PathStatus::Diverged { .. }) || (cfg.absorb && matches!(status, PathStatus::Defaulted { .. }));
        if frozen {
            continue;
        }
        let t = step as f64 * cfg.dt;
        let next_state = drifts(s, t, params).ok().map(|(mx, my, mt)| {
            State::new(
                s.x + mx * cfg.dt + params.sigma * sq * z[0],
                s.y + my * cfg.dt + params.sigma_y * sq * z[1],
                s.theta + mt * cfg.dt + params.sigma_theta * sq * z[2],
            )
        });
        match next_state {
            Some(ns) if ns.is_finite() => {
                s = ns;
                if status == PathStatus::Alive && s.x < threshold {
                    status = PathStatus::Defaulted { step: step + 1 };
                    if cfg.absorb {
                        s.x = threshold;
                    }
                }
            }
            _ => {
                log::debug!("path {path} diverged at step {} from {s:?}", step + 1);
                status = PathStatus::Diverged { step: step + 1 };
            }
        }
    }
    (out, status)
}

/// Simulate `cfg.n_paths` independent paths. Path `i` draws from its own
/// ChaCha stream, so it does not change when `n_paths` changes.
pub fn simulate(params: &ModelParams, cfg: &SimConfig) -> Result<PathEnsemble> {
    params.validate()?;
    cfg.validate()?;
    let recorded = cfg.recorded_steps();
    let (states, status): (Vec<_>, Vec<_>) = (0..cfg.n_paths).into_par_iter().map(|i| simulate_path(params, cfg, i, &recorded)).unzip();
    let diverged = status.iter().filter(|s| matches!(s, PathStatus::Diverged { .. })).count();
    if diverged > 0 {
        log::warn!("{diverged} of {} paths diverged", cfg.n_paths);
    }
    Ok(PathEnsemble { dt: cfg.dt, times: recorded.iter().map(|&k| k as f64 * cfg.dt).collect(), states, status, threshold: cfg.threshold() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub horizon: f64,
    pub mean: f64,
    pub volatility: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub n_returns: usize,
}

/// Sample mean, variance, standardized third moment and excess kurtosis.
pub fn sample_moments(v: &[f64]) -> (f64, f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let (m2, m3, m4) = v.iter().fold((0.0, 0.0, 0.0), |(a, b, c), x| {
        let d = x - mean;
        (a + d * d, b + d * d * d, c + d * d * d * d)
    });
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if m2 == 0.0 {
        return (mean, 0.0, 0.0, 0.0);
    }
    (mean, m2 * n / (n - 1.0).max(1.0), m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// Annualized statistics of the log-return `x(h) − x(0)` across the paths
/// alive at the end of the run: mean `/h`, volatility `/√h`, and the
/// skewness and excess kurtosis of the `h`-returns. Each horizon must be a
/// stored time (see [`SimConfig::record_horizons`]).
pub fn annualized_moments(ens: &PathEnsemble, horizons: &[f64]) -> Result<Vec<MomentRow>> {
    let alive: Vec<usize> = (0..ens.n_paths()).filter(|&i| ens.is_alive(i)).collect();
    if alive.len() < 100 {
        return Err(Error::Insufficient(format!("{} surviving paths, need at least 100", alive.len())));
    }
    horizons
        .iter()
        .map(|&h| {
            if !(h > 0.0) {
                return Err(Error::Domain(format!("horizon must be positive, got {h}")));
            }
            let k = ens.record_at(h)?;
            let t = ens.times[k];
            if t == 0.0 {
                return Err(Error::Domain(format!("horizon {h} is shorter than one step")));
            }
            let r: Vec<f64> = alive.iter().map(|&i| ens.states[i][k].x - ens.states[i][0].x).collect();
            let (mean, var, skew, kurt) = sample_moments(&r);
            Ok(MomentRow { horizon: h, mean: mean / t, volatility: (var / t).sqrt(), skewness: skew, excess_kurtosis: kurt, n_returns: r.len() })
        })
        .collect()
}

/// Expected rescaled range of `n` i.i.d. Gaussian increments
/// (Anis–Lloyd with the Peters small-sample factor).
fn expected_rs(n: usize) -> f64 {
    let nf = n as f64;
    let sum: f64 = (1..n).map(|i| ((nf - i as f64) / i as f64).sqrt()).sum();
    let lead = if n <= 340 {
        libm::tgamma(0.5 * (nf - 1.0)) / (std::f64::consts::PI.sqrt() * libm::tgamma(0.5 * nf))
    } else {
        1.0 / (nf * std::f64::consts::FRAC_PI_2).sqrt()
    };
    (nf - 0.5) / nf * lead * sum
}

fn rescaled_range(chunk: &[f64]) -> Option<f64> {
    let n = chunk.len() as f64;
    let mean = chunk.iter().sum::<f64>() / n;
    let (mut acc, mut lo, mut hi) = (0.0f64, 0.0f64, 0.0f64);
    let mut ss = 0.0;
    for v in chunk {
        acc += v - mean;
        lo = lo.min(acc);
        hi = hi.max(acc);
        ss += (v - mean) * (v - mean);
    }
    let sd = (ss / n).sqrt();
    (sd > 0.0).then(|| (hi - lo) / sd)
}

/// Hurst exponent of an increment series by rescaled range: windows of
/// dyadic length in `[8, n/4]`, each averaged over non-overlapping chunks,
/// and `H = ½ + slope` of `log(R/S) − log E[R/S]` against `log n`, with the
/// Anis–Lloyd expectation for i.i.d. increments removing the small-window
/// bias.
pub fn hurst_exponent(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 128 {
        return Err(Error::Insufficient(format!("Hurst estimate needs at least 128 points, got {n}")));
    }
    let mut pts = Vec::new();
    let mut w = 8;
    while w <= n / 4 {
        let rs: Vec<f64> = series.chunks_exact(w).filter_map(rescaled_range).collect();
        if !rs.is_empty() {
            let avg = rs.iter().sum::<f64>() / rs.len() as f64;
            pts.push(((w as f64).ln(), avg.ln() - expected_rs(w).ln()));
        }
        w *= 2;
    }
    if pts.len() < 2 {
        return Err(Error::Insufficient("series has no variation to estimate a Hurst exponent".into()));
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    Ok(0.5 + sxy / sxx)
}

/// Mean Hurst exponent of the x increments over the paths that survive,
/// using every stored step (record the ensemble at every step).
pub fn ensemble_hurst(ens: &PathEnsemble, max_paths: usize) -> Result<f64> {
    let est: Vec<f64> = (0..ens.n_paths())
        .filter(|&i| ens.is_alive(i))
        .take(max_paths)
        .map(|i| {
            let inc: Vec<f64> = ens.states[i].windows(2).map(|w| w[1].x - w[0].x).collect();
            hurst_exponent(&inc)
        })
        .collect::<Result<_>>()?;
    if est.is_empty() {
        return Err(Error::Insufficient("no surviving paths".into()));
    }
    Ok(est.iter().sum::<f64>() / est.len() as f64)
}

/// Fraction of paths that defaulted.
pub fn default_probability(ens: &PathEnsemble) -> f64 {
    let d = ens.status.iter().filter(|s| matches!(s, PathStatus::Defaulted { .. })).count();
    d as f64 / ens.n_paths() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct MprSeries {
    pub times: Vec<f64>,
    /// Mean of `λ^(x)` over surviving paths at each stored time.
    pub mean: Vec<f64>,
    /// `λ^(x)` along the first few surviving paths.
    pub samples: Vec<Vec<f64>>,
}

/// Market price of risk along every surviving path.
pub fn mpr_series(ens: &PathEnsemble, params: &ModelParams, n_samples: usize) -> Result<MprSeries> {
    let alive: Vec<usize> = (0..ens.n_paths()).filter(|&i| ens.is_alive(i)).collect();
    if alive.is_empty() {
        return Err(Error::Insufficient("no surviving paths".into()));
    }
    let per_path: Vec<Vec<f64>> = alive
        .par_iter()
        .map(|&i| ens.states[i].iter().zip(&ens.times).map(|(s, &t)| market_price_of_risk_x(*s, t, params)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let mean = (0..ens.times.len()).map(|k| per_path.iter().map(|p| p[k]).sum::<f64>() / per_path.len() as f64).collect();
    Ok(MprSeries { times: ens.times.clone(), mean, samples: per_path.into_iter().take(n_samples).collect() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub time: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub mean_theta: f64,
    pub default_frac: f64,
    pub mpr_mean: f64,
}

/// Per stored time: state means over surviving paths, the fraction of paths
/// defaulted by then, and the mean market price of risk.
pub fn summary(ens: &PathEnsemble, params: &ModelParams) -> Result<Vec<SummaryRow>> {
    let mpr = mpr_series(ens, params, 0)?;
    let alive: Vec<usize> = (0..ens.n_paths()).filter(|&i| ens.is_alive(i)).collect();
    let n = alive.len() as f64;
    Ok(ens
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (sx, sy, st) = alive.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &i| {
                let s = ens.states[i][k];
                (a + s.x, b + s.y, c + s.theta)
            });
            let defaulted = (0..ens.n_paths()).filter(|&i| ens.default_time(i).is_some_and(|d| d <= t + 1e-12)).count();
            SummaryRow { time: t, mean_x: sx / n, mean_y: sy / n, mean_theta: st / n, default_frac: defaulted as f64 / ens.n_paths() as f64, mpr_mean: mpr.mean[k] }
        })
        .collect())
}
