//! Differential-evolution calibration of [`ModelParams`] to option quotes,
//! with the drift constraints on the initial state and on the default
//! threshold.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{signal_f, signal_h, v_m, v_m_prime, ModelParams, OptionKind};
use crate::rbf::build_grid;
use crate::splitting::{far_field, price_indifference, OptionSpec, PayoffMode, SplitOptions};
use crate::{Error, Result};

/// Order of the calibrated parameter vector.
pub const PARAM_NAMES: [&str; 15] = ["sigma", "sigma_y", "sigma_theta", "k", "mu", "g", "theta_hat", "c", "b1", "b2", "y_bar", "gamma", "y0", "theta0", "eps_bar"];

/// Fitness assigned to a candidate whose pricing failed.
pub const FAILED_FITNESS: f64 = 1e12;
pub const PENALTY_WEIGHT: f64 = 1e6;

pub fn get_param(p: &ModelParams, name: &str) -> Result<f64> {
    Ok(match name {
        "sigma" => p.sigma,
        "sigma_y" => p.sigma_y,
        "sigma_theta" => p.sigma_theta,
        "k" => p.k,
        "mu" => p.mu,
        "g" => p.g,
        "theta_hat" => p.theta_hat,
        "c" => p.c,
        "b1" => p.signal.b1(),
        "b2" => p.signal.b2(),
        "y_bar" => p.y_bar,
        "gamma" => p.gamma,
        "y0" => p.y0,
        "theta0" => p.theta0,
        "eps_bar" => p.eps_bar,
        _ => return Err(Error::Domain(format!("unknown parameter `{name}`"))),
    })
}

pub fn set_param(p: &mut ModelParams, name: &str, v: f64) -> Result<()> {
    match name {
        "sigma" => p.sigma = v,
        "sigma_y" => p.sigma_y = v,
        "sigma_theta" => p.sigma_theta = v,
        "k" => p.k = v,
        "mu" => p.mu = v,
        "g" => p.g = v,
        "theta_hat" => p.theta_hat = v,
        "c" => p.c = v,
        "b1" => p.signal.set_b1(v),
        "b2" => p.signal.set_b2(v),
        "y_bar" => p.y_bar = v,
        "gamma" => p.gamma = v,
        "y0" => p.y0 = v,
        "theta0" => p.theta0 = v,
        "eps_bar" => p.eps_bar = v,
        _ => return Err(Error::Domain(format!("unknown parameter `{name}`"))),
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuoteRecord {
    pub date: String,
    pub spot: f64,
    pub strike: f64,
    pub maturity: f64,
    pub kind: OptionKind,
    pub price: f64,
}

impl QuoteRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [("spot", self.spot), ("strike", self.strike), ("maturity", self.maturity), ("price", self.price)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.date.trim().is_empty() {
            return Err("empty date".into());
        }
        Ok(())
    }

    /// Puts with `S/K < band` and calls with `K/S < band`.
    pub fn within_band(&self, band: f64) -> bool {
        match self.kind {
            OptionKind::Put => self.spot / self.strike < band,
            OptionKind::Call => self.strike / self.spot < band,
        }
    }
}

/// Parse quotes with header `date,spot,strike,maturity,kind,price`.
pub fn parse_quotes<R: Read>(reader: R) -> Result<Vec<QuoteRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    for col in ["date", "spot", "strike", "maturity", "kind", "price"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Parse { line: 1, msg: format!("missing column `{col}`") });
        }
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize::<QuoteRecord>() {
        let q = rec.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        q.validate().map_err(|msg| Error::Parse { line: out.len() as u64 + 2, msg })?;
        out.push(q);
    }
    Ok(out)
}

pub fn filter_quotes(quotes: Vec<QuoteRecord>, spot_band: f64) -> Vec<QuoteRecord> {
    quotes.into_iter().filter(|q| q.within_band(spot_band)).collect()
}

pub fn load_and_filter(path: &Path, spot_band: f64) -> Result<Vec<QuoteRecord>> {
    let quotes = parse_quotes(std::fs::File::open(path)?)?;
    if quotes.is_empty() {
        log::warn!("{} contains no quotes", path.display());
    }
    let n = quotes.len();
    let kept = filter_quotes(quotes, spot_band);
    log::info!("kept {} of {n} quotes inside the moneyness band {spot_band}", kept.len());
    Ok(kept)
}

/// Absolute drifts of x at the initial state and at the threshold state
/// `(x̂, ŷ, θ̂)`, `ŷ = h(θ̂)/μ + ȳ − (c/μ)V_M(x̂)`. `None` when `ŷ` is
/// undefined (`μ = 0` with `c ≠ 0`) or a potential evaluation fails.
pub fn constraint_drifts(p: &ModelParams, x0: f64, x_hat_offset: f64) -> Option<[f64; 2]> {
    let d0 = signal_f(p.theta0, 0.0, p) + p.eta_bar - p.c * v_m_prime(x0, p).ok()? * p.y0;
    let x_hat = x0 + x_hat_offset;
    let y_hat = if p.c == 0.0 {
        signal_h(p.theta_hat, 0.0, p) / p.mu + p.y_bar
    } else {
        if p.mu == 0.0 {
            return None;
        }
        signal_h(p.theta_hat, 0.0, p) / p.mu + p.y_bar - p.c / p.mu * v_m(x_hat, p).ok()?
    };
    let y_hat = if y_hat.is_finite() { y_hat } else { p.y_bar };
    let d1 = signal_f(p.theta_hat, 0.0, p) + p.eta_bar - p.c * v_m_prime(x_hat, p).ok()? * y_hat;
    [d0, d1].iter().all(|d| d.is_finite()).then_some([d0.abs(), d1.abs()])
}

/// Sum of the amounts by which the constraints are violated. Zero exactly
/// on the feasible set; a drift equal to `r̄` counts as violated.
pub fn constraint_violation(p: &ModelParams, x0: f64, r_bar: f64, x_hat_offset: f64) -> f64 {
    match constraint_drifts(p, x0, x_hat_offset) {
        None => 1.0,
        Some(ds) => ds.iter().filter(|&&d| d >= r_bar).map(|d| (d - r_bar).max(f64::MIN_POSITIVE)).sum(),
    }
}

pub fn constraints_ok(p: &ModelParams, x0: f64, r_bar: f64, x_hat_offset: f64) -> bool {
    constraint_violation(p, x0, r_bar, x_hat_offset) == 0.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PricerConfig {
    /// Collocation nodes along x, y and θ.
    pub nodes: [usize; 3],
    pub n_tau: usize,
    pub payoff_mode: PayoffMode,
}

impl Default for PricerConfig {
    fn default() -> Self {
        Self { nodes: [20, 5, 5], n_tau: 30, payoff_mode: PayoffMode::FarField }
    }
}

/// Model prices for all quotes, in quote order. Quotes sharing a date, spot
/// and maturity are priced in one solve.
pub fn model_prices(p: &ModelParams, quotes: &[QuoteRecord], cfg: &PricerConfig) -> Result<Vec<f64>> {
    let mut groups: BTreeMap<(String, u64, u64), Vec<usize>> = BTreeMap::new();
    for (i, q) in quotes.iter().enumerate() {
        groups.entry((q.date.clone(), q.spot.to_bits(), q.maturity.to_bits())).or_default().push(i);
    }
    let mut out = vec![f64::NAN; quotes.len()];
    for idx in groups.values() {
        let q0 = &quotes[idx[0]];
        let specs: Vec<OptionSpec> = idx.iter().map(|&i| OptionSpec { strike: quotes[i].strike, kind: quotes[i].kind }).collect();
        let state0 = p.state0(q0.spot);
        let prices: Vec<f64> = match cfg.payoff_mode {
            // The indifference price in this mode is the far-field term
            // alone, so the march for 𝓒⁰ is skipped.
            PayoffMode::FarField => specs.iter().map(|o| far_field(q0.maturity, state0.x, o, p).map(|v| v.0)).collect::<Result<_>>()?,
            PayoffMode::Nodal => {
                let grid = Arc::new(build_grid(&[q0.spot], p, cfg.nodes[0], cfg.nodes[1], cfg.nodes[2], cfg.n_tau, q0.maturity)?);
                let opts = SplitOptions { payoff_mode: PayoffMode::Nodal, ..SplitOptions::default() };
                price_indifference(grid, p, &specs, state0, &opts)?.into_iter().map(|r| r.price).collect()
            }
        };
        for (&i, v) in idx.iter().zip(prices) {
            out[i] = v;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub fitness: f64,
    pub rmse: f64,
    pub relative_rmse: f64,
    pub penalty: f64,
    /// Model minus market, per quote.
    pub residuals: Vec<f64>,
}

fn distinct_x0(p: &ModelParams, quotes: &[QuoteRecord]) -> Vec<f64> {
    let mut spots: Vec<f64> = quotes.iter().map(|q| q.spot).collect();
    spots.sort_by(f64::total_cmp);
    spots.dedup();
    spots.into_iter().map(|s| p.x0_for_spot(s)).collect()
}

/// Price RMSE plus `1e6 × constraint violation`, the violation taken at
/// every distinct spot.
pub fn objective(p: &ModelParams, quotes: &[QuoteRecord], cfg: &PricerConfig, r_bar: f64, x_hat_offset: f64) -> ObjectiveValue {
    let penalty = PENALTY_WEIGHT * distinct_x0(p, quotes).into_iter().map(|x0| constraint_violation(p, x0, r_bar, x_hat_offset)).sum::<f64>() + 0.0;
    let failed = |msg: String| {
        log::debug!("pricing failed for candidate: {msg}");
        ObjectiveValue { fitness: FAILED_FITNESS, rmse: f64::NAN, relative_rmse: f64::NAN, penalty, residuals: Vec::new() }
    };
    if quotes.is_empty() {
        return ObjectiveValue { fitness: penalty, rmse: 0.0, relative_rmse: 0.0, penalty, residuals: Vec::new() };
    }
    let prices = match p.validate().and_then(|_| model_prices(p, quotes, cfg)) {
        Ok(v) => v,
        Err(e) => return failed(e.to_string()),
    };
    if prices.iter().any(|v| !v.is_finite()) {
        return failed("non-finite model price".into());
    }
    let residuals: Vec<f64> = prices.iter().zip(quotes).map(|(m, q)| m - q.price).collect();
    let n = quotes.len() as f64;
    let rmse = (residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let relative_rmse = (residuals.iter().zip(quotes).map(|(r, q)| (r / q.price).powi(2)).sum::<f64>() / n).sqrt();
    ObjectiveValue { fitness: rmse + penalty, rmse, relative_rmse, penalty, residuals }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeSettings {
    pub population_multiplier: usize,
    pub max_generations: usize,
    pub seed: u64,
    /// Stop when the best fitness changes by less than this, relatively,
    /// over `stagnation_window` generations.
    pub tolerance: f64,
    pub stagnation_window: usize,
    pub mutation: f64,
    pub crossover: f64,
    /// Abort when every candidate is infeasible this many generations in a row.
    pub infeasible_limit: usize,
}

impl Default for DeSettings {
    fn default() -> Self {
        Self { population_multiplier: 10, max_generations: 100, seed: 42, tolerance: 1e-6, stagnation_window: 20, mutation: 0.7, crossover: 0.9, infeasible_limit: 5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeOutcome {
    pub best: Vec<f64>,
    pub fitness: f64,
    pub generations: usize,
    /// Best fitness after initialization and after each generation.
    pub trace: Vec<f64>,
}

/// DE/rand/1/bin with elitist selection. `fitness` returns the value to
/// minimize and whether the candidate is feasible. Random draws are made
/// sequentially and evaluations in parallel, so the outcome depends only on
/// the seed.
pub fn differential_evolution<F>(bounds: &[(f64, f64)], de: &DeSettings, fitness: F) -> Result<DeOutcome>
where
    F: Fn(&[f64]) -> (f64, bool) + Sync,
{
    let dim = bounds.len();
    if dim == 0 {
        return Err(Error::Domain("nothing to calibrate".into()));
    }
    if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
        return Err(Error::Domain(format!("bounds must be finite with lower < upper, got [{lo}, {hi}]")));
    }
    let np = (de.population_multiplier * dim).max(4);
    let mut rng = ChaCha8Rng::seed_from_u64(de.seed);
    let mut pop: Vec<Vec<f64>> = (0..np).map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect()).collect();
    let eval = |pop: &[Vec<f64>]| -> Vec<(f64, bool)> {
        pop.par_iter()
            .map(|c| {
                let (f, ok) = fitness(c);
                (if f.is_nan() { f64::INFINITY } else { f }, ok)
            })
            .collect()
    };
    let mut fit = eval(&pop);
    let best_of = |fit: &[(f64, bool)]| (0..fit.len()).min_by(|&a, &b| fit[a].0.total_cmp(&fit[b].0)).unwrap_or(0);
    let mut trace = vec![fit[best_of(&fit)].0];
    let mut infeasible_run = usize::from(fit.iter().all(|f| !f.1));
    let mut generations = 0;
    while generations < de.max_generations {
        if infeasible_run >= de.infeasible_limit {
            return Err(Error::Aborted(format!(
                "no feasible candidate for {infeasible_run} consecutive generations (best fitness {:.6e})",
                trace.last().copied().unwrap_or(f64::NAN)
            )));
        }
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = || loop {
                    let j = rng.random_range(0..np);
                    if j != i {
                        break j;
                    }
                };
                let (a, mut b, mut c) = (pick(), pick(), pick());
                while b == a {
                    b = pick();
                }
                while c == a || c == b {
                    c = pick();
                }
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|d| {
                        if d == forced || rng.random::<f64>() < de.crossover {
                            let v = pop[a][d] + de.mutation * (pop[b][d] - pop[c][d]);
                            let (lo, hi) = bounds[d];
                            // Out-of-box components land halfway between the
                            // parent and the violated bound.
                            if v < lo {
                                0.5 * (lo + pop[i][d])
                            } else if v > hi {
                                0.5 * (hi + pop[i][d])
                            } else {
                                v
                            }
                        } else {
                            pop[i][d]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fit = eval(&trials);
        for (i, (t, f)) in trials.into_iter().zip(trial_fit).enumerate() {
            if f.0 <= fit[i].0 {
                pop[i] = t;
                fit[i] = f;
            }
        }
        generations += 1;
        trace.push(fit[best_of(&fit)].0);
        infeasible_run = if fit.iter().all(|f| !f.1) { infeasible_run + 1 } else { 0 };
        let w = de.stagnation_window;
        if w > 0 && trace.len() > w {
            let old = trace[trace.len() - 1 - w];
            let new = trace[trace.len() - 1];
            if (old - new).abs() <= de.tolerance * old.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }
    let b = best_of(&fit);
    Ok(DeOutcome { best: pop[b].clone(), fitness: fit[b].0, generations, trace })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBound {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationProblem {
    #[serde(default)]
    pub quotes: Vec<QuoteRecord>,
    /// Values of the parameters that are not calibrated.
    pub base: ModelParams,
    /// Free parameters with their boxes, in [`PARAM_NAMES`] names.
    pub bounds: Vec<ParamBound>,
    #[serde(default = "default_r_bar")]
    pub r_bar: f64,
    #[serde(default = "default_x_hat_offset")]
    pub x_hat_offset: f64,
    #[serde(default)]
    pub de: DeSettings,
    #[serde(default)]
    pub pricer: PricerConfig,
    /// Keep `η̄ = r − σ²/2` while σ moves.
    #[serde(default = "default_true")]
    pub tie_eta_bar: bool,
}

fn default_r_bar() -> f64 {
    0.02
}

fn default_x_hat_offset() -> f64 {
    -2.0
}

fn default_true() -> bool {
    true
}

impl CalibrationProblem {
    pub fn new(quotes: Vec<QuoteRecord>, base: ModelParams, bounds: Vec<ParamBound>) -> Self {
        Self { quotes, base, bounds, r_bar: 0.02, x_hat_offset: -2.0, de: DeSettings::default(), pricer: PricerConfig::default(), tie_eta_bar: true }
    }

    /// Boxes of ±`fraction` around the values in `truth`.
    pub fn perturbed_bounds(truth: &ModelParams, names: &[&str], fraction: f64) -> Result<Vec<ParamBound>> {
        names
            .iter()
            .map(|n| {
                let v = get_param(truth, n)?;
                let w = (fraction * v.abs()).max(1e-8);
                Ok(ParamBound { name: n.to_string(), lower: v - w, upper: v + w })
            })
            .collect()
    }

    pub fn population(&self) -> usize {
        self.de.population_multiplier * self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::Domain("at least one free parameter is required".into()));
        }
        for (i, b) in self.bounds.iter().enumerate() {
            if !PARAM_NAMES.contains(&b.name.as_str()) {
                return Err(Error::Domain(format!("unknown parameter `{}`", b.name)));
            }
            if self.bounds[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::Domain(format!("parameter `{}` listed twice", b.name)));
            }
            if !(b.lower.is_finite() && b.upper.is_finite() && b.lower < b.upper) {
                return Err(Error::Domain(format!("bounds for `{}` must be finite with lower < upper", b.name)));
            }
        }
        if self.quotes.len() < self.bounds.len() {
            log::warn!("{} quotes for {} free parameters", self.quotes.len(), self.bounds.len());
        }
        Ok(())
    }

    pub fn params_for(&self, v: &[f64]) -> Result<ModelParams> {
        let mut p = self.base.clone();
        for (b, x) in self.bounds.iter().zip(v) {
            set_param(&mut p, &b.name, *x)?;
        }
        if self.tie_eta_bar {
            p.eta_bar = p.r - 0.5 * p.sigma * p.sigma;
        }
        Ok(p)
    }

    pub fn evaluate(&self, v: &[f64]) -> ObjectiveValue {
        match self.params_for(v) {
            Ok(p) => objective(&p, &self.quotes, &self.pricer, self.r_bar, self.x_hat_offset),
            Err(e) => {
                log::debug!("invalid candidate: {e}");
                ObjectiveValue { fitness: FAILED_FITNESS, rmse: f64::NAN, relative_rmse: f64::NAN, penalty: 0.0, residuals: Vec::new() }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub best_params: ModelParams,
    pub best_vector: BTreeMap<String, f64>,
    pub fitness: f64,
    pub rmse: f64,
    pub relative_rmse: f64,
    pub penalty: f64,
    pub generations: usize,
    pub fitness_trace: Vec<f64>,
    pub residuals: Vec<f64>,
    pub seed: u64,
    pub config_echo: serde_json::Value,
}

pub fn calibrate(problem: &CalibrationProblem) -> Result<CalibrationReport> {
    problem.validate()?;
    let bounds: Vec<(f64, f64)> = problem.bounds.iter().map(|b| (b.lower, b.upper)).collect();
    let out = differential_evolution(&bounds, &problem.de, |v| {
        let o = problem.evaluate(v);
        (o.fitness, o.penalty == 0.0 && o.fitness < FAILED_FITNESS)
    })?;
    let best_params = problem.params_for(&out.best)?;
    let o = problem.evaluate(&out.best);
    let mut echo = serde_json::to_value(problem)?;
    if let Some(m) = echo.as_object_mut() {
        m.insert("quotes".into(), serde_json::json!(problem.quotes.len()));
    }
    Ok(CalibrationReport {
        best_vector: problem.bounds.iter().zip(&out.best).map(|(b, v)| (b.name.clone(), *v)).collect(),
        best_params,
        fitness: out.fitness,
        rmse: o.rmse,
        relative_rmse: o.relative_rmse,
        penalty: o.penalty,
        generations: out.generations,
        fitness_trace: out.trace,
        residuals: o.residuals,
        seed: problem.de.seed,
        config_echo: echo,
    })
}

/// Quotes priced by the model itself, for round-trip tests.
pub fn synthetic_quotes(p: &ModelParams, spot: f64, maturity: f64, strikes: &[(f64, OptionKind)], cfg: &PricerConfig) -> Result<Vec<QuoteRecord>> {
    let mut quotes: Vec<QuoteRecord> = strikes
        .iter()
        .map(|&(strike, kind)| QuoteRecord { date: "2017-01-17".into(), spot, strike, maturity, kind, price: 1.0 })
        .collect();
    let prices = model_prices(p, &quotes, cfg)?;
    for (q, v) in quotes.iter_mut().zip(prices) {
        q.price = v;
    }
    Ok(quotes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use crate::SignalModel;

    fn quote(kind: OptionKind, spot: f64, strike: f64) -> QuoteRecord {
        QuoteRecord { date: "2017-01-17".into(), spot, strike, maturity: 0.25, kind, price: 10.0 }
    }

    #[test]
    fn band_filter() {
        assert!(!quote(OptionKind::Put, 1100.0, 1000.0).within_band(1.05));
        assert!(quote(OptionKind::Call, 1000.0, 1000.0).within_band(1.05));
        assert!(quote(OptionKind::Put, 1000.0, 1100.0).within_band(1.05));
        assert!(!quote(OptionKind::Call, 1000.0, 1100.0).within_band(1.05));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let good = "date,spot,strike,maturity,kind,price\n2017-01-17,1000,1000,0.25,call,50\n";
        assert_eq!(parse_quotes(good.as_bytes()).unwrap().len(), 1);
        let bad = "date,spot,strike,maturity,kind,price\n2017-01-17,1000,1000,0.25,call,50\n2017-01-17,1000,-5,0.25,put,3\n";
        assert!(matches!(parse_quotes(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let garbage = "date,spot,strike,maturity,kind,price\n2017-01-17,abc,1000,0.25,call,50\n";
        assert!(matches!(parse_quotes(garbage.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let missing = "date,spot,strike,kind,price\n";
        assert!(matches!(parse_quotes(missing.as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(parse_quotes("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn empty_file_gives_empty_set() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(load_and_filter(f.path(), 1.05).unwrap().is_empty());
    }

    fn flat() -> ModelParams {
        let mut p = presets::calib_param();
        p.c = 0.0;
        p.signal = SignalModel::zero();
        p.eta_bar = 0.0;
        p
    }

    #[test]
    fn constraint_examples() {
        let p = flat();
        assert!(constraints_ok(&p, 0.0, 0.02, -2.0));
        let mut q = p.clone();
        q.eta_bar = 0.05;
        assert!(!constraints_ok(&q, 0.0, 0.02, -2.0));
        assert!((constraint_violation(&q, 0.0, 0.02, -2.0) - 0.06).abs() < 1e-12);
        q.eta_bar = 0.02;
        assert!(!constraints_ok(&q, 0.0, 0.02, -2.0));
        assert!(constraint_violation(&q, 0.0, 0.02, -2.0) > 0.0);
        let mut m = presets::res_t0_425();
        m.mu = 0.0;
        assert!(!constraints_ok(&m, 0.0, 0.02, -2.0));
    }

    #[test]
    fn self_consistent_and_shifted_quotes() {
        let p = presets::black_scholes_limit(0.3, 0.01);
        let strikes: Vec<(f64, OptionKind)> = [900.0, 1000.0, 1100.0].iter().map(|&k| (k, OptionKind::Put)).collect();
        let cfg = PricerConfig::default();
        let quotes = synthetic_quotes(&p, 1000.0, 0.25, &strikes, &cfg).unwrap();
        let o = objective(&p, &quotes, &cfg, 1.0, -2.0);
        assert!(o.rmse < 1e-12 && o.penalty == 0.0);
        let shifted: Vec<QuoteRecord> = quotes.iter().map(|q| QuoteRecord { price: q.price - 1.0, ..q.clone() }).collect();
        assert!((objective(&p, &shifted, &cfg, 1.0, -2.0).rmse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn toy_quadratic() {
        let de = DeSettings { population_multiplier: 10, max_generations: 50, stagnation_window: 0, ..DeSettings::default() };
        let out = differential_evolution(&[(-5.0, 5.0)], &de, |v| ((v[0] - 1.3).powi(2), true)).unwrap();
        assert!((out.best[0] - 1.3).abs() < 1e-6, "{:?}", out.best);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
        let again = differential_evolution(&[(-5.0, 5.0)], &de, |v| ((v[0] - 1.3).powi(2), true)).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn infeasible_population_aborts() {
        let de = DeSettings::default();
        let r = differential_evolution(&[(0.0, 1.0)], &de, |v| (1.0 + v[0], false));
        assert!(matches!(r, Err(Error::Aborted(_))));
    }

    #[test]
    fn population_size() {
        let p = presets::res_t0_425();
        let b = CalibrationProblem::perturbed_bounds(&p, &PARAM_NAMES, 0.1).unwrap();
        assert_eq!(CalibrationProblem::new(Vec::new(), p, b).population(), 150);
    }

    #[test]
    fn parameter_names_round_trip() {
        let mut p = presets::res_t0_041();
        for (i, n) in PARAM_NAMES.iter().enumerate() {
            set_param(&mut p, n, i as f64 + 0.5).unwrap();
        }
        for (i, n) in PARAM_NAMES.iter().enumerate() {
            assert_eq!(get_param(&p, n).unwrap(), i as f64 + 0.5);
        }
        assert!(get_param(&p, "nope").is_err());
    }
}
