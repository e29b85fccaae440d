//! Run configuration read by the command-line front end: one JSON document
//! with a section per subsystem. Every section has defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationProblem, DeSettings, ParamBound, PricerConfig, QuoteRecord, PARAM_NAMES};
use crate::mc::SimConfig;
use crate::model::{presets, ModelParams, OptionKind};
use crate::rbf::ShapeOptions;
use crate::splitting::PayoffMode;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PricerKind {
    Volterra,
    #[default]
    Splitting,
}

impl std::str::FromStr for PricerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volterra" => Ok(PricerKind::Volterra),
            "splitting" => Ok(PricerKind::Splitting),
            _ => Err(Error::Domain(format!("unknown pricer `{s}` (expected volterra or splitting)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub n_theta: usize,
    pub n_tau: usize,
    pub shape: ShapeOptions,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_x: 20, n_y: 5, n_theta: 5, n_tau: 30, shape: ShapeOptions::default() }
    }
}

/// Spot × strike sweep at one maturity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriceConfig {
    pub spots: Vec<f64>,
    pub strikes: Vec<f64>,
    pub maturity: f64,
    pub kind: OptionKind,
    pub payoff_mode: PayoffMode,
}

impl Default for PriceConfig {
    fn default() -> Self {
        let sweep = vec![950.0, 975.0, 985.0, 1000.0, 1015.0, 1025.0, 1050.0];
        Self { spots: sweep.clone(), strikes: sweep, maturity: 0.25, kind: OptionKind::Call, payoff_mode: PayoffMode::FarField }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub horizons: Vec<f64>,
    /// Paths simulated at every step for the Hurst estimate.
    pub hurst_paths: usize,
    pub hurst_horizon: f64,
    /// Sample paths written next to the MPR mean.
    pub mpr_samples: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { horizons: vec![0.0397, 0.0833, 0.25, 0.5, 1.0, 2.0, 2.8, 3.0], hurst_paths: 200, hurst_horizon: 3.0, mpr_samples: 5 }
    }
}

/// Calibration settings; the model section supplies the fixed parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibConfig {
    pub spot_band: f64,
    /// Explicit boxes. When empty, `perturb_names` get ±`perturb_fraction`
    /// boxes around the model values.
    pub bounds: Vec<ParamBound>,
    pub perturb_names: Vec<String>,
    pub perturb_fraction: f64,
    pub r_bar: f64,
    pub x_hat_offset: f64,
    pub de: DeSettings,
    pub tie_eta_bar: bool,
    /// Without a quotes file, price these strikes with the model itself.
    pub synthetic: Option<SyntheticQuotes>,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            spot_band: 1.05,
            bounds: Vec::new(),
            perturb_names: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
            perturb_fraction: 0.1,
            r_bar: 0.02,
            x_hat_offset: -2.0,
            de: DeSettings::default(),
            tie_eta_bar: true,
            synthetic: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticQuotes {
    pub spot: f64,
    pub maturity: f64,
    pub strikes: Vec<f64>,
    pub kind: OptionKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out_dir: Option<PathBuf>,
    pub quotes: Option<PathBuf>,
    /// Write the 𝓒⁰ nodal field of the price run in the binary dump format.
    pub dump: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grid: GridConfig,
    pub pricer: PricerKind,
    pub price: PriceConfig,
    pub sim: SimConfig,
    pub stats: StatsConfig,
    pub calib: CalibConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: presets::calib_param(),
            grid: GridConfig::default(),
            pricer: PricerKind::default(),
            price: PriceConfig::default(),
            sim: SimConfig { horizon: 3.0, ..SimConfig::default() },
            stats: StatsConfig::default(),
            calib: CalibConfig::default(),
            io: IoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_slice(&std::fs::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sim.validate()?;
        let g = &self.grid;
        if [g.n_x, g.n_y, g.n_theta].iter().any(|&n| n < 2) || g.n_tau < 1 {
            return Err(Error::Domain("grid needs at least 2 nodes per axis and 1 time step".into()));
        }
        let p = &self.price;
        if p.spots.iter().chain(&p.strikes).any(|v| !(*v > 0.0 && v.is_finite())) || !(p.maturity > 0.0 && p.maturity.is_finite()) {
            return Err(Error::Domain("spots, strikes and maturity must be positive".into()));
        }
        if self.stats.horizons.iter().any(|h| !(*h > 0.0 && *h <= self.sim.horizon + self.sim.dt)) {
            return Err(Error::Domain("stats horizons must lie in (0, sim.horizon]".into()));
        }
        if !(self.calib.spot_band > 0.0) || !(self.calib.perturb_fraction > 0.0) {
            return Err(Error::Domain("spot_band and perturb_fraction must be positive".into()));
        }
        if let Some(name) = self.calib.perturb_names.iter().find(|n| !PARAM_NAMES.contains(&n.as_str())) {
            return Err(Error::Domain(format!("unknown parameter `{name}`")));
        }
        Ok(())
    }

    pub fn pricer_config(&self) -> PricerConfig {
        PricerConfig { nodes: [self.grid.n_x, self.grid.n_y, self.grid.n_theta], n_tau: self.grid.n_tau, payoff_mode: self.price.payoff_mode }
    }

    /// Calibration problem for the given quotes.
    pub fn calibration_problem(&self, quotes: Vec<QuoteRecord>) -> Result<CalibrationProblem> {
        let c = &self.calib;
        let bounds = if c.bounds.is_empty() {
            let names: Vec<&str> = c.perturb_names.iter().map(String::as_str).collect();
            CalibrationProblem::perturbed_bounds(&self.model, &names, c.perturb_fraction)?
        } else {
            c.bounds.clone()
        };
        let mut p = CalibrationProblem::new(quotes, self.model.clone(), bounds);
        p.r_bar = c.r_bar;
        p.x_hat_offset = c.x_hat_offset;
        p.de = c.de.clone();
        p.pricer = self.pricer_config();
        p.tie_eta_bar = c.tie_eta_bar;
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json_slice(b"{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip_and_unknown_fields() {
        let cfg = RunConfig::default();
        let s = serde_json::to_vec(&cfg).unwrap();
        assert_eq!(RunConfig::from_json_slice(&s).unwrap(), cfg);
        assert!(RunConfig::from_json_slice(br#"{"grid": {"n_x": 20, "nx": 3}}"#).is_err());
        assert!(RunConfig::from_json_slice(br#"{"pricer": "fd"}"#).is_err());
        assert!(RunConfig::from_json_slice(br#"{"grid": {"n_x": 1}}"#).is_err());
    }

    #[test]
    fn calibration_problem_uses_perturbed_boxes() {
        let cfg = RunConfig::default();
        let p = cfg.calibration_problem(Vec::new()).unwrap();
        assert_eq!(p.bounds.len(), 15);
        assert_eq!(p.population(), 150);
        assert!(p.bounds.iter().all(|b| b.lower < b.upper));
    }
}
