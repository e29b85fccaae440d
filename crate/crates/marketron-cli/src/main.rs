use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use marketron::calibration::{calibrate, load_and_filter, synthetic_quotes};
use marketron::config::{PricerKind, RunConfig};
use marketron::mc::{annualized_moments, default_probability, ensemble_hurst, mpr_series, simulate, summary, PathStatus, SimConfig};
use marketron::oracle::black_scholes;
use marketron::rbf::{build_grid_with, write_dump, CollocationGrid, Dump};
use marketron::splitting::{self, OptionSpec, SplitContext, SplitField, SplitOptions};
use marketron::volterra::{self, VolterraOptions};

#[derive(Parser, Debug)]
#[command(name = "marketron", version, about = "Marketron pricing, calibration and simulation")]
struct Cli {
    /// JSON run configuration; every section is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["volterra", "splitting"])]
    pricer: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Price the spot × strike sweep and its difference to Black–Scholes.
    Price,
    /// Calibrate to quotes (or to synthetic quotes from the model).
    Calibrate,
    /// Simulate paths and write the per-time ensemble summary.
    Simulate,
    /// Annualized moments, default probability, Hurst exponent and the
    /// market price of risk series.
    Stats,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Price => "price",
            Command::Calibrate => "calibrate",
            Command::Simulate => "simulate",
            Command::Stats => "stats",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    started_unix: u64,
    wall_time_s: f64,
    threads: usize,
    seed: u64,
    outputs: Vec<String>,
    failures: usize,
    config: &'a RunConfig,
}

struct Outcome {
    outputs: Vec<PathBuf>,
    failures: usize,
}

/// Six significant digits.
fn fmt6(v: f64) -> String {
    if !v.is_finite() {
        return "NaN".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let digits = 5 - v.abs().log10().floor() as i32;
    if (-9..=9).contains(&digits) {
        format!("{:.*}", digits.max(0) as usize, v)
    } else {
        format!("{v:.5e}")
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.iter().map(|v| fmt6(*v)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn grid_for(cfg: &RunConfig, spots: &[f64]) -> Result<Arc<CollocationGrid>> {
    let g = &cfg.grid;
    Ok(Arc::new(build_grid_with(spots, &cfg.model, [g.n_x, g.n_y, g.n_theta], g.n_tau, cfg.price.maturity, g.shape)?))
}

fn price_row(cfg: &RunConfig, grid: &Arc<CollocationGrid>, spot: f64, options: &[OptionSpec]) -> marketron::Result<Vec<f64>> {
    let state0 = cfg.model.state0(spot);
    let res = match cfg.pricer {
        PricerKind::Splitting => {
            let opts = SplitOptions { payoff_mode: cfg.price.payoff_mode, ..SplitOptions::default() };
            splitting::price_indifference(grid.clone(), &cfg.model, options, state0, &opts)?
        }
        PricerKind::Volterra => {
            let opts = VolterraOptions { payoff_mode: cfg.price.payoff_mode, ..VolterraOptions::default() };
            volterra::price(grid.clone(), &cfg.model, options, state0, &opts)?
        }
    };
    Ok(res.into_iter().map(|r| r.price).collect())
}

fn zero_payoff_field(cfg: &RunConfig, grid: &Arc<CollocationGrid>) -> marketron::Result<Vec<f64>> {
    match cfg.pricer {
        PricerKind::Splitting => {
            let ctx = SplitContext::new(&cfg.model, grid.clone())?;
            Ok(splitting::march(SplitField::constant(grid, 0.0), &ctx, &SplitOptions::default().plan)?.values)
        }
        PricerKind::Volterra => {
            let ws = volterra::assemble(grid.clone(), &cfg.model, &[])?;
            Ok(ws.march(None, &VolterraOptions::default())?.0)
        }
    }
}

fn cmd_price(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let p = &cfg.price;
    let grid = grid_for(cfg, &p.spots)?;
    let options: Vec<OptionSpec> = p.strikes.iter().map(|&strike| OptionSpec { strike, kind: p.kind }).collect();
    let t0 = Instant::now();
    let mut failures = 0;
    let mut prices = Vec::new();
    let mut diffs = Vec::new();
    for &spot in &p.spots {
        let row = price_row(cfg, &grid, spot, &options).unwrap_or_else(|e| {
            log::error!("pricing at spot {spot} failed: {e}");
            vec![f64::NAN; options.len()]
        });
        failures += row.iter().filter(|v| !v.is_finite()).count();
        let m = &cfg.model;
        let bs: Vec<f64> = p.strikes.iter().map(|&k| black_scholes(spot, k, p.maturity, m.r, m.q, m.sigma, p.kind)).collect();
        diffs.push(std::iter::once(spot).chain(row.iter().zip(&bs).map(|(a, b)| a - b)).collect());
        prices.push(std::iter::once(spot).chain(row).collect());
    }
    log::info!("priced {} options in {:.3} s", p.spots.len() * p.strikes.len(), t0.elapsed().as_secs_f64());
    let header: Vec<String> = std::iter::once("spot".to_string()).chain(p.strikes.iter().map(|k| fmt6(*k))).collect();
    let (pp, dp) = (out.join("prices.csv"), out.join("bs_diff.csv"));
    write_csv(&pp, &header, &prices)?;
    write_csv(&dp, &header, &diffs)?;
    let mut outputs = vec![pp, dp];
    if let Some(path) = &cfg.io.dump {
        let values = zero_payoff_field(cfg, &grid)?;
        let [n_x, n_y, n_theta] = grid.dims().map(|d| d as u64);
        std::fs::write(path, write_dump(&Dump { n_x, n_y, n_theta, eps: grid.eps, data: values })).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path.clone());
    }
    Ok(Outcome { outputs, failures })
}

fn cmd_calibrate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let quotes = match (&cfg.io.quotes, &cfg.calib.synthetic) {
        (Some(path), _) => load_and_filter(path, cfg.calib.spot_band)?,
        (None, Some(s)) => {
            let strikes: Vec<_> = s.strikes.iter().map(|&k| (k, s.kind)).collect();
            let q = synthetic_quotes(&cfg.model, s.spot, s.maturity, &strikes, &cfg.pricer_config())?;
            marketron::calibration::filter_quotes(q, cfg.calib.spot_band)
        }
        (None, None) => bail!("calibration needs io.quotes or calib.synthetic"),
    };
    if quotes.is_empty() {
        bail!("no quotes left after filtering");
    }
    let problem = cfg.calibration_problem(quotes)?;
    let report = calibrate(&problem)?;
    let failures = if report.residuals.is_empty() { problem.quotes.len() } else { report.residuals.iter().filter(|r| !r.is_finite()).count() };
    log::info!("calibration: fitness {:.6e}, relative RMSE {:.4}, {} generations", report.fitness, report.relative_rmse, report.generations);
    let path = out.join("calibration.json");
    write_json(&path, &report)?;
    Ok(Outcome { outputs: vec![path], failures })
}

fn diverged(status: &[PathStatus]) -> usize {
    status.iter().filter(|s| matches!(s, PathStatus::Diverged { .. })).count()
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let ens = simulate(&cfg.model, &cfg.sim)?;
    let rows = summary(&ens, &cfg.model)?;
    let path = out.join("ensemble.csv");
    let header = ["time", "mean_x", "mean_y", "mean_theta", "default_frac", "mpr_mean"].map(String::from);
    let data: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.time, r.mean_x, r.mean_y, r.mean_theta, r.default_frac, r.mpr_mean]).collect();
    write_csv(&path, &header, &data)?;
    Ok(Outcome { outputs: vec![path], failures: diverged(&ens.status) })
}

#[derive(Serialize)]
struct StatsSummary {
    default_probability: f64,
    default_probability_bp: f64,
    hurst: f64,
    surviving_paths: usize,
    diverged_paths: usize,
}

fn cmd_stats(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let st = &cfg.stats;
    let mut sim = cfg.sim.clone();
    sim.record_horizons(&st.horizons);
    let ens = simulate(&cfg.model, &sim)?;
    let rows = annualized_moments(&ens, &st.horizons)?;
    let stats_path = out.join("stats.csv");
    let header = ["horizon", "mean", "volatility", "skewness", "kurtosis"].map(String::from);
    write_csv(&stats_path, &header, &rows.iter().map(|r| vec![r.horizon, r.mean, r.volatility, r.skewness, r.excess_kurtosis]).collect::<Vec<_>>())?;

    let mpr = mpr_series(&ens, &cfg.model, st.mpr_samples)?;
    let mpr_path = out.join("mpr.csv");
    let header: Vec<String> = ["time", "mpr_mean"].map(String::from).into_iter().chain((0..mpr.samples.len()).map(|i| format!("path_{i}"))).collect();
    let data: Vec<Vec<f64>> = (0..mpr.times.len()).map(|k| [mpr.times[k], mpr.mean[k]].into_iter().chain(mpr.samples.iter().map(|s| s[k])).collect()).collect();
    write_csv(&mpr_path, &header, &data)?;

    let hurst_cfg = SimConfig { n_paths: st.hurst_paths, horizon: st.hurst_horizon, record_every: 1, record_times: Vec::new(), ..cfg.sim.clone() };
    let hurst = ensemble_hurst(&simulate(&cfg.model, &hurst_cfg)?, st.hurst_paths)?;
    let pd = default_probability(&ens);
    let summary = StatsSummary {
        default_probability: pd,
        default_probability_bp: pd * 1e4,
        hurst,
        surviving_paths: (0..ens.n_paths()).filter(|&i| ens.is_alive(i)).count(),
        diverged_paths: diverged(&ens.status),
    };
    let sum_path = out.join("stats.json");
    write_json(&sum_path, &summary)?;
    Ok(Outcome { outputs: vec![stats_path, mpr_path, sum_path], failures: summary.diverged_paths })
}

fn run(cli: Cli) -> Result<usize> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(p) = &cli.pricer {
        cfg.pricer = p.parse()?;
    }
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
        cfg.calib.de.seed = seed;
    }
    if let Ok(v) = std::env::var("MARKETRON_THREADS") {
        let n: usize = v.parse().with_context(|| format!("MARKETRON_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = cli.out.clone().or_else(|| cfg.io.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let outcome = match cli.command {
        Command::Price => cmd_price(&cfg, &out)?,
        Command::Calibrate => cmd_calibrate(&cfg, &out)?,
        Command::Simulate => cmd_simulate(&cfg, &out)?,
        Command::Stats => cmd_stats(&cfg, &out)?,
    };
    let seed = match cli.command {
        Command::Calibrate => cfg.calib.de.seed,
        _ => cfg.sim.seed,
    };
    let manifest = Manifest {
        command: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        started_unix,
        wall_time_s: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        seed,
        outputs: outcome.outputs.iter().map(|p| p.display().to_string()).collect(),
        failures: outcome.failures,
        config: &cfg,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(outcome.failures)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} item(s) failed; see the log and manifest.json");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fmt6;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(86.97123456), "86.9712");
        assert_eq!(fmt6(1000.0), "1000.00");
        assert_eq!(fmt6(-0.0123456789), "-0.0123457");
        assert_eq!(fmt6(1.5e-9), "1.50000e-9");
        assert_eq!(fmt6(f64::NAN), "NaN");
    }
}
