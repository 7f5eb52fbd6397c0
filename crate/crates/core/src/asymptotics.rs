//! Long-run drift and spread of the extremes.
//!
//! For two populations with common `lambda` the normalised spread
//! `(1 - lambda)(M_t - m_t)/s` is a reflected AR(1) chain whose stationary
//! law is half-normal with scale `sigma_tilde`. That yields closed forms for
//! the limiting drift of the minimum and the mean spread. For more
//! populations there is no closed form and the same quantities are
//! estimated by Monte Carlo.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::par::*;
use crate::params::{effective_spread_s, ModelParams};
use crate::simulate::{advance, derive_seed, path_rng, NoiseModel};

/// Reversion grid of the published tables.
pub const TABLE_LAMBDAS: [f64; 6] = [0.0125, 0.025, 0.05, 0.1, 0.2, 0.4];
/// Population sizes of the published tables.
pub const TABLE_POPULATIONS: [usize; 6] = [2, 3, 4, 8, 16, 32];

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(
            "lambda",
            format!("lambda must lie in (0,1), got {lambda}"),
        ))
    }
}

fn check_s(s: f64) -> Result<()> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::domain("s", format!("s must be positive, got {s}")))
    }
}

/// `f(x) = x Phi(-x) - phi(x)`: expected increment of the minimum, in
/// units of `s`, given normalised spread `x`.
pub fn f_function(x: f64) -> f64 {
    x * normal::cdf(-x) - normal::pdf(x)
}

/// Scale of the half-normal stationary law of the normalised spread.
pub fn sigma_tilde(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok((1.0 - lambda) / (lambda * (2.0 - lambda)).sqrt())
}

/// Limit of `E[m_{t+1} - m_t]` for two populations.
pub fn asymptotic_drift(mu: f64, lambda: f64, s: f64) -> Result<f64> {
    check_lambda(lambda)?;
    check_s(s)?;
    Ok(mu - s * (lambda / (2.0 * PI * (2.0 - lambda))).sqrt())
}

/// Limit of `E[M_t - m_t]` for two populations.
pub fn asymptotic_spread(lambda: f64, s: f64) -> Result<f64> {
    check_lambda(lambda)?;
    check_s(s)?;
    Ok(s * (2.0 / (lambda * PI * (2.0 - lambda))).sqrt())
}

/// Stationary distribution function of `M_t - m_t`.
pub fn stationary_spread_cdf(x: f64, lambda: f64, s: f64) -> Result<f64> {
    let st = sigma_tilde(lambda)?;
    check_s(s)?;
    if !(x >= 0.0) {
        return Err(Error::domain("x", format!("x must be non-negative, got {x}")));
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(2.0 * normal::cdf(x * (1.0 - lambda) / (s * st)) - 1.0)
}

/// Quantile of the stationary spread law.
pub fn stationary_spread_quantile(p: f64, lambda: f64, s: f64) -> Result<f64> {
    let st = sigma_tilde(lambda)?;
    check_s(s)?;
    if !(0.0..1.0).contains(&p) {
        return Err(Error::domain("p", "probability must lie in [0,1)"));
    }
    Ok(s * st * normal::quantile(0.5 + 0.5 * p) / (1.0 - lambda))
}

/// Closed-form two-population quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPopAsymptotics {
    pub drift: f64,
    pub spread: f64,
    pub s: f64,
    pub sigma_tilde: f64,
}

impl TwoPopAsymptotics {
    /// `rho` is the correlation between the two noise terms.
    pub fn new(mu: f64, lambda: f64, sigma1: f64, sigma2: f64, rho: f64) -> Result<Self> {
        let s = effective_spread_s(sigma1, sigma2, rho)?;
        Self::from_s(mu, lambda, s)
    }

    pub fn from_s(mu: f64, lambda: f64, s: f64) -> Result<Self> {
        Ok(TwoPopAsymptotics {
            drift: asymptotic_drift(mu, lambda, s)?,
            spread: asymptotic_spread(lambda, s)?,
            s,
            sigma_tilde: sigma_tilde(lambda)?,
        })
    }
}

/// Default burn-in: `20 / lambda` steps.
pub fn default_burn_in(lambda: f64) -> usize {
    (20.0 / lambda).ceil() as usize
}

/// Settings for one Monte Carlo estimate of the extremal drift and spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub populations: usize,
    pub lambda: f64,
    pub n_paths: usize,
    /// Total number of steps per path, burn-in included.
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub mu: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl McConfig {
    /// Table setting: unit noise, no correlation, no drift; default burn-in
    /// and a 500-step averaging window.
    pub fn table(populations: usize, lambda: f64, n_paths: usize, seed: u64) -> Self {
        let burn_in = default_burn_in(lambda);
        McConfig {
            populations,
            lambda,
            n_paths,
            horizon: burn_in.saturating_add(500),
            burn_in,
            seed,
            mu: 0.0,
            sigma: 1.0,
            rho: 0.0,
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.horizon = self.burn_in.saturating_add(window);
        self
    }

    fn params(&self) -> ModelParams {
        let c = self.populations;
        ModelParams::shared(
            self.mu,
            0.0,
            self.lambda,
            vec![self.sigma; c],
            vec![self.rho; c],
        )
    }

    fn validate(&self) -> Result<()> {
        if self.populations < 2 {
            return Err(Error::domain("populations", "need at least 2 populations"));
        }
        check_lambda(self.lambda)?;
        if self.n_paths < 2 {
            return Err(Error::domain("n_paths", "need at least 2 paths for standard errors"));
        }
        if self.horizon < self.burn_in.saturating_add(2) {
            return Err(Error::domain(
                "horizon",
                "horizon must exceed burn_in by at least 2 steps",
            ));
        }
        self.params().validate()
    }
}

/// Monte Carlo estimate of the long-run extremal drift and spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub drift: f64,
    pub drift_se: f64,
    pub spread: f64,
    pub spread_se: f64,
    pub n_paths: usize,
    pub burn_in: usize,
    pub horizon: usize,
    pub seed: u64,
    /// First and second halves of the averaging window disagree by more
    /// than 4 standard errors.
    pub burn_in_suspect: bool,
}

struct PathStats {
    drift: f64,
    spread: f64,
    first_half: f64,
    second_half: f64,
}

fn run_path(cfg: &McConfig, params: &ModelParams, noise: &NoiseModel, index: usize) -> PathStats {
    let c = cfg.populations;
    let mut rng = path_rng(cfg.seed, index as u64);
    let mut kappa = vec![0.0; c];
    let mut prev = vec![0.0; c];
    let mut z = vec![0.0; c];
    for _ in 0..cfg.burn_in {
        noise.fill(&mut rng, &mut z);
        advance(&mut kappa, &mut prev, params, &z);
    }
    let minmax = |k: &[f64]| {
        k.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    let m_start = minmax(&kappa).0;
    let window = cfg.horizon - cfg.burn_in;
    let half = window / 2;
    let (mut first, mut second) = (0.0, 0.0);
    let mut m_end = m_start;
    for i in 0..window {
        noise.fill(&mut rng, &mut z);
        advance(&mut kappa, &mut prev, params, &z);
        let (lo, hi) = minmax(&kappa);
        if i < half {
            first += hi - lo;
        } else {
            second += hi - lo;
        }
        m_end = lo;
    }
    PathStats {
        drift: (m_end - m_start) / window as f64,
        spread: (first + second) / window as f64,
        first_half: first / half as f64,
        second_half: second / (window - half) as f64,
    }
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimate the long-run drift of the minimum and the mean spread
/// `M_t - m_t` by simulating independent paths from rest.
///
/// Each path contributes its time-averaged drift and spread over the
/// post-burn-in window; standard errors come from the spread of those
/// per-path averages.
pub fn mc_extremal_stats(cfg: &McConfig) -> Result<McEstimate> {
    cfg.validate()?;
    let params = cfg.params();
    let noise = NoiseModel::new(&params.rho);
    let stats: Vec<PathStats> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| run_path(cfg, &params, &noise, p))
        .collect();
    let (drift, drift_se) = mean_se(stats.iter().map(|s| s.drift));
    let (spread, spread_se) = mean_se(stats.iter().map(|s| s.spread));
    let (gap, gap_se) = mean_se(stats.iter().map(|s| s.second_half - s.first_half));
    let burn_in_suspect = gap.abs() > 4.0 * gap_se;
    if burn_in_suspect {
        log::warn!(
            "burn-in of {} steps looks short for C={} lambda={}: window halves differ by {:.4} ({:.1} SE)",
            cfg.burn_in,
            cfg.populations,
            cfg.lambda,
            gap,
            gap / gap_se
        );
    }
    Ok(McEstimate {
        drift,
        drift_se,
        spread,
        spread_se,
        n_paths: cfg.n_paths,
        burn_in: cfg.burn_in,
        horizon: cfg.horizon,
        seed: cfg.seed,
        burn_in_suspect,
    })
}

/// Terminal spread `M_T - m_T` of each of `cfg.n_paths` independent paths:
/// i.i.d. draws from (approximately) the stationary spread law.
pub fn terminal_spreads(cfg: &McConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let params = cfg.params();
    let noise = NoiseModel::new(&params.rho);
    let c = cfg.populations;
    Ok((0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            let mut kappa = vec![0.0; c];
            let mut prev = vec![0.0; c];
            let mut z = vec![0.0; c];
            for _ in 0..cfg.horizon {
                noise.fill(&mut rng, &mut z);
                advance(&mut kappa, &mut prev, &params, &z);
            }
            let lo = kappa.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = kappa.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .collect())
}

/// Monte Carlo and exact columns of the drift and spread tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTableResult {
    pub lambdas: Vec<f64>,
    pub populations: Vec<usize>,
    /// Closed form at `s = sqrt(2)` per lambda.
    pub exact_drift: Vec<f64>,
    pub exact_spread: Vec<f64>,
    /// `estimates[i][j]` for `lambdas[i]` and `populations[j]`.
    pub estimates: Vec<Vec<McEstimate>>,
    pub n_paths: usize,
    pub window: usize,
    pub seed: u64,
}

/// Run the Monte Carlo grid. Each cell draws from its own seed stream
/// derived from `seed` and the cell position.
pub fn reproduce_tables(
    lambdas: &[f64],
    populations: &[usize],
    n_paths: usize,
    window: usize,
    seed: u64,
) -> Result<McTableResult> {
    if lambdas.is_empty() || populations.is_empty() {
        return Err(Error::domain("grid", "lambda and population grids must be non-empty"));
    }
    let s = 2f64.sqrt();
    let mut exact_drift = Vec::with_capacity(lambdas.len());
    let mut exact_spread = Vec::with_capacity(lambdas.len());
    let mut estimates = Vec::with_capacity(lambdas.len());
    for (i, &lambda) in lambdas.iter().enumerate() {
        exact_drift.push(asymptotic_drift(0.0, lambda, s)?);
        exact_spread.push(asymptotic_spread(lambda, s)?);
        let mut row = Vec::with_capacity(populations.len());
        for (j, &c) in populations.iter().enumerate() {
            let cell_seed = derive_seed(seed, (i * populations.len() + j) as u64);
            let cfg = McConfig::table(c, lambda, n_paths, cell_seed).with_window(window);
            row.push(mc_extremal_stats(&cfg)?);
        }
        estimates.push(row);
    }
    Ok(McTableResult {
        lambdas: lambdas.to_vec(),
        populations: populations.to_vec(),
        exact_drift,
        exact_spread,
        estimates,
        n_paths,
        window,
        seed,
    })
}

/// Which of the two tables to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Drift,
    Spread,
}

impl McTableResult {
    /// CSV with `lambda`, the exact two-population column, then a value and
    /// standard-error column per population size.
    pub fn write_csv<W: Write>(&self, kind: TableKind, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["lambda".to_string(), "exact_C2".to_string()];
        for c in &self.populations {
            header.push(format!("sim_C{c}"));
            header.push(format!("se_C{c}"));
        }
        w.write_record(&header)?;
        for (i, lambda) in self.lambdas.iter().enumerate() {
            let exact = match kind {
                TableKind::Drift => self.exact_drift[i],
                TableKind::Spread => self.exact_spread[i],
            };
            let mut rec = vec![lambda.to_string(), format!("{exact:.6}")];
            for est in &self.estimates[i] {
                let (v, se) = match kind {
                    TableKind::Drift => (est.drift, est.drift_se),
                    TableKind::Spread => (est.spread, est.spread_se),
                };
                rec.push(format!("{v:.6}"));
                rec.push(format!("{se:.6}"));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
