//! Poisson common-age-effect mortality model.
//!
//! Deaths are Poisson with mean `E[x,t,c] * exp(alpha[x] + beta[x] * kappa[t,c])`.
//! The age effects are shared by all populations, so the period effects are
//! on a common scale. After fitting, `(alpha, beta, kappa)` is normalised so
//! that `alpha[x_r] = 0` and `beta[x_r] = 1`, which makes `kappa` the fitted
//! log death rate at the reference age.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::*;
use crate::panel::KappaPanel;

/// Default reference age.
pub const DEFAULT_REFERENCE_AGE: u32 = 70;

/// Deaths and central exposures on an age x year x population grid.
///
/// Cells are stored as `index = (x * T + t) * C + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MortalityDataset {
    pub ages: Vec<u32>,
    pub years: Vec<i32>,
    pub populations: Vec<String>,
    pub deaths: Vec<f64>,
    pub exposures: Vec<f64>,
}

impl MortalityDataset {
    pub fn new(
        ages: Vec<u32>,
        years: Vec<i32>,
        populations: Vec<String>,
        deaths: Vec<f64>,
        exposures: Vec<f64>,
    ) -> Result<Self> {
        let n = ages.len() * years.len() * populations.len();
        if n == 0 {
            return Err(Error::Shape("empty age, year or population set".into()));
        }
        if deaths.len() != n || exposures.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} cells, got {} deaths and {} exposures",
                deaths.len(),
                exposures.len()
            )));
        }
        if deaths.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Data("deaths must be finite and non-negative".into()));
        }
        if exposures.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Data("exposures must be finite and non-negative".into()));
        }
        Ok(MortalityDataset {
            ages,
            years,
            populations,
            deaths,
            exposures,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.ages.len(), self.years.len(), self.populations.len())
    }

    pub fn index(&self, x: usize, t: usize, c: usize) -> usize {
        let (_, nt, nc) = self.shape();
        (x * nt + t) * nc + c
    }

    /// Cells with zero exposure but positive deaths; they are left out of
    /// the likelihood.
    pub fn inconsistent_cells(&self) -> usize {
        self.deaths
            .iter()
            .zip(&self.exposures)
            .filter(|(d, e)| **e == 0.0 && **d > 0.0)
            .count()
    }

    /// CSV with columns `population,year,age,deaths,exposure`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["population", "year", "age", "deaths", "exposure"])?;
        let (nx, nt, nc) = self.shape();
        for c in 0..nc {
            for t in 0..nt {
                for x in 0..nx {
                    let i = self.index(x, t, c);
                    w.write_record([
                        self.populations[c].clone(),
                        self.years[t].to_string(),
                        self.ages[x].to_string(),
                        format!("{:?}", self.deaths[i]),
                        format!("{:?}", self.exposures[i]),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read the layout written by [`MortalityDataset::write_csv`]. Every
    /// combination of the listed populations, years and ages must appear once.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            population: String,
            year: i32,
            age: u32,
            deaths: f64,
            exposure: f64,
        }
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            rows.push(rec.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })?);
        }
        let mut pops: Vec<String> = Vec::new();
        for r in &rows {
            if !pops.contains(&r.population) {
                pops.push(r.population.clone());
            }
        }
        let mut years: Vec<i32> = rows.iter().map(|r| r.year).collect();
        years.sort_unstable();
        years.dedup();
        let mut ages: Vec<u32> = rows.iter().map(|r| r.age).collect();
        ages.sort_unstable();
        ages.dedup();
        let n = ages.len() * years.len() * pops.len();
        let mut deaths = vec![f64::NAN; n];
        let mut exposures = vec![f64::NAN; n];
        let (nt, nc) = (years.len(), pops.len());
        for (line, r) in rows.iter().enumerate() {
            let x = ages.binary_search(&r.age).expect("age collected");
            let t = years.binary_search(&r.year).expect("year collected");
            let c = pops.iter().position(|p| *p == r.population).expect("population collected");
            let i = (x * nt + t) * nc + c;
            if !deaths[i].is_nan() {
                return Err(Error::Parse {
                    line: line + 2,
                    message: format!("duplicate cell {} {} {}", r.population, r.year, r.age),
                });
            }
            deaths[i] = r.deaths;
            exposures[i] = r.exposure;
        }
        if deaths.iter().any(|d| d.is_nan()) {
            return Err(Error::Data("dataset CSV does not cover the full grid".into()));
        }
        Self::new(ages, years, pops, deaths, exposures)
    }
}

/// Age and period effects of the common-age-effect model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeParams {
    pub ages: Vec<u32>,
    pub years: Vec<i32>,
    pub populations: Vec<String>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `kappa[t * C + c]`
    pub kappa: Vec<f64>,
    pub reference_age: u32,
}

impl CaeParams {
    pub fn kappa(&self, t: usize, c: usize) -> f64 {
        self.kappa[t * self.populations.len() + c]
    }

    fn reference_index(&self) -> Result<usize> {
        self.ages
            .iter()
            .position(|&a| a == self.reference_age)
            .ok_or_else(|| Error::Spec(format!("reference age {} not among fitted ages", self.reference_age)))
    }

    fn log_rate(&self, x: usize, t: usize, c: usize) -> f64 {
        self.alpha[x] + self.beta[x] * self.kappa(t, c)
    }

    fn check_against(&self, data: &MortalityDataset) -> Result<()> {
        let (nx, nt, nc) = data.shape();
        if self.alpha.len() != nx || self.beta.len() != nx || self.kappa.len() != nt * nc {
            return Err(Error::Shape(format!(
                "parameters do not match a {nx} x {nt} x {nc} dataset"
            )));
        }
        Ok(())
    }

    /// CSV with columns `age,alpha,beta`.
    pub fn write_age_effects_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["age", "alpha", "beta"])?;
        for (x, age) in self.ages.iter().enumerate() {
            w.write_record([age.to_string(), format!("{:?}", self.alpha[x]), format!("{:?}", self.beta[x])])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Poisson log-likelihood without the `log(D!)` term, over cells with
/// positive exposure.
pub fn poisson_log_likelihood(params: &CaeParams, data: &MortalityDataset) -> Result<f64> {
    params.check_against(data)?;
    let (nx, nt, nc) = data.shape();
    let mut total = 0.0;
    for x in 0..nx {
        for t in 0..nt {
            for c in 0..nc {
                let i = data.index(x, t, c);
                let (d, e) = (data.deaths[i], data.exposures[i]);
                if e > 0.0 {
                    let eta = params.log_rate(x, t, c);
                    total += d * (e.ln() + eta) - e * eta.exp();
                }
            }
        }
    }
    Ok(total)
}

/// Poisson deviance of `params` on `data`.
pub fn deviance(params: &CaeParams, data: &MortalityDataset) -> Result<f64> {
    params.check_against(data)?;
    let (nx, nt, nc) = data.shape();
    let mut total = 0.0;
    for x in 0..nx {
        for t in 0..nt {
            for c in 0..nc {
                let i = data.index(x, t, c);
                let (d, e) = (data.deaths[i], data.exposures[i]);
                if e > 0.0 {
                    let fitted = e * params.log_rate(x, t, c).exp();
                    let term = if d > 0.0 { d * (d / fitted).ln() } else { 0.0 };
                    total += 2.0 * (term - (d - fitted));
                }
            }
        }
    }
    Ok(total)
}

/// Score (gradient of the log-likelihood) for every parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeScore {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl CaeScore {
    pub fn max_abs(&self) -> f64 {
        self.alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.kappa)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn score(params: &CaeParams, data: &MortalityDataset) -> Result<CaeScore> {
    params.check_against(data)?;
    let (nx, nt, nc) = data.shape();
    let mut s = CaeScore {
        alpha: vec![0.0; nx],
        beta: vec![0.0; nx],
        kappa: vec![0.0; nt * nc],
    };
    for x in 0..nx {
        for t in 0..nt {
            for c in 0..nc {
                let i = data.index(x, t, c);
                let e = data.exposures[i];
                if e > 0.0 {
                    let r = data.deaths[i] - e * params.log_rate(x, t, c).exp();
                    s.alpha[x] += r;
                    s.beta[x] += r * params.kappa(t, c);
                    s.kappa[t * nc + c] += r * params.beta[x];
                }
            }
        }
    }
    Ok(s)
}

/// Normalise to `alpha[x_r] = 0`, `beta[x_r] = 1` without changing any
/// fitted rate.
pub fn apply_identification(params: &CaeParams) -> Result<CaeParams> {
    let r = params.reference_index()?;
    let k1 = params.alpha[r];
    let k2 = params.beta[r];
    if k2 == 0.0 || !k2.is_finite() {
        return Err(Error::Degenerate(format!(
            "beta at reference age {} is {k2}",
            params.reference_age
        )));
    }
    let mut out = params.clone();
    for x in 0..out.alpha.len() {
        out.alpha[x] = params.alpha[x] - k1 / k2 * params.beta[x];
        out.beta[x] = params.beta[x] / k2;
    }
    for k in out.kappa.iter_mut() {
        *k = k1 + k2 * *k;
    }
    out.alpha[r] = 0.0;
    out.beta[r] = 1.0;
    Ok(out)
}

/// `exp(alpha[x] + beta[x] kappa[t, c])` in dataset cell order.
pub fn fitted_rates(params: &CaeParams) -> Vec<f64> {
    let (nx, nt, nc) = (params.ages.len(), params.years.len(), params.populations.len());
    let mut out = Vec::with_capacity(nx * nt * nc);
    for x in 0..nx {
        for t in 0..nt {
            for c in 0..nc {
                out.push(params.log_rate(x, t, c).exp());
            }
        }
    }
    out
}

/// Period effects as a panel for the time-series fit.
pub fn extract_period_effects(params: &CaeParams) -> Result<KappaPanel> {
    KappaPanel::new(params.kappa.clone(), params.years.clone(), params.populations.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaeFitOptions {
    pub reference_age: u32,
    /// Relative change in deviance between sweeps treated as converged.
    pub tolerance: f64,
    pub max_iter: usize,
    /// When set, sweeps also continue until every score component is below
    /// this in absolute value.
    pub score_tolerance: Option<f64>,
}

impl Default for CaeFitOptions {
    fn default() -> Self {
        CaeFitOptions {
            reference_age: DEFAULT_REFERENCE_AGE,
            tolerance: 1e-10,
            max_iter: 10_000,
            score_tolerance: Some(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeFit {
    /// Identified parameters.
    pub params: CaeParams,
    pub log_likelihood: f64,
    pub deviance: f64,
    pub iterations: usize,
    /// Deviance after the initial point and after every sweep.
    pub deviance_trace: Vec<f64>,
}

/// One guarded Newton step for a scalar parameter whose contribution to the
/// log-likelihood is `sum_j d_j w_j theta - e_j exp(o_j + w_j theta)`.
fn newton_1d(theta: f64, cells: &[(f64, f64, f64, f64)]) -> f64 {
    // cells: (deaths, exposure, offset, weight)
    let partial = |th: f64| -> f64 {
        cells
            .iter()
            .map(|&(d, e, o, w)| d * (o + w * th) - e * (o + w * th).exp())
            .sum()
    };
    let (mut s, mut info) = (0.0, 0.0);
    for &(d, e, o, w) in cells {
        let mu = e * (o + w * theta).exp();
        s += (d - mu) * w;
        info += mu * w * w;
    }
    if !(info > 0.0) || s == 0.0 {
        return theta;
    }
    let mut step = s / info;
    // Close to the optimum the gain is below what the sum can resolve.
    let scale: f64 = cells.iter().map(|&(d, e, _, _)| d.abs() + e.abs()).sum();
    if 0.5 * s * step <= 1e-13 * scale.max(1.0) {
        return theta + step;
    }
    let base = partial(theta);
    for _ in 0..60 {
        let cand = theta + step;
        let v = partial(cand);
        if v.is_finite() && v >= base {
            return cand;
        }
        step *= 0.5;
    }
    theta
}

/// Fit the common-age-effect model by cyclic one-dimensional Newton updates
/// of `alpha`, `kappa` and `beta`, then identify.
pub fn fit_cae(data: &MortalityDataset, options: &CaeFitOptions) -> Result<CaeFit> {
    let (nx, nt, nc) = data.shape();
    if !data.ages.contains(&options.reference_age) {
        return Err(Error::Spec(format!(
            "reference age {} not in the age range",
            options.reference_age
        )));
    }
    if !(options.tolerance >= 0.0) {
        return Err(Error::domain("tolerance", "tolerance must be non-negative"));
    }
    for x in 0..nx {
        if (0..nt * nc).all(|tc| data.exposures[data.index(x, tc / nc, tc % nc)] <= 0.0) {
            return Err(Error::Data(format!("age {} has no positive exposure", data.ages[x])));
        }
    }
    for t in 0..nt {
        for c in 0..nc {
            if (0..nx).all(|x| data.exposures[data.index(x, t, c)] <= 0.0) {
                return Err(Error::Data(format!(
                    "year {} population {} has no positive exposure",
                    data.years[t], data.populations[c]
                )));
            }
        }
    }
    let bad = data.inconsistent_cells();
    if bad > 0 {
        log::warn!("{bad} cells with deaths but zero exposure excluded from the fit");
    }

    let alpha = (0..nx)
        .map(|x| {
            let (mut d, mut e) = (0.0, 0.0);
            for t in 0..nt {
                for c in 0..nc {
                    let i = data.index(x, t, c);
                    if data.exposures[i] > 0.0 {
                        d += data.deaths[i];
                        e += data.exposures[i];
                    }
                }
            }
            (d / e).max(1e-8).ln()
        })
        .collect();
    let mut p = CaeParams {
        ages: data.ages.clone(),
        years: data.years.clone(),
        populations: data.populations.clone(),
        alpha,
        beta: vec![1.0; nx],
        kappa: vec![0.0; nt * nc],
        reference_age: options.reference_age,
    };

    let cells_for_age = |p: &CaeParams, x: usize, which: Which| -> Vec<(f64, f64, f64, f64)> {
        let mut v = Vec::with_capacity(nt * nc);
        for t in 0..nt {
            for c in 0..nc {
                let i = data.index(x, t, c);
                let e = data.exposures[i];
                if e > 0.0 {
                    let k = p.kappa(t, c);
                    v.push(match which {
                        Which::Alpha => (data.deaths[i], e, p.beta[x] * k, 1.0),
                        Which::Beta => (data.deaths[i], e, p.alpha[x], k),
                    });
                }
            }
        }
        v
    };

    let mut trace = vec![deviance(&p, data)?];
    let mut iterations = 0;
    loop {
        if iterations >= options.max_iter {
            return Err(Error::Convergence {
                iterations,
                message: format!(
                    "deviance trace tail: {:?}",
                    &trace[trace.len().saturating_sub(5)..]
                ),
            });
        }
        iterations += 1;

        let new_alpha: Vec<f64> = (0..nx)
            .into_par_iter()
            .map(|x| {
                let cells = cells_for_age(&p, x, Which::Alpha);
                newton_1d(p.alpha[x], &cells)
            })
            .collect();
        p.alpha = new_alpha;

        let new_kappa: Vec<f64> = (0..nt * nc)
            .into_par_iter()
            .map(|tc| {
                let (t, c) = (tc / nc, tc % nc);
                let cells: Vec<(f64, f64, f64, f64)> = (0..nx)
                    .filter_map(|x| {
                        let i = data.index(x, t, c);
                        let e = data.exposures[i];
                        (e > 0.0).then(|| (data.deaths[i], e, p.alpha[x], p.beta[x]))
                    })
                    .collect();
                newton_1d(p.kappa[tc], &cells)
            })
            .collect();
        p.kappa = new_kappa;

        let new_beta: Vec<f64> = (0..nx)
            .into_par_iter()
            .map(|x| {
                let cells = cells_for_age(&p, x, Which::Beta);
                newton_1d(p.beta[x], &cells)
            })
            .collect();
        p.beta = new_beta;

        let dev = deviance(&p, data)?;
        let last = *trace.last().expect("non-empty trace");
        trace.push(dev);
        // relative change, measured against at least one unit of deviance
        if (last - dev).abs() <= options.tolerance * dev.abs().max(1.0)
            && options
                .score_tolerance
                .is_none_or(|tol| {
                    apply_identification(&p)
                        .and_then(|q| score(&q, data))
                        .is_ok_and(|s| s.max_abs() < tol)
                })
        {
            break;
        }
    }

    let params = apply_identification(&p)?;
    Ok(CaeFit {
        log_likelihood: poisson_log_likelihood(&params, data)?,
        deviance: *trace.last().expect("non-empty trace"),
        params,
        iterations,
        deviance_trace: trace,
    })
}

#[derive(Clone, Copy)]
enum Which {
    Alpha,
    Beta,
}
