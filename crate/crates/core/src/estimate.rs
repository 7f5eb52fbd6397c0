//! Gaussian maximum likelihood for the minimum-reversion model, BIC model
//! comparison and the pairwise AR(1) co-integration check.
//!
//! The likelihood conditions on the first two years. With
//! `e_t = dk_t - eta_{t-1}` and `N = T - 2` residual vectors,
//!
//! ```text
//! log L = -N/2 log|Sigma| - 1/2 sum_t e_t' Sigma^-1 e_t - N C/2 log(2 pi)
//! ```
//!
//! Optimisation runs in an unconstrained space: `sigma = exp(.)`,
//! `lambda = logistic(.)`, `zeta = tanh(.)`, `rho = tanh(.)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bfgs::{self, BfgsOptions};
use crate::error::{Error, Result};
use crate::par::*;
use crate::panel::KappaPanel;
use crate::params::{ModelParams, SharingScheme, State, ZetaDomain};
use crate::simulate::{derive_seed, simulate_panel};

/// One-step conditional mean of `dk_{t+1}` given the panel up to `t`.
pub fn conditional_mean(panel: &KappaPanel, params: &ModelParams, t: usize) -> Result<Vec<f64>> {
    check_shapes(panel, params)?;
    if t == 0 || t >= panel.n_times() {
        return Err(Error::Index {
            index: t,
            message: format!("need 1 <= t < {}", panel.n_times()),
        });
    }
    let m = panel.minimum(t);
    Ok((0..panel.n_populations())
        .map(|c| {
            let k = panel.get(t, c);
            params.mu[c] + params.zeta[c] * (k - panel.get(t - 1, c)) + params.lambda[c] * (m - k)
        })
        .collect())
}

fn check_shapes(panel: &KappaPanel, params: &ModelParams) -> Result<()> {
    if params.populations() != panel.n_populations() {
        return Err(Error::Shape(format!(
            "parameters for {} populations, panel has {}",
            params.populations(),
            panel.n_populations()
        )));
    }
    Ok(())
}

/// Regressors of the residual equations, precomputed once per panel.
struct Design {
    c: usize,
    n: usize,
    /// `dk_t`, `t = 2..T`
    y: Vec<f64>,
    /// `dk_{t-1}`
    lag: Vec<f64>,
    /// `m_{t-1} - kappa_{t-1}`
    gap: Vec<f64>,
}

impl Design {
    fn new(panel: &KappaPanel) -> Self {
        let c = panel.n_populations();
        let n = panel.n_times() - 2;
        let mut d = Design {
            c,
            n,
            y: Vec::with_capacity(n * c),
            lag: Vec::with_capacity(n * c),
            gap: Vec::with_capacity(n * c),
        };
        for t in 2..panel.n_times() {
            let m = panel.minimum(t - 1);
            for j in 0..c {
                d.y.push(panel.get(t, j) - panel.get(t - 1, j));
                d.lag.push(panel.get(t - 1, j) - panel.get(t - 2, j));
                d.gap.push(m - panel.get(t - 1, j));
            }
        }
        d
    }

    fn residuals(&self, p: &ModelParams) -> Vec<f64> {
        let c = self.c;
        (0..self.n * c)
            .map(|i| {
                let j = i % c;
                self.y[i] - p.mu[j] - p.zeta[j] * self.lag[i] - p.lambda[j] * self.gap[i]
            })
            .collect()
    }
}

/// Per-population partial derivatives of the log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalGradient {
    pub mu: Vec<f64>,
    pub zeta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Vec<f64>,
}

fn evaluate(design: &Design, p: &ModelParams, want_grad: bool) -> Result<(f64, Option<NaturalGradient>)> {
    let c = design.c;
    let n = design.n;
    let sigma = p.noise_covariance();
    let chol = sigma
        .cholesky()
        .ok_or_else(|| Error::LinAlg("noise covariance is not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    let e = design.residuals(p);
    let mut quad = 0.0;
    let mut q = vec![0.0; n * c];
    for t in 0..n {
        let et = &e[t * c..(t + 1) * c];
        let qt = &mut q[t * c..(t + 1) * c];
        for i in 0..c {
            let mut acc = 0.0;
            for j in 0..c {
                acc += inv[(i, j)] * et[j];
            }
            qt[i] = acc;
            quad += acc * et[i];
        }
    }
    let nf = n as f64;
    let log_l = -0.5 * nf * log_det - 0.5 * quad - 0.5 * nf * c as f64 * (2.0 * std::f64::consts::PI).ln();
    if !want_grad {
        return Ok((log_l, None));
    }

    let mut g = NaturalGradient {
        mu: vec![0.0; c],
        zeta: vec![0.0; c],
        lambda: vec![0.0; c],
        sigma: vec![0.0; c],
        rho: vec![0.0; c],
    };
    for i in 0..n * c {
        let j = i % c;
        g.mu[j] += q[i];
        g.zeta[j] += q[i] * design.lag[i];
        g.lambda[j] += q[i] * design.gap[i];
    }
    // dlogL/dSigma = 1/2 (Sigma^-1 S Sigma^-1 - N Sigma^-1) with S = sum e e'
    let qm = DMatrix::from_row_slice(n, c, &q);
    let gm = (qm.transpose() * &qm - inv * nf) * 0.5;
    for k in 0..c {
        let (sk, rk) = (p.sigma[k], p.rho[k]);
        let mut ds = 2.0 * sk * gm[(k, k)];
        let mut dr = 0.0;
        for j in 0..c {
            if j != k {
                ds += 2.0 * gm[(k, j)] * p.sigma[j] * rk * p.rho[j];
                dr += 2.0 * gm[(k, j)] * sk * p.sigma[j] * p.rho[j];
            }
        }
        g.sigma[k] = ds;
        g.rho[k] = dr;
    }
    Ok((log_l, Some(g)))
}

/// Exact Gaussian log-likelihood of the `T - 2` increment vectors.
pub fn log_likelihood(panel: &KappaPanel, params: &ModelParams) -> Result<f64> {
    check_shapes(panel, params)?;
    params.validate_with(ZetaDomain::Symmetric)?;
    Ok(evaluate(&Design::new(panel), params, false)?.0)
}

/// Log-likelihood and its analytic gradient in the natural parameters.
pub fn log_likelihood_gradient(panel: &KappaPanel, params: &ModelParams) -> Result<(f64, NaturalGradient)> {
    check_shapes(panel, params)?;
    params.validate_with(ZetaDomain::Symmetric)?;
    let (v, g) = evaluate(&Design::new(panel), params, true)?;
    Ok((v, g.expect("gradient requested")))
}

/// `K log(n) - 2 log L`.
pub fn bic(log_l: f64, k: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("n", "BIC needs at least one observation"));
    }
    Ok(k as f64 * (n as f64).ln() - 2.0 * log_l)
}

/// Observation count used in BIC: the `C (T - 2)` modelled increments.
pub fn observation_count(panel: &KappaPanel) -> usize {
    panel.n_populations() * (panel.n_times() - 2)
}

/// Maps between `ModelParams` and the unconstrained optimisation vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    c: usize,
    sharing: SharingScheme,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Layout {
    fn width(&self, shared: bool) -> usize {
        if shared {
            1
        } else {
            self.c
        }
    }

    fn n_mu(&self) -> usize {
        self.width(self.sharing.mu_shared)
    }

    fn n_zeta(&self) -> usize {
        self.width(self.sharing.zeta_shared)
    }

    fn n_lambda(&self) -> usize {
        if self.sharing.lambda_fixed_zero {
            0
        } else {
            self.width(self.sharing.lambda_shared)
        }
    }

    fn len(&self) -> usize {
        self.n_mu() + self.n_zeta() + self.n_lambda() + 2 * self.c
    }

    fn expand(block: &[f64], c: usize) -> Vec<f64> {
        if block.len() == 1 {
            vec![block[0]; c]
        } else {
            block.to_vec()
        }
    }

    fn to_params(&self, x: &[f64]) -> ModelParams {
        let c = self.c;
        let (mu, rest) = x.split_at(self.n_mu());
        let (zeta, rest) = rest.split_at(self.n_zeta());
        let (lambda, rest) = rest.split_at(self.n_lambda());
        let (sigma, rho) = rest.split_at(c);
        ModelParams {
            mu: Self::expand(mu, c),
            zeta: Self::expand(&zeta.iter().map(|v| v.tanh()).collect::<Vec<_>>(), c),
            lambda: if lambda.is_empty() {
                vec![0.0; c]
            } else {
                Self::expand(&lambda.iter().map(|&v| logistic(v)).collect::<Vec<_>>(), c)
            },
            sigma: sigma.iter().map(|v| v.exp()).collect(),
            rho: rho.iter().map(|v| v.tanh()).collect(),
            sharing: self.sharing,
        }
    }

    /// Inverse of `to_params`; shared blocks take the population average.
    fn from_params(&self, p: &ModelParams) -> Vec<f64> {
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let block = |v: &[f64], shared: bool, f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            if shared {
                vec![f(avg(v))]
            } else {
                v.iter().map(|&x| f(x)).collect()
            }
        };
        let clamp = |x: f64, lo: f64, hi: f64| x.max(lo).min(hi);
        let mut x = block(&p.mu, self.sharing.mu_shared, &|v| v);
        x.extend(block(&p.zeta, self.sharing.zeta_shared, &|v| clamp(v, -0.999, 0.999).atanh()));
        if !self.sharing.lambda_fixed_zero {
            x.extend(block(&p.lambda, self.sharing.lambda_shared, &|v| {
                let l = clamp(v, 1e-6, 1.0 - 1e-6);
                (l / (1.0 - l)).ln()
            }));
        }
        x.extend(p.sigma.iter().map(|s| s.max(1e-300).ln()));
        x.extend(p.rho.iter().map(|&r| clamp(r, -0.999, 0.999).atanh()));
        x
    }

    /// Chain rule from natural to unconstrained gradient.
    fn chain(&self, p: &ModelParams, g: &NaturalGradient) -> Vec<f64> {
        let c = self.c;
        let mut out = Vec::with_capacity(self.len());
        let push_block = |out: &mut Vec<f64>, vals: Vec<f64>, shared: bool| {
            if shared {
                out.push(vals.iter().sum());
            } else {
                out.extend(vals);
            }
        };
        push_block(&mut out, g.mu.clone(), self.sharing.mu_shared);
        push_block(
            &mut out,
            (0..c).map(|j| g.zeta[j] * (1.0 - p.zeta[j] * p.zeta[j])).collect(),
            self.sharing.zeta_shared,
        );
        if !self.sharing.lambda_fixed_zero {
            push_block(
                &mut out,
                (0..c).map(|j| g.lambda[j] * p.lambda[j] * (1.0 - p.lambda[j])).collect(),
                self.sharing.lambda_shared,
            );
        }
        out.extend((0..c).map(|j| g.sigma[j] * p.sigma[j]));
        out.extend((0..c).map(|j| g.rho[j] * (1.0 - p.rho[j] * p.rho[j])));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub sharing: SharingScheme,
    /// Relative log-likelihood change treated as converged.
    pub tolerance: f64,
    pub max_iter: usize,
    pub multistarts: usize,
    pub seed: u64,
    /// Return the best point found instead of an error when no start converges.
    pub allow_unconverged: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            sharing: SharingScheme::default(),
            tolerance: 1e-8,
            max_iter: 2000,
            multistarts: 5,
            seed: 0,
            allow_unconverged: false,
        }
    }
}

impl FitConfig {
    pub fn with_sharing(mut self, sharing: SharingScheme) -> Self {
        self.sharing = sharing;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub log_likelihood: f64,
    pub k: usize,
    pub bic: f64,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the gradient in the unconstrained space.
    pub gradient_norm: f64,
    /// Index of the start that produced this optimum.
    pub start: usize,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Method-of-moments starting values.
pub fn initial_params(panel: &KappaPanel, sharing: SharingScheme) -> ModelParams {
    let c = panel.n_populations();
    let t_n = panel.n_times();
    let dk: Vec<Vec<f64>> = (0..c)
        .map(|j| (1..t_n).map(|t| panel.get(t, j) - panel.get(t - 1, j)).collect())
        .collect();
    let mu_c: Vec<f64> = dk.iter().map(|d| mean(d)).collect();
    let mu_all = mean(&mu_c);
    let mu: Vec<f64> = if sharing.mu_shared { vec![mu_all; c] } else { mu_c.clone() };

    // lag-1 autocorrelation of the differences, pooled
    let (mut num, mut den) = (0.0, 0.0);
    let mut zeta_c = Vec::with_capacity(c);
    for (j, d) in dk.iter().enumerate() {
        let (mut nj, mut dj) = (0.0, 0.0);
        for i in 1..d.len() {
            nj += (d[i] - mu_c[j]) * (d[i - 1] - mu_c[j]);
        }
        for v in d {
            dj += (v - mu_c[j]) * (v - mu_c[j]);
        }
        num += nj;
        den += dj;
        zeta_c.push(if dj > 0.0 { (nj / dj).clamp(-0.9, 0.9) } else { 0.0 });
    }
    let pooled = if den > 0.0 { (num / den).clamp(-0.9, 0.9) } else { 0.0 };
    let zeta = if sharing.zeta_shared { vec![pooled; c] } else { zeta_c };

    let resid: Vec<Vec<f64>> = (0..c)
        .map(|j| {
            (1..dk[j].len())
                .map(|i| dk[j][i] - mu_c[j] - zeta[j] * (dk[j][i - 1] - mu_c[j]))
                .collect()
        })
        .collect();
    let sd: Vec<f64> = resid
        .iter()
        .map(|r| {
            let m = mean(r);
            (r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / r.len() as f64)
                .sqrt()
                .max(1e-8)
        })
        .collect();
    let rho = one_factor_loadings(&resid, &sd);
    let lambda = if sharing.lambda_fixed_zero { 0.0 } else { 0.05 };
    ModelParams {
        mu,
        zeta,
        lambda: vec![lambda; c],
        sigma: sd,
        rho,
        sharing,
    }
}

/// Loadings of the leading principal component of the correlation matrix.
fn one_factor_loadings(resid: &[Vec<f64>], sd: &[f64]) -> Vec<f64> {
    let c = resid.len();
    let n = resid[0].len();
    let means: Vec<f64> = resid.iter().map(|r| mean(r)).collect();
    let corr = DMatrix::from_fn(c, c, |i, j| {
        if i == j {
            return 1.0;
        }
        let cov = (0..n)
            .map(|t| (resid[i][t] - means[i]) * (resid[j][t] - means[j]))
            .sum::<f64>()
            / n as f64;
        cov / (sd[i] * sd[j])
    });
    let eig = corr.symmetric_eigen();
    let (mut best, mut idx) = (f64::NEG_INFINITY, 0);
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v > best {
            best = v;
            idx = i;
        }
    }
    let v: DVector<f64> = eig.eigenvectors.column(idx).into();
    let sign = if v.sum() < 0.0 { -1.0 } else { 1.0 };
    // the leading eigenvalue includes the unit idiosyncratic part of each
    // diagonal entry; remove it so uncorrelated data gives small loadings
    let scale = (best - 1.0).max(0.0).sqrt() * (c as f64 / (c as f64 - 1.0)).sqrt();
    v.iter()
        .map(|&x| (sign * scale * x).clamp(-0.95, 0.95))
        .collect()
}

fn optimize_from(
    design: &Design,
    layout: Layout,
    x0: Vec<f64>,
    config: &FitConfig,
    start: usize,
) -> Option<FitResult> {
    let objective = |x: &[f64]| -> (f64, Vec<f64>) {
        let p = layout.to_params(x);
        match evaluate(design, &p, true) {
            Ok((v, Some(g))) if v.is_finite() => {
                let gx = layout.chain(&p, &g);
                if gx.iter().all(|v| v.is_finite()) {
                    (-v, gx.into_iter().map(|v| -v).collect())
                } else {
                    (f64::INFINITY, vec![0.0; x.len()])
                }
            }
            _ => (f64::INFINITY, vec![0.0; x.len()]),
        }
    };
    let opts = BfgsOptions {
        max_iter: config.max_iter,
        ftol: config.tolerance,
        gtol: 1e-6,
    };
    let r = bfgs::minimize(objective, &x0, &opts);
    if !r.f.is_finite() {
        return None;
    }
    let params = layout.to_params(&r.x);
    // interior guard: the transforms can saturate to the boundary in f64
    if params.validate_with(ZetaDomain::Symmetric).is_err() {
        return None;
    }
    let n = design.c * design.n;
    let k = config.sharing.parameter_count(design.c);
    let log_l = -r.f;
    Some(FitResult {
        params,
        log_likelihood: log_l,
        k,
        bic: k as f64 * (n as f64).ln() - 2.0 * log_l,
        n,
        converged: r.converged,
        iterations: r.iterations,
        gradient_norm: r.grad.iter().fold(0.0, |m, v| m.max(v.abs())),
        start,
    })
}

fn select_best(results: Vec<Option<FitResult>>, config: &FitConfig) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    let mut best_any: Option<FitResult> = None;
    let better = |a: &FitResult, b: &Option<FitResult>| match b {
        None => true,
        Some(b) => a.log_likelihood > b.log_likelihood,
    };
    let mut iterations = 0;
    for r in results.into_iter().flatten() {
        iterations = iterations.max(r.iterations);
        if r.converged && better(&r, &best) {
            best = Some(r.clone());
        }
        if better(&r, &best_any) {
            best_any = Some(r);
        }
    }
    match (best, best_any) {
        (Some(b), _) => Ok(b),
        (None, Some(b)) if config.allow_unconverged => Ok(b),
        (None, _) => Err(Error::Convergence {
            iterations,
            message: "no start converged".into(),
        }),
    }
}

fn prepare(panel: &KappaPanel, config: &FitConfig) -> Result<(Design, Layout)> {
    if !(config.tolerance > 0.0) {
        return Err(Error::domain("tolerance", "tolerance must be positive"));
    }
    if config.multistarts == 0 {
        return Err(Error::domain("multistarts", "need at least one start"));
    }
    Ok((
        Design::new(panel),
        Layout {
            c: panel.n_populations(),
            sharing: config.sharing,
        },
    ))
}

/// Maximum likelihood fit under `config.sharing`.
///
/// Start 0 is the method-of-moments point; the others jitter it in the
/// unconstrained space with seeds derived from `config.seed`. The best
/// converged start wins, lowest index on ties.
pub fn fit_mle(panel: &KappaPanel, config: &FitConfig) -> Result<FitResult> {
    let (design, layout) = prepare(panel, config)?;
    let init = initial_params(panel, config.sharing);
    let x_init = layout.from_params(&init);
    let spread = mean(&init.sigma);
    let n_mu = layout.n_mu();
    let results: Vec<Option<FitResult>> = (0..config.multistarts)
        .into_par_iter()
        .map(|k| {
            let mut x0 = x_init.clone();
            if k > 0 {
                let mut rng = rand_pcg::Pcg64Mcg::seed_from_u64(derive_seed(config.seed, k as u64));
                for (i, v) in x0.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += if i < n_mu { 0.2 * spread * z } else { 0.3 * z };
                }
            }
            optimize_from(&design, layout, x0, config, k)
        })
        .collect();
    select_best(results, config)
}

/// Single-start fit from `start`, for refits near a known optimum.
pub fn fit_mle_from(panel: &KappaPanel, config: &FitConfig, start: &ModelParams) -> Result<FitResult> {
    check_shapes(panel, start)?;
    let (design, layout) = prepare(panel, config)?;
    let result = optimize_from(&design, layout, layout.from_params(start), config, 0);
    select_best(vec![result], config)
}

/// Summary of a fit in the layout of the goodness-of-fit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub log_likelihood: f64,
    pub k: usize,
    pub bic: f64,
    pub mu: f64,
    pub lambda: Option<f64>,
    pub zeta: f64,
    /// Root mean square of the `sigma_c`.
    pub sigma_bar: f64,
    /// Mean of the `rho_c`.
    pub rho_bar: f64,
    pub converged: bool,
}

impl ComparisonRow {
    pub fn from_fit(model: &str, fit: &FitResult) -> Self {
        let p = &fit.params;
        ComparisonRow {
            model: model.to_string(),
            log_likelihood: fit.log_likelihood,
            k: fit.k,
            bic: fit.bic,
            mu: mean(&p.mu),
            lambda: if p.sharing.lambda_fixed_zero { None } else { Some(mean(&p.lambda)) },
            zeta: mean(&p.zeta),
            sigma_bar: (p.sigma.iter().map(|s| s * s).sum::<f64>() / p.sigma.len() as f64).sqrt(),
            rho_bar: mean(&p.rho),
            converged: fit.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub without_reversion: FitResult,
    pub with_reversion: Option<FitResult>,
    pub rows: Vec<ComparisonRow>,
}

impl ModelComparison {
    /// True when the reversion model has the lower BIC.
    pub fn prefers_reversion(&self) -> bool {
        self.with_reversion
            .as_ref()
            .is_some_and(|w| w.bic < self.without_reversion.bic)
    }

    /// CSV with columns `model,logL,K,BIC,mu,lambda,zeta,sigma_bar,rho_bar`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "logL", "K", "BIC", "mu", "lambda", "zeta", "sigma_bar", "rho_bar"])?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                format!("{:.4}", r.log_likelihood),
                r.k.to_string(),
                format!("{:.4}", r.bic),
                format!("{:.6}", r.mu),
                r.lambda.map(|l| format!("{l:.6}")).unwrap_or_default(),
                format!("{:.6}", r.zeta),
                format!("{:.6}", r.sigma_bar),
                format!("{:.6}", r.rho_bar),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fit the nested `lambda = 0` model and, unless `base.sharing` pins
/// `lambda` to zero, the reversion model under the same sharing.
///
/// The reversion fit also starts from the nested optimum with a small
/// `lambda`, so its likelihood never falls below the nested one.
pub fn compare_models(panel: &KappaPanel, base: &FitConfig) -> Result<ModelComparison> {
    let without_cfg = base.clone().with_sharing(base.sharing.without_reversion());
    let without = fit_mle(panel, &without_cfg)?;
    let mut rows = vec![ComparisonRow::from_fit("lambda=0", &without)];
    if base.sharing.lambda_fixed_zero {
        return Ok(ModelComparison {
            without_reversion: without,
            with_reversion: None,
            rows,
        });
    }
    let with_cfg = base.clone().with_sharing(base.sharing.with_reversion());
    let free = fit_mle(panel, &with_cfg);
    let mut nested_start = without.params.clone();
    nested_start.sharing = with_cfg.sharing;
    nested_start.lambda = vec![1e-3; panel.n_populations()];
    let nested = fit_mle_from(panel, &with_cfg, &nested_start);
    let with = match (free, nested) {
        (Ok(a), Ok(b)) => {
            if b.log_likelihood > a.log_likelihood + 1e-9 * a.log_likelihood.abs().max(1.0) {
                b
            } else {
                a
            }
        }
        (Ok(a), Err(_)) => a,
        (Err(_), Ok(b)) => b,
        (Err(e), Err(_)) => return Err(e),
    };
    rows.push(ComparisonRow::from_fit("lambda free", &with));
    Ok(ModelComparison {
        without_reversion: without,
        with_reversion: Some(with),
        rows,
    })
}

/// Least-squares AR(1) coefficient of one difference series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1Coefficient {
    pub population: usize,
    pub reference: usize,
    pub coefficient: f64,
    pub standard_error: f64,
}

/// AR(1) coefficient, without intercept, of `kappa_c - kappa_ref` for every
/// `c != reference`. Under common `lambda` and no AR term the differences are
/// exactly AR(1) with coefficient `1 - lambda`.
pub fn pairwise_ar1_check(panel: &KappaPanel, reference: usize) -> Result<Vec<Ar1Coefficient>> {
    if reference >= panel.n_populations() {
        return Err(Error::Index {
            index: reference,
            message: "reference population out of range".into(),
        });
    }
    let t_n = panel.n_times();
    let mut out = Vec::with_capacity(panel.n_populations() - 1);
    for c in (0..panel.n_populations()).filter(|&c| c != reference) {
        let d: Vec<f64> = (0..t_n).map(|t| panel.get(t, c) - panel.get(t, reference)).collect();
        if d.iter().all(|&v| v == d[0]) {
            return Err(Error::Degenerate(format!(
                "difference between populations {c} and {reference} is constant"
            )));
        }
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for t in 1..t_n {
            sxx += d[t - 1] * d[t - 1];
            sxy += d[t - 1] * d[t];
        }
        if sxx == 0.0 {
            return Err(Error::Degenerate(format!(
                "lagged difference for population {c} is identically zero"
            )));
        }
        let phi = sxy / sxx;
        let rss: f64 = (1..t_n).map(|t| (d[t] - phi * d[t - 1]).powi(2)).sum();
        let s2 = rss / (t_n - 2) as f64;
        out.push(Ar1Coefficient {
            population: c,
            reference,
            coefficient: phi,
            standard_error: (s2 / sxx).sqrt(),
        });
    }
    Ok(out)
}

/// Parametric bootstrap of a fit: simulate panels from the fitted
/// parameters, starting from the observed first two years, and refit each
/// from the original optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub estimates: Vec<ModelParams>,
}

impl Bootstrap {
    fn sd(&self, f: impl Fn(&ModelParams) -> f64) -> f64 {
        let v: Vec<f64> = self.estimates.iter().map(f).collect();
        let m = mean(&v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
    }

    /// Bootstrap standard errors of the population-averaged `(mu, zeta, lambda)`.
    pub fn shared_standard_errors(&self) -> (f64, f64, f64) {
        (
            self.sd(|p| mean(&p.mu)),
            self.sd(|p| mean(&p.zeta)),
            self.sd(|p| mean(&p.lambda)),
        )
    }
}

pub fn parametric_bootstrap(
    panel: &KappaPanel,
    fit: &FitResult,
    config: &FitConfig,
    replicates: usize,
    seed: u64,
) -> Result<Bootstrap> {
    if replicates < 2 {
        return Err(Error::domain("replicates", "need at least 2 bootstrap replicates"));
    }
    let initial = State {
        kappa: panel.row(1).to_vec(),
        kappa_prev: panel.row(0).to_vec(),
        t: 0,
    };
    let refit_cfg = FitConfig {
        allow_unconverged: true,
        ..config.clone()
    };
    let estimates: Vec<Result<ModelParams>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let sim = simulate_panel(&fit.params, &initial, panel.n_times() - 1, derive_seed(seed, b as u64))?;
            Ok(fit_mle_from(&sim, &refit_cfg, &fit.params)?.params)
        })
        .collect();
    Ok(Bootstrap {
        estimates: estimates.into_iter().collect::<Result<_>>()?,
    })
}
