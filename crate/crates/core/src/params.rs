//! Model parameters, the one-factor noise covariance and parameter counting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which coefficients are common to all populations.
///
/// `sigma` and `rho` are always population specific.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SharingScheme {
    pub mu_shared: bool,
    pub lambda_shared: bool,
    pub zeta_shared: bool,
    /// Nested model without minimum reversion; `lambda` is pinned to zero.
    pub lambda_fixed_zero: bool,
}

impl Default for SharingScheme {
    /// Common `mu`, `lambda` and `zeta`; the specification used for the
    /// mortality application.
    fn default() -> Self {
        SharingScheme {
            mu_shared: true,
            lambda_shared: true,
            zeta_shared: true,
            lambda_fixed_zero: false,
        }
    }
}

impl SharingScheme {
    pub fn without_reversion(self) -> Self {
        SharingScheme {
            lambda_fixed_zero: true,
            ..self
        }
    }

    pub fn with_reversion(self) -> Self {
        SharingScheme {
            lambda_fixed_zero: false,
            ..self
        }
    }

    /// Number of free parameters for `populations` series.
    pub fn parameter_count(&self, populations: usize) -> usize {
        let per = |shared: bool| if shared { 1 } else { populations };
        let lambda = if self.lambda_fixed_zero {
            0
        } else {
            per(self.lambda_shared)
        };
        per(self.mu_shared) + per(self.zeta_shared) + lambda + 2 * populations
    }
}

/// Domain used when validating `zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZetaDomain {
    /// `[0, 1)`, as the model is stated.
    NonNegative,
    /// `(-1, 1)`, needed for estimates like those fitted on mortality data.
    Symmetric,
}

/// Per-population coefficients of the minimum-reversion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mu: Vec<f64>,
    pub zeta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Vec<f64>,
    #[serde(default)]
    pub sharing: SharingScheme,
}

impl ModelParams {
    /// Parameters with common `mu`, `zeta` and `lambda` and per-population
    /// `sigma` and `rho`.
    pub fn shared(mu: f64, zeta: f64, lambda: f64, sigma: Vec<f64>, rho: Vec<f64>) -> Self {
        let c = sigma.len();
        ModelParams {
            mu: vec![mu; c],
            zeta: vec![zeta; c],
            lambda: vec![lambda; c],
            sigma,
            rho,
            sharing: SharingScheme {
                lambda_fixed_zero: lambda == 0.0,
                ..SharingScheme::default()
            },
        }
    }

    /// Independent unit-variance noise, zero drift and no AR term: the
    /// setting of the two-population asymptotics.
    pub fn symmetric(populations: usize, lambda: f64) -> Self {
        Self::shared(
            0.0,
            0.0,
            lambda,
            vec![1.0; populations],
            vec![0.0; populations],
        )
    }

    pub fn populations(&self) -> usize {
        self.sigma.len()
    }

    /// Validate against the stated model domains (`zeta` in `[0, 1)`).
    pub fn validate(&self) -> Result<()> {
        self.validate_with(ZetaDomain::NonNegative)
    }

    pub fn validate_with(&self, zeta_domain: ZetaDomain) -> Result<()> {
        let c = self.sigma.len();
        if c < 2 {
            return Err(Error::domain(
                "populations",
                format!("need at least 2 populations, got {c}"),
            ));
        }
        for (name, v) in [
            ("mu", &self.mu),
            ("zeta", &self.zeta),
            ("lambda", &self.lambda),
            ("rho", &self.rho),
        ] {
            if v.len() != c {
                return Err(Error::domain(
                    name,
                    format!("expected {c} entries, got {}", v.len()),
                ));
            }
        }
        for (i, &m) in self.mu.iter().enumerate() {
            if !m.is_finite() {
                return Err(Error::domain(format!("mu[{i}]"), "mu must be finite"));
            }
        }
        for (i, &l) in self.lambda.iter().enumerate() {
            if !(0.0..1.0).contains(&l) {
                return Err(Error::domain(
                    format!("lambda[{i}]"),
                    format!("lambda must lie in [0,1), got {l}"),
                ));
            }
        }
        for (i, &z) in self.zeta.iter().enumerate() {
            let ok = match zeta_domain {
                ZetaDomain::NonNegative => (0.0..1.0).contains(&z),
                ZetaDomain::Symmetric => z > -1.0 && z < 1.0,
            };
            if !ok {
                let bound = match zeta_domain {
                    ZetaDomain::NonNegative => "[0,1)",
                    ZetaDomain::Symmetric => "(-1,1)",
                };
                return Err(Error::domain(
                    format!("zeta[{i}]"),
                    format!("zeta must lie in {bound}, got {z}"),
                ));
            }
        }
        for (i, &s) in self.sigma.iter().enumerate() {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::domain(
                    format!("sigma[{i}]"),
                    format!("sigma must be positive, got {s}"),
                ));
            }
        }
        for (i, &r) in self.rho.iter().enumerate() {
            if !(r > -1.0 && r < 1.0) {
                return Err(Error::domain(
                    format!("rho[{i}]"),
                    format!("rho must lie in (-1,1), got {r}"),
                ));
            }
        }
        if self.sharing.lambda_fixed_zero && self.lambda.iter().any(|&l| l != 0.0) {
            return Err(Error::domain(
                "lambda",
                "lambda must be zero when sharing.lambda_fixed_zero is set",
            ));
        }
        Ok(())
    }

    /// Covariance of the noise vector `sigma_c Z_c`.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        let c = self.populations();
        DMatrix::from_fn(c, c, |i, j| {
            if i == j {
                self.sigma[i] * self.sigma[i]
            } else {
                // same product order on both sides keeps the matrix exactly symmetric
                let (a, b) = (i.min(j), i.max(j));
                self.sigma[a] * self.sigma[b] * self.rho[a] * self.rho[b]
            }
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.sharing.parameter_count(self.populations())
    }

    /// JSON document with fields `mu`, `zeta`, `lambda`, `sigma`, `rho`, `sharing`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Validate and hand back `params`.
pub fn validate_params(params: ModelParams) -> Result<ModelParams> {
    params.validate()?;
    Ok(params)
}

/// Standard deviation of `sigma1 Z1 - sigma2 Z2` when `corr(Z1, Z2) = rho`.
pub fn effective_spread_s(sigma1: f64, sigma2: f64, rho: f64) -> Result<f64> {
    if !(sigma1 > 0.0 && sigma1.is_finite()) {
        return Err(Error::domain("sigma1", "sigma must be positive"));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::domain("sigma2", "sigma must be positive"));
    }
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::domain("rho", "rho must lie in (-1,1)"));
    }
    let v = sigma1 * sigma1 + sigma2 * sigma2 - 2.0 * rho * sigma1 * sigma2;
    Ok(v.max(0.0).sqrt())
}

/// State of the recursion at time `t`: current and previous levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub kappa: Vec<f64>,
    pub kappa_prev: Vec<f64>,
    pub t: usize,
}

impl State {
    /// Start with no momentum: the AR term contributes nothing on the first step.
    pub fn at_rest(kappa: Vec<f64>) -> Self {
        State {
            kappa_prev: kappa.clone(),
            kappa,
            t: 0,
        }
    }

    pub fn minimum(&self) -> f64 {
        self.kappa.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self, populations: usize) -> Result<()> {
        if self.kappa.len() != populations || self.kappa_prev.len() != populations {
            return Err(Error::Shape(format!(
                "state vectors must have length {populations}"
            )));
        }
        if self
            .kappa
            .iter()
            .chain(&self.kappa_prev)
            .any(|v| !v.is_finite())
        {
            return Err(Error::domain("state", "kappa values must be finite"));
        }
        Ok(())
    }
}
