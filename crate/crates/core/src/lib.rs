//! Minimum-reversion multivariate time series.
//!
//! Each component of `kappa_t` drifts towards the current cross-sectional
//! minimum:
//!
//! ```text
//! kappa[t+1,c] - kappa[t,c] = mu_c + zeta_c (kappa[t,c] - kappa[t-1,c])
//!                             + sigma_c Z[t+1,c] + lambda_c (m_t - kappa[t,c])
//! ```
//!
//! with `m_t = min_c kappa[t,c]` and one-factor Gaussian noise
//! `Z_c = rho_c W_0 + sqrt(1 - rho_c^2) W_c`.
//!
//! The crate covers exact simulation ([`simulate`]), two-population
//! asymptotics and their Monte Carlo counterparts ([`asymptotics`]),
//! Gaussian maximum likelihood with BIC comparison ([`estimate`]), and the
//! Poisson common-age-effect mortality model that produces the period
//! effects the time series is fitted to ([`mortality`], [`ingest`]).

pub mod asymptotics;
mod bfgs;
pub mod estimate;
pub mod ingest;
pub mod error;
pub mod mortality;
pub mod normal;
pub mod panel;
pub mod par;
pub mod params;
pub mod simulate;

pub use error::{Error, Result};
pub use panel::KappaPanel;
pub use params::{ModelParams, SharingScheme, State};
