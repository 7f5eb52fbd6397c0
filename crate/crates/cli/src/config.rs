//! Per-command JSON configs. Relative paths inside a config file are taken
//! relative to that file.

use std::path::{Path, PathBuf};

use minrev::asymptotics::{TABLE_LAMBDAS, TABLE_POPULATIONS};
use minrev::estimate::FitConfig;
use minrev::ingest::DatasetSpec;
use minrev::mortality::CaeFitOptions;
use minrev::ModelParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub params: ModelParams,
    pub initial: Vec<f64>,
    /// Levels one step before `initial`; defaults to `initial`.
    #[serde(default)]
    pub initial_prev: Option<Vec<f64>>,
    pub horizon: usize,
    pub n_paths: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_lambdas() -> Vec<f64> {
    TABLE_LAMBDAS.to_vec()
}

fn default_populations() -> Vec<usize> {
    TABLE_POPULATIONS.to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablesConfig {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_populations")]
    pub populations: Vec<usize>,
    #[serde(default = "TablesConfig::default_paths")]
    pub n_paths: usize,
    /// Post burn-in steps averaged per path.
    #[serde(default = "TablesConfig::default_window")]
    pub window: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl TablesConfig {
    fn default_paths() -> usize {
        100_000
    }

    fn default_window() -> usize {
        500
    }
}

impl Default for TablesConfig {
    fn default() -> Self {
        TablesConfig {
            lambdas: default_lambdas(),
            populations: default_populations(),
            n_paths: Self::default_paths(),
            window: Self::default_window(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsymptoticsConfig {
    pub mu: f64,
    pub lambdas: Vec<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
}

impl Default for AsymptoticsConfig {
    fn default() -> Self {
        AsymptoticsConfig {
            mu: 0.0,
            lambdas: default_lambdas(),
            sigma1: 1.0,
            sigma2: 1.0,
            rho: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub hmd_dir: Option<PathBuf>,
    pub dataset: Option<DatasetSpec>,
}

/// Mortality data comes either from an assembled dataset CSV (`data`) or
/// from a directory of HMD 1x1 files plus a dataset spec.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitCaeConfig {
    pub data: Option<PathBuf>,
    pub hmd_dir: Option<PathBuf>,
    pub dataset: Option<DatasetSpec>,
    pub options: CaeFitOptions,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitTsConfig {
    /// `year,population,kappa` CSV.
    pub kappa: Option<PathBuf>,
    pub fit: FitConfig,
    /// Parametric bootstrap replications; 0 skips the bootstrap.
    pub bootstrap: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub kappa: Option<PathBuf>,
    pub fit: FitConfig,
}

/// Parse the config file if one was given, else start from defaults.
/// Returns the config and the directory relative paths resolve against.
pub fn load<T: for<'de> Deserialize<'de>>(path: Option<&Path>, default: impl FnOnce() -> Option<T>) -> anyhow::Result<(T, PathBuf)> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
            let cfg = serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((cfg, base))
        }
        None => match default() {
            Some(cfg) => Ok((cfg, PathBuf::new())),
            None => anyhow::bail!("this command needs --config"),
        },
    }
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Inclusive `FROM-TO` range.
pub fn parse_range<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s.split_once('-').ok_or_else(|| format!("expected FROM-TO, got {s:?}"))?;
    let a = a.trim().parse().map_err(|_| format!("bad range start in {s:?}"))?;
    let b = b.trim().parse().map_err(|_| format!("bad range end in {s:?}"))?;
    Ok((a, b))
}
