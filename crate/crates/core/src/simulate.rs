//! Exact simulation of the minimum-reversion recursion.
//!
//! Every path owns a generator seeded from `(base seed, path index)` only, so
//! ensembles are bit-identical for any thread count or evaluation order.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::panel::KappaPanel;
use crate::par::*;
use crate::params::{ModelParams, State, ZetaDomain};

/// Generator type used for every simulated path.
pub type PathRng = Pcg64Mcg;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` under `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

pub fn path_rng(base: u64, index: u64) -> PathRng {
    PathRng::seed_from_u64(derive_seed(base, index))
}

/// One-factor Gaussian noise `Z_c = rho_c W_0 + sqrt(1 - rho_c^2) W_c`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    loading: Vec<f64>,
    idio: Vec<f64>,
    common: bool,
}

impl NoiseModel {
    pub fn new(rho: &[f64]) -> Self {
        NoiseModel {
            loading: rho.to_vec(),
            idio: rho.iter().map(|r| (1.0 - r * r).sqrt()).collect(),
            common: rho.iter().any(|&r| r != 0.0),
        }
    }

    /// Fill `z` with one draw. The common factor is only sampled when some
    /// loading is non-zero.
    #[inline]
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64]) {
        if self.common {
            let w0: f64 = rng.sample(StandardNormal);
            for ((zc, &a), &b) in z.iter_mut().zip(&self.loading).zip(&self.idio) {
                let w: f64 = rng.sample(StandardNormal);
                *zc = a * w0 + b * w;
            }
        } else {
            for zc in z.iter_mut() {
                *zc = rng.sample(StandardNormal);
            }
        }
    }
}

/// Draw one noise vector `Z_t` for `params`.
pub fn draw_noise<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> Vec<f64> {
    let mut z = vec![0.0; params.populations()];
    NoiseModel::new(&params.rho).fill(rng, &mut z);
    z
}

/// Advance `kappa`/`kappa_prev` by one step in place.
#[inline]
pub(crate) fn advance(kappa: &mut [f64], kappa_prev: &mut [f64], params: &ModelParams, z: &[f64]) {
    let m = kappa.iter().copied().fold(f64::INFINITY, f64::min);
    for c in 0..kappa.len() {
        let k = kappa[c];
        let next = k
            + params.mu[c]
            + params.zeta[c] * (k - kappa_prev[c])
            + params.sigma[c] * z[c]
            + params.lambda[c] * (m - k);
        kappa_prev[c] = k;
        kappa[c] = next;
    }
}

/// Apply one step of the recursion with noise `z`.
pub fn step(state: &State, params: &ModelParams, z: &[f64]) -> State {
    let mut kappa = state.kappa.clone();
    let mut prev = state.kappa_prev.clone();
    advance(&mut kappa, &mut prev, params, z);
    State {
        kappa,
        kappa_prev: prev,
        t: state.t + 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub initial: State,
}

impl SimConfig {
    fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::domain("n_paths", "need at least one path"));
        }
        self.initial.validate(params.populations())
    }
}

/// Simulated trajectories stored path-major: `values[(p * (horizon + 1) + t) * C + c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub values: Vec<f64>,
    pub config: SimConfig,
    pub params: ModelParams,
}

impl PathEnsemble {
    pub fn populations(&self) -> usize {
        self.params.populations()
    }

    pub fn n_paths(&self) -> usize {
        self.config.n_paths
    }

    /// Number of stored time slices, `horizon + 1`.
    pub fn len_time(&self) -> usize {
        self.config.horizon + 1
    }

    /// Path `p` as a row-major `(horizon + 1) x C` slice.
    pub fn path(&self, p: usize) -> &[f64] {
        let n = self.len_time() * self.populations();
        &self.values[p * n..(p + 1) * n]
    }

    pub fn value(&self, p: usize, t: usize, c: usize) -> f64 {
        self.values[(p * self.len_time() + t) * self.populations() + c]
    }

    pub fn extremal(&self, p: usize) -> ExtremalPath {
        extremal_path(self.path(p), self.populations())
    }

    /// CSV with columns `path,t,c,kappa` (`c` is 1-based).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "t", "c", "kappa"])?;
        let c_n = self.populations();
        for p in 0..self.n_paths() {
            for t in 0..self.len_time() {
                for c in 0..c_n {
                    w.write_record(&[
                        p.to_string(),
                        t.to_string(),
                        (c + 1).to_string(),
                        format!("{:.12e}", self.value(p, t, c)),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> EnsembleSummary {
        EnsembleSummary::from_ensemble(self)
    }
}

/// Simulate one path of the ensemble; returns `(horizon + 1) x C` values.
pub fn simulate_path(config: &SimConfig, params: &ModelParams, index: usize) -> Vec<f64> {
    let c_n = params.populations();
    let mut out = Vec::with_capacity((config.horizon + 1) * c_n);
    let mut rng = path_rng(config.seed, index as u64);
    let noise = NoiseModel::new(&params.rho);
    let mut kappa = config.initial.kappa.clone();
    let mut prev = config.initial.kappa_prev.clone();
    let mut z = vec![0.0; c_n];
    out.extend_from_slice(&kappa);
    for _ in 0..config.horizon {
        noise.fill(&mut rng, &mut z);
        advance(&mut kappa, &mut prev, params, &z);
        out.extend_from_slice(&kappa);
    }
    out
}

/// Simulate `config.n_paths` independent paths.
pub fn simulate_paths(config: &SimConfig, params: &ModelParams) -> Result<PathEnsemble> {
    params.validate_with(ZetaDomain::Symmetric)?;
    config.validate(params)?;
    let paths: Vec<Vec<f64>> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| simulate_path(config, params, p))
        .collect();
    let values: Vec<f64> = paths.into_iter().flatten().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("simulation produced non-finite values".into()));
    }
    Ok(PathEnsemble {
        values,
        config: config.clone(),
        params: params.clone(),
    })
}

/// Simulate a single panel of `steps + 1` years from `initial`, labelled
/// with years `0..` and populations `1..=C`.
pub fn simulate_panel(
    params: &ModelParams,
    initial: &State,
    steps: usize,
    seed: u64,
) -> Result<KappaPanel> {
    params.validate_with(ZetaDomain::Symmetric)?;
    let config = SimConfig {
        horizon: steps,
        n_paths: 1,
        seed,
        initial: initial.clone(),
    };
    config.validate(params)?;
    let values = simulate_path(&config, params, 0);
    let c = params.populations();
    KappaPanel::new(
        values,
        (0..=steps as i32).collect(),
        (1..=c).map(|i| i.to_string()).collect(),
    )
}

/// Running minimum and maximum of a path with their (0-based) indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalPath {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub argmin: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Componentwise extremes of a row-major path with `populations` columns.
/// Ties go to the lowest index.
pub fn extremal_path(path: &[f64], populations: usize) -> ExtremalPath {
    let n = path.len() / populations;
    let mut out = ExtremalPath {
        min: Vec::with_capacity(n),
        max: Vec::with_capacity(n),
        argmin: Vec::with_capacity(n),
        argmax: Vec::with_capacity(n),
    };
    for row in path.chunks_exact(populations) {
        let (mut lo, mut hi) = (0, 0);
        for (c, &v) in row.iter().enumerate().skip(1) {
            if v < row[lo] {
                lo = c;
            }
            if v > row[hi] {
                hi = c;
            }
        }
        out.min.push(row[lo]);
        out.max.push(row[hi]);
        out.argmin.push(lo);
        out.argmax.push(hi);
    }
    out
}

/// `P(m_{t+1} <= a | kappa_t)` for independent noise, zero drift and no AR term.
pub fn min_decrease_probability(state: &State, params: &ModelParams, a: f64) -> Result<f64> {
    params.validate_with(ZetaDomain::Symmetric)?;
    state.validate(params.populations())?;
    if params.rho.iter().any(|&r| r != 0.0) {
        return Err(Error::Unsupported(
            "closed form needs rho = 0; estimate by simulation instead".into(),
        ));
    }
    if params.mu.iter().any(|&m| m != 0.0) || params.zeta.iter().any(|&z| z != 0.0) {
        return Err(Error::Unsupported(
            "closed form needs mu = 0 and zeta = 0; estimate by simulation instead".into(),
        ));
    }
    let m = state.minimum();
    let stay_above: f64 = state
        .kappa
        .iter()
        .zip(&params.lambda)
        .zip(&params.sigma)
        .map(|((&k, &l), &s)| normal::cdf(((1.0 - l) * k - a + l * m) / s))
        .product();
    Ok(1.0 - stay_above)
}

/// Cross-sectional quantile fan at each time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fan {
    pub mean: Vec<f64>,
    pub q05: Vec<f64>,
    pub q50: Vec<f64>,
    pub q95: Vec<f64>,
}

impl Fan {
    fn from_columns(columns: &[Vec<f64>]) -> Fan {
        let mut fan = Fan {
            mean: Vec::with_capacity(columns.len()),
            q05: Vec::with_capacity(columns.len()),
            q50: Vec::with_capacity(columns.len()),
            q95: Vec::with_capacity(columns.len()),
        };
        for col in columns {
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            fan.mean.push(col.iter().sum::<f64>() / col.len() as f64);
            fan.q05.push(quantile_sorted(&sorted, 0.05));
            fan.q50.push(quantile_sorted(&sorted, 0.5));
            fan.q95.push(quantile_sorted(&sorted, 0.95));
        }
        fan
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Plot-ready summary of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub horizon: usize,
    pub seed: u64,
    pub kappa: Vec<Fan>,
    pub minimum: Fan,
    pub maximum: Fan,
    pub spread: Fan,
    pub terminal_mean_spread: f64,
}

impl EnsembleSummary {
    pub fn from_ensemble(ens: &PathEnsemble) -> Self {
        let n_t = ens.len_time();
        let c_n = ens.populations();
        let extremes: Vec<ExtremalPath> = (0..ens.n_paths()).map(|p| ens.extremal(p)).collect();
        let by_time = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
            (0..n_t)
                .map(|t| (0..ens.n_paths()).map(|p| f(p, t)).collect())
                .collect()
        };
        let kappa = (0..c_n)
            .map(|c| Fan::from_columns(&by_time(&|p, t| ens.value(p, t, c))))
            .collect();
        let minimum = Fan::from_columns(&by_time(&|p, t| extremes[p].min[t]));
        let maximum = Fan::from_columns(&by_time(&|p, t| extremes[p].max[t]));
        let spread = Fan::from_columns(&by_time(&|p, t| extremes[p].max[t] - extremes[p].min[t]));
        let terminal_mean_spread = *spread.mean.last().unwrap_or(&0.0);
        EnsembleSummary {
            n_paths: ens.n_paths(),
            horizon: ens.config.horizon,
            seed: ens.config.seed,
            kappa,
            minimum,
            maximum,
            spread,
            terminal_mean_spread,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params2(lambda: f64) -> ModelParams {
        ModelParams::symmetric(2, lambda)
    }

    #[test]
    fn step_without_increments_is_identity() {
        let p = ModelParams::shared(0.0, 0.0, 0.0, vec![1.0; 3], vec![0.0; 3]);
        let s = State::at_rest(vec![1.0, -2.0, 0.5]);
        let next = step(&s, &p, &[0.0; 3]);
        assert_eq!(next.kappa, s.kappa);
        assert_eq!(next.kappa_prev, s.kappa);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn step_pulls_towards_minimum() {
        let p = params2(0.5);
        let s = State {
            kappa: vec![0.0, 2.0],
            kappa_prev: vec![5.0, -3.0],
            t: 4,
        };
        let next = step(&s, &p, &[0.0, 0.0]);
        assert_eq!(next.kappa, vec![0.0, 1.0]);
        assert_eq!(next.kappa_prev, vec![0.0, 2.0]);
    }

    fn reference_step(k: &[f64], kp: &[f64], mu: f64, zeta: f64, lam: f64) -> Vec<f64> {
        let m = k.iter().cloned().fold(f64::MAX, f64::min);
        k.iter()
            .zip(kp)
            .map(|(&x, &xp)| x + mu + zeta * (x - xp) + lam * (m - x))
            .collect()
    }

    #[test]
    fn step_three_populations() {
        let p = ModelParams::shared(0.1, 0.0, 0.25, vec![1.0; 3], vec![0.0; 3]);
        let s = State::at_rest(vec![1.0, 2.0, 4.0]);
        let next = step(&s, &p, &[0.0; 3]);
        let expected = reference_step(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0], 0.1, 0.0, 0.25);
        for (a, b) in next.kappa.iter().zip([1.1, 1.85, 3.35]) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(next.kappa, expected);
    }

    #[test]
    fn step_uses_momentum() {
        let p = ModelParams::shared(0.0, 0.5, 0.0, vec![1.0; 2], vec![0.0; 2]);
        let s = State {
            kappa: vec![1.0, 1.0],
            kappa_prev: vec![0.0, 2.0],
            t: 1,
        };
        assert_eq!(step(&s, &p, &[0.0, 0.0]).kappa, vec![1.5, 0.5]);
    }

    #[test]
    fn extremal_ties_go_to_lowest_index() {
        let ex = extremal_path(&[3.0, 1.0, 2.0, 5.0, 5.0, 5.0], 3);
        assert_eq!(ex.min, vec![1.0, 5.0]);
        assert_eq!(ex.argmin, vec![1, 0]);
        assert_eq!(ex.argmax, vec![0, 0]);
        assert_eq!(ex.max, vec![3.0, 5.0]);
    }

    #[test]
    fn equal_constant_paths() {
        let ex = extremal_path(&[2.0, 2.0, 2.0, 2.0], 2);
        assert_eq!(ex.min, ex.max);
    }

    #[test]
    fn min_decrease_examples() {
        let p = params2(0.3);
        let s = State::at_rest(vec![0.0, 0.0]);
        assert!((min_decrease_probability(&s, &p, 0.0).unwrap() - 0.75).abs() < 1e-15);

        let p = ModelParams::shared(0.0, 0.0, 0.0, vec![1.0, 1.0], vec![0.0, 0.0]);
        let s = State::at_rest(vec![0.0, 1.0]);
        let v = min_decrease_probability(&s, &p, 0.0).unwrap();
        assert!((v - (1.0 - 0.5 * normal::cdf(1.0))).abs() < 1e-15);
        assert!((v - 0.5793).abs() < 5e-5);
    }

    #[test]
    fn min_decrease_rejects_correlation_and_drift() {
        let s = State::at_rest(vec![0.0, 0.0]);
        let mut p = params2(0.1);
        p.rho = vec![0.2, 0.2];
        assert!(matches!(
            min_decrease_probability(&s, &p, 0.0),
            Err(Error::Unsupported(_))
        ));
        let mut p = params2(0.1);
        p.mu = vec![0.1, 0.1];
        assert!(matches!(
            min_decrease_probability(&s, &p, 0.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn first_slice_is_initial_state() {
        let p = params2(0.1);
        let cfg = SimConfig {
            horizon: 5,
            n_paths: 3,
            seed: 1,
            initial: State::at_rest(vec![0.5, -0.5]),
        };
        let ens = simulate_paths(&cfg, &p).unwrap();
        for path in 0..3 {
            assert_eq!(ens.value(path, 0, 0), 0.5);
            assert_eq!(ens.value(path, 0, 1), -0.5);
        }
        assert_eq!(ens.values.len(), 3 * 6 * 2);
    }

    #[test]
    fn zero_horizon_holds_initial_state_only() {
        let cfg = SimConfig {
            horizon: 0,
            n_paths: 2,
            seed: 9,
            initial: State::at_rest(vec![1.0, 2.0]),
        };
        let ens = simulate_paths(&cfg, &params2(0.1)).unwrap();
        assert_eq!(ens.values, vec![1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_empty_ensembles() {
        let cfg = SimConfig {
            horizon: 3,
            n_paths: 0,
            seed: 1,
            initial: State::at_rest(vec![0.0, 0.0]),
        };
        assert!(simulate_paths(&cfg, &params2(0.1)).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(a.len(), b.len());
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.625), 3.5);
    }
}
