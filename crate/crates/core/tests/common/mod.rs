#![allow(dead_code)]

use minrev::mortality::{fitted_rates, CaeParams, MortalityDataset};
use minrev::{ModelParams, State};
use rand::SeedableRng;
use rand_distr::{Distribution, Poisson};

/// Fifteen populations with parameters of the size seen in fitted period
/// effects: shared drift, AR term and reversion, mildly varying volatility
/// and correlation.
pub fn table3_truth(lambda: f64) -> ModelParams {
    let c = 15;
    let sigma = (0..c).map(|i| 0.025 + 0.01 * i as f64 / (c - 1) as f64).collect();
    let rho = (0..c).map(|i| 0.4 + 0.2 * i as f64 / (c - 1) as f64).collect();
    ModelParams::shared(-0.02, -0.3, lambda, sigma, rho)
}

/// Starting levels spread evenly over `width`.
pub fn spread_start(populations: usize, width: f64) -> State {
    State::at_rest(
        (0..populations)
            .map(|i| -4.0 + width * i as f64 / (populations - 1) as f64)
            .collect(),
    )
}

/// Identified common-age-effect parameters for ages 50-90, 60 years and four
/// populations.
pub fn cae_truth() -> CaeParams {
    let ages: Vec<u32> = (50..=90).collect();
    let years: Vec<i32> = (1951..2011).collect();
    let pops: Vec<String> = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();
    let nc = pops.len();
    let alpha = ages.iter().map(|&a| 0.025 * (a as f64 - 70.0)).collect();
    let beta = ages.iter().map(|&a| 1.3 - 0.015 * (a as f64 - 50.0)).collect();
    let kappa = (0..years.len() * nc)
        .map(|i| {
            let (t, c) = ((i / nc) as f64, (i % nc) as f64);
            -0.6 - 0.025 * t - 0.3 * c + 0.1 * (t + c).sin()
        })
        .collect();
    CaeParams {
        ages,
        years,
        populations: pops,
        alpha,
        beta,
        kappa,
        reference_age: 70,
    }
}

/// Poisson deaths drawn at the rates of `truth` with constant exposure.
pub fn poisson_dataset(truth: &CaeParams, exposure: f64, seed: u64) -> MortalityDataset {
    let mut rng = rand_pcg::Pcg64Mcg::seed_from_u64(seed);
    let deaths = fitted_rates(truth)
        .iter()
        .map(|r| Poisson::new(r * exposure).unwrap().sample(&mut rng))
        .collect();
    let n = truth.ages.len() * truth.years.len() * truth.populations.len();
    MortalityDataset::new(
        truth.ages.clone(),
        truth.years.clone(),
        truth.populations.clone(),
        deaths,
        vec![exposure; n],
    )
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
