//! Dense year-by-population panel of period effects.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed `kappa[t, c]`, stored row-major (one row per year).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaPanel {
    values: Vec<f64>,
    years: Vec<i32>,
    populations: Vec<String>,
}

impl KappaPanel {
    pub fn new(values: Vec<f64>, years: Vec<i32>, populations: Vec<String>) -> Result<Self> {
        let (t, c) = (years.len(), populations.len());
        if values.len() != t * c {
            return Err(Error::Shape(format!(
                "{} values for {t} years x {c} populations",
                values.len()
            )));
        }
        if t < 3 {
            return Err(Error::Data(format!("need at least 3 years, got {t}")));
        }
        if c < 2 {
            return Err(Error::Data(format!("need at least 2 populations, got {c}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite kappa for year {} population {}",
                years[i / c],
                populations[i % c]
            )));
        }
        Ok(KappaPanel {
            values,
            years,
            populations,
        })
    }

    /// Panel with years `start..` and populations named `1..=C`.
    pub fn from_rows(rows: &[Vec<f64>], start_year: i32) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let years = (0..rows.len() as i32).map(|i| start_year + i).collect();
        let pops = (1..=c).map(|i| i.to_string()).collect();
        Self::new(rows.concat(), years, pops)
    }

    pub fn n_times(&self) -> usize {
        self.years.len()
    }

    pub fn n_populations(&self) -> usize {
        self.populations.len()
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn populations(&self) -> &[String] {
        &self.populations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.n_populations() + c]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.n_populations();
        &self.values[t * c..(t + 1) * c]
    }

    /// Series of one population.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_times()).map(|t| self.get(t, c)).collect()
    }

    pub fn minimum(&self, t: usize) -> f64 {
        self.row(t).iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV with header `year,population,kappa`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["year", "population", "kappa"])?;
        for (t, year) in self.years.iter().enumerate() {
            for (c, pop) in self.populations.iter().enumerate() {
                w.write_record([year.to_string(), pop.clone(), format!("{:?}", self.get(t, c))])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
