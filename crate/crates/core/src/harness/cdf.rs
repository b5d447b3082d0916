use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("empirical CDF needs at least one sample"));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::domain("empirical CDF samples must not be NaN"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(EmpiricalCdf { sorted })
    }

    /// Fraction of samples ≤ x.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Lower empirical quantile.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.sorted.len();
        let idx = ((q.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.sorted[idx]
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }
}

/// CDF evaluated on a fixed grid, closed by a +∞ row equal to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn default_error_grid() -> Vec<f64> {
    (0..=200)
        .map(|i| i as f64 * 0.005)
        .chain(std::iter::once(f64::INFINITY))
        .collect()
}

pub fn error_cdf(samples: &[f64]) -> Result<CdfTable> {
    error_cdf_on(samples, &default_error_grid())
}

pub fn error_cdf_on(samples: &[f64], grid: &[f64]) -> Result<CdfTable> {
    let cdf = EmpiricalCdf::new(samples)?;
    Ok(CdfTable {
        grid: grid.to_vec(),
        values: grid.iter().map(|&x| cdf.eval(x)).collect(),
    })
}
