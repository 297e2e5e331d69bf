//! Empirical distributions and the reference laws used by the limit experiments.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::SQRT_2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains NaN")]
    NanInSample,
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// Sorted sample with ECDF, quantile and Kolmogorov–Smirnov accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct EcdfSummary {
    values: Vec<f64>,
}

impl EcdfSummary {
    pub fn new(mut values: Vec<f64>) -> Result<Self, StatsError> {
        if values.is_empty() {
            return Err(StatsError::EmptySample);
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(StatsError::NanInSample);
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, StatsError> {
        Self::new(values.to_vec())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Fraction of the sample that is `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.values.len() as f64
    }

    /// Ceiling order statistic: the value at 1-based rank `ceil(p n)`, clamped to `[1, n]`.
    pub fn quantile(&self, p: f64) -> Result<f64, StatsError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(StatsError::ProbabilityOutOfRange(p));
        }
        let n = self.values.len();
        let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
        Ok(self.values[rank - 1])
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5).expect("0.5 is a probability")
    }

    /// One-sample Kolmogorov–Smirnov statistic sup |F̂ − F| against `reference`.
    ///
    /// The lower side compares (i−1)/n with the left limit F(x₍ᵢ₎⁻), read
    /// one ulp below the sample point, so step-function references are
    /// handled exactly as well as continuous ones.
    pub fn ks_distance<F: Fn(f64) -> f64>(&self, reference: F) -> f64 {
        let n = self.values.len() as f64;
        let mut best = 0.0f64;
        let mut first = 0;
        // Tied sample points form a single jump of the ECDF.
        for group in self.values.chunk_by(|a, b| a == b) {
            let x = group[0];
            let last = first + group.len();
            let above = last as f64 / n - reference(x);
            let below = reference(x.next_down()) - first as f64 / n;
            best = best.max(above.abs()).max(below.abs());
            first = last;
        }
        best
    }

    /// Supremum distance between two empirical CDFs.
    pub fn sup_distance(&self, other: &EcdfSummary) -> f64 {
        let (a, b) = (&self.values, &other.values);
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let (mut i, mut j) = (0usize, 0usize);
        let mut best = 0.0f64;
        while i < a.len() || j < b.len() {
            let x = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) => x.min(y),
                (Some(&x), None) => x,
                (None, Some(&y)) => y,
                (None, None) => unreachable!(),
            };
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            best = best.max((i as f64 / na - j as f64 / nb).abs());
        }
        best
    }
}

/// Standard normal CDF, computed from the complementary error function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Inverse of [`std_normal_cdf`] on (0, 1).
pub fn std_normal_quantile(p: f64) -> f64 {
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // One Halley step against the accurate CDF.
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let r = (std_normal_cdf(x) - p) / density;
    x - r / (1.0 + 0.5 * x * r)
}

/// CDF of `sigma |Z|`, the law of reflected Brownian motion with unit
/// volatility scaled by `sigma`, observed at time one.
pub fn half_normal_cdf(x: f64, sigma: f64) -> Result<f64, StatsError> {
    if !(sigma > 0.0) {
        return Err(StatsError::NonPositiveScale(sigma));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    // 2Φ(z) − 1 = erf(z/√2) = 1 − erfc(z/√2); erfc form keeps precision in the tail.
    Ok(1.0 - erfc(x / sigma / SQRT_2))
}
