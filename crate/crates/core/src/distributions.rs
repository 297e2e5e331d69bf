//! Perturbation and service-time laws, and their indexed samplers.
//!
//! Perturbations are sampled by inversion with one uniform per customer
//! index. For indices far from the origin the draw is split into a
//! "tail" and a "body" part: customers in the dyadic block
//! `|j| ∈ [2^b, 2^{b+1})` are marked as tail members by a geometric skip
//! chain, independently with the probability that ξ lies beyond
//! `2^{b-3} h` on the side that moves the customer toward time zero
//! (lateness for `j < 0`, earliness for `j > 0`). Marked indices draw from
//! the conditional tail law, the rest from the conditional body law, so each
//! ξⱼ still has the full law and the ξⱼ stay independent. The split lets the
//! arrival generator enumerate every far customer that can reach the
//! observation window without touching the others.

use crate::seed::{open_unit, IndexedStream, SeedSpec, Stream};
use crate::stats::{std_normal_cdf, std_normal_quantile};
use rand_chacha::rand_core::RngCore;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("unknown perturbation family `{0}`")]
    UnknownFamily(String),
    #[error("unknown service family `{0}`")]
    UnknownServiceFamily(String),
    #[error("family `{family}` requires parameter `{param}`")]
    MissingParam { family: String, param: String },
    #[error("family `{family}` does not take parameter `{param}`")]
    UnexpectedParam { family: String, param: String },
    #[error(
        "pareto tail index alpha = {0} must exceed 1: perturbations need a finite mean (E|ξ₀| < ∞)"
    )]
    InfiniteMean(f64),
    #[error("inadmissible parameter: {0}")]
    Inadmissible(String),
    #[error("empty index range")]
    EmptyRange,
}

impl SpecError {
    /// True when the JSON had the right shape but the values are not allowed.
    pub fn is_inadmissible(&self) -> bool {
        matches!(self, SpecError::InfiniteMean(_) | SpecError::Inadmissible(_))
    }
}

/// Essential supremum of a non-negative random variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    Finite(f64),
    Unbounded,
}

impl Bound {
    pub fn is_finite(&self) -> bool {
        matches!(self, Bound::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Bound::Finite(c) => Some(c),
            Bound::Unbounded => None,
        }
    }
}

/// Law of a single perturbation ξ₀.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbationSpec {
    PointMass { value: f64 },
    Uniform { low: f64, high: f64 },
    Exponential { mean: f64 },
    /// ξ = −X with X exponential.
    NegatedExponential { mean: f64 },
    /// Lomax law on [0, ∞): P(ξ > x) = (1 + x/β)^(−α).
    ShiftedPareto { alpha: f64, beta: f64 },
    NegatedShiftedPareto { alpha: f64, beta: f64 },
    /// ±X with X Lomax(α, β); the sign is + with probability `p_plus`.
    TwoSidedPareto {
        alpha: f64,
        beta: f64,
        p_plus: f64,
        p_minus: f64,
    },
    Normal { mean: f64, sd: f64 },
}

/// JSON form: `{"family": "...", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPerturbation {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

fn param_names(family: &str) -> Option<&'static [&'static str]> {
    Some(match family {
        "point-mass" => &["value"],
        "uniform" => &["a", "b"],
        "exponential" | "negated-exponential" => &["mean"],
        "shifted-pareto" | "negated-shifted-pareto" => &["alpha", "beta"],
        "two-sided-pareto" => &["alpha", "beta", "p_plus"],
        "normal" => &["mean", "sd"],
        _ => return None,
    })
}

impl TryFrom<RawPerturbation> for PerturbationSpec {
    type Error = SpecError;

    fn try_from(raw: RawPerturbation) -> Result<Self, SpecError> {
        let names = param_names(&raw.family)
            .ok_or_else(|| SpecError::UnknownFamily(raw.family.clone()))?;
        if let Some(extra) = raw.params.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(SpecError::UnexpectedParam {
                family: raw.family.clone(),
                param: extra.clone(),
            });
        }
        let get = |name: &str| {
            raw.params
                .get(name)
                .copied()
                .ok_or_else(|| SpecError::MissingParam {
                    family: raw.family.clone(),
                    param: name.to_string(),
                })
        };
        let spec = match raw.family.as_str() {
            "point-mass" => PerturbationSpec::PointMass {
                value: get("value")?,
            },
            "uniform" => PerturbationSpec::Uniform {
                low: get("a")?,
                high: get("b")?,
            },
            "exponential" => PerturbationSpec::Exponential { mean: get("mean")? },
            "negated-exponential" => PerturbationSpec::NegatedExponential { mean: get("mean")? },
            "shifted-pareto" => PerturbationSpec::ShiftedPareto {
                alpha: get("alpha")?,
                beta: get("beta")?,
            },
            "negated-shifted-pareto" => PerturbationSpec::NegatedShiftedPareto {
                alpha: get("alpha")?,
                beta: get("beta")?,
            },
            "two-sided-pareto" => {
                let p_plus = get("p_plus")?;
                PerturbationSpec::TwoSidedPareto {
                    alpha: get("alpha")?,
                    beta: get("beta")?,
                    p_plus,
                    p_minus: 1.0 - p_plus,
                }
            }
            "normal" => PerturbationSpec::Normal {
                mean: get("mean")?,
                sd: get("sd")?,
            },
            _ => unreachable!("family names checked above"),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<PerturbationSpec> for RawPerturbation {
    fn from(spec: PerturbationSpec) -> Self {
        use PerturbationSpec::*;
        let params: Vec<(&str, f64)> = match spec {
            PointMass { value } => vec![("value", value)],
            Uniform { low, high } => vec![("a", low), ("b", high)],
            Exponential { mean } | NegatedExponential { mean } => vec![("mean", mean)],
            ShiftedPareto { alpha, beta } | NegatedShiftedPareto { alpha, beta } => {
                vec![("alpha", alpha), ("beta", beta)]
            }
            TwoSidedPareto {
                alpha,
                beta,
                p_plus,
                ..
            } => vec![("alpha", alpha), ("beta", beta), ("p_plus", p_plus)],
            Normal { mean, sd } => vec![("mean", mean), ("sd", sd)],
        };
        RawPerturbation {
            family: spec.family_name().to_string(),
            params: params
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

impl Serialize for PerturbationSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawPerturbation::from(*self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PerturbationSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawPerturbation::deserialize(d)?;
        PerturbationSpec::try_from(raw).map_err(serde::de::Error::custom)
    }
}

// Lomax(α, β) helpers on X ≥ 0.
fn lomax_sf(alpha: f64, beta: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        (-alpha * (x / beta).ln_1p()).exp()
    }
}

fn lomax_cdf(alpha: f64, beta: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-alpha * (x / beta).ln_1p()).exp_m1()
    }
}

fn lomax_quantile(alpha: f64, beta: f64, p: f64) -> f64 {
    beta * (-(-p).ln_1p() / alpha).exp_m1()
}

fn lomax_inverse_sf(alpha: f64, beta: f64, q: f64) -> f64 {
    beta * (-q.ln() / alpha).exp_m1()
}

/// E(X − x)⁺ for X ~ Lomax.
fn lomax_upper_excess(alpha: f64, beta: f64, x: f64) -> f64 {
    let mean = beta / (alpha - 1.0);
    if x <= 0.0 {
        mean - x
    } else {
        mean * ((1.0 - alpha) * (x / beta).ln_1p()).exp()
    }
}

/// E(−X − x)⁺ for X ~ Lomax.
fn lomax_lower_excess(alpha: f64, beta: f64, x: f64) -> f64 {
    if x >= 0.0 {
        return 0.0;
    }
    let c = -x;
    let mean = beta / (alpha - 1.0);
    c - mean * (1.0 - ((1.0 - alpha) * (c / beta).ln_1p()).exp())
}

fn exp_upper_excess(mean: f64, x: f64) -> f64 {
    if x <= 0.0 {
        mean - x
    } else {
        mean * (-x / mean).exp()
    }
}

fn exp_lower_excess(mean: f64, x: f64) -> f64 {
    if x >= 0.0 {
        return 0.0;
    }
    let c = -x;
    c + mean * (-c / mean).exp_m1()
}

impl PerturbationSpec {
    pub fn family_name(&self) -> &'static str {
        use PerturbationSpec::*;
        match self {
            PointMass { .. } => "point-mass",
            Uniform { .. } => "uniform",
            Exponential { .. } => "exponential",
            NegatedExponential { .. } => "negated-exponential",
            ShiftedPareto { .. } => "shifted-pareto",
            NegatedShiftedPareto { .. } => "negated-shifted-pareto",
            TwoSidedPareto { .. } => "two-sided-pareto",
            Normal { .. } => "normal",
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        use PerturbationSpec::*;
        let bad = |msg: String| Err(SpecError::Inadmissible(msg));
        let finite = |name: &str, v: f64| -> Result<(), SpecError> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(SpecError::Inadmissible(format!("{name} must be finite")))
            }
        };
        match *self {
            PointMass { value } => finite("value", value),
            Uniform { low, high } => {
                finite("a", low)?;
                finite("b", high)?;
                if low < high {
                    Ok(())
                } else {
                    bad(format!("uniform needs a < b, got a = {low}, b = {high}"))
                }
            }
            Exponential { mean } | NegatedExponential { mean } => {
                if mean.is_finite() && mean > 0.0 {
                    Ok(())
                } else {
                    bad(format!("exponential mean must be positive, got {mean}"))
                }
            }
            ShiftedPareto { alpha, beta }
            | NegatedShiftedPareto { alpha, beta }
            | TwoSidedPareto { alpha, beta, .. } => {
                if !(alpha > 1.0) || !alpha.is_finite() {
                    return Err(SpecError::InfiniteMean(alpha));
                }
                if !(beta > 0.0) || !beta.is_finite() {
                    return bad(format!("pareto scale beta must be positive, got {beta}"));
                }
                if let TwoSidedPareto { p_plus, p_minus, .. } = *self {
                    if !(0.0..=1.0).contains(&p_plus) || !(0.0..=1.0).contains(&p_minus) {
                        return bad(format!("p_plus must lie in [0, 1], got {p_plus}"));
                    }
                }
                Ok(())
            }
            Normal { mean, sd } => {
                finite("mean", mean)?;
                if sd.is_finite() && sd > 0.0 {
                    Ok(())
                } else {
                    bad(format!("normal sd must be positive, got {sd}"))
                }
            }
        }
    }

    /// Law of −ξ.
    pub fn negate(&self) -> PerturbationSpec {
        use PerturbationSpec::*;
        match *self {
            PointMass { value } => PointMass { value: -value },
            Uniform { low, high } => Uniform {
                low: -high,
                high: -low,
            },
            Exponential { mean } => NegatedExponential { mean },
            NegatedExponential { mean } => Exponential { mean },
            ShiftedPareto { alpha, beta } => NegatedShiftedPareto { alpha, beta },
            NegatedShiftedPareto { alpha, beta } => ShiftedPareto { alpha, beta },
            TwoSidedPareto {
                alpha,
                beta,
                p_plus,
                p_minus,
            } => TwoSidedPareto {
                alpha,
                beta,
                p_plus: p_minus,
                p_minus: p_plus,
            },
            Normal { mean, sd } => Normal { mean: -mean, sd },
        }
    }

    pub fn mean(&self) -> f64 {
        use PerturbationSpec::*;
        match *self {
            PointMass { value } => value,
            Uniform { low, high } => 0.5 * (low + high),
            Exponential { mean } => mean,
            NegatedExponential { mean } => -mean,
            ShiftedPareto { alpha, beta } => beta / (alpha - 1.0),
            NegatedShiftedPareto { alpha, beta } => -beta / (alpha - 1.0),
            TwoSidedPareto {
                alpha,
                beta,
                p_plus,
                p_minus,
            } => (p_plus - p_minus) * beta / (alpha - 1.0),
            Normal { mean, .. } => mean,
        }
    }

    /// Variance; infinite for Pareto laws with α ≤ 2.
    pub fn variance(&self) -> f64 {
        use PerturbationSpec::*;
        let lomax_second = |alpha: f64, beta: f64| {
            if alpha > 2.0 {
                2.0 * beta * beta / ((alpha - 1.0) * (alpha - 2.0))
            } else {
                f64::INFINITY
            }
        };
        match *self {
            PointMass { .. } => 0.0,
            Uniform { low, high } => (high - low).powi(2) / 12.0,
            Exponential { mean } | NegatedExponential { mean } => mean * mean,
            ShiftedPareto { alpha, beta } | NegatedShiftedPareto { alpha, beta } => {
                lomax_second(alpha, beta) - (beta / (alpha - 1.0)).powi(2)
            }
            TwoSidedPareto { alpha, beta, .. } => lomax_second(alpha, beta) - self.mean().powi(2),
            Normal { sd, .. } => sd * sd,
        }
    }

    /// Supremum of the support; `None` when unbounded above.
    pub fn upper_support_bound(&self) -> Option<f64> {
        use PerturbationSpec::*;
        match *self {
            PointMass { value } => Some(value),
            Uniform { high, .. } => Some(high),
            NegatedExponential { .. } | NegatedShiftedPareto { .. } => Some(0.0),
            TwoSidedPareto { p_plus, .. } if p_plus == 0.0 => Some(0.0),
            Exponential { .. } | ShiftedPareto { .. } | TwoSidedPareto { .. } | Normal { .. } => {
                None
            }
        }
    }

    /// Infimum of the support; `None` when unbounded below.
    pub fn lower_support_bound(&self) -> Option<f64> {
        self.negate().upper_support_bound().map(|u| -u)
    }

    /// Essential supremum of ξ⁺ = max(ξ, 0).
    pub fn xi_plus_bound(&self) -> Bound {
        match self.upper_support_bound() {
            Some(u) => Bound::Finite(u.max(0.0)),
            None => Bound::Unbounded,
        }
    }

    /// Essential supremum of ξ⁻ = max(−ξ, 0).
    pub fn xi_minus_bound(&self) -> Bound {
        self.negate().xi_plus_bound()
    }

    /// P(ξ ≤ x).
    pub fn cdf(&self, x: f64) -> f64 {
        use PerturbationSpec::*;
        match *self {
            PointMass { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
            Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
            Exponential { mean } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-x / mean).exp_m1()
                }
            }
            ShiftedPareto { alpha, beta } => lomax_cdf(alpha, beta, x),
            TwoSidedPareto {
                alpha,
                beta,
                p_plus,
                p_minus,
            } => {
                if x < 0.0 {
                    p_minus * lomax_sf(alpha, beta, -x)
                } else {
                    p_minus + p_plus * lomax_cdf(alpha, beta, x)
                }
            }
            Normal { mean, sd } => std_normal_cdf((x - mean) / sd),
            NegatedExponential { .. } | NegatedShiftedPareto { .. } => {
                // P(−X ≤ x) = P(X ≥ −x); X is continuous.
                self.negate().sf(-x)
            }
        }
    }

    /// P(ξ > x).
    pub fn sf(&self, x: f64) -> f64 {
        use PerturbationSpec::*;
        match *self {
            PointMass { value } => {
                if x < value {
                    1.0
                } else {
                    0.0
                }
            }
            Uniform { low, high } => ((high - x) / (high - low)).clamp(0.0, 1.0),
            Exponential { mean } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-x / mean).exp()
                }
            }
            ShiftedPareto { alpha, beta } => lomax_sf(alpha, beta, x),
            TwoSidedPareto {
                alpha,
                beta,
                p_plus,
                p_minus,
            } => {
                if x < 0.0 {
                    p_plus + p_minus * lomax_cdf(alpha, beta, -x)
                } else {
                    p_plus * lomax_sf(alpha, beta, x)
                }
            }
            Normal { mean, sd } => std_normal_cdf((mean - x) / sd),
            NegatedExponential { .. } | NegatedShiftedPareto { .. } => self.negate().cdf(-x),
        }
    }

    /// Inverse CDF on (0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        use PerturbationSpec::*;
        match *self {
            PointMass { value } => value,
            Uniform { low, high } => low + p * (high - low),
            Exponential { mean } => -mean * (-p).ln_1p(),
            ShiftedPareto { alpha, beta } => lomax_quantile(alpha, beta, p),
            TwoSidedPareto {
                alpha,
                beta,
                p_plus,
                p_minus,
            } => {
                if p < p_minus {
                    -lomax_inverse_sf(alpha, beta, p / p_minus)
                } else {
                    lomax_quantile(alpha, beta, ((p - p_minus) / p_plus).min(1.0))
                }
            }
            Normal { mean, sd } => mean + sd * std_normal_quantile(p),
            NegatedExponential { .. } | NegatedShiftedPareto { .. } => {
                -self.negate().inverse_sf(p)
            }
        }
    }

    /// The x with P(ξ > x) = q, for q in (0, 1).
    pub fn inverse_sf(&self, q: f64) -> f64 {
        use PerturbationSpec::*;
        match *self {
            PointMass { value } => value,
            Uniform { low, high } => high - q * (high - low),
            Exponential { mean } => -mean * q.ln(),
            ShiftedPareto { alpha, beta } => lomax_inverse_sf(alpha, beta, q),
            TwoSidedPareto {
                alpha,
                beta,
                p_plus,
                p_minus,
            } => {
                if q < p_plus {
                    lomax_inverse_sf(alpha, beta, q / p_plus)
                } else {
                    -lomax_quantile(alpha, beta, ((q - p_plus) / p_minus).min(1.0))
                }
            }
            Normal { mean, sd } => mean - sd * std_normal_quantile(q),
            NegatedExponential { .. } | NegatedShiftedPareto { .. } => -self.negate().quantile(q),
        }
    }

    /// E(ξ − x)⁺, the integrated right tail beyond `x`.
    pub fn excess_mean(&self, x: f64) -> f64 {
        use PerturbationSpec::*;
        match *self {
            PointMass { value } => (value - x).max(0.0),
            Uniform { low, high } => {
                if x >= high {
                    0.0
                } else if x <= low {
                    0.5 * (low + high) - x
                } else {
                    (high - x).powi(2) / (2.0 * (high - low))
                }
            }
            Exponential { mean } => exp_upper_excess(mean, x),
            NegatedExponential { mean } => exp_lower_excess(mean, x),
            ShiftedPareto { alpha, beta } => lomax_upper_excess(alpha, beta, x),
            NegatedShiftedPareto { alpha, beta } => lomax_lower_excess(alpha, beta, x),
            TwoSidedPareto {
                alpha,
                beta,
                p_plus,
                p_minus,
            } => {
                p_plus * lomax_upper_excess(alpha, beta, x)
                    + p_minus * lomax_lower_excess(alpha, beta, x)
            }
            Normal { mean, sd } => {
                let z = (mean - x) / sd;
                let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                (mean - x) * std_normal_cdf(z) + sd * density
            }
        }
    }

    /// E ξ⁺.
    pub fn mean_positive_part(&self) -> f64 {
        self.excess_mean(0.0)
    }

    /// E ξ⁻.
    pub fn mean_negative_part(&self) -> f64 {
        self.negate().excess_mean(0.0)
    }

    /// P(|ξ| > x).
    pub fn abs_sf(&self, x: f64) -> f64 {
        (self.sf(x) + self.negate().sf(x)).min(1.0)
    }
}

/// Service-time law for Vₙ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceSpec {
    Deterministic { mean: f64 },
    Exponential { mean: f64 },
    /// Uniform with the given mean and variance.
    Uniform { mean: f64, variance: f64 },
    LogNormal { mean: f64, variance: f64 },
}

/// JSON form: `{"family": "...", "mean": m, "variance": v}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawService {
    pub family: String,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
}

impl TryFrom<RawService> for ServiceSpec {
    type Error = SpecError;

    fn try_from(raw: RawService) -> Result<Self, SpecError> {
        let need_variance = || {
            raw.variance.ok_or_else(|| SpecError::MissingParam {
                family: raw.family.clone(),
                param: "variance".into(),
            })
        };
        let spec = match raw.family.as_str() {
            "deterministic" => {
                if let Some(v) = raw.variance {
                    if v != 0.0 {
                        return Err(SpecError::Inadmissible(format!(
                            "deterministic services have zero variance, got {v}"
                        )));
                    }
                }
                ServiceSpec::Deterministic { mean: raw.mean }
            }
            "exponential" => {
                if let Some(v) = raw.variance {
                    if (v - raw.mean * raw.mean).abs() > 1e-12 * raw.mean * raw.mean {
                        return Err(SpecError::Inadmissible(format!(
                            "exponential variance is mean² = {}, got {v}",
                            raw.mean * raw.mean
                        )));
                    }
                }
                ServiceSpec::Exponential { mean: raw.mean }
            }
            "uniform" => ServiceSpec::Uniform {
                mean: raw.mean,
                variance: need_variance()?,
            },
            "lognormal" => ServiceSpec::LogNormal {
                mean: raw.mean,
                variance: need_variance()?,
            },
            other => return Err(SpecError::UnknownServiceFamily(other.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ServiceSpec> for RawService {
    fn from(spec: ServiceSpec) -> Self {
        let family = match spec {
            ServiceSpec::Deterministic { .. } => "deterministic",
            ServiceSpec::Exponential { .. } => "exponential",
            ServiceSpec::Uniform { .. } => "uniform",
            ServiceSpec::LogNormal { .. } => "lognormal",
        };
        RawService {
            family: family.into(),
            mean: spec.mean(),
            variance: Some(spec.variance()),
        }
    }
}

impl Serialize for ServiceSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawService::from(*self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ServiceSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawService::deserialize(d)?;
        ServiceSpec::try_from(raw).map_err(serde::de::Error::custom)
    }
}

impl ServiceSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let mean = self.mean();
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(SpecError::Inadmissible(format!(
                "service mean must be positive, got {mean}"
            )));
        }
        match *self {
            ServiceSpec::Uniform { mean, variance } => {
                if !(variance > 0.0) {
                    return Err(SpecError::Inadmissible(
                        "uniform services need positive variance".into(),
                    ));
                }
                if (3.0 * variance).sqrt() > mean {
                    return Err(SpecError::Inadmissible(format!(
                        "uniform service with mean {mean} and variance {variance} takes negative values"
                    )));
                }
            }
            ServiceSpec::LogNormal { variance, .. } => {
                if !(variance > 0.0) || !variance.is_finite() {
                    return Err(SpecError::Inadmissible(
                        "lognormal services need positive finite variance".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ServiceSpec::Deterministic { mean }
            | ServiceSpec::Exponential { mean }
            | ServiceSpec::Uniform { mean, .. }
            | ServiceSpec::LogNormal { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            ServiceSpec::Deterministic { .. } => 0.0,
            ServiceSpec::Exponential { mean } => mean * mean,
            ServiceSpec::Uniform { variance, .. } | ServiceSpec::LogNormal { variance, .. } => {
                variance
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, ServiceSpec::Deterministic { .. })
    }

    /// Service time from one uniform on (0, 1).
    pub fn from_uniform(&self, u: f64) -> f64 {
        match *self {
            ServiceSpec::Deterministic { mean } => mean,
            ServiceSpec::Exponential { mean } => -mean * (-u).ln_1p(),
            ServiceSpec::Uniform { mean, variance } => {
                mean + (3.0 * variance).sqrt() * (2.0 * u - 1.0)
            }
            ServiceSpec::LogNormal { mean, variance } => {
                let s2 = (variance / (mean * mean)).ln_1p();
                let mu = mean.ln() - 0.5 * s2;
                (mu + s2.sqrt() * std_normal_quantile(u)).exp()
            }
        }
    }
}

/// Service draws indexed by customer.
#[derive(Clone)]
pub struct ServiceStream {
    spec: ServiceSpec,
    stream: IndexedStream,
}

impl ServiceStream {
    pub fn new(spec: ServiceSpec, seed: SeedSpec) -> Self {
        Self {
            spec,
            stream: seed.indexed(),
        }
    }

    pub fn value(&mut self, index: i64) -> f64 {
        if let ServiceSpec::Deterministic { mean } = self.spec {
            return mean;
        }
        self.spec.from_uniform(open_unit(self.stream.words(index)[0]))
    }

    pub fn values(&mut self, range: RangeInclusive<i64>) -> Vec<f64> {
        if let ServiceSpec::Deterministic { mean } = self.spec {
            return vec![mean; range.count()];
        }
        self.stream.seek(*range.start());
        range
            .map(|_| self.spec.from_uniform(open_unit(self.stream.next_words()[0])))
            .collect()
    }
}

/// Indices with |j| below this are drawn without a tail split.
pub const PLAIN_RADIUS: u64 = 8;
/// Largest dyadic block level; blocks cover |j| up to 2^63.
pub const MAX_LEVEL: u32 = 62;

/// Dyadic block `|j| ∈ [2^level, 2^(level+1))` on one side of the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Block {
    pub negative: bool,
    pub level: u32,
}

impl Block {
    pub fn of(index: i64) -> Option<Block> {
        let magnitude = index.unsigned_abs();
        if magnitude < PLAIN_RADIUS {
            return None;
        }
        Some(Block {
            negative: index < 0,
            level: (63 - magnitude.leading_zeros()).min(MAX_LEVEL),
        })
    }

    pub fn start_magnitude(&self) -> u64 {
        1u64 << self.level
    }

    pub fn len(&self) -> u64 {
        if self.level == MAX_LEVEL {
            // The last block also absorbs 2^63 on the negative side.
            (1u64 << 63) - (1u64 << MAX_LEVEL) + u64::from(self.negative)
        } else {
            1u64 << self.level
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index at offset `k` from the block start (offset grows away from zero).
    pub fn index_at(&self, offset: u64) -> i64 {
        let magnitude = self.start_magnitude() + offset;
        if self.negative {
            (magnitude as i128).wrapping_neg() as i64
        } else {
            magnitude as i64
        }
    }

    pub fn offset_of(&self, index: i64) -> u64 {
        index.unsigned_abs() - self.start_magnitude()
    }

    /// Indices covered, in increasing order.
    pub fn index_range(&self) -> RangeInclusive<i64> {
        let a = self.index_at(0);
        let b = self.index_at(self.len() - 1);
        if self.negative {
            b..=a
        } else {
            a..=b
        }
    }

    /// Split threshold in time units: 2^(level−3) h.
    pub fn threshold(&self, spacing: f64) -> f64 {
        spacing * 2f64.powi(self.level as i32 - 3)
    }

    fn chain_id(&self) -> u64 {
        (u64::from(self.level) << 1) | u64::from(self.negative)
    }
}

/// Indexed perturbation sampler for one (spec, seed, spacing).
#[derive(Clone)]
pub struct PerturbationStream {
    spec: PerturbationSpec,
    seed: SeedSpec,
    spacing: f64,
    values: IndexedStream,
}

impl PerturbationStream {
    pub fn new(spec: PerturbationSpec, seed: SeedSpec, spacing: f64) -> Self {
        Self {
            spec,
            seed,
            spacing,
            values: seed.indexed(),
        }
    }

    pub fn spec(&self) -> &PerturbationSpec {
        &self.spec
    }

    /// Probability that an index in `block` is a tail member.
    pub fn tail_probability(&self, block: Block) -> f64 {
        let tau = block.threshold(self.spacing);
        if block.negative {
            self.spec.sf(tau)
        } else {
            self.spec.cdf(-tau)
        }
    }

    /// Offsets (from the block start) of the tail members of `block`, ascending.
    pub fn tail_offsets(&self, block: Block) -> Vec<u64> {
        let q = self.tail_probability(block);
        let n = block.len();
        if q <= 0.0 {
            return Vec::new();
        }
        if q >= 1.0 {
            assert!(
                n <= 1 << 32,
                "tail block of {n} certain members; perturbation support too wide for spacing"
            );
            return (0..n).collect();
        }
        let mut rng = self
            .seed
            .replication()
            .stream(Stream::TailChain)
            .substream(block.chain_id() ^ stream_salt(self.seed.stream));
        let log_fail = (-q).ln_1p();
        let mut out = Vec::new();
        let mut next = 0u64;
        loop {
            let u = open_unit(rng.next_u64());
            let skip = (u.ln() / log_fail).floor();
            if skip >= (n - next) as f64 {
                break;
            }
            next += skip as u64;
            out.push(next);
            next += 1;
            if next >= n {
                break;
            }
        }
        out
    }

    fn draw(&self, u: f64, split: Option<(Block, f64, bool)>) -> f64 {
        match split {
            None => self.spec.quantile(u),
            Some((block, q, in_tail)) => match (block.negative, in_tail) {
                (true, true) => self.spec.inverse_sf(q * u),
                (true, false) => self.spec.quantile((1.0 - q) * u),
                (false, true) => self.spec.quantile(q * u),
                (false, false) => self.spec.inverse_sf((1.0 - q) * u),
            },
        }
    }

    /// ξⱼ for a tail member of `block` (caller guarantees membership).
    pub fn tail_value(&mut self, block: Block, index: i64, q: f64) -> f64 {
        let u = open_unit(self.values.words(index)[0]);
        self.draw(u, Some((block, q, true)))
    }

    pub fn value(&mut self, index: i64) -> f64 {
        let u = open_unit(self.values.words(index)[0]);
        let split = Block::of(index).map(|b| {
            let q = self.tail_probability(b);
            let member = self.tail_offsets(b).binary_search(&b.offset_of(index)).is_ok();
            (b, q, member)
        });
        self.draw(u, split)
    }

    /// ξⱼ for every j in `range`, in order.
    pub fn values(&mut self, range: RangeInclusive<i64>) -> Vec<f64> {
        let (lo, hi) = (*range.start(), *range.end());
        if lo > hi {
            return Vec::new();
        }
        let mut out = Vec::with_capacity((hi - lo + 1) as usize);
        let mut current: Option<(Block, f64, Vec<u64>)> = None;
        self.values.seek(lo);
        for j in lo..=hi {
            let u = open_unit(self.values.next_words()[0]);
            let split = match Block::of(j) {
                None => None,
                Some(b) => {
                    if current.as_ref().map(|c| c.0) != Some(b) {
                        let q = self.tail_probability(b);
                        current = Some((b, q, self.tail_offsets(b)));
                    }
                    let (_, q, offsets) = current.as_ref().unwrap();
                    Some((b, *q, offsets.binary_search(&b.offset_of(j)).is_ok()))
                }
            };
            out.push(self.draw(u, split));
        }
        out
    }
}

fn stream_salt(stream: Stream) -> u64 {
    // Chains for distinct value streams (e.g. forward and negated paths
    // sharing a replication) must not coincide.
    match stream {
        Stream::Perturbation => 0,
        other => (other as u64 + 1) << 40,
    }
}

/// ξⱼ for every j in `range`; the draw for j depends only on (spec, seed, spacing, j).
pub fn sample_perturbations(
    spec: &PerturbationSpec,
    range: RangeInclusive<i64>,
    seed: SeedSpec,
    spacing: f64,
) -> Result<Vec<f64>, SpecError> {
    spec.validate()?;
    if range.is_empty() {
        return Err(SpecError::EmptyRange);
    }
    if !(spacing > 0.0) {
        return Err(SpecError::Inadmissible(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    Ok(PerturbationStream::new(*spec, seed, spacing).values(range))
}
