//! Experiment configuration: JSON schema, defaults and validation.

use crate::arrival::TrafficConfig;
use crate::distributions::{PerturbationSpec, RawPerturbation, RawService, ServiceSpec, SpecError};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Generate,
    Workload,
    Prop1,
    Clt,
    Stability,
    Reversal,
    Identity,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Generate => "generate",
            ExperimentKind::Workload => "workload",
            ExperimentKind::Prop1 => "prop1",
            ExperimentKind::Clt => "clt",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Reversal => "reversal",
            ExperimentKind::Identity => "identity",
        }
    }
}

/// Declared branch for stability runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Largest allowed final median of max|hN(u) − u| / ln n.
    pub prop1_median: f64,
    /// KS distance to the half-normal limit at the largest scale.
    pub clt_ks: f64,
    /// Accepted band for median W(4t) / median W(t).
    pub clt_ratio_low: f64,
    pub clt_ratio_high: f64,
    /// Sup distance between W CDFs at the two largest scales.
    pub stability_sup_distance: f64,
    /// Required final/initial median ratio in the unstable branch.
    pub growth_ratio: f64,
    /// Engine versus oracle tolerance for the workload.
    pub workload_tolerance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            prop1_median: 1.0,
            clt_ks: 0.08,
            clt_ratio_low: 1.5,
            clt_ratio_high: 2.5,
            stability_sup_distance: 0.05,
            growth_ratio: 2.0,
            workload_tolerance: 1e-9,
        }
    }
}

/// A validated experiment configuration.
///
/// Serializes to the same schema [`parse_config_str`] accepts, minus the
/// worker count, which never affects results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub h: f64,
    pub perturbation: PerturbationSpec,
    pub services: ServiceSpec,
    pub truncation_margin: u64,
    pub scales: Vec<f64>,
    pub replications: usize,
    pub master_seed: u64,
    pub thresholds: Thresholds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
    #[serde(skip)]
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn traffic(&self, window_end: f64) -> TrafficConfig {
        TrafficConfig {
            h: self.h,
            perturbation: self.perturbation,
            window_end,
            truncation_margin: self.truncation_margin,
            phase: self.phase,
        }
    }

    /// Window for the single-path subcommands.
    pub fn single_window(&self) -> f64 {
        self.window_end
            .or_else(|| self.scales.last().copied())
            .unwrap_or(100.0 * self.h)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: Option<ExperimentKind>,
    h: Option<f64>,
    perturbation: Option<RawPerturbation>,
    services: Option<RawService>,
    truncation_margin: Option<u64>,
    scales: Option<Vec<f64>>,
    replications: Option<usize>,
    master_seed: Option<u64>,
    thresholds: Option<Thresholds>,
    expect: Option<Expectation>,
    workers: Option<usize>,
    window_end: Option<f64>,
    phase: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Missing {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Malformed(serde_json::Error),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("inadmissible parameters: {0}")]
    Inadmissible(String),
}

impl From<SpecError> for ConfigError {
    fn from(e: SpecError) -> Self {
        if e.is_inadmissible() {
            ConfigError::Inadmissible(e.to_string())
        } else {
            ConfigError::Schema(e.to_string())
        }
    }
}

fn default_scales(kind: ExperimentKind) -> Vec<f64> {
    match kind {
        ExperimentKind::Generate => vec![100.0],
        ExperimentKind::Workload => vec![1000.0],
        ExperimentKind::Prop1 => vec![1e2, 1e3, 1e4, 1e5],
        ExperimentKind::Clt => vec![2500.0, 1e4],
        ExperimentKind::Stability | ExperimentKind::Reversal => vec![1e3, 1e4],
        ExperimentKind::Identity => vec![50.0],
    }
}

fn default_replications(kind: ExperimentKind) -> usize {
    match kind {
        ExperimentKind::Generate | ExperimentKind::Workload => 1,
        ExperimentKind::Prop1 => 200,
        ExperimentKind::Clt | ExperimentKind::Stability | ExperimentKind::Reversal => 2000,
        ExperimentKind::Identity => 1000,
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Defaults for `kind` when no config file is given.
pub fn default_config(kind: ExperimentKind) -> ExperimentConfig {
    resolve(
        RawConfig {
            kind: Some(kind),
            h: None,
            perturbation: None,
            services: None,
            truncation_margin: None,
            scales: None,
            replications: None,
            master_seed: None,
            thresholds: None,
            expect: None,
            workers: None,
            window_end: None,
            phase: None,
        },
        kind,
    )
    .expect("defaults are valid")
}

/// Parses and validates a config for the `kind` subcommand.
pub fn parse_config_str(text: &str, kind: ExperimentKind) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ConfigError::Schema(e.to_string()),
        _ => ConfigError::Malformed(e),
    })?;
    resolve(raw, kind)
}

pub fn parse_config(path: &Path, kind: ExperimentKind) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Missing {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text, kind)
}

fn resolve(raw: RawConfig, kind: ExperimentKind) -> Result<ExperimentConfig, ConfigError> {
    if let Some(declared) = raw.kind {
        if declared != kind {
            return Err(ConfigError::Schema(format!(
                "config is for `{}` but the `{}` subcommand was invoked",
                declared.name(),
                kind.name()
            )));
        }
    }
    let h = raw.h.unwrap_or(1.0);
    if !(h > 0.0) || !h.is_finite() {
        return Err(ConfigError::Inadmissible(format!("h must be positive, got {h}")));
    }
    let perturbation = match raw.perturbation {
        Some(p) => PerturbationSpec::try_from(p)?,
        None => PerturbationSpec::Uniform { low: -1.0, high: 1.0 },
    };
    let services = match raw.services {
        Some(s) => ServiceSpec::try_from(s)?,
        None => match kind {
            ExperimentKind::Stability | ExperimentKind::Reversal => {
                ServiceSpec::Deterministic { mean: h }
            }
            _ => ServiceSpec::Exponential { mean: h },
        },
    };
    let scales = raw.scales.unwrap_or_else(|| default_scales(kind));
    if scales.is_empty() {
        return Err(ConfigError::Inadmissible("scales must not be empty".into()));
    }
    if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(ConfigError::Inadmissible("scales must be positive and finite".into()));
    }
    if scales.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ConfigError::Inadmissible("scales must be strictly increasing".into()));
    }
    let replications = raw.replications.unwrap_or_else(|| default_replications(kind));
    if replications == 0 {
        return Err(ConfigError::Inadmissible("replications must be at least 1".into()));
    }
    let thresholds = raw.thresholds.unwrap_or_default();
    let t = &thresholds;
    for (name, v) in [
        ("prop1_median", t.prop1_median),
        ("clt_ks", t.clt_ks),
        ("clt_ratio_low", t.clt_ratio_low),
        ("clt_ratio_high", t.clt_ratio_high),
        ("stability_sup_distance", t.stability_sup_distance),
        ("growth_ratio", t.growth_ratio),
        ("workload_tolerance", t.workload_tolerance),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(ConfigError::Inadmissible(format!("threshold {name} must be positive")));
        }
    }
    if t.clt_ratio_low > t.clt_ratio_high {
        return Err(ConfigError::Inadmissible("clt_ratio_low exceeds clt_ratio_high".into()));
    }
    let workers = raw.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(ConfigError::Inadmissible("workers must be at least 1".into()));
    }
    if let Some(w) = raw.window_end {
        if !(w > 0.0) || !w.is_finite() {
            return Err(ConfigError::Inadmissible(format!("window_end must be positive, got {w}")));
        }
    }
    if let Some(u) = raw.phase {
        if !(0.0..1.0).contains(&u) {
            return Err(ConfigError::Inadmissible(format!("phase must lie in [0, 1), got {u}")));
        }
    }

    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    match kind {
        ExperimentKind::Prop1 => {
            if scales[0] <= 1.0 {
                return Err(ConfigError::Inadmissible(
                    "prop1 scales must exceed 1 (the statistic divides by ln n)".into(),
                ));
            }
        }
        ExperimentKind::Clt => {
            if services.variance() == 0.0 {
                return Err(ConfigError::Inadmissible(
                    "Var V = 0 gives a degenerate diffusion limit; use the stability experiment for S/D/1"
                        .into(),
                ));
            }
            if !rel(services.mean(), h) {
                return Err(ConfigError::Inadmissible(format!(
                    "the diffusion limit needs critical loading E V = h, got E V = {} and h = {h}",
                    services.mean()
                )));
            }
        }
        ExperimentKind::Stability | ExperimentKind::Reversal => {
            if !services.is_deterministic() || !rel(services.mean(), h) {
                return Err(ConfigError::Inadmissible(format!(
                    "stability experiments need deterministic services V = h = {h}"
                )));
            }
        }
        _ => {}
    }

    Ok(ExperimentConfig {
        kind,
        h,
        perturbation,
        services,
        truncation_margin: raw.truncation_margin.unwrap_or(0),
        scales,
        replications,
        master_seed: raw.master_seed.unwrap_or(20_240_601),
        thresholds,
        expect: raw.expect,
        window_end: raw.window_end,
        phase: raw.phase,
        workers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_clt_config_gets_defaults() {
        let cfg = parse_config_str(
            r#"{"h": 1, "services": {"family": "exponential", "mean": 1},
                "perturbation": {"family": "uniform", "params": {"a": -1, "b": 1}}}"#,
            ExperimentKind::Clt,
        )
        .unwrap();
        assert_eq!(cfg.scales, vec![2500.0, 1e4]);
        assert_eq!(cfg.replications, 2000);
        assert_eq!(cfg.thresholds, Thresholds::default());
        assert_eq!(cfg.perturbation, PerturbationSpec::Uniform { low: -1.0, high: 1.0 });
    }

    #[test]
    fn error_classes() {
        let k = ExperimentKind::Prop1;
        assert!(matches!(parse_config_str("{\"h\": 1,", k), Err(ConfigError::Malformed(_))));
        assert!(matches!(parse_config_str("[1, 2", k), Err(ConfigError::Malformed(_))));
        assert!(matches!(parse_config_str(r#"{"h": "one"}"#, k), Err(ConfigError::Schema(_))));
        assert!(matches!(parse_config_str(r#"{"colour": 1}"#, k), Err(ConfigError::Schema(_))));
        assert!(matches!(
            parse_config_str(r#"{"perturbation": {"family": "cauchy", "params": {}}}"#, k),
            Err(ConfigError::Schema(_))
        ));
        let pareto = r#"{"perturbation": {"family": "shifted-pareto", "params": {"alpha": 0.9, "beta": 1}}}"#;
        match parse_config_str(pareto, k) {
            Err(ConfigError::Inadmissible(msg)) => assert!(msg.contains("E|ξ₀| < ∞"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config_str(r#"{"scales": [10, 5]}"#, k), Err(ConfigError::Inadmissible(_))));
        assert!(matches!(parse_config_str(r#"{"scales": [1, 5]}"#, k), Err(ConfigError::Inadmissible(_))));
        assert!(matches!(
            parse_config_str(r#"{"kind": "clt"}"#, k),
            Err(ConfigError::Schema(_))
        ));
        assert!(matches!(
            parse_config_str(r#"{"services": {"family": "deterministic", "mean": 1}}"#, ExperimentKind::Clt),
            Err(ConfigError::Inadmissible(_))
        ));
        assert!(matches!(
            parse_config_str(r#"{"services": {"family": "exponential", "mean": 1}}"#, ExperimentKind::Stability),
            Err(ConfigError::Inadmissible(_))
        ));
    }

    #[test]
    fn echo_round_trips_without_workers() {
        for kind in [
            ExperimentKind::Generate,
            ExperimentKind::Prop1,
            ExperimentKind::Clt,
            ExperimentKind::Stability,
            ExperimentKind::Reversal,
            ExperimentKind::Identity,
        ] {
            let mut cfg = default_config(kind);
            cfg.expect = Some(Expectation::Unstable);
            cfg.phase = Some(0.25);
            let text = serde_json::to_string(&cfg).unwrap();
            assert!(!text.contains("workers"));
            let mut back = parse_config_str(&text, kind).unwrap();
            back.workers = cfg.workers;
            assert_eq!(back, cfg);
        }
    }
}
