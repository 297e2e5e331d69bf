//! Monte Carlo experiments with pass/fail verdicts.
//!
//! Each replication owns its random streams (see [`replication_index`]), so
//! results depend only on the config and master seed, never on the number of
//! workers or on scheduling order.

use crate::arrival::{generate_traffic, leak_bound, mgf_bound, ArrivalError, TrafficSample};
use crate::config::{ExperimentConfig, ExperimentKind, Expectation};
use crate::distributions::{PerturbationSpec, ServiceSpec};
use crate::seed::{half_open_unit, Replication, SeedSpec, Stream};
use crate::stats::{half_normal_cdf, EcdfSummary, StatsError};
use crate::workload::{
    beta_decomposition, bounded_workload_bound, brute_force_workload_with, epoch_services,
    reversed_max, reversed_running_max, workload_path, workload_path_with, ReversalDiagnostics,
    WorkloadError, WorkloadPath,
};
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Arrival(#[from] ArrivalError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleSummary {
    pub scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub n: usize,
    pub median: f64,
    pub q90: f64,
    pub mean: f64,
    pub max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// One per-replication statistic, as written to the statistics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatisticRow {
    pub scale: f64,
    pub replication: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub per_scale: Vec<ScaleSummary>,
    pub verdicts: Vec<Verdict>,
    pub leak_bound: f64,
    pub elapsed_seconds: f64,
    #[serde(skip)]
    pub statistics: Vec<StatisticRow>,
    #[serde(skip)]
    pub reversed_statistics: Vec<StatisticRow>,
    #[serde(skip)]
    pub reversal_diagnostics: Option<ReversalDiagnostics>,
    #[serde(skip)]
    pub sample: Option<TrafficSample>,
    #[serde(skip)]
    pub workload: Option<WorkloadPath>,
}

impl ExperimentReport {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            config: cfg.clone(),
            per_scale: Vec::new(),
            verdicts: Vec::new(),
            leak_bound: leak_bound(&cfg.perturbation, cfg.h),
            elapsed_seconds: 0.0,
            statistics: Vec::new(),
            reversed_statistics: Vec::new(),
            reversal_diagnostics: None,
            sample: None,
            workload: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

const FORWARD: u64 = 0;
const REVERSED: u64 = 1;
const MGF: u64 = 2;

/// Replication id for (direction, scale position, replication number).
pub fn replication_index(direction: u64, scale_index: usize, rep: usize) -> u64 {
    (direction << 48) | ((scale_index as u64) << 32) | rep as u64
}

fn replication(cfg_seed: u64, direction: u64, scale_index: usize, rep: usize) -> Replication {
    Replication::new(cfg_seed, replication_index(direction, scale_index, rep))
}

/// Runs `f(0..n)` on `workers` threads and returns results in index order.
pub fn parallel_map<T, F>(workers: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

fn summarize(scale: f64, label: Option<&str>, values: &[f64]) -> Result<ScaleSummary> {
    let e = EcdfSummary::from_slice(values)?;
    Ok(ScaleSummary {
        scale,
        label: label.map(str::to_string),
        n: e.len(),
        median: e.median(),
        q90: e.quantile(0.9)?,
        mean: e.mean(),
        max: e.max(),
        ks_distance: None,
        violations: None,
        max_abs_error: None,
    })
}

fn rows(scale: f64, values: &[f64]) -> impl Iterator<Item = StatisticRow> + '_ {
    values.iter().enumerate().map(move |(replication, &value)| StatisticRow {
        scale,
        replication,
        value,
    })
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match cfg.kind {
        ExperimentKind::Generate => run_generate(cfg),
        ExperimentKind::Workload => run_workload(cfg),
        ExperimentKind::Prop1 => run_prop1(cfg),
        ExperimentKind::Clt => run_clt(cfg),
        ExperimentKind::Stability => run_stability(cfg),
        ExperimentKind::Reversal => run_reversal(cfg),
        ExperimentKind::Identity => run_identity(cfg),
    }
}

/// One sample path on [0, T].
pub fn run_generate(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = ExperimentReport::new(cfg);
    let window = cfg.single_window();
    let rep = replication(cfg.master_seed, FORWARD, 0, 0);
    let sample = generate_traffic(&cfg.traffic(window), rep.stream(Stream::Perturbation))?;
    let h = cfg.h;
    let n = sample.epochs().len();
    report.verdicts.push(Verdict::new(
        "epochs_in_window",
        sample.epochs().iter().all(|a| (0.0..=window).contains(a)),
        format!("{n} arrivals in [0, {window}], {:.4} per unit time against 1/h = {:.4}", n as f64 / window, 1.0 / h),
    ));
    report.sample = Some(sample);
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// One workload path sampled on a grid of step h/10 over [0, T].
pub fn run_workload(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = ExperimentReport::new(cfg);
    let window = cfg.single_window();
    let rep = replication(cfg.master_seed, FORWARD, 0, 0);
    let sample = generate_traffic(&cfg.traffic(window), rep.stream(Stream::Perturbation))?;
    let steps = ((window / (cfg.h / 10.0)).ceil() as usize).min(1_000_000);
    let probes: Vec<f64> = (0..=steps)
        .map(|k| (k as f64 * window / steps as f64).min(window))
        .collect();
    let path = workload_path(&sample, &cfg.services, rep.stream(Stream::Service), &probes)?;
    let mut summary = summarize(window, None, &path.values)?;
    summary.max = summary.max.max(path.running_max);
    report.per_scale.push(summary);
    report.statistics = rows(window, &path.values).collect();
    report.verdicts.push(Verdict::new(
        "workload_nonnegative",
        path.values.iter().all(|&w| w >= 0.0),
        format!("{} probes, running max {:.4}", probes.len(), path.running_max),
    ));
    report.sample = Some(sample);
    report.workload = Some(path);
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// max over u ∈ [0, n] of |h N(u) − u|, divided by ln n.
pub fn run_prop1(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    if cfg.scales.iter().any(|&n| n <= 1.0) {
        return Err(ExperimentError::Precondition("prop1 scales must exceed 1".into()));
    }
    let mut report = ExperimentReport::new(cfg);
    let mut medians = Vec::new();
    for (si, &n) in cfg.scales.iter().enumerate() {
        let traffic = cfg.traffic(n);
        let values = parallel_map(cfg.workers, cfg.replications, |rep| {
            let seed = replication(cfg.master_seed, FORWARD, si, rep).stream(Stream::Perturbation);
            Ok(generate_traffic(&traffic, seed)?.max_deviation() / n.ln())
        })?;
        let summary = summarize(n, None, &values)?;
        medians.push(summary.median);
        report.per_scale.push(summary);
        report.statistics.extend(rows(n, &values));
    }
    let tail = &medians[medians.len().saturating_sub(3)..];
    report.verdicts.push(Verdict::new(
        "prop1_medians_decreasing",
        strictly_decreasing(tail),
        format!("medians over the last {} scales: {}", tail.len(), fmt_list(tail)),
    ));
    let last = *medians.last().expect("scales are non-empty");
    report.verdicts.push(Verdict::new(
        "prop1_final_median",
        last < cfg.thresholds.prop1_median,
        format!("final median {last:.4} against threshold {}", cfg.thresholds.prop1_median),
    ));
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// W(t) at t for every replication of one scale.
fn workload_sample(
    cfg: &ExperimentConfig,
    spec: PerturbationSpec,
    direction: u64,
    si: usize,
    t: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut traffic = cfg.traffic(t);
    traffic.perturbation = spec;
    parallel_map(cfg.workers, cfg.replications, |rep| {
        let r = replication(cfg.master_seed, direction, si, rep);
        let sample = generate_traffic(&traffic, r.stream(Stream::Perturbation))?;
        let path = workload_path(&sample, &cfg.services, r.stream(Stream::Service), &[t])?;
        Ok((path.values[0], path.running_max))
    })
}

/// t^{-1/2} W(t) against σ|Z| with σ² = Var V / h.
pub fn run_clt(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let var = cfg.services.variance();
    if var == 0.0 {
        return Err(ExperimentError::Precondition(
            "Var V = 0: the diffusion limit is degenerate, use the stability experiment".into(),
        ));
    }
    if (cfg.services.mean() - cfg.h).abs() > 1e-12 * cfg.h {
        return Err(ExperimentError::Precondition("the diffusion limit needs E V = h".into()));
    }
    let sigma = clt_sigma(&cfg.services, cfg.h);
    let mut report = ExperimentReport::new(cfg);
    let mut medians = Vec::new();
    let mut ks = Vec::new();
    for (si, &t) in cfg.scales.iter().enumerate() {
        let scaled: Vec<f64> = workload_sample(cfg, cfg.perturbation, FORWARD, si, t)?
            .into_iter()
            .map(|(w, _)| w / t.sqrt())
            .collect();
        let mut summary = summarize(t, None, &scaled)?;
        let e = EcdfSummary::from_slice(&scaled)?;
        let d = e.ks_distance(|x| half_normal_cdf(x, sigma).expect("sigma is positive"));
        summary.ks_distance = Some(d);
        ks.push(d);
        medians.push(summary.median * t.sqrt());
        report.per_scale.push(summary);
        report.statistics.extend(rows(t, &scaled));
    }
    let last_ks = *ks.last().expect("scales are non-empty");
    let largest = *cfg.scales.last().expect("scales are non-empty");
    report.verdicts.push(Verdict::new(
        "clt_ks",
        last_ks <= cfg.thresholds.clt_ks,
        format!(
            "KS distance {last_ks:.4} at t = {largest} against half-normal(σ = {sigma:.4}), threshold {}",
            cfg.thresholds.clt_ks
        ),
    ));
    for (i, &t) in cfg.scales.iter().enumerate() {
        if let Some(j) = cfg.scales.iter().position(|&u| (u - 4.0 * t).abs() <= 1e-9 * u) {
            let ratio = medians[j] / medians[i];
            let (lo, hi) = (cfg.thresholds.clt_ratio_low, cfg.thresholds.clt_ratio_high);
            report.verdicts.push(Verdict::new(
                format!("clt_median_growth_{t}"),
                (lo..=hi).contains(&ratio),
                format!("median W({})/median W({t}) = {ratio:.4}, accepted [{lo}, {hi}]", 4.0 * t),
            ));
        }
    }
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// σ = sqrt(Var V / h).
pub fn clt_sigma(services: &ServiceSpec, h: f64) -> f64 {
    (services.variance() / h).sqrt()
}

/// Branch predicted by theory: stable iff ξ⁺ is bounded.
pub fn predicted_branch(spec: &PerturbationSpec) -> Expectation {
    if spec.xi_plus_bound().is_finite() {
        Expectation::Stable
    } else {
        Expectation::Unstable
    }
}

struct StabilityRun {
    summaries: Vec<ScaleSummary>,
    statistics: Vec<StatisticRow>,
    verdicts: Vec<Verdict>,
}

fn stability_direction(
    cfg: &ExperimentConfig,
    spec: PerturbationSpec,
    direction: u64,
    branch: Expectation,
    label: Option<&str>,
) -> Result<StabilityRun> {
    let bound = bounded_workload_bound(&spec, cfg.h);
    let mut summaries = Vec::new();
    let mut statistics = Vec::new();
    let mut samples = Vec::new();
    let mut total_violations = 0u64;
    for (si, &t) in cfg.scales.iter().enumerate() {
        let sims = workload_sample(cfg, spec, direction, si, t)?;
        let values: Vec<f64> = sims.iter().map(|s| s.0).collect();
        let mut summary = summarize(t, label, &values)?;
        if let Some(b) = bound {
            let v = sims.iter().filter(|s| s.1 > b + 1e-9 * b).count() as u64;
            summary.violations = Some(v);
            total_violations += v;
        }
        statistics.extend(rows(t, &values));
        samples.push(EcdfSummary::new(values)?);
        summaries.push(summary);
    }
    let prefix = label.map_or(String::new(), |l| format!("{l}_"));
    let medians: Vec<f64> = summaries.iter().map(|s| s.median).collect();
    let mut verdicts = Vec::new();
    match branch {
        Expectation::Stable => {
            let name = format!("{prefix}stable_cdf_distance");
            if samples.len() < 2 {
                verdicts.push(Verdict::new(name, false, "the stable check needs two scales"));
            } else {
                let k = samples.len();
                let d = samples[k - 2].sup_distance(&samples[k - 1]);
                let thr = cfg.thresholds.stability_sup_distance;
                verdicts.push(Verdict::new(
                    name,
                    d <= thr,
                    format!(
                        "sup distance {d:.4} between W({}) and W({}), threshold {thr}",
                        cfg.scales[k - 2],
                        cfg.scales[k - 1]
                    ),
                ));
            }
            if let Some(b) = bound {
                verdicts.push(Verdict::new(
                    format!("{prefix}stable_bound"),
                    total_violations == 0,
                    format!("{total_violations} paths exceeded the pathwise bound {b}"),
                ));
            }
        }
        Expectation::Unstable => {
            let ratio = medians[medians.len() - 1] / medians[0];
            let thr = cfg.thresholds.growth_ratio;
            verdicts.push(Verdict::new(
                format!("{prefix}unstable_growth"),
                strictly_increasing(&medians) && ratio >= thr,
                format!("medians {}, final/initial {ratio:.4}, required {thr}", fmt_list(&medians)),
            ));
        }
    }
    Ok(StabilityRun {
        summaries,
        statistics,
        verdicts,
    })
}

fn branch_name(b: Expectation) -> &'static str {
    match b {
        Expectation::Stable => "stable",
        Expectation::Unstable => "unstable",
    }
}

/// S/D/1 stability check for the branch declared in the config, or the
/// one theory predicts when none is declared.
pub fn run_stability(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    require_sd1(cfg)?;
    let theory = predicted_branch(&cfg.perturbation);
    let branch = cfg.expect.unwrap_or(theory);
    let mut report = ExperimentReport::new(cfg);
    let run = stability_direction(cfg, cfg.perturbation, FORWARD, branch, None)?;
    report.per_scale = run.summaries;
    report.statistics = run.statistics;
    report.verdicts = run.verdicts;
    if let Some(declared) = cfg.expect {
        report.verdicts.push(Verdict::new(
            "expectation_matches_theory",
            declared == theory,
            format!(
                "declared {}, theory predicts {} (ξ⁺ {})",
                branch_name(declared),
                branch_name(theory),
                if theory == Expectation::Stable { "bounded" } else { "unbounded" }
            ),
        ));
    }
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn require_sd1(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.services {
        ServiceSpec::Deterministic { mean } if (mean - cfg.h).abs() <= 1e-12 * cfg.h => Ok(()),
        _ => Err(ExperimentError::Precondition(
            "stability experiments need deterministic services V = h".into(),
        )),
    }
}

/// Stability of the forward stream and of its time reversal (ξ ↦ −ξ).
pub fn run_reversal(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    require_sd1(cfg)?;
    let forward_spec = cfg.perturbation;
    let reversed_spec = forward_spec.negate();
    let forward_branch = predicted_branch(&forward_spec);
    let reversed_branch = predicted_branch(&reversed_spec);
    let mut report = ExperimentReport::new(cfg);

    let forward = stability_direction(cfg, forward_spec, FORWARD, forward_branch, Some("forward"))?;
    let reversed = stability_direction(cfg, reversed_spec, REVERSED, reversed_branch, Some("reversed"))?;
    let forward_ok = forward.verdicts.iter().all(|v| v.passed);
    let reversed_ok = reversed.verdicts.iter().all(|v| v.passed);
    report.per_scale = forward.summaries;
    report.per_scale.extend(reversed.summaries);
    report.statistics = forward.statistics;
    report.reversed_statistics = reversed.statistics;
    report.verdicts = forward.verdicts;
    report.verdicts.extend(reversed.verdicts);

    let asymmetry = if forward_branch == reversed_branch {
        let tails = if forward_branch == Expectation::Stable { "bounded" } else { "unbounded" };
        Verdict::new(
            "asymmetry",
            true,
            format!("asymmetry not applicable: both tails {tails}, both directions {}", branch_name(forward_branch)),
        )
    } else {
        let expected_order = forward_branch == Expectation::Stable;
        Verdict::new(
            "asymmetry",
            expected_order && forward_ok && reversed_ok,
            format!(
                "forward {} ({}), reversed {} ({})",
                branch_name(forward_branch),
                if forward_ok { "confirmed" } else { "not confirmed" },
                branch_name(reversed_branch),
                if reversed_ok { "confirmed" } else { "not confirmed" },
            ),
        )
    };
    report.verdicts.push(asymmetry);

    // Loynes representation of the forward queue at the largest scale, first replication.
    let si = cfg.scales.len() - 1;
    let t = cfg.scales[si];
    let mut traffic = cfg.traffic(t);
    traffic.perturbation = reversed_spec;
    let r = replication(cfg.master_seed, REVERSED, si, 0);
    let negated = generate_traffic(&traffic, r.stream(Stream::Perturbation))?;
    let grid: Vec<f64> = (0..=100).map(|k| t * k as f64 / 100.0).collect();
    report.reversal_diagnostics = Some(reversed_running_max(&negated, &cfg.services, t, &grid)?);

    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Per-replication outcome of the exactness suite.
#[derive(Debug, Clone, Copy, Default)]
struct IdentityOutcome {
    decomposition_violations: u64,
    beta_violations: u64,
    max_abs_error: f64,
}

fn probe_times(seed: SeedSpec, offset: i64, count: usize, window: f64) -> Vec<f64> {
    let mut stream = seed.indexed();
    let mut t: Vec<f64> = (0..count as i64)
        .map(|k| window * half_open_unit(stream.words(offset + k)[0]))
        .collect();
    t.sort_by(f64::total_cmp);
    t
}

fn identity_replication(cfg: &ExperimentConfig, si: usize, rep: usize, window: f64) -> Result<IdentityOutcome> {
    let r = replication(cfg.master_seed, FORWARD, si, rep);
    let sample = generate_traffic(&cfg.traffic(window), r.stream(Stream::Perturbation))?;
    let probe_seed = r.stream(Stream::Probe);
    let mut out = IdentityOutcome::default();

    let mut times = probe_times(probe_seed, 0, 100, window);
    // Boundary sweep: every slot and arrival in the window, and their neighbours.
    for rec in sample.records() {
        for x in [rec.scheduled_time, rec.actual_time] {
            if (0.0..=window).contains(&x) {
                times.extend([x.next_down(), x, x.next_up()].into_iter().filter(|y| (0.0..=window).contains(y)));
            }
        }
    }
    for &t in &times {
        if !sample.decomposition_check(t)? {
            out.decomposition_violations += 1;
        }
    }

    let mut probes = probe_times(probe_seed, 0, 100, window);
    probes.push(window);
    let services = epoch_services(&sample, &cfg.services, r.stream(Stream::Service));
    let path = workload_path_with(&sample, &services, &probes)?;
    for (&t, &w) in probes.iter().zip(&path.values) {
        let oracle = brute_force_workload_with(&sample, &services, t)?;
        out.max_abs_error = out.max_abs_error.max((w - oracle).abs());
    }

    let mut negated_traffic = cfg.traffic(window);
    negated_traffic.perturbation = cfg.perturbation.negate();
    let rr = replication(cfg.master_seed, REVERSED, si, rep);
    let negated = generate_traffic(&negated_traffic, rr.stream(Stream::Perturbation))?;
    for s in probe_times(probe_seed, 100, 100, window) {
        let b = beta_decomposition(&negated, s);
        let lhs = negated.n(s)? as i64 - (s / cfg.h).floor() as i64;
        if lhs != b.signed_total() {
            out.beta_violations += 1;
        }
    }
    Ok(out)
}

/// Exact identities on every replication: the N = slots + E − L decomposition,
/// the β count identity, and engine-versus-oracle workload agreement.
pub fn run_identity(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = ExperimentReport::new(cfg);
    let (mut decomposition, mut beta, mut worst) = (0u64, 0u64, 0.0f64);
    for (si, &window) in cfg.scales.iter().enumerate() {
        let outcomes = parallel_map(cfg.workers, cfg.replications, |rep| {
            identity_replication(cfg, si, rep, window)
        })?;
        let per_rep: Vec<f64> = outcomes
            .iter()
            .map(|o| (o.decomposition_violations + o.beta_violations) as f64)
            .collect();
        let mut summary = summarize(window, None, &per_rep)?;
        let d: u64 = outcomes.iter().map(|o| o.decomposition_violations).sum();
        let b: u64 = outcomes.iter().map(|o| o.beta_violations).sum();
        let e = outcomes.iter().map(|o| o.max_abs_error).fold(0.0, f64::max);
        summary.violations = Some(d + b);
        summary.max_abs_error = Some(e);
        decomposition += d;
        beta += b;
        worst = worst.max(e);
        report.per_scale.push(summary);
        report.statistics.extend(rows(window, &per_rep));
    }
    report.verdicts.push(Verdict::new(
        "decomposition_identity",
        decomposition == 0,
        format!("{decomposition} violations"),
    ));
    report.verdicts.push(Verdict::new("beta_identity", beta == 0, format!("{beta} violations")));
    let tol = cfg.thresholds.workload_tolerance;
    report.verdicts.push(Verdict::new(
        "workload_oracle",
        worst <= tol,
        format!("max |engine − oracle| = {worst:.3e}, tolerance {tol:.0e}"),
    ));
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Sample mean of e^{θX} with a one-sided 99% upper confidence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MgfEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub upper_99: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MgfComparison {
    /// E e^{θE(0)} against the bound with E ξ⁻.
    pub early: MgfEstimate,
    /// E e^{θL(0)} against the bound with E ξ⁺.
    pub late: MgfEstimate,
}

const Z_99: f64 = 2.326_347_874_040_841;

fn mgf_estimate(values: &[f64], bound: f64) -> MgfEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let std_error = (var / n).sqrt();
    MgfEstimate {
        mean,
        std_error,
        upper_99: mean + Z_99 * std_error,
        bound,
    }
}

pub fn estimate_mgf(
    spec: &PerturbationSpec,
    h: f64,
    theta: f64,
    replications: usize,
    master_seed: u64,
    workers: usize,
) -> Result<MgfComparison> {
    let mut traffic = crate::arrival::TrafficConfig::new(h, *spec, h);
    traffic.truncation_margin = 0;
    let pairs = parallel_map(workers, replications, |rep| {
        let seed = replication(master_seed, MGF, 0, rep).stream(Stream::Perturbation);
        let s = generate_traffic(&traffic, seed)?;
        Ok((s.early_count(0.0)? as f64, s.late_count(0.0)? as f64))
    })?;
    let early: Vec<f64> = pairs.iter().map(|p| (theta * p.0).exp()).collect();
    let late: Vec<f64> = pairs.iter().map(|p| (theta * p.1).exp()).collect();
    Ok(MgfComparison {
        early: mgf_estimate(&early, mgf_bound(theta, spec.mean_negative_part(), h)),
        late: mgf_estimate(&late, mgf_bound(theta, spec.mean_positive_part(), h)),
    })
}

/// Forward S/D/1 workload W(t) against the reversed-path maximum M(t).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoynesComparison {
    pub forward: Vec<f64>,
    pub reversed: Vec<f64>,
    pub sup_distance: f64,
}

pub fn compare_loynes(
    spec: &PerturbationSpec,
    h: f64,
    t: f64,
    replications: usize,
    master_seed: u64,
    workers: usize,
) -> Result<LoynesComparison> {
    let services = ServiceSpec::Deterministic { mean: h };
    let forward_traffic = crate::arrival::TrafficConfig::new(h, *spec, t);
    let reversed_traffic = crate::arrival::TrafficConfig::new(h, spec.negate(), t);
    let pairs = parallel_map(workers, replications, |rep| {
        let f = replication(master_seed, FORWARD, 0, rep);
        let sample = generate_traffic(&forward_traffic, f.stream(Stream::Perturbation))?;
        let w = workload_path(&sample, &services, f.stream(Stream::Service), &[t])?.values[0];
        let r = replication(master_seed, REVERSED, 0, rep);
        let negated = generate_traffic(&reversed_traffic, r.stream(Stream::Perturbation))?;
        Ok((w, reversed_max(&negated, t)?))
    })?;
    let forward: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let reversed: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let sup_distance = EcdfSummary::from_slice(&forward)?.sup_distance(&EcdfSummary::from_slice(&reversed)?);
    Ok(LoynesComparison {
        forward,
        reversed,
        sup_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut cfg = default_config(kind);
        cfg.workers = 2;
        cfg
    }

    #[test]
    fn replication_ids_do_not_collide() {
        let a = replication_index(0, 1, 0);
        let b = replication_index(1, 0, 0);
        let c = replication_index(0, 0, 1);
        assert!(a != b && b != c && a != c);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v = parallel_map(4, 1000, |i| Ok(i * i)).unwrap();
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }

    #[test]
    fn prop1_unperturbed_schedule_passes() {
        let mut cfg = small(ExperimentKind::Prop1);
        cfg.perturbation = PerturbationSpec::PointMass { value: 0.0 };
        cfg.scales = vec![10.0, 100.0, 1000.0];
        cfg.replications = 20;
        let report = run_prop1(&cfg).unwrap();
        for s in &report.per_scale {
            assert!(s.max <= 1.0 / s.scale.ln() + 1e-12);
        }
        assert!(report.passed(), "{:?}", report.verdicts);
    }

    #[test]
    fn exact_statistic_dominates_dense_grid() {
        let cfg = crate::arrival::TrafficConfig::new(1.0, PerturbationSpec::Exponential { mean: 1.0 }, 200.0);
        for rep in 0..30 {
            let s = generate_traffic(&cfg, SeedSpec::new(8, rep, Stream::Perturbation)).unwrap();
            let exact = s.max_deviation();
            for k in 0..=200 * 50 {
                let u = k as f64 / 50.0;
                let grid = (s.n(u).unwrap() as f64 - u).abs();
                assert!(grid <= exact + 1e-12);
            }
        }
    }

    #[test]
    fn clt_sigma_substitution() {
        let svc = ServiceSpec::Exponential { mean: 1.0 };
        assert!((clt_sigma(&svc, 2.0).powi(2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unperturbed_sd1_is_stable() {
        let mut cfg = small(ExperimentKind::Stability);
        cfg.perturbation = PerturbationSpec::PointMass { value: 0.0 };
        cfg.scales = vec![50.0, 200.0];
        cfg.replications = 4000;
        let report = run_stability(&cfg).unwrap();
        assert!(report.per_scale.iter().all(|s| s.max <= cfg.h));
        assert!(report.passed(), "{:?}", report.verdicts);
    }

    #[test]
    fn declared_expectation_against_theory() {
        let mut cfg = small(ExperimentKind::Stability);
        cfg.perturbation = PerturbationSpec::Exponential { mean: 1.0 };
        cfg.scales = vec![50.0, 200.0];
        cfg.replications = 50;
        cfg.expect = Some(Expectation::Stable);
        let report = run_stability(&cfg).unwrap();
        assert!(!report.verdict("expectation_matches_theory").unwrap().passed);
        assert!(!report.passed());
    }

    #[test]
    fn reversal_labels_symmetric_cases() {
        let mut cfg = small(ExperimentKind::Reversal);
        cfg.scales = vec![50.0, 100.0];
        cfg.replications = 50;
        let report = run_reversal(&cfg).unwrap();
        let v = report.verdict("asymmetry").unwrap();
        assert!(v.detail.contains("asymmetry not applicable"));
        assert!(report.verdict("forward_stable_cdf_distance").is_some());
        assert!(report.verdict("reversed_stable_cdf_distance").is_some());

        cfg.perturbation = PerturbationSpec::Normal { mean: 0.0, sd: 1.0 };
        let report = run_reversal(&cfg).unwrap();
        assert!(report.verdict("forward_unstable_growth").is_some());
        assert!(report.verdict("reversed_unstable_growth").is_some());
        assert!(report.verdict("asymmetry").unwrap().detail.contains("not applicable"));
    }

    #[test]
    fn identity_suite_small() {
        for spec in [
            PerturbationSpec::PointMass { value: 0.0 },
            PerturbationSpec::PointMass { value: 0.2 },
            PerturbationSpec::Uniform { low: -1.0, high: 1.0 },
        ] {
            let mut cfg = small(ExperimentKind::Identity);
            cfg.perturbation = spec;
            cfg.replications = 25;
            let report = run_identity(&cfg).unwrap();
            assert!(report.passed(), "{spec:?}: {:?}", report.verdicts);
        }
    }

    #[test]
    fn point_mass_on_the_grid() {
        // Phase 0 with a 0.2 shift puts arrivals and slots on exact boundaries.
        let mut cfg = small(ExperimentKind::Identity);
        cfg.perturbation = PerturbationSpec::PointMass { value: 0.2 };
        cfg.phase = Some(0.0);
        cfg.replications = 5;
        let report = run_identity(&cfg).unwrap();
        assert_eq!(report.per_scale[0].violations, Some(0));
    }

    #[test]
    fn results_do_not_depend_on_workers() {
        let mut cfg = small(ExperimentKind::Clt);
        cfg.scales = vec![100.0, 400.0];
        cfg.replications = 64;
        cfg.workers = 1;
        let a = run_clt(&cfg).unwrap();
        cfg.workers = 5;
        let b = run_clt(&cfg).unwrap();
        assert_eq!(a.per_scale, b.per_scale);
        assert_eq!(a.statistics, b.statistics);
        assert_eq!(a.verdicts, b.verdicts);
    }

    #[test]
    fn clt_rejects_degenerate_services() {
        let mut cfg = small(ExperimentKind::Clt);
        cfg.services = ServiceSpec::Deterministic { mean: 1.0 };
        assert!(matches!(run_clt(&cfg), Err(ExperimentError::Precondition(_))));
        let mut cfg = small(ExperimentKind::Stability);
        cfg.services = ServiceSpec::Exponential { mean: 1.0 };
        assert!(matches!(run_stability(&cfg), Err(ExperimentError::Precondition(_))));
    }
}
