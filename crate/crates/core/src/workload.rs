//! Workload of the single-server queue, and its time-reversed representation.

use crate::arrival::{ArrivalError, TrafficSample};
use crate::distributions::{Bound, PerturbationSpec, ServiceSpec, ServiceStream};
use crate::seed::SeedSpec;
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("probe times must be sorted ascending")]
    UnsortedProbes,
    #[error("probe {probe} outside the window [0, {window_end}]")]
    ProbeOutOfWindow { probe: f64, window_end: f64 },
    #[error("the reversed representation needs deterministic services equal to h = {h}")]
    NotDeterministic { h: f64 },
    #[error(transparent)]
    Arrival(#[from] ArrivalError),
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadPath {
    pub probes: Vec<f64>,
    pub values: Vec<f64>,
    /// W just after each arrival in [0, T], in epoch order.
    pub after_jumps: Vec<f64>,
    pub running_max: f64,
}

impl WorkloadPath {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), WorkloadError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "workload"])?;
        for (t, v) in self.probes.iter().zip(&self.values) {
            w.serialize((t, v))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn check_probes(sample: &TrafficSample, probes: &[f64]) -> Result<(), WorkloadError> {
    if probes.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(WorkloadError::UnsortedProbes);
    }
    if let Some(&p) = probes
        .iter()
        .find(|&&p| !(0.0..=sample.window_end()).contains(&p))
    {
        return Err(WorkloadError::ProbeOutOfWindow {
            probe: p,
            window_end: sample.window_end(),
        });
    }
    Ok(())
}

/// Service requirement of every epoch, drawn by customer index.
pub fn epoch_services(sample: &TrafficSample, services: &ServiceSpec, seed: SeedSpec) -> Vec<f64> {
    let mut stream = ServiceStream::new(*services, seed);
    sample
        .epoch_indices()
        .iter()
        .map(|&j| stream.value(j))
        .collect()
}

pub fn workload_path(
    sample: &TrafficSample,
    services: &ServiceSpec,
    seed: SeedSpec,
    probes: &[f64],
) -> Result<WorkloadPath, WorkloadError> {
    let v = epoch_services(sample, services, seed);
    workload_path_with(sample, &v, probes)
}

/// Forward recursion with explicit per-epoch service times.
pub fn workload_path_with(
    sample: &TrafficSample,
    services: &[f64],
    probes: &[f64],
) -> Result<WorkloadPath, WorkloadError> {
    check_probes(sample, probes)?;
    let epochs = sample.epochs();
    assert_eq!(epochs.len(), services.len(), "one service time per epoch");
    let mut values = Vec::with_capacity(probes.len());
    let mut after_jumps = Vec::with_capacity(epochs.len());
    let (mut w, mut last) = (0.0f64, 0.0f64);
    let mut running_max = 0.0f64;
    let mut next_probe = 0;
    for (&a, &v) in epochs.iter().zip(services) {
        // Probes strictly before this arrival see the drained pre-jump level;
        // a probe at the arrival instant sees the jump.
        while next_probe < probes.len() && probes[next_probe] < a {
            values.push((w - (probes[next_probe] - last)).max(0.0));
            next_probe += 1;
        }
        w = (w - (a - last)).max(0.0) + v;
        last = a;
        running_max = running_max.max(w);
        after_jumps.push(w);
    }
    for &t in &probes[next_probe..] {
        values.push((w - (t - last)).max(0.0));
    }
    Ok(WorkloadPath {
        probes: probes.to_vec(),
        values,
        after_jumps,
        running_max,
    })
}

/// W(t) at a single time.
pub fn workload_at(
    sample: &TrafficSample,
    services: &ServiceSpec,
    seed: SeedSpec,
    t: f64,
) -> Result<f64, WorkloadError> {
    Ok(workload_path(sample, services, seed, &[t])?.values[0])
}

/// W(t) straight from max over s ∈ [0, t] of (work arriving in (s, t]) − (t − s).
pub fn brute_force_workload(
    sample: &TrafficSample,
    services: &ServiceSpec,
    seed: SeedSpec,
    t: f64,
) -> Result<f64, WorkloadError> {
    let v = epoch_services(sample, services, seed);
    brute_force_workload_with(sample, &v, t)
}

pub fn brute_force_workload_with(
    sample: &TrafficSample,
    services: &[f64],
    t: f64,
) -> Result<f64, WorkloadError> {
    check_probes(sample, &[t])?;
    let epochs = sample.epochs();
    let n = epochs.partition_point(|&a| a <= t);
    // Candidates: s = t (empty sum), and s just below each arrival a_k ≤ t.
    // s = 0 is dominated by the first arrival's candidate or by s = t.
    let mut best = 0.0f64;
    for k in 0..n {
        let work: f64 = services[k..n].iter().sum();
        best = best.max(work - (t - epochs[k]));
    }
    Ok(best)
}

/// h(⌊c⁻/h⌋ + ⌊c⁺/h⌋ + 3) when ξ is bounded on both sides, where c⁺ and c⁻
/// bound lateness and earliness: a pathwise bound on the S/D/1 workload.
pub fn bounded_workload_bound(spec: &PerturbationSpec, h: f64) -> Option<f64> {
    match (spec.xi_plus_bound(), spec.xi_minus_bound()) {
        (Bound::Finite(plus), Bound::Finite(minus)) => {
            Some(h * ((minus / h).floor() + (plus / h).floor() + 3.0))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BetaCounts {
    pub beta1: u64,
    pub beta2: u64,
    pub beta3: u64,
    pub beta4: u64,
    pub gamma1: u64,
    pub gamma2: u64,
}

impl BetaCounts {
    pub fn signed_total(&self) -> i64 {
        self.beta1 as i64 + self.beta2 as i64 - self.beta3 as i64 - self.beta4 as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReversalDiagnostics {
    pub eval_times: Vec<f64>,
    /// Λ(s)/h: reversed arrivals in (0, s].
    pub lambda_counts: Vec<u64>,
    pub betas: Vec<BetaCounts>,
    /// M(t) = max over s ∈ [0, t] of Λ(s) − s.
    pub running_max: f64,
    pub gamma1: u64,
    pub gamma2: u64,
}

impl ReversalDiagnostics {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), WorkloadError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "s", "lambda_over_h", "drift", "beta1", "beta2", "beta3", "beta4", "gamma1", "gamma2",
        ])?;
        for ((s, l), b) in self.eval_times.iter().zip(&self.lambda_counts).zip(&self.betas) {
            w.serialize((s, l, s, b.beta1, b.beta2, b.beta3, b.beta4, b.gamma1, b.gamma2))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// M(t) on the reversed (negated-perturbation) path with V ≡ h.
///
/// Λ(s) − s falls between jumps, so the maximum sits at s = 0 or at an
/// arrival epoch.
pub fn reversed_max(sample_negated: &TrafficSample, t: f64) -> Result<f64, WorkloadError> {
    check_probes(sample_negated, &[t])?;
    let h = sample_negated.h();
    let mut best = 0.0f64;
    let mut k = 0u64;
    for &a in sample_negated.epochs() {
        if a > t {
            break;
        }
        if a > 0.0 {
            k += 1;
            best = best.max(h * k as f64 - a);
        }
    }
    Ok(best)
}

pub fn reversed_running_max(
    sample_negated: &TrafficSample,
    services: &ServiceSpec,
    t: f64,
    eval_grid: &[f64],
) -> Result<ReversalDiagnostics, WorkloadError> {
    let h = sample_negated.h();
    match services {
        ServiceSpec::Deterministic { mean } if (mean - h).abs() <= 1e-12 * h => {}
        _ => return Err(WorkloadError::NotDeterministic { h }),
    }
    check_probes(sample_negated, eval_grid)?;
    let running_max = reversed_max(sample_negated, t)?;
    let mut lambda_counts = Vec::with_capacity(eval_grid.len());
    let mut betas = Vec::with_capacity(eval_grid.len());
    for &s in eval_grid {
        lambda_counts.push(sample_negated.n(s)? as u64);
        betas.push(beta_decomposition(sample_negated, s));
    }
    let (gamma1, gamma2) = gamma_sums(sample_negated);
    Ok(ReversalDiagnostics {
        eval_times: eval_grid.to_vec(),
        lambda_counts,
        betas,
        running_max,
        gamma1,
        gamma2,
    })
}

/// Γ₁ = Σ_{j≥0} I(η₋ⱼ > (j−1)h) and Γ₂ = Σ_{j≥1} I(−ηⱼ ≥ (j−1)h), where η is
/// the perturbation of the reversed path.
pub fn gamma_sums(sample_negated: &TrafficSample) -> (u64, u64) {
    let h = sample_negated.h();
    let mut gamma1 = 0;
    let mut gamma2 = 0;
    for r in sample_negated.records() {
        let eta = r.perturbation;
        if r.index <= 0 {
            if eta > (-(r.index as f64) - 1.0) * h {
                gamma1 += 1;
            }
        } else if -eta >= (r.index as f64 - 1.0) * h {
            gamma2 += 1;
        }
    }
    (gamma1, gamma2)
}

/// β₁…β₄ at s for the reversed path, with k = ⌊s/h⌋ and reversed points
/// pⱼ = (j + U)h + ηⱼ:
/// β₁ counts j ≤ 0 with pⱼ ∈ (0, s], β₂ counts j > k with pⱼ ∈ (0, s],
/// β₃ counts 1 ≤ j ≤ k with pⱼ ≤ 0 and β₄ counts 1 ≤ j ≤ k with pⱼ > s.
/// Then Λ(s)/h − k = β₁ + β₂ − β₃ − β₄.
pub fn beta_decomposition(sample_negated: &TrafficSample, s: f64) -> BetaCounts {
    let h = sample_negated.h();
    let k = (s / h).floor() as i64;
    let (gamma1, gamma2) = gamma_sums(sample_negated);
    let mut counts = BetaCounts {
        beta1: 0,
        beta2: 0,
        beta3: 0,
        beta4: 0,
        gamma1,
        gamma2,
    };
    for r in sample_negated.records() {
        let p = r.actual_time;
        let inside = p > 0.0 && p <= s;
        match r.index {
            j if j <= 0 => counts.beta1 += u64::from(inside),
            j if j > k => counts.beta2 += u64::from(inside),
            _ => {
                counts.beta3 += u64::from(p <= 0.0);
                counts.beta4 += u64::from(p > s);
            }
        }
    }
    counts
}
