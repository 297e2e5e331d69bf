//! Scheduled arrival streams on a finite window.
//!
//! Customer `j` is scheduled at `(j + U) h` and arrives at `(j + U) h + ξⱼ`.
//! A [`TrafficSample`] keeps every customer whose arrival or lateness can
//! be seen from inside `[0, T]`: all indices in an explicit band around the
//! window, plus the sparse far-away customers whose perturbation is large
//! enough to reach the window (see [`crate::distributions`] for how those
//! are enumerated without drawing the whole line).

use crate::distributions::{Block, PerturbationSpec, PerturbationStream, SpecError, MAX_LEVEL};
use crate::seed::{half_open_unit, SeedSpec, Stream};
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

/// Per-window probability budget for customers outside the explicit band.
pub const MARGIN_LEAK_TARGET: f64 = 1e-9;
/// The explicit band never grows beyond this many slots on each side; larger
/// excursions are carried by the far-field records instead.
pub const MARGIN_CAP: u64 = 4096;

#[derive(Debug, Error)]
pub enum ArrivalError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("invalid traffic configuration: {0}")]
    InvalidConfig(String),
    #[error("query [{a}, {b}] outside the window [0, {window_end}]")]
    OutOfWindow { a: f64, b: f64, window_end: f64 },
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrafficConfig {
    pub h: f64,
    pub perturbation: PerturbationSpec,
    pub window_end: f64,
    pub truncation_margin: u64,
    /// Fixed phase U; `None` draws it from the phase stream.
    pub phase: Option<f64>,
}

impl TrafficConfig {
    pub fn new(h: f64, perturbation: PerturbationSpec, window_end: f64) -> Self {
        Self {
            h,
            perturbation,
            window_end,
            truncation_margin: 0,
            phase: None,
        }
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = Some(phase);
        self
    }

    pub fn with_margin(mut self, margin: u64) -> Self {
        self.truncation_margin = margin;
        self
    }

    pub fn validate(&self) -> Result<(), ArrivalError> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(ArrivalError::InvalidConfig(format!("h must be positive, got {}", self.h)));
        }
        if !(self.window_end > 0.0) || !self.window_end.is_finite() {
            return Err(ArrivalError::InvalidConfig(format!(
                "window end must be positive, got {}",
                self.window_end
            )));
        }
        if self.window_end / self.h > 1e12 {
            return Err(ArrivalError::InvalidConfig("window holds too many slots".into()));
        }
        if let Some(u) = self.phase {
            if !(0.0..1.0).contains(&u) {
                return Err(ArrivalError::InvalidConfig(format!("phase must lie in [0, 1), got {u}")));
            }
        }
        self.perturbation.validate()?;
        Ok(())
    }
}

/// Smallest m with P(|ξ₀| > (m − 1) h) ≤ 10⁻⁹ / (2 + T/h), capped at [`MARGIN_CAP`].
pub fn auto_margin(cfg: &TrafficConfig) -> u64 {
    let target = MARGIN_LEAK_TARGET / (2.0 + cfg.window_end / cfg.h);
    let tail = |m: u64| cfg.perturbation.abs_sf((m as f64 - 1.0) * cfg.h);
    if tail(MARGIN_CAP) > target {
        return MARGIN_CAP;
    }
    let (mut lo, mut hi) = (0u64, MARGIN_CAP);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if tail(mid) <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// Expected number of customers with |j| ≥ 2^62 that land anywhere near the
/// window: the only customers the construction cannot represent.
pub fn leak_bound(spec: &PerturbationSpec, h: f64) -> f64 {
    let x0 = 2f64.powi(MAX_LEVEL as i32) * h;
    (spec.excess_mean(x0) + spec.negate().excess_mean(x0)) / h
}

/// exp((e^θ − 1)(mean_tail / h + 1)): the bound on E e^{θE(0)} (with E ξ₀⁻)
/// and on E e^{θL(0)} (with E ξ₀⁺).
pub fn mgf_bound(theta: f64, mean_tail: f64, h: f64) -> f64 {
    (theta.exp_m1() * (mean_tail / h + 1.0)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArrivalRecord {
    pub index: i64,
    pub scheduled_time: f64,
    pub perturbation: f64,
    pub actual_time: f64,
}

/// Endpoint convention for [`TrafficSample::count_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interval {
    /// [a, b]
    Closed,
    /// (a, b]
    LeftOpen,
}

#[derive(Debug, Clone)]
pub struct TrafficSample {
    phase: f64,
    h: f64,
    window_end: f64,
    index_range: (i64, i64),
    records: Vec<ArrivalRecord>,
    epochs: Vec<f64>,
    epoch_indices: Vec<i64>,
    suffix_min_actual: Vec<f64>,
    prefix_max_actual: Vec<f64>,
    leak_bound: f64,
}

/// Builds the sample for `cfg`; ξⱼ come from `seed`, U from the phase
/// stream of the same replication unless the config fixes it.
pub fn generate_traffic(cfg: &TrafficConfig, seed: SeedSpec) -> Result<TrafficSample, ArrivalError> {
    cfg.validate()?;
    let h = cfg.h;
    let t_end = cfg.window_end;
    let phase = cfg.phase.unwrap_or_else(|| {
        half_open_unit(seed.replication().stream(Stream::Phase).indexed().words(0)[0])
    });
    let margin = cfg.truncation_margin.max(auto_margin(cfg)) as i64;
    let slots = (t_end / h).ceil() as i64;

    // Positive-side blocks whose body can still reach the window must be explicit.
    let mut body_hi = 0i64;
    for level in 3..=MAX_LEVEL {
        let block = Block { negative: false, level };
        let tau = block.threshold(h);
        let start = block.start_magnitude() as f64 * h;
        if start - tau > t_end {
            break;
        }
        let last = block.index_at(block.len() - 1);
        body_hi = body_hi.max(last.min(((t_end + tau) / h).floor() as i64));
    }
    let lo = -margin.max(7);
    let hi = (slots + margin).max(7).max(body_hi);

    let mut stream = PerturbationStream::new(cfg.perturbation, seed, h);
    let perturbations = stream.values(lo..=hi);
    let record = |j: i64, xi: f64| {
        let scheduled_time = (j as f64 + phase) * h;
        ArrivalRecord {
            index: j,
            scheduled_time,
            perturbation: xi,
            actual_time: scheduled_time + xi,
        }
    };

    let mut far_low = Vec::new();
    let mut far_high = Vec::new();
    for negative in [true, false] {
        for level in 3..=MAX_LEVEL {
            let block = Block { negative, level };
            let q = stream.tail_probability(block);
            if q <= 0.0 {
                continue;
            }
            for offset in stream.tail_offsets(block) {
                let j = block.index_at(offset);
                if (lo..=hi).contains(&j) {
                    continue;
                }
                let r = record(j, stream.tail_value(block, j, q));
                // Keep customers that can be late or early inside the window,
                // plus the slack the reversal tail counts look at.
                if negative && r.actual_time > -h {
                    far_low.push(r);
                } else if !negative && r.actual_time <= t_end + 2.0 * h {
                    far_high.push(r);
                }
            }
        }
    }
    far_low.sort_by_key(|r| r.index);
    far_high.sort_by_key(|r| r.index);

    let mut records = far_low;
    records.extend(
        (lo..=hi)
            .zip(perturbations)
            .map(|(j, xi)| record(j, xi)),
    );
    records.extend(far_high);

    let mut epochs: Vec<(f64, i64)> = records
        .iter()
        .filter(|r| (0.0..=t_end).contains(&r.actual_time))
        .map(|r| (r.actual_time, r.index))
        .collect();
    epochs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut suffix_min_actual = vec![f64::INFINITY; records.len() + 1];
    for i in (0..records.len()).rev() {
        suffix_min_actual[i] = suffix_min_actual[i + 1].min(records[i].actual_time);
    }
    let mut prefix_max_actual = Vec::with_capacity(records.len());
    let mut running = f64::NEG_INFINITY;
    for r in &records {
        running = running.max(r.actual_time);
        prefix_max_actual.push(running);
    }

    Ok(TrafficSample {
        phase,
        h,
        window_end: t_end,
        index_range: (lo, hi),
        records,
        epoch_indices: epochs.iter().map(|e| e.1).collect(),
        epochs: epochs.into_iter().map(|e| e.0).collect(),
        suffix_min_actual,
        prefix_max_actual,
        leak_bound: leak_bound(&cfg.perturbation, h),
    })
}

impl TrafficSample {
    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn window_end(&self) -> f64 {
        self.window_end
    }

    /// The explicit index band [j_lo, j_hi]; records outside it are far-field tail customers.
    pub fn index_range(&self) -> (i64, i64) {
        self.index_range
    }

    /// Every retained customer, sorted by index.
    pub fn records(&self) -> &[ArrivalRecord] {
        &self.records
    }

    /// Arrival times in [0, T], ascending.
    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    /// Customer index of each epoch.
    pub fn epoch_indices(&self) -> &[i64] {
        &self.epoch_indices
    }

    pub fn leak_bound(&self) -> f64 {
        self.leak_bound
    }

    fn check_window(&self, a: f64, b: f64) -> Result<(), ArrivalError> {
        if a < 0.0 || b > self.window_end || a > b || a.is_nan() || b.is_nan() {
            return Err(ArrivalError::OutOfWindow {
                a,
                b,
                window_end: self.window_end,
            });
        }
        Ok(())
    }

    /// Number of arrivals in [a, b].
    pub fn count(&self, a: f64, b: f64) -> Result<usize, ArrivalError> {
        self.count_with(a, b, Interval::Closed)
    }

    pub fn count_with(&self, a: f64, b: f64, interval: Interval) -> Result<usize, ArrivalError> {
        self.check_window(a, b)?;
        let upper = self.epochs.partition_point(|&x| x <= b);
        let lower = match interval {
            Interval::Closed => self.epochs.partition_point(|&x| x < a),
            Interval::LeftOpen => self.epochs.partition_point(|&x| x <= a),
        };
        Ok(upper.saturating_sub(lower))
    }

    /// N(t): arrivals in (0, t].
    pub fn n(&self, t: f64) -> Result<usize, ArrivalError> {
        self.count_with(0.0, t, Interval::LeftOpen)
    }

    /// Scheduled slots in (a, b].
    pub fn schedule_count(&self, a: f64, b: f64) -> usize {
        let upper = self.records.partition_point(|r| r.scheduled_time <= b);
        let lower = self.records.partition_point(|r| r.scheduled_time <= a);
        upper.saturating_sub(lower)
    }

    /// E(t): customers scheduled after t who have arrived by t.
    pub fn early_count(&self, t: f64) -> Result<usize, ArrivalError> {
        self.check_window(t, t)?;
        let start = self.records.partition_point(|r| r.scheduled_time <= t);
        let mut early = 0;
        for i in start..self.records.len() {
            if self.suffix_min_actual[i] > t {
                break;
            }
            if self.records[i].actual_time <= t {
                early += 1;
            }
        }
        Ok(early)
    }

    /// L(t): customers scheduled by t who have not arrived by t.
    ///
    /// Both E and L put a customer whose time equals t on the "done" side,
    /// so E(t) − L(t) is exactly the arrivals in (−∞, t] minus the slots in
    /// (−∞, t].
    pub fn late_count(&self, t: f64) -> Result<usize, ArrivalError> {
        self.check_window(t, t)?;
        let end = self.records.partition_point(|r| r.scheduled_time <= t);
        let mut late = 0;
        for i in (0..end).rev() {
            if self.prefix_max_actual[i] <= t {
                break;
            }
            if self.records[i].actual_time > t {
                late += 1;
            }
        }
        Ok(late)
    }

    /// Whether N(t) = #slots in (0, t] + (E(t) − L(t)) − (E(0) − L(0)) holds exactly.
    pub fn decomposition_check(&self, t: f64) -> Result<bool, ArrivalError> {
        self.check_window(0.0, t)?;
        let lhs = self.n(t)? as i64;
        let rhs = self.schedule_count(0.0, t) as i64 + self.early_count(t)? as i64
            - self.late_count(t)? as i64
            - self.early_count(0.0)? as i64
            + self.late_count(0.0)? as i64;
        Ok(lhs == rhs)
    }

    /// sup over u ∈ [0, T] of |h N(u) − u|.
    ///
    /// Between arrivals the path is linear in u, so the supremum is attained
    /// at an endpoint or on either side of a jump.
    pub fn max_deviation(&self) -> f64 {
        let h = self.h;
        let mut best = 0.0f64;
        let mut k = 0usize;
        for &a in &self.epochs {
            if a <= 0.0 {
                continue;
            }
            best = best.max((h * k as f64 - a).abs());
            k += 1;
            best = best.max((h * k as f64 - a).abs());
        }
        best.max((h * k as f64 - self.window_end).abs())
    }

    /// One CSV row per retained customer.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ArrivalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "scheduled_time", "perturbation", "actual_time", "in_window"])?;
        for r in &self.records {
            let in_window = (0.0..=self.window_end).contains(&r.actual_time);
            w.serialize((r.index, r.scheduled_time, r.perturbation, r.actual_time, in_window))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
