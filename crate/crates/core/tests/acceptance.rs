//! Acceptance criteria for the toolkit, one report line per criterion.
//!
//! Runs without the libtest harness so that every criterion prints exactly
//! one `criterion N: PASS|FAIL ...` line. The process exits non-zero when any
//! criterion fails. Tolerances are fixed here and never tuned per run.

use schedq::cli::main_with_args;
use schedq::config::{default_config, default_workers, ExperimentConfig, ExperimentKind};
use schedq::distributions::PerturbationSpec;
use schedq::experiments::{compare_loynes, estimate_mgf, run, ExperimentReport};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn config(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = default_config(kind);
    cfg.workers = default_workers();
    cfg
}

fn verdict_line(report: &ExperimentReport, name: &str) -> (bool, String) {
    match report.verdict(name) {
        Some(v) => (v.passed, format!("{}: {}", v.name, v.detail)),
        None => (false, format!("{name}: verdict missing")),
    }
}

const EXP1: PerturbationSpec = PerturbationSpec::Exponential { mean: 1.0 };

/// Identity suite: 1000 paths on [0, 50], 100 random probe times each, run
/// for a light-tailed and a heavy two-sided perturbation.
fn identity_reports() -> &'static [(&'static str, ExperimentReport)] {
    static REPORTS: OnceLock<Vec<(&'static str, ExperimentReport)>> = OnceLock::new();
    REPORTS.get_or_init(|| {
        let families = [
            ("uniform(-1,1)", PerturbationSpec::Uniform { low: -1.0, high: 1.0 }),
            (
                "two-sided pareto(1.5)",
                PerturbationSpec::TwoSidedPareto {
                    alpha: 1.5,
                    beta: 1.0,
                    p_plus: 0.5,
                    p_minus: 0.5,
                },
            ),
        ];
        families
            .into_iter()
            .map(|(label, spec)| {
                let mut cfg = config(ExperimentKind::Identity);
                cfg.perturbation = spec;
                assert_eq!(cfg.replications, 1000);
                (label, run(&cfg).expect("identity run"))
            })
            .collect()
    })
}

fn identity_criterion(verdict: &str) -> Outcome {
    let reports = identity_reports();
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, report) in reports {
        let (ok, line) = verdict_line(report, verdict);
        passed &= ok;
        parts.push(format!("{label}: {line}"));
    }
    outcome(passed, parts.join("; "))
}

fn criterion_01_arrival_decomposition() -> Outcome {
    identity_criterion("decomposition_identity")
}

fn criterion_02_workload_engine_matches_oracle() -> Outcome {
    identity_criterion("workload_oracle")
}

fn criterion_03_beta_identity() -> Outcome {
    identity_criterion("beta_identity")
}

fn criterion_04_early_late_mgf() -> Outcome {
    let cap = ((0.5f64).exp_m1() * 2.0).exp();
    let m = estimate_mgf(&EXP1, 1.0, 0.5, 100_000, 20_240_601, default_workers()).expect("mgf");
    let passed = m.early.upper_99 <= cap && m.late.upper_99 <= cap;
    let detail = format!(
        "E e^(E(0)/2) = {:.4} (99% upper {:.4}), E e^(L(0)/2) = {:.4} (99% upper {:.4}), cap {cap:.4}",
        m.early.mean, m.early.upper_99, m.late.mean, m.late.upper_99
    );
    outcome(passed, detail)
}

fn criterion_05_log_scaling_medians() -> Outcome {
    let mut cfg = config(ExperimentKind::Prop1);
    cfg.perturbation = EXP1;
    cfg.scales = vec![1e2, 1e3, 1e4, 1e5];
    cfg.replications = 200;
    let report = run(&cfg).expect("prop1 run");
    let (passed, line) = verdict_line(&report, "prop1_medians_decreasing");
    let (_, last) = verdict_line(&report, "prop1_final_median");
    outcome(passed, format!("{line}; {last}"))
}

fn criterion_06_diffusion_limit() -> Outcome {
    let cfg = config(ExperimentKind::Clt);
    assert_eq!(cfg.perturbation, PerturbationSpec::Uniform { low: -1.0, high: 1.0 });
    let report = run(&cfg).expect("clt run");
    let (ks_ok, ks) = verdict_line(&report, "clt_ks");
    let (growth_ok, growth) = verdict_line(&report, "clt_median_growth_2500");
    outcome(ks_ok && growth_ok, format!("{ks}; {growth}"))
}

fn criterion_07_bounded_lateness_is_stable() -> Outcome {
    let mut cfg = config(ExperimentKind::Stability);
    cfg.perturbation = PerturbationSpec::Uniform { low: -2.0, high: 2.0 };
    let report = run(&cfg).expect("stability run");
    let (d_ok, d) = verdict_line(&report, "stable_cdf_distance");
    let (b_ok, b) = verdict_line(&report, "stable_bound");
    outcome(d_ok && b_ok, format!("{d}; {b}"))
}

fn criterion_08_unbounded_lateness_is_unstable() -> Outcome {
    let mut cfg = config(ExperimentKind::Stability);
    cfg.perturbation = EXP1;
    cfg.replications = 1000;
    let report = run(&cfg).expect("stability run");
    let (passed, line) = verdict_line(&report, "unstable_growth");
    outcome(passed, line)
}

fn criterion_09_time_reversal_asymmetry() -> Outcome {
    let mut cfg = config(ExperimentKind::Reversal);
    cfg.perturbation = PerturbationSpec::NegatedShiftedPareto { alpha: 1.5, beta: 1.0 };
    let report = run(&cfg).expect("reversal run");
    let mut passed = true;
    let mut parts = Vec::new();
    for name in ["forward_stable_cdf_distance", "reversed_unstable_growth", "asymmetry"] {
        let (ok, line) = verdict_line(&report, name);
        passed &= ok;
        parts.push(line);
    }
    passed &= report.passed();
    outcome(passed, parts.join("; "))
}

fn criterion_10_loynes_representation() -> Outcome {
    let spec = PerturbationSpec::Uniform { low: -2.0, high: 2.0 };
    let c = compare_loynes(&spec, 1.0, 200.0, 5000, 20_240_601, default_workers()).expect("loynes");
    let passed = c.sup_distance <= 0.03;
    let detail = format!(
        "uniform(-2,2), t = 200, 5000 paths: sup |F_W - F_M| = {:.4}, threshold 0.03",
        c.sup_distance
    );
    outcome(passed, detail)
}

fn run_cli(subcommand: &str, config: &Path, out: &Path, workers: usize) -> i32 {
    main_with_args([
        "schedq".to_string(),
        subcommand.to_string(),
        "--config".to_string(),
        config.display().to_string(),
        "--out".to_string(),
        out.display().to_string(),
        "--workers".to_string(),
        workers.to_string(),
        "--quiet".to_string(),
    ])
}

fn normalized_report(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("report.json")).expect("report.json");
    let mut v: serde_json::Value = serde_json::from_str(&text).expect("report json");
    v["elapsed_seconds"] = serde_json::Value::Null;
    v
}

fn compare_runs(subcommand: &str, json: &str, files: &[&str]) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("config.json");
    std::fs::write(&config, json).map_err(|e| e.to_string())?;
    let one = dir.path().join("w1");
    let eight = dir.path().join("w8");
    let a = run_cli(subcommand, &config, &one, 1);
    let b = run_cli(subcommand, &config, &eight, 8);
    if a != b {
        return Err(format!("{subcommand}: exit codes {a} and {b}"));
    }
    if normalized_report(&one) != normalized_report(&eight) {
        return Err(format!("{subcommand}: report.json differs"));
    }
    for f in files {
        let x = std::fs::read(one.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(eight.join(f)).map_err(|e| format!("{f}: {e}"))?;
        if x != y {
            return Err(format!("{subcommand}: {f} differs"));
        }
    }
    Ok(format!("{subcommand} (exit {a}, {} files identical)", files.len() + 1))
}

fn criterion_11_worker_count_does_not_change_results() -> Outcome {
    let cases = [
        (
            "clt",
            r#"{"scales": [100, 400], "replications": 300}"#,
            &["statistics.csv"][..],
        ),
        (
            "reversal",
            r#"{"perturbation": {"family": "negated-shifted-pareto", "params": {"alpha": 1.5, "beta": 1}},
                "scales": [100, 400], "replications": 200}"#,
            &["statistics.csv", "statistics_reversed.csv", "reversal.csv"][..],
        ),
        (
            "workload",
            r#"{"window_end": 500}"#,
            &["arrivals.csv", "workload.csv"][..],
        ),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (sub, json, files) in cases {
        match compare_runs(sub, json, files) {
            Ok(s) => parts.push(s),
            Err(s) => {
                passed = false;
                parts.push(s);
            }
        }
    }
    outcome(passed, format!("workers 1 vs 8: {}", parts.join("; ")))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 11] = [
        (1, criterion_01_arrival_decomposition),
        (2, criterion_02_workload_engine_matches_oracle),
        (3, criterion_03_beta_identity),
        (4, criterion_04_early_late_mgf),
        (5, criterion_05_log_scaling_medians),
        (6, criterion_06_diffusion_limit),
        (7, criterion_07_bounded_lateness_is_stable),
        (8, criterion_08_unbounded_lateness_is_unstable),
        (9, criterion_09_time_reversal_asymmetry),
        (10, criterion_10_loynes_representation),
        (11, criterion_11_worker_count_does_not_change_results),
    ];
    let mut failed = 0;
    for (n, criterion) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(criterion).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.passed {
            failed += 1;
        }
        println!(
            "criterion {n}: {} {} [{:.1}s]",
            if result.passed { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
