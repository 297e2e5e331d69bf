//! Command-line front end.

use crate::config::{default_config, parse_config, ConfigError, ExperimentConfig, ExperimentKind};
use crate::experiments::{run, ExperimentError, ExperimentReport, StatisticRow};
use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_CONFIG: i32 = 3;
pub const EXIT_MALFORMED_JSON: i32 = 4;
pub const EXIT_SCHEMA: i32 = 5;
pub const EXIT_INADMISSIBLE: i32 = 6;
pub const EXIT_RUNTIME: i32 = 7;

#[derive(Debug, Parser)]
#[command(name = "schedq", version, about = "Queues fed by scheduled traffic: simulation and verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample one arrival path and write arrivals.csv.
    Generate(RunArgs),
    /// Sample one workload path and write workload.csv.
    Workload(RunArgs),
    /// Logarithmic fluctuation scaling of the counting process.
    Prop1(RunArgs),
    /// Diffusion limit of the critically loaded workload.
    Clt(RunArgs),
    /// S/D/1 stability versus boundedness of the lateness.
    Stability(RunArgs),
    /// Stability of the stream and of its time reversal.
    Reversal(RunArgs),
    /// Exact path identities and the workload oracle.
    Identity(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON config; built-in defaults for the subcommand when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the worker count.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Do not print the summary.
    #[arg(long)]
    pub quiet: bool,
}

impl Command {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Command::Generate(_) => ExperimentKind::Generate,
            Command::Workload(_) => ExperimentKind::Workload,
            Command::Prop1(_) => ExperimentKind::Prop1,
            Command::Clt(_) => ExperimentKind::Clt,
            Command::Stability(_) => ExperimentKind::Stability,
            Command::Reversal(_) => ExperimentKind::Reversal,
            Command::Identity(_) => ExperimentKind::Identity,
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Generate(a)
            | Command::Workload(a)
            | Command::Prop1(a)
            | Command::Clt(a)
            | Command::Stability(a)
            | Command::Reversal(a)
            | Command::Identity(a) => a,
        }
    }
}

pub fn config_exit_code(e: &ConfigError) -> i32 {
    match e {
        ConfigError::Missing { .. } => EXIT_MISSING_CONFIG,
        ConfigError::Malformed(_) => EXIT_MALFORMED_JSON,
        ConfigError::Schema(_) => EXIT_SCHEMA,
        ConfigError::Inadmissible(_) => EXIT_INADMISSIBLE,
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

pub fn load_config(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(path, kind)?,
        None => default_config(kind),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> i32 {
    let kind = cli.command.kind();
    let args = cli.command.args();
    if args.workers == Some(0) {
        eprintln!("error: --workers must be at least 1");
        return EXIT_USAGE;
    }
    let cfg = match load_config(kind, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return config_exit_code(&e);
        }
    };
    let report = match run(&cfg) {
        Ok(r) => r,
        Err(ExperimentError::Precondition(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_INADMISSIBLE;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = write_outputs(&report, &args.out) {
        eprintln!("error: cannot write results to {}: {e}", args.out.display());
        return EXIT_RUNTIME;
    }
    if !args.quiet {
        print_summary(&report, &args.out);
    }
    if report.passed() {
        EXIT_OK
    } else {
        EXIT_VERDICT_FAILED
    }
}

fn print_summary(report: &ExperimentReport, out: &Path) {
    println!("{} ({:.1}s)", report.config.kind.name(), report.elapsed_seconds);
    for s in &report.per_scale {
        let label = s.label.as_deref().map_or(String::new(), |l| format!(" {l}"));
        print!("  scale {}{label}: median {:.4}, q90 {:.4}, max {:.4}", s.scale, s.median, s.q90, s.max);
        if let Some(d) = s.ks_distance {
            print!(", KS {d:.4}");
        }
        if let Some(v) = s.violations {
            print!(", violations {v}");
        }
        println!();
    }
    for v in &report.verdicts {
        println!("  {} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    println!("  results in {}", out.display());
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn statistics_csv(rows: &[StatisticRow]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["scale", "replication", "value"])?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

pub fn write_outputs(report: &ExperimentReport, out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    std::fs::create_dir_all(out)?;
    // Render everything first so a failure leaves no partial result set.
    let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
    if let Some(sample) = &report.sample {
        let mut buf = Vec::new();
        sample.write_csv(&mut buf)?;
        files.push(("arrivals.csv", buf));
    }
    if let Some(path) = &report.workload {
        let mut buf = Vec::new();
        path.write_csv(&mut buf)?;
        files.push(("workload.csv", buf));
    }
    if !matches!(report.config.kind, ExperimentKind::Generate | ExperimentKind::Workload) {
        files.push(("statistics.csv", statistics_csv(&report.statistics)?));
    }
    if report.config.kind == ExperimentKind::Reversal {
        files.push(("statistics_reversed.csv", statistics_csv(&report.reversed_statistics)?));
    }
    if let Some(diag) = &report.reversal_diagnostics {
        let mut buf = Vec::new();
        diag.write_csv(&mut buf)?;
        files.push(("reversal.csv", buf));
    }
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    files.push(("report.json", json));
    for (name, bytes) in files {
        write_atomic(&out.join(name), &bytes)?;
    }
    Ok(())
}
