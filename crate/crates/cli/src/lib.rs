//! Command-line front end: `estimate`, `simulate`, `benchmark` and
//! `diagnose`.
//!
//! Every command reads an optional TOML config (`--config`), applies
//! flags on top, and writes its outputs plus the resolved `config.toml`
//! into the output directory. Exit codes: 0 success, 2 invalid input or
//! configuration, 3 estimation failure.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use cme_core::dgp::sample;
use cme_core::kernel::resolve_bandwidth;
use cme_core::{
    estimate, ingest_csv, overlap_diagnostic, run_mc, Bandwidth, CmeError, GridSpec, KernelSpec, Result,
};
use serde::Serialize;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;
pub const THREADS_ENV: &str = "CME_THREADS";

pub(crate) fn cli_error(msg: impl Into<String>) -> CmeError {
    CmeError::Validation(msg.into())
}

pub fn exit_code(err: &CmeError) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_ESTIMATION
    }
}

#[derive(Debug, Parser)]
#[command(name = "cme", version, about = "Conditional marginal effect estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a CME curve from a CSV dataset.
    Estimate(Flags),
    /// Write a simulated dataset and its oracle sidecar.
    Simulate(Flags),
    /// Monte Carlo study of one estimator on one simulation design.
    Benchmark(Flags),
    /// Overlap diagnostics for a CSV dataset.
    Diagnose(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Simulate(_) => "simulate",
            Command::Benchmark(_) => "benchmark",
            Command::Diagnose(_) => "diagnose",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Estimate(f) | Command::Simulate(f) | Command::Benchmark(f) | Command::Diagnose(f) => f,
        }
    }
}

/// Flags override the config file key of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub treatment: Option<String>,
    #[arg(long)]
    pub moderator: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// `reject` or `drop_rows`.
    #[arg(long)]
    pub missing: Option<String>,
    /// linear, binning, kernel, aipw_lasso, pds_lasso or dml_plm.
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Comma-separated evaluation points (overrides --grid-size).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub grid: Option<Vec<f64>>,
    /// A positive number or `auto`.
    #[arg(long)]
    pub bandwidth: Option<String>,
    #[arg(long)]
    pub n_bins: Option<usize>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    #[arg(long)]
    pub confidence_level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trim_threshold: Option<f64>,
    #[arg(long)]
    pub treatment_binary: Option<bool>,
    /// epanechnikov, uniform or gaussian.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub cv_folds: Option<usize>,
    /// lasso_basis or boosted_trees.
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub k_folds: Option<usize>,
    /// key_a1, fig3_binary, fig4_continuous, linear_null or custom.
    #[arg(long)]
    pub dgp: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub log_level: Option<String>,
}

fn parse<T: FromStr<Err = CmeError>>(s: &str) -> Result<T> {
    s.parse()
}

impl Flags {
    /// Loads `--config` (or defaults) and applies every flag given.
    pub fn resolve(&self, command: &str) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.command = Some(command.to_string());
        macro_rules! set {
            ($($flag:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = &self.$flag { $dst = v.clone(); })*
            };
        }
        set!(
            outcome => cfg.outcome,
            treatment => cfg.treatment,
            moderator => cfg.moderator,
            covariates => cfg.covariates,
            dgp => cfg.dgp,
            n => cfg.n,
            replications => cfg.replications,
            threads => cfg.threads,
            log_level => cfg.log_level,
            output => cfg.output,
            n_bins => cfg.request.n_bins,
            n_boot => cfg.request.n_boot,
            confidence_level => cfg.request.confidence_level,
            seed => cfg.request.seed,
            treatment_binary => cfg.request.treatment_binary,
            cv_folds => cfg.request.cv_folds,
            k_folds => cfg.request.k_folds,
        );
        if let Some(p) = &self.input {
            cfg.input = Some(p.clone());
        }
        if let Some(t) = self.trim_threshold {
            cfg.request.trim_threshold = Some(t);
        }
        if let Some(m) = &self.missing {
            cfg.missing = parse(m)?;
        }
        if let Some(e) = &self.estimator {
            cfg.request.estimator = parse(e)?;
        }
        if let Some(k) = self.grid_size {
            cfg.request.grid = GridSpec::Size(k);
        }
        if let Some(points) = &self.grid {
            cfg.request.grid = GridSpec::Points(points.clone());
        }
        if let Some(b) = &self.bandwidth {
            cfg.request.bandwidth = parse(b)?;
        }
        if let Some(k) = &self.kernel {
            cfg.request.kernel = parse(k)?;
        }
        if let Some(l) = &self.learner {
            cfg.request.learner = parse(l)?;
        }
        Ok(cfg)
    }
}

/// Thread count: the config/flag value, else `CME_THREADS`, else 0 (all
/// cores).
pub fn thread_count(cfg: &RunConfig) -> Result<usize> {
    if cfg.threads > 0 {
        return Ok(cfg.threads);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| cli_error(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

fn prepare_output(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output)?;
    write(&cfg.output.join("config.toml"), &cfg.to_toml()?)?;
    Ok(&cfg.output)
}

/// Files written by a command, for reporting.
pub type Written = Vec<PathBuf>;

pub fn cmd_estimate(cfg: &RunConfig) -> Result<Written> {
    cfg.request.validate()?;
    let data = ingest_csv(cfg.input()?, &cfg.roles(), cfg.missing, cfg.request.treatment_binary)?;
    let curve = estimate(&data, &cfg.request)?;
    let mut ks = cfg.request.kernel_spec();
    if let Some(h) = curve.metadata.bandwidth {
        ks.bandwidth = Bandwidth::Fixed(h);
    }
    let overlap = overlap_diagnostic(&data, &curve.grid, &ks);
    let out = prepare_output(cfg)?;
    let files = vec![out.join("curve.json"), out.join("curve.csv"), out.join("overlap.json")];
    write(&files[0], &(curve.to_json()? + "\n"))?;
    curve.write_csv_to(fs::File::create(&files[1])?)?;
    write_json(&files[2], &overlap)?;
    Ok(files)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    dgp: &'a str,
    n: usize,
    seed: u64,
    columns: Vec<String>,
    treatment_binary: bool,
    parameters: std::collections::BTreeMap<String, f64>,
    formulas: std::collections::BTreeMap<String, String>,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Written> {
    let spec = cfg.dgp_spec()?;
    let seed = cfg.request.seed;
    let data = sample(&spec, cfg.n, seed)?;
    let out = prepare_output(cfg)?;
    let stem = format!("{}_n{}_seed{}", spec.name(), cfg.n, seed);
    let csv = out.join(format!("{stem}.csv"));
    let json = out.join(format!("{stem}.json"));
    data.write_csv(&csv)?;
    write_json(
        &json,
        &Sidecar {
            dgp: spec.name(),
            n: cfg.n,
            seed,
            columns: data.column_names(),
            treatment_binary: data.treatment_binary(),
            parameters: spec.parameters(),
            formulas: spec.formulas(),
        },
    )?;
    Ok(vec![csv, json])
}

pub fn cmd_benchmark(cfg: &RunConfig) -> Result<Written> {
    let spec = cfg.dgp_spec()?;
    let report = run_mc(&spec, &cfg.request, cfg.n, cfg.replications, cfg.request.seed)?;
    log::info!(
        "{} replications in {:.2?} ({:.2?} per replication, max {:.2?})",
        report.replications,
        report.runtime.total,
        report.runtime.mean_per_replication,
        report.runtime.max_per_replication
    );
    let out = prepare_output(cfg)?;
    let files = vec![out.join("report.json"), out.join("report.csv")];
    write(&files[0], &(report.to_json()? + "\n"))?;
    report.write_csv_to(fs::File::create(&files[1])?)?;
    Ok(files)
}

pub fn cmd_diagnose(cfg: &RunConfig) -> Result<Written> {
    cfg.request.validate()?;
    let data = ingest_csv(cfg.input()?, &cfg.roles(), cfg.missing, cfg.request.treatment_binary)?;
    let grid = cfg.request.grid.resolve(&data)?;
    let mut ks: KernelSpec = cfg.request.kernel_spec();
    if let Ok(h) = resolve_bandwidth(&data, &ks, cfg.request.seed) {
        ks.bandwidth = Bandwidth::Fixed(h);
    }
    let overlap = overlap_diagnostic(&data, &grid, &ks);
    let out = prepare_output(cfg)?;
    let file = out.join("overlap.json");
    write_json(&file, &overlap)?;
    Ok(vec![file])
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let command = cli.command.name();
    let cfg = match cli.command.flags().resolve(command) {
        Ok(c) => c,
        Err(e) => return report(&e),
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cfg.log_level)
        .parse_env("CME_LOG")
        .try_init();
    let threads = match thread_count(&cfg) {
        Ok(t) => t,
        Err(e) => return report(&e),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => return report(&cli_error(format!("cannot start thread pool: {e}"))),
    };
    let result = pool.install(|| match &cli.command {
        Command::Estimate(_) => cmd_estimate(&cfg),
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Benchmark(_) => cmd_benchmark(&cfg),
        Command::Diagnose(_) => cmd_diagnose(&cfg),
    });
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            EXIT_OK
        }
        Err(e) => report(&e),
    }
}

fn report(err: &CmeError) -> i32 {
    eprintln!("error: {err}");
    exit_code(err)
}
