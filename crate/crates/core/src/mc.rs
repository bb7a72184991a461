//! Monte Carlo coverage studies and overlap diagnostics.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{min_max, nan_as_null, make_grid, Dataset, EstimationRequest, EstimatorKind, GridSpec};
use crate::dgp::{cme_oracle, sample, DgpSpec};
use crate::error::{invalid, CmeError, Result};
use crate::kernel::{KernelSpec, KernelType};
use crate::linear::{wald_constancy_test, BinSpec};
use crate::numerics::{derive_seed, rng_stream, std_dev, streams};
use crate::pipeline::estimate_on_grid;
use crate::Bandwidth;

/// Replications may fail (degenerate bins, empty windows) up to this rate.
pub const MAX_FAILURE_RATE: f64 = 0.20;
pub const OVERLAP_BINS: usize = 30;

/// Seed of replication `r`: the first draw of `rng_stream(seed, r)`. It
/// seeds both the simulated sample and the estimator.
pub fn replication_seed(seed: u64, r: u64) -> u64 {
    rng_stream(seed, r).next_u64()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuntimeStats {
    pub total: Duration,
    pub mean_per_replication: Duration,
    pub max_per_replication: Duration,
}

/// Summary of a Monte Carlo study. Per-point statistics use only the
/// replications in which that point was estimated (not trimmed); a point
/// never estimated carries NaN (`null` in JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub dgp: String,
    pub estimator: String,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub confidence_level: f64,
    pub grid: Vec<f64>,
    pub truth: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub mean_estimate: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub bias: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub rmse: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub pointwise_coverage: Vec<f64>,
    /// Fraction of replications in which each point was trimmed.
    pub trimmed_rate: Vec<f64>,
    /// Fraction of successful replications whose uniform band covers the
    /// truth at every non-trimmed point; absent without a bootstrap.
    pub uniform_coverage: Option<f64>,
    /// Rejection rate of the binning constancy test at level
    /// `1 − confidence_level` (binning estimator only).
    pub rejection_rate: Option<f64>,
    pub failures: usize,
    pub failure_breakdown: BTreeMap<String, usize>,
    /// Wall-clock timings; not serialized so reports are reproducible.
    #[serde(skip)]
    pub runtime: RuntimeStats,
}

struct Replicate {
    grid: Vec<f64>,
    estimate: Vec<f64>,
    covered: Vec<bool>,
    trimmed: Vec<bool>,
    uniform: Option<bool>,
    rejected: Option<bool>,
    elapsed: Duration,
}

fn run_one(
    dgp: &DgpSpec,
    request: &EstimationRequest,
    n: usize,
    grid: &[f64],
    seed: u64,
    r: u64,
) -> Result<Replicate> {
    let start = Instant::now();
    let rs = replication_seed(seed, r);
    let data = sample(dgp, n, rs)?;
    let req = EstimationRequest {
        seed: rs,
        ..request.clone()
    };
    let curve = estimate_on_grid(&data, &req, grid)?;
    let truth: Vec<f64> = curve
        .grid
        .iter()
        .map(|&x| cme_oracle(dgp, x))
        .collect::<Result<_>>()?;
    let covered = (0..curve.len())
        .map(|k| curve.ci_pointwise.contains(k, truth[k]))
        .collect();
    let uniform = curve.uniform_covers(|x| cme_oracle(dgp, x).unwrap_or(f64::NAN));
    let rejected = if request.estimator == EstimatorKind::Binning {
        let bins = BinSpec::quantiles(&data, request.n_bins)?;
        let test = wald_constancy_test(&data, &bins)?;
        Some(test.p_value < 1.0 - request.confidence_level)
    } else {
        None
    };
    Ok(Replicate {
        estimate: curve.estimate.clone(),
        trimmed: curve.trimmed.clone(),
        grid: curve.grid,
        covered,
        uniform,
        rejected,
        elapsed: start.elapsed(),
    })
}

/// The evaluation grid shared by all replications: explicit points, or
/// the default quantile grid of one pilot sample.
pub fn mc_grid(dgp: &DgpSpec, request: &EstimationRequest, n: usize, seed: u64) -> Result<Vec<f64>> {
    match &request.grid {
        GridSpec::Points(p) => {
            if p.is_empty() {
                return Err(invalid("evaluation grid is empty"));
            }
            Ok(p.clone())
        }
        GridSpec::Size(k) => {
            let pilot = sample(dgp, n, derive_seed(seed, streams::GRID_PILOT))?;
            make_grid(&pilot, *k)
        }
    }
}

/// Runs `replications` independent draws of `dgp` through the requested
/// estimator and summarizes bias, RMSE and coverage against the oracle.
/// `request.seed` is ignored: replication `r` uses
/// [`replication_seed`]`(seed, r)`.
pub fn run_mc(
    dgp: &DgpSpec,
    request: &EstimationRequest,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<McReport> {
    request.validate()?;
    if replications == 0 {
        return Err(invalid("at least one replication required"));
    }
    if !dgp.has_oracle() {
        return Err(CmeError::OracleRequired(format!(
            "dgp {} has no analytic CME; Monte Carlo summaries need one",
            dgp.name()
        )));
    }
    let start = Instant::now();
    let grid = mc_grid(dgp, request, n, seed)?;
    let results: Vec<Result<Replicate>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| run_one(dgp, request, n, &grid, seed, r))
        .collect();

    let mut failure_breakdown = BTreeMap::new();
    let mut ok = Vec::with_capacity(replications);
    for res in results {
        match res {
            Ok(rep) => ok.push(rep),
            Err(e) if e.is_validation() => return Err(e),
            Err(e) => *failure_breakdown.entry(e.kind().to_string()).or_insert(0) += 1,
        }
    }
    let failures = replications - ok.len();
    if failures as f64 > MAX_FAILURE_RATE * replications as f64 || ok.is_empty() {
        let breakdown: Vec<String> = failure_breakdown.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        return Err(CmeError::TooManyFailures {
            failed: failures,
            total: replications,
            breakdown: breakdown.join(", "),
        });
    }

    let len = ok[0].grid.len();
    if ok.iter().any(|r| r.grid.len() != len) {
        return Err(CmeError::Degenerate("replications returned grids of different lengths".into()));
    }
    let same_grid = ok.iter().all(|r| r.grid == ok[0].grid);
    let report_grid: Vec<f64> = if same_grid {
        ok[0].grid.clone()
    } else {
        (0..len)
            .map(|k| ok.iter().map(|r| r.grid[k]).sum::<f64>() / ok.len() as f64)
            .collect()
    };
    let truth: Vec<f64> = report_grid
        .iter()
        .map(|&x| cme_oracle(dgp, x))
        .collect::<Result<_>>()?;
    let mut mean_estimate = vec![f64::NAN; len];
    let mut bias = vec![f64::NAN; len];
    let mut rmse = vec![f64::NAN; len];
    let mut pointwise_coverage = vec![f64::NAN; len];
    let mut trimmed_rate = vec![0.0; len];
    for k in 0..len {
        let (mut count, mut sum_est, mut sum_err, mut sum_sq, mut hits) = (0usize, 0.0, 0.0, 0.0, 0usize);
        for rep in &ok {
            if rep.trimmed[k] {
                continue;
            }
            let t = cme_oracle(dgp, rep.grid[k])?;
            let err = rep.estimate[k] - t;
            count += 1;
            sum_est += rep.estimate[k];
            sum_err += err;
            sum_sq += err * err;
            hits += rep.covered[k] as usize;
        }
        trimmed_rate[k] = (ok.len() - count) as f64 / ok.len() as f64;
        if count > 0 {
            let c = count as f64;
            mean_estimate[k] = sum_est / c;
            bias[k] = sum_err / c;
            rmse[k] = (sum_sq / c).sqrt();
            pointwise_coverage[k] = hits as f64 / c;
        }
    }
    let uniform: Vec<bool> = ok.iter().filter_map(|r| r.uniform).collect();
    let uniform_coverage = (!uniform.is_empty())
        .then(|| uniform.iter().filter(|&&c| c).count() as f64 / uniform.len() as f64);
    let tests: Vec<bool> = ok.iter().filter_map(|r| r.rejected).collect();
    let rejection_rate =
        (!tests.is_empty()).then(|| tests.iter().filter(|&&c| c).count() as f64 / tests.len() as f64);
    let total: Duration = ok.iter().map(|r| r.elapsed).sum();
    Ok(McReport {
        dgp: dgp.name().to_string(),
        estimator: request.estimator.name().to_string(),
        n,
        replications,
        seed,
        confidence_level: request.confidence_level,
        grid: report_grid,
        truth,
        mean_estimate,
        bias,
        rmse,
        pointwise_coverage,
        trimmed_rate,
        uniform_coverage,
        rejection_rate,
        failures,
        failure_breakdown,
        runtime: RuntimeStats {
            total: start.elapsed(),
            mean_per_replication: total / ok.len() as u32,
            max_per_replication: ok.iter().map(|r| r.elapsed).max().unwrap_or_default(),
        },
    })
}

impl McReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per grid point.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "estimator",
            "dgp",
            "n",
            "replications",
            "x",
            "truth",
            "mean_estimate",
            "bias",
            "rmse",
            "pointwise_coverage",
            "trimmed_rate",
            "uniform_coverage",
            "rejection_rate",
        ])?;
        let fmt = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        for k in 0..self.grid.len() {
            wtr.write_record([
                self.estimator.clone(),
                self.dgp.clone(),
                self.n.to_string(),
                self.replications.to_string(),
                self.grid[k].to_string(),
                fmt(self.truth[k]),
                fmt(self.mean_estimate[k]),
                fmt(self.bias[k]),
                fmt(self.rmse[k]),
                fmt(self.pointwise_coverage[k]),
                fmt(self.trimmed_rate[k]),
                opt(self.uniform_coverage),
                opt(self.rejection_rate),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Distribution of the moderator by treatment arm and the local sample
/// size at each grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapDiagnostic {
    /// `OVERLAP_BINS + 1` equal-width bin edges over the range of `X`.
    pub edges: Vec<f64>,
    /// Counts per bin for binary treatments.
    pub treated: Option<Vec<usize>>,
    pub control: Option<Vec<usize>>,
    /// Counts per bin for continuous treatments.
    pub overall: Option<Vec<usize>>,
    pub grid: Vec<f64>,
    pub bandwidth: f64,
    pub kernel: KernelType,
    /// Kernel-weighted number of observations near each grid point.
    pub effective_n: Vec<f64>,
    pub effective_n_treated: Option<Vec<f64>>,
    pub effective_n_control: Option<Vec<f64>>,
    pub trim_threshold: f64,
    /// Grid points whose local sample (for binary treatments, in either
    /// arm) falls below the threshold.
    pub flagged: Vec<bool>,
    pub recommendations: Vec<String>,
}

fn histogram(values: impl Iterator<Item = f64>, lo: f64, width: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for v in values {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    counts
}

/// Rule-of-thumb bandwidth `1.06 · sd(X) · n^(-1/5)`, used when `spec`
/// asks for cross-validation.
fn rule_of_thumb(x: &[f64]) -> f64 {
    let h = 1.06 * std_dev(x) * (x.len() as f64).powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

pub fn overlap_diagnostic(dataset: &Dataset, grid: &[f64], spec: &KernelSpec) -> OverlapDiagnostic {
    let x = dataset.moderator();
    let d = dataset.treatment();
    let binary = dataset.treatment_binary();
    let (lo, hi) = min_max(x);
    let width = (hi - lo) / OVERLAP_BINS as f64;
    let edges: Vec<f64> = (0..=OVERLAP_BINS)
        .map(|b| if b == OVERLAP_BINS { hi } else { lo + b as f64 * width })
        .collect();
    let arm = |t: f64| {
        histogram(
            x.iter().zip(d).filter(|(_, &di)| di == t).map(|(&xi, _)| xi),
            lo,
            width,
            OVERLAP_BINS,
        )
    };
    let (treated, control, overall) = if binary {
        (Some(arm(1.0)), Some(arm(0.0)), None)
    } else {
        (None, None, Some(histogram(x.iter().copied(), lo, width, OVERLAP_BINS)))
    };
    let h = match spec.bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        _ => rule_of_thumb(x),
    };
    let eff = |x0: f64, arm: Option<f64>| -> f64 {
        x.iter()
            .zip(d)
            .filter(|(_, &di)| arm.is_none_or(|t| di == t))
            .map(|(&xi, _)| spec.kernel.weight((xi - x0) / h))
            .sum()
    };
    let effective_n: Vec<f64> = grid.iter().map(|&x0| eff(x0, None)).collect();
    let (effective_n_treated, effective_n_control) = if binary {
        (
            Some(grid.iter().map(|&x0| eff(x0, Some(1.0))).collect::<Vec<_>>()),
            Some(grid.iter().map(|&x0| eff(x0, Some(0.0))).collect::<Vec<_>>()),
        )
    } else {
        (None, None)
    };
    let trim = spec.trim_for(dataset.p());
    let flagged: Vec<bool> = (0..grid.len())
        .map(|k| {
            let local = match (&effective_n_treated, &effective_n_control) {
                (Some(t), Some(c)) => t[k].min(c[k]),
                _ => effective_n[k],
            };
            local < trim
        })
        .collect();
    let mut recommendations = Vec::new();
    if let (Some(t), Some(c)) = (&treated, &control) {
        let empty: Vec<usize> = (0..OVERLAP_BINS).filter(|&b| t[b] == 0 || c[b] == 0).collect();
        if !empty.is_empty() {
            recommendations.push(format!(
                "{} of {OVERLAP_BINS} histogram bins lack treated or control units",
                empty.len()
            ));
        }
    }
    let kept: Vec<f64> = grid.iter().zip(&flagged).filter(|(_, &f)| !f).map(|(&g, _)| g).collect();
    let n_flagged = flagged.iter().filter(|&&f| f).count();
    if n_flagged == grid.len() && !grid.is_empty() {
        recommendations.push(format!(
            "every grid point has fewer than {trim} effective observations{}; the data cannot support local estimates",
            if binary { " in some treatment arm" } else { "" }
        ));
    } else if n_flagged > 0 {
        let (a, b) = min_max(&kept);
        recommendations.push(format!(
            "{n_flagged} grid points have fewer than {trim} effective observations; restrict inference to x in [{a}, {b}]"
        ));
    }
    OverlapDiagnostic {
        edges,
        treated,
        control,
        overall,
        grid: grid.to_vec(),
        bandwidth: h,
        kernel: spec.kernel,
        effective_n,
        effective_n_treated,
        effective_n_control,
        trim_threshold: trim,
        flagged,
        recommendations,
    }
}
