//! Dataset, request and result types shared by every estimator.
//!
//! A [`Dataset`] holds the outcome `Y`, treatment `D`, moderator `X` and an
//! optional covariate block `Z`. It is validated on construction and
//! immutable afterwards. [`CmeCurve`] is the common output of all
//! estimators: point estimates on a grid of moderator values together with
//! standard errors, pointwise and uniform confidence bands.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::debiased::{BoostingParams, Learner, NuisanceConfig};
use crate::error::{invalid, CmeError, Result};
use crate::kernel::{KernelSpec, KernelType};
use crate::numerics::quantile_sorted;

/// Names of the columns playing each role in a CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub outcome: String,
    pub treatment: String,
    pub moderator: String,
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl ColumnRoles {
    pub fn new(outcome: &str, treatment: &str, moderator: &str) -> Self {
        Self {
            outcome: outcome.to_string(),
            treatment: treatment.to_string(),
            moderator: moderator.to_string(),
            covariates: Vec::new(),
        }
    }

    pub fn with_covariates<S: AsRef<str>>(mut self, covariates: &[S]) -> Self {
        self.covariates = covariates.iter().map(|c| c.as_ref().to_string()).collect();
        self
    }
}

impl Default for ColumnRoles {
    fn default() -> Self {
        Self::new("Y", "D", "X")
    }
}

/// What to do with rows that contain missing or non-finite values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Reject,
    DropRows,
}

impl FromStr for MissingPolicy {
    type Err = CmeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reject" => Ok(MissingPolicy::Reject),
            "drop_rows" => Ok(MissingPolicy::DropRows),
            other => Err(invalid(format!(
                "unknown missing policy {other:?}; valid: reject, drop_rows"
            ))),
        }
    }
}

/// Validated observational data `(Y, D, X, Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    outcome: Vec<f64>,
    treatment: Vec<f64>,
    moderator: Vec<f64>,
    /// Column-major covariate block, `p` columns of length `n`.
    covariates: Vec<Vec<f64>>,
    roles: ColumnRoles,
    treatment_binary: bool,
    dropped_rows: usize,
}

impl Dataset {
    /// Builds a dataset, checking lengths, finiteness and (if declared)
    /// binary coding of the treatment.
    pub fn new(
        outcome: Vec<f64>,
        treatment: Vec<f64>,
        moderator: Vec<f64>,
        covariates: Vec<Vec<f64>>,
        roles: ColumnRoles,
        treatment_binary: bool,
    ) -> Result<Self> {
        let n = outcome.len();
        if n == 0 {
            return Err(CmeError::EmptyDataset);
        }
        if treatment.len() != n || moderator.len() != n {
            return Err(invalid("outcome, treatment and moderator lengths differ"));
        }
        if covariates.len() != roles.covariates.len() {
            return Err(invalid(format!(
                "{} covariate columns supplied but {} covariate names",
                covariates.len(),
                roles.covariates.len()
            )));
        }
        for (j, col) in covariates.iter().enumerate() {
            if col.len() != n {
                return Err(invalid(format!(
                    "covariate {} has length {} (expected {n})",
                    roles.covariates[j],
                    col.len()
                )));
            }
        }
        let named = std::iter::once((&roles.outcome, &outcome))
            .chain(std::iter::once((&roles.treatment, &treatment)))
            .chain(std::iter::once((&roles.moderator, &moderator)))
            .chain(roles.covariates.iter().zip(covariates.iter()));
        for (name, col) in named {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(invalid(format!(
                    "non-finite value in column {name} at row {i}"
                )));
            }
        }
        if treatment_binary {
            if let Some(i) = treatment.iter().position(|&d| d != 0.0 && d != 1.0) {
                return Err(invalid(format!(
                    "treatment declared binary but row {i} has value {}",
                    treatment[i]
                )));
            }
        }
        Ok(Self {
            outcome,
            treatment,
            moderator,
            covariates,
            roles,
            treatment_binary,
            dropped_rows: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    /// Number of covariates `p`.
    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn moderator(&self) -> &[f64] {
        &self.moderator
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn covariate(&self, j: usize) -> &[f64] {
        &self.covariates[j]
    }

    pub fn roles(&self) -> &ColumnRoles {
        &self.roles
    }

    /// All column labels in `Y, D, X, Z...` order.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec![
            self.roles.outcome.clone(),
            self.roles.treatment.clone(),
            self.roles.moderator.clone(),
        ];
        names.extend(self.roles.covariates.iter().cloned());
        names
    }

    pub fn treatment_binary(&self) -> bool {
        self.treatment_binary
    }

    /// Rows removed by the `drop_rows` policy during ingestion.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    /// Returns a copy with the outcome replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        Dataset::new(
            outcome,
            self.treatment.clone(),
            self.moderator.clone(),
            self.covariates.clone(),
            self.roles.clone(),
            self.treatment_binary,
        )
    }

    /// Returns a copy with the moderator replaced.
    pub fn with_moderator(&self, moderator: Vec<f64>) -> Result<Self> {
        Dataset::new(
            self.outcome.clone(),
            self.treatment.clone(),
            moderator,
            self.covariates.clone(),
            self.roles.clone(),
            self.treatment_binary,
        )
    }

    /// Sub-sample with the given row indices (repeats allowed).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset::new(
            pick(&self.outcome),
            pick(&self.treatment),
            pick(&self.moderator),
            self.covariates.iter().map(|c| pick(c)).collect(),
            self.roles.clone(),
            self.treatment_binary,
        )
    }

    /// Writes the dataset as CSV. Values use the shortest representation
    /// that round-trips, so re-ingesting reproduces the data exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(std::io::BufWriter::new(file))
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.column_names())?;
        let mut record = Vec::with_capacity(3 + self.p());
        for i in 0..self.n() {
            record.clear();
            record.push(self.outcome[i].to_string());
            record.push(self.treatment[i].to_string());
            record.push(self.moderator[i].to_string());
            for col in &self.covariates {
                record.push(col[i].to_string());
            }
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn parse_cell(raw: &str) -> Option<f64> {
    let trimmed = raw.trim();
    trimmed.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a CSV file with a header row into a [`Dataset`].
pub fn ingest_csv(
    path: &Path,
    roles: &ColumnRoles,
    missing_policy: MissingPolicy,
    treatment_binary: bool,
) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    ingest_csv_from(file, roles, missing_policy, treatment_binary)
}

pub fn ingest_csv_from<R: std::io::Read>(
    reader: R,
    roles: &ColumnRoles,
    missing_policy: MissingPolicy,
    treatment_binary: bool,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let wanted: Vec<&String> = [&roles.outcome, &roles.treatment, &roles.moderator]
        .into_iter()
        .chain(roles.covariates.iter())
        .collect();
    let mut positions = Vec::with_capacity(wanted.len());
    for name in &wanted {
        let pos = headers
            .iter()
            .position(|h| h == name.as_str())
            .ok_or_else(|| CmeError::MissingColumn(name.to_string()))?;
        positions.push(pos);
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    let mut dropped = 0usize;
    let mut row_values = vec![0.0; wanted.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let mut complete = true;
        for (slot, &pos) in positions.iter().enumerate() {
            let raw = record.get(pos).unwrap_or("");
            match parse_cell(raw) {
                Some(v) => row_values[slot] = v,
                None => match missing_policy {
                    MissingPolicy::Reject => {
                        return Err(CmeError::NonNumeric {
                            column: wanted[slot].to_string(),
                            row: row + 1,
                            value: raw.to_string(),
                        })
                    }
                    MissingPolicy::DropRows => {
                        complete = false;
                        break;
                    }
                },
            }
        }
        if complete {
            for (col, &v) in columns.iter_mut().zip(row_values.iter()) {
                col.push(v);
            }
        } else {
            dropped += 1;
        }
    }
    if columns[0].is_empty() {
        return Err(CmeError::EmptyDataset);
    }
    let mut it = columns.into_iter();
    let outcome = it.next().unwrap_or_default();
    let treatment = it.next().unwrap_or_default();
    let moderator = it.next().unwrap_or_default();
    let covariates: Vec<Vec<f64>> = it.collect();
    let mut ds = Dataset::new(
        outcome,
        treatment,
        moderator,
        covariates,
        roles.clone(),
        treatment_binary,
    )?;
    ds.dropped_rows = dropped;
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing or non-finite values");
    }
    Ok(ds)
}

/// Default number of evaluation points.
pub const DEFAULT_GRID_SIZE: usize = 50;

/// Equally spaced evaluation points between the 1st and 99th percentiles
/// of the moderator.
pub fn make_grid(dataset: &Dataset, grid_size: usize) -> Result<Vec<f64>> {
    if grid_size < 2 {
        return Err(invalid("grid_size must be at least 2"));
    }
    let mut x = dataset.moderator().to_vec();
    x.sort_by(f64::total_cmp);
    if x[x.len() - 1] - x[0] <= 0.0 {
        return Err(CmeError::ConstantModerator);
    }
    let lo = quantile_sorted(&x, 0.01);
    let hi = quantile_sorted(&x, 0.99);
    let step = (hi - lo) / (grid_size - 1) as f64;
    Ok((0..grid_size)
        .map(|k| {
            if k == grid_size - 1 {
                hi
            } else {
                lo + step * k as f64
            }
        })
        .collect())
}

/// The estimator ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Linear,
    Binning,
    Kernel,
    AipwLasso,
    PdsLasso,
    DmlPlm,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Linear,
        EstimatorKind::Binning,
        EstimatorKind::Kernel,
        EstimatorKind::AipwLasso,
        EstimatorKind::PdsLasso,
        EstimatorKind::DmlPlm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Linear => "linear",
            EstimatorKind::Binning => "binning",
            EstimatorKind::Kernel => "kernel",
            EstimatorKind::AipwLasso => "aipw_lasso",
            EstimatorKind::PdsLasso => "pds_lasso",
            EstimatorKind::DmlPlm => "dml_plm",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = CmeError;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = EstimatorKind::ALL.iter().map(|k| k.name()).collect();
                invalid(format!(
                    "unknown estimator {s:?}; valid names: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// Bandwidth: a fixed positive value or chosen by cross-validation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum Bandwidth {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Auto => s.serialize_str("auto"),
            Bandwidth::Fixed(h) => s.serialize_f64(*h),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(h) => Ok(Bandwidth::Fixed(h)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl FromStr for Bandwidth {
    type Err = CmeError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Bandwidth::Auto);
        }
        let h: f64 = s
            .parse()
            .map_err(|_| invalid(format!("bandwidth must be \"auto\" or a number, got {s:?}")))?;
        Ok(Bandwidth::Fixed(h))
    }
}

/// Evaluation grid: explicit points or a size for [`make_grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Size(usize),
    Points(Vec<f64>),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Size(DEFAULT_GRID_SIZE)
    }
}

impl GridSpec {
    /// Resolves to concrete points, checking they lie in the observed
    /// support of `X`.
    pub fn resolve(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        match self {
            GridSpec::Size(k) => make_grid(dataset, *k),
            GridSpec::Points(points) => {
                if points.is_empty() {
                    return Err(invalid("evaluation grid is empty"));
                }
                let (lo, hi) = min_max(dataset.moderator());
                if let Some(x) = points.iter().find(|&&x| !(lo..=hi).contains(&x)) {
                    return Err(invalid(format!(
                        "grid point {x} lies outside the observed moderator range [{lo}, {hi}]"
                    )));
                }
                Ok(points.clone())
            }
        }
    }
}

pub(crate) fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

/// Everything needed to run one estimator on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationRequest {
    pub estimator: EstimatorKind,
    pub grid: GridSpec,
    pub bandwidth: Bandwidth,
    pub n_bins: usize,
    pub n_boot: usize,
    pub confidence_level: f64,
    pub seed: u64,
    /// Kernel effective-sample-size cutoff; `None` uses `4 * (4 + p)`.
    pub trim_threshold: Option<f64>,
    pub treatment_binary: bool,
    pub kernel: KernelType,
    /// Folds for bandwidth cross-validation.
    pub cv_folds: usize,
    /// Nuisance learner and cross-fitting folds for `aipw_lasso` and `dml_plm`.
    pub learner: Learner,
    pub k_folds: usize,
    pub boosting: BoostingParams,
}

impl Default for EstimationRequest {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Kernel,
            grid: GridSpec::default(),
            bandwidth: Bandwidth::Auto,
            n_bins: 3,
            n_boot: 1000,
            confidence_level: 0.95,
            seed: 0,
            trim_threshold: None,
            treatment_binary: false,
            kernel: KernelType::Epanechnikov,
            cv_folds: crate::kernel::DEFAULT_CV_FOLDS,
            learner: Learner::LassoBasis,
            k_folds: crate::debiased::nuisance::DEFAULT_FOLDS,
            boosting: BoostingParams::default(),
        }
    }
}

impl EstimationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 {
            return Err(invalid("n_bins must be at least 1"));
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid(format!("bandwidth must be positive, got {h}")));
            }
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(invalid("confidence_level must lie in (0, 1)"));
        }
        if self.n_boot > 0 && self.n_boot < crate::bands::MIN_BOOT_SUCCESSES {
            return Err(invalid(format!(
                "n_boot must be 0 or at least {}",
                crate::bands::MIN_BOOT_SUCCESSES
            )));
        }
        if let Some(t) = self.trim_threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid("trim_threshold must be non-negative"));
            }
        }
        if let GridSpec::Size(k) = self.grid {
            if k < 2 {
                return Err(invalid("grid_size must be at least 2"));
            }
        }
        if self.cv_folds < 2 {
            return Err(invalid("cv_folds must be at least 2"));
        }
        if self.k_folds < 2 {
            return Err(invalid("k_folds must be at least 2"));
        }
        self.boosting.validate()
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec {
            kernel: self.kernel,
            bandwidth: self.bandwidth,
            cv_folds: self.cv_folds,
            bandwidth_grid: None,
            trim_threshold: self.trim_threshold,
        }
    }

    pub fn nuisance_config(&self) -> NuisanceConfig {
        NuisanceConfig {
            learner: self.learner,
            k_folds: self.k_folds,
            boosting: self.boosting,
            ..NuisanceConfig::default()
        }
    }
}

/// Lower and upper limits of a confidence band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    #[serde(with = "nan_as_null")]
    pub lower: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub upper: Vec<f64>,
}

impl Band {
    pub fn around(estimate: &[f64], se: &[f64], multiplier: f64) -> Self {
        let lower = estimate
            .iter()
            .zip(se)
            .map(|(e, s)| e - multiplier * s)
            .collect();
        let upper = estimate
            .iter()
            .zip(se)
            .map(|(e, s)| e + multiplier * s)
            .collect();
        Band { lower, upper }
    }

    pub fn contains(&self, k: usize, value: f64) -> bool {
        self.lower[k] <= value && value <= self.upper[k]
    }
}

/// Provenance of a curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub estimator: String,
    pub bandwidth: Option<f64>,
    pub seed: u64,
    pub n: usize,
    pub n_boot: usize,
    pub confidence_level: f64,
    pub pointwise_multiplier: f64,
    pub uniform_multiplier: Option<f64>,
    pub bootstrap_successes: Option<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Estimated conditional marginal effect curve with confidence bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmeCurve {
    pub grid: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub estimate: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub std_error: Vec<f64>,
    pub ci_pointwise: Band,
    pub ci_uniform: Option<Band>,
    pub trimmed: Vec<bool>,
    pub metadata: CurveMetadata,
}

impl CmeCurve {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Indices of grid points that were estimated (not trimmed).
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&k| !self.trimmed[k])
    }

    /// True when `truth(x)` lies inside the uniform band at every
    /// non-trimmed grid point. `None` without a uniform band.
    pub fn uniform_covers(&self, truth: impl Fn(f64) -> f64) -> Option<bool> {
        let band = self.ci_uniform.as_ref()?;
        Some(self.active().all(|k| band.contains(k, truth(self.grid[k]))))
    }

    /// Root-mean-square error against `truth` over non-trimmed points.
    pub fn rmse(&self, truth: impl Fn(f64) -> f64) -> f64 {
        let (sum, count) = self.active().fold((0.0, 0usize), |(s, c), k| {
            let e = self.estimate[k] - truth(self.grid[k]);
            (s + e * e, c + 1)
        });
        if count == 0 {
            f64::NAN
        } else {
            (sum / count as f64).sqrt()
        }
    }

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
            "x",
            "estimate",
            "std_error",
            "ci_lower",
            "ci_upper",
            "uniform_lower",
            "uniform_upper",
            "trimmed",
        ])?;
        let fmt = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        for k in 0..self.len() {
            let (ul, uu) = match &self.ci_uniform {
                Some(b) => (fmt(b.lower[k]), fmt(b.upper[k])),
                None => (String::new(), String::new()),
            };
            wtr.write_record([
                self.grid[k].to_string(),
                fmt(self.estimate[k]),
                fmt(self.std_error[k]),
                fmt(self.ci_pointwise.lower[k]),
                fmt(self.ci_pointwise.upper[k]),
                ul,
                uu,
                self.trimmed[k].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Serializes non-finite floats as JSON `null` and back as NaN.
pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opts: Vec<Option<f64>> = v
            .iter()
            .map(|&x| if x.is_finite() { Some(x) } else { None })
            .collect();
        opts.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opts: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opts.into_iter().map(|o| o.unwrap_or(f64::NAN)).collect())
    }
}
