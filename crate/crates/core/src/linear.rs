//! Linear interaction estimator, binning estimator and the Wald test of a
//! constant CME.
//!
//! The linear model regresses `Y` on `{1, D, X, DX, Z}` and reports
//! `θ̂(x) = β̂_D + β̂_DX·x`. The binning estimator splits `X` at quantiles
//! and fits, in one regression, a separate `{1, D, X − x_g, D(X − x_g)}`
//! block per bin, where `x_g` is the bin's median moderator value.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bands::{self, bootstrap_counts, SupT};
use crate::data::{min_max, CmeCurve, Dataset};
use crate::error::{invalid, CmeError, Result};
use crate::numerics::{quantile_sorted, wls_labeled, NormalEquations, WlsFit};

/// A least-squares problem with a fixed row-major design.
pub(crate) struct Design {
    pub rows: Vec<f64>,
    pub k: usize,
    pub y: Vec<f64>,
    pub labels: Vec<String>,
}

impl Design {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn fit(&self) -> Result<WlsFit> {
        let x = DMatrix::from_row_slice(self.n(), self.k, &self.rows);
        wls_labeled(&x, &self.y, &vec![1.0; self.n()], &self.labels)
    }

    /// Coefficients of the fit with row multiplicities `counts`.
    pub fn refit(&self, counts: &[f64]) -> Option<Vec<f64>> {
        let mut ne = NormalEquations::new(self.k);
        for (s, &c) in counts.iter().enumerate() {
            ne.add(&self.rows[s * self.k..(s + 1) * self.k], self.y[s], c);
        }
        if ne.effective_n() <= self.k as f64 {
            return None;
        }
        ne.solve().ok().map(|(beta, _)| beta)
    }
}

fn linear_design(dataset: &Dataset) -> Design {
    let n = dataset.n();
    let p = dataset.p();
    let k = 4 + p;
    let (d, x) = (dataset.treatment(), dataset.moderator());
    let mut rows = Vec::with_capacity(n * k);
    for i in 0..n {
        rows.extend_from_slice(&[1.0, d[i], x[i], d[i] * x[i]]);
        for j in 0..p {
            rows.push(dataset.covariate(j)[i]);
        }
    }
    let roles = dataset.roles();
    let mut labels = vec![
        "(intercept)".to_string(),
        roles.treatment.clone(),
        roles.moderator.clone(),
        format!("{}:{}", roles.treatment, roles.moderator),
    ];
    labels.extend(roles.covariates.iter().cloned());
    Design {
        rows,
        k,
        y: dataset.outcome().to_vec(),
        labels,
    }
}

/// Coefficients of the linear interaction model, in the order
/// `(intercept, D, X, D·X, Z...)`, with HC1 covariance.
pub fn fit_linear(dataset: &Dataset) -> Result<WlsFit> {
    linear_design(dataset).fit()
}

/// Runs the bootstrap for curves that are linear maps of one regression's
/// coefficients.
pub(crate) fn coefficient_bootstrap(
    design: &Design,
    map: impl Fn(&[f64]) -> Vec<f64> + Sync,
    estimate: &[f64],
    se: &[f64],
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<Option<SupT>> {
    if n_boot == 0 {
        return Ok(None);
    }
    let trimmed = vec![false; estimate.len()];
    let n = design.n();
    bands::sup_t(estimate, se, &trimmed, n_boot, level, seed, |rng| {
        let counts = bootstrap_counts(n, rng);
        design.refit(&counts).map(|b| map(&b))
    })
    .map(Some)
}

/// `θ̂(x) = β̂_D + β̂_DX·x` on the grid, with delta-method standard errors.
pub fn estimate_linear(
    dataset: &Dataset,
    grid: &[f64],
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<CmeCurve> {
    if grid.is_empty() {
        return Err(invalid("evaluation grid is empty"));
    }
    let design = linear_design(dataset);
    let fit = design.fit()?;
    let k = design.k;
    let contrast = |x0: f64| {
        let mut c = vec![0.0; k];
        c[1] = 1.0;
        c[3] = x0;
        c
    };
    let estimate: Vec<f64> = grid.iter().map(|&x0| fit.contrast(&contrast(x0))).collect();
    let se: Vec<f64> = grid
        .iter()
        .map(|&x0| fit.contrast_variance(&contrast(x0)).max(0.0).sqrt())
        .collect();
    let map = |b: &[f64]| grid.iter().map(|&x0| b[1] + b[3] * x0).collect();
    let uniform = coefficient_bootstrap(&design, map, &estimate, &se, n_boot, level, seed)?;
    let meta = bands::metadata("linear", seed, dataset.n(), n_boot);
    let trimmed = vec![false; grid.len()];
    Ok(bands::assemble(
        grid.to_vec(),
        estimate,
        se,
        trimmed,
        level,
        uniform,
        meta,
    ))
}

pub const DEFAULT_BINS: usize = 3;

/// Bins of the moderator for the binning estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub n_bins: usize,
    /// Interior cut points; bin `g` holds `cut[g-1] < x ≤ cut[g]`.
    pub cut_points: Vec<f64>,
    /// Within-bin medians of `X`.
    pub eval_points: Vec<f64>,
    /// Give covariates bin-specific coefficients instead of common ones.
    pub interact_covariates: bool,
}

impl BinSpec {
    /// `n_bins` equal-frequency bins cut at quantiles of `X`.
    pub fn quantiles(dataset: &Dataset, n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(invalid("n_bins must be at least 1"));
        }
        let mut sorted = dataset.moderator().to_vec();
        sorted.sort_by(f64::total_cmp);
        let cuts: Vec<f64> = (1..n_bins)
            .map(|g| quantile_sorted(&sorted, g as f64 / n_bins as f64))
            .collect();
        Self::with_cut_points(dataset, &cuts)
    }

    /// Bins from explicit cut points. Cut points that would leave a bin
    /// empty (outside the data range, or duplicated) are dropped.
    pub fn with_cut_points(dataset: &Dataset, cuts: &[f64]) -> Result<Self> {
        if cuts.iter().any(|c| !c.is_finite()) {
            return Err(invalid("cut points must be finite"));
        }
        let mut cuts = cuts.to_vec();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let (lo, hi) = min_max(dataset.moderator());
        cuts.retain(|&c| c >= lo && c < hi);
        let x = dataset.moderator();
        let mut kept: Vec<f64> = Vec::with_capacity(cuts.len());
        for &c in &cuts {
            let prev = kept.last().copied().unwrap_or(f64::NEG_INFINITY);
            if x.iter().any(|&v| v > prev && v <= c) {
                kept.push(c);
            }
        }
        let mut members: Vec<Vec<f64>> = vec![Vec::new(); kept.len() + 1];
        for &v in x {
            members[bin_of(&kept, v)].push(v);
        }
        let eval_points = members
            .iter_mut()
            .map(|m| {
                m.sort_by(f64::total_cmp);
                quantile_sorted(m, 0.5)
            })
            .collect();
        Ok(Self {
            n_bins: kept.len() + 1,
            cut_points: kept,
            eval_points,
            interact_covariates: false,
        })
    }

    pub fn with_interacted_covariates(mut self, yes: bool) -> Self {
        self.interact_covariates = yes;
        self
    }

    pub fn bin_of(&self, x: f64) -> usize {
        bin_of(&self.cut_points, x)
    }
}

fn bin_of(cuts: &[f64], x: f64) -> usize {
    cuts.partition_point(|&c| c < x)
}

/// The joint binning regression: per-bin `{1, D, X − x_g, D(X − x_g)}`
/// blocks followed by the covariates.
fn binning_design(dataset: &Dataset, spec: &BinSpec) -> Result<Design> {
    let g_count = spec.n_bins;
    if spec.eval_points.len() != g_count || spec.cut_points.len() + 1 != g_count {
        return Err(invalid("bin specification is inconsistent"));
    }
    let n = dataset.n();
    let p = dataset.p();
    let (d, x) = (dataset.treatment(), dataset.moderator());
    let bins: Vec<usize> = x.iter().map(|&v| spec.bin_of(v)).collect();

    let min_obs = 10.max(p + 4);
    for g in 0..g_count {
        let members: Vec<usize> = (0..n).filter(|&i| bins[i] == g).collect();
        if members.len() < min_obs {
            return Err(CmeError::DegenerateBin {
                bin: g + 1,
                reason: format!("{} observations, at least {min_obs} required", members.len()),
            });
        }
        let d0 = d[members[0]];
        if members.iter().all(|&i| d[i] == d0) {
            return Err(CmeError::DegenerateBin {
                bin: g + 1,
                reason: "no variation in the treatment".into(),
            });
        }
    }

    let zk = if spec.interact_covariates { p * g_count } else { p };
    let k = 4 * g_count + zk;
    let mut rows = vec![0.0; n * k];
    for i in 0..n {
        let g = bins[i];
        let row = &mut rows[i * k..(i + 1) * k];
        let dx = x[i] - spec.eval_points[g];
        row[4 * g..4 * g + 4].copy_from_slice(&[1.0, d[i], dx, d[i] * dx]);
        for j in 0..p {
            let col = if spec.interact_covariates { j * g_count + g } else { j };
            row[4 * g_count + col] = dataset.covariate(j)[i];
        }
    }
    let roles = dataset.roles();
    let mut labels = Vec::with_capacity(k);
    for g in 1..=g_count {
        labels.push(format!("bin{g}"));
        labels.push(format!("bin{g}:{}", roles.treatment));
        labels.push(format!("bin{g}:{}", roles.moderator));
        labels.push(format!("bin{g}:{}:{}", roles.treatment, roles.moderator));
    }
    for z in &roles.covariates {
        if spec.interact_covariates {
            for g in 1..=g_count {
                labels.push(format!("bin{g}:{z}"));
            }
        } else {
            labels.push(z.clone());
        }
    }
    Ok(Design {
        rows,
        k,
        y: dataset.outcome().to_vec(),
        labels,
    })
}

/// Per-bin CME estimates and their joint covariance.
#[derive(Debug, Clone)]
pub struct BinningFit {
    pub estimates: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

pub fn fit_binning(dataset: &Dataset, spec: &BinSpec) -> Result<BinningFit> {
    let design = binning_design(dataset, spec)?;
    let fit = design.fit()?;
    Ok(binning_summary(&fit, spec.n_bins))
}

fn binning_summary(fit: &WlsFit, g_count: usize) -> BinningFit {
    let idx: Vec<usize> = (0..g_count).map(|g| 4 * g + 1).collect();
    BinningFit {
        estimates: idx.iter().map(|&j| fit.coefficients[j]).collect(),
        covariance: DMatrix::from_fn(g_count, g_count, |a, b| fit.covariance[(idx[a], idx[b])]),
    }
}

/// Binning estimates evaluated at the within-bin medians.
pub fn estimate_binning(
    dataset: &Dataset,
    spec: &BinSpec,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<CmeCurve> {
    let design = binning_design(dataset, spec)?;
    let fit = design.fit()?;
    let g_count = spec.n_bins;
    let summary = binning_summary(&fit, g_count);
    let se: Vec<f64> = (0..g_count)
        .map(|g| summary.covariance[(g, g)].max(0.0).sqrt())
        .collect();
    let map = |b: &[f64]| (0..g_count).map(|g| b[4 * g + 1]).collect();
    let uniform =
        coefficient_bootstrap(&design, map, &summary.estimates, &se, n_boot, level, seed)?;
    let mut meta = bands::metadata("binning", seed, dataset.n(), n_boot);
    meta.notes.push(format!(
        "{g_count} bins cut at {:?}; covariates {}",
        spec.cut_points,
        if spec.interact_covariates {
            "interacted with bins"
        } else {
            "with common coefficients"
        }
    ));
    Ok(bands::assemble(
        spec.eval_points.clone(),
        summary.estimates,
        se,
        vec![false; g_count],
        level,
        uniform,
        meta,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Wald test that all per-bin CMEs are equal, using the joint HC1
/// covariance and a χ²(G − 1) reference.
pub fn wald_constancy_test(dataset: &Dataset, spec: &BinSpec) -> Result<WaldTest> {
    if spec.n_bins < 2 {
        return Err(CmeError::OneBinTest);
    }
    let fit = fit_binning(dataset, spec)?;
    let g = spec.n_bins;
    let r = DMatrix::from_fn(g - 1, g, |i, j| {
        if j == 0 {
            -1.0
        } else if j == i + 1 {
            1.0
        } else {
            0.0
        }
    });
    let theta = nalgebra::DVector::from_column_slice(&fit.estimates);
    let diff = &r * theta;
    let v = &r * &fit.covariance * r.transpose();
    let inv = crate::numerics::Cholesky::factor(&v)
        .map_err(|_| CmeError::Degenerate("singular covariance of bin differences".into()))?
        .inverse();
    let statistic = (diff.transpose() * inv * &diff)[(0, 0)];
    let df = g - 1;
    let chi = ChiSquared::new(df as f64).map_err(|e| CmeError::Degenerate(e.to_string()))?;
    Ok(WaldTest {
        statistic,
        df,
        p_value: chi.sf(statistic),
    })
}
