//! Post-double-selection LASSO for the fully interacted model.
//!
//! Candidate controls are a polynomial basis of `Z`, its interactions with
//! `X`, and `X², X³`; heterogeneity candidates interact `D` with the basis
//! and with `X², X³`. The core terms `{D, X, DX}` (plus `D², D²X` for a
//! non-binary treatment) are never penalized: they are partialled out
//! before selection. The outcome LASSO searches all candidates and the
//! treatment LASSO searches the controls; OLS is refit on the core terms
//! plus the union of both selections.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::basis::BasisExpansion;
use crate::bands;
use crate::data::{CmeCurve, Dataset};
use crate::error::{invalid, Result};
use crate::kernel::{estimate_kernel, KernelSpec};
use crate::linear::{coefficient_bootstrap, Design};
use crate::numerics::{cv_lambda, derive_seed, lasso_cd, normal_critical, std_dev, streams, Cholesky};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdsPenalty {
    /// `λ = c·σ̂·Φ⁻¹(1 − γ/2m)/√n` with `γ = 0.1/ln n`, iterating `σ̂`.
    #[default]
    Plugin,
    CrossValidated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdsConfig {
    pub penalty: PdsPenalty,
    /// The constant `c` of the plug-in penalty.
    pub plugin_constant: f64,
    pub cv_folds: usize,
    /// Used when the data carry no covariates.
    pub fallback: KernelSpec,
}

impl Default for PdsConfig {
    fn default() -> Self {
        Self {
            penalty: PdsPenalty::Plugin,
            plugin_constant: 1.1,
            cv_folds: 5,
            fallback: KernelSpec::default(),
        }
    }
}

/// `∂Y/∂D` contribution of a design column, as a function of the grid point.
#[derive(Debug, Clone, Copy)]
enum Slope {
    Zero,
    One,
    X,
    X2,
    X3,
    /// A constant (sample mean of `2D` or of a basis column), optionally
    /// times `x`.
    Mean(f64),
    MeanX(f64),
}

impl Slope {
    fn at(self, x0: f64) -> f64 {
        match self {
            Slope::Zero => 0.0,
            Slope::One => 1.0,
            Slope::X => x0,
            Slope::X2 => x0 * x0,
            Slope::X3 => x0 * x0 * x0,
            Slope::Mean(m) => m,
            Slope::MeanX(m) => m * x0,
        }
    }
}

struct Column {
    label: String,
    values: Vec<f64>,
    slope: Slope,
}

fn column(label: impl Into<String>, values: Vec<f64>, slope: Slope) -> Column {
    Column {
        label: label.into(),
        values,
        slope,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Residuals of each target after least squares on `[1, basis...]`.
fn partial_out(basis: &[&[f64]], targets: &[&[f64]], n: usize) -> Result<DMatrix<f64>> {
    let k = basis.len() + 1;
    let a = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { basis[j - 1][i] });
    let t = DMatrix::from_fn(n, targets.len(), |i, j| targets[j][i]);
    let gram = a.transpose() * &a;
    let chol = Cholesky::factor(&gram).map_err(|cols| crate::CmeError::RankDeficient {
        columns: cols.iter().map(|c| format!("core column {c}")).collect(),
    })?;
    let rhs = a.transpose() * &t;
    let mut coef = DMatrix::zeros(k, targets.len());
    for j in 0..targets.len() {
        let b: Vec<f64> = rhs.column(j).iter().copied().collect();
        for (r, v) in chol.solve(&b).into_iter().enumerate() {
            coef[(r, j)] = v;
        }
    }
    Ok(t - a * coef)
}

/// Indices of the columns of `x` selected by the LASSO.
fn select(x: &DMatrix<f64>, y: &[f64], config: &PdsConfig, seed: u64) -> Result<Vec<usize>> {
    if x.ncols() == 0 {
        return Ok(Vec::new());
    }
    let n = y.len() as f64;
    let fit = match config.penalty {
        PdsPenalty::CrossValidated => {
            let lambda = cv_lambda(x, y, config.cv_folds, seed)?;
            lasso_cd(x, y, lambda)?
        }
        PdsPenalty::Plugin => {
            let gamma = 0.1 / n.ln();
            let q = normal_critical(1.0 - gamma / x.ncols() as f64);
            let mut sigma = std_dev(y);
            let mut fit = lasso_cd(x, y, config.plugin_constant * sigma * q / n.sqrt())?;
            for _ in 0..5 {
                let pred = fit.predict(x);
                let rss: f64 = y.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum();
                let dof = (n - fit.active_set.len() as f64 - 1.0).max(1.0);
                let next = (rss / dof).sqrt();
                if (next - sigma).abs() <= 1e-6 * sigma.max(1e-12) {
                    break;
                }
                sigma = next;
                fit = lasso_cd(x, y, config.plugin_constant * sigma * q / n.sqrt())?;
            }
            fit
        }
    };
    Ok((0..x.ncols()).filter(|&j| fit.coefficients[j] != 0.0).collect())
}

pub fn estimate_pds_lasso(
    dataset: &Dataset,
    grid: &[f64],
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<CmeCurve> {
    estimate_pds_lasso_with(dataset, grid, &PdsConfig::default(), n_boot, level, seed)
}

/// `θ̂(x) = ∂Ŷ/∂D` at `X = x`, averaged over the sample's `D` and `Z`, with
/// delta-method standard errors. Without covariates the kernel estimator
/// is returned instead.
pub fn estimate_pds_lasso_with(
    dataset: &Dataset,
    grid: &[f64],
    config: &PdsConfig,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<CmeCurve> {
    if grid.is_empty() {
        return Err(invalid("evaluation grid is empty"));
    }
    if !(config.plugin_constant > 0.0) {
        return Err(invalid("plugin_constant must be positive"));
    }
    if config.cv_folds < 2 {
        return Err(invalid("cv_folds must be at least 2"));
    }
    if dataset.p() == 0 {
        let mut curve = estimate_kernel(dataset, grid, &config.fallback, n_boot, level, seed)?;
        curve.metadata.estimator = "pds_lasso".into();
        curve
            .metadata
            .notes
            .push("no covariates to select: returned the kernel estimator".into());
        return Ok(curve);
    }
    let n = dataset.n();
    let roles = dataset.roles();
    let (dn, xn) = (&roles.treatment, &roles.moderator);
    let d = dataset.treatment();
    let x = dataset.moderator();
    let binary = d.iter().all(|&v| v == 0.0 || v == 1.0);
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u * v).collect() };

    let dx = prod(d, x);
    let x2 = prod(x, x);
    let x3 = prod(&x2, x);
    let mut core = vec![
        column(dn.clone(), d.to_vec(), Slope::One),
        column(xn.clone(), x.to_vec(), Slope::Zero),
        column(format!("{dn}*{xn}"), dx.clone(), Slope::X),
    ];
    if !binary {
        let two_d = 2.0 * mean(d);
        let d2 = prod(d, d);
        core.push(column(format!("{dn}^2"), d2.clone(), Slope::Mean(two_d)));
        core.push(column(format!("{dn}^2*{xn}"), prod(&d2, x), Slope::MeanX(two_d)));
    }

    let z: Vec<&[f64]> = (0..dataset.p()).map(|j| dataset.covariate(j)).collect();
    let basis = BasisExpansion::new(&roles.covariates);
    let b = basis.expand(&z);
    let mut controls = Vec::new();
    let mut hetero = Vec::new();
    for (j, lab) in basis.labels.iter().enumerate() {
        let col: Vec<f64> = b.column(j).iter().copied().collect();
        controls.push(column(lab.clone(), col.clone(), Slope::Zero));
        controls.push(column(format!("{xn}*{lab}"), prod(x, &col), Slope::Zero));
        hetero.push(column(format!("{dn}*{lab}"), prod(d, &col), Slope::Mean(mean(&col))));
    }
    controls.push(column(format!("{xn}^2"), x2.clone(), Slope::Zero));
    controls.push(column(format!("{xn}^3"), x3.clone(), Slope::Zero));
    hetero.push(column(format!("{dn}*{xn}^2"), prod(d, &x2), Slope::X2));
    hetero.push(column(format!("{dn}*{xn}^3"), prod(d, &x3), Slope::X3));
    let n_controls = controls.len();
    let candidates: Vec<Column> = controls.into_iter().chain(hetero).collect();

    let lasso_seed = derive_seed(seed, streams::NUISANCE);
    let core_cols: Vec<&[f64]> = core.iter().map(|c| c.values.as_slice()).collect();
    let mut targets: Vec<&[f64]> = vec![dataset.outcome()];
    targets.extend(candidates.iter().map(|c| c.values.as_slice()));
    let res = partial_out(&core_cols, &targets, n)?;
    let y_res: Vec<f64> = res.column(0).iter().copied().collect();
    let outcome_sel = select(&res.columns(1, candidates.len()).into_owned(), &y_res, config, lasso_seed)?;

    let mut targets: Vec<&[f64]> = vec![d];
    targets.extend(candidates[..n_controls].iter().map(|c| c.values.as_slice()));
    let res = partial_out(&[x], &targets, n)?;
    let d_res: Vec<f64> = res.column(0).iter().copied().collect();
    let treatment_sel = select(
        &res.columns(1, n_controls).into_owned(),
        &d_res,
        config,
        derive_seed(lasso_seed, 1),
    )?;

    let mut selected: Vec<usize> = outcome_sel.iter().chain(&treatment_sel).copied().collect();
    selected.sort_unstable();
    selected.dedup();

    let mut columns: Vec<&Column> = core.iter().collect();
    columns.extend(selected.iter().map(|&j| &candidates[j]));
    let k = columns.len() + 1;
    let mut rows = Vec::with_capacity(n * k);
    for i in 0..n {
        rows.push(1.0);
        rows.extend(columns.iter().map(|c| c.values[i]));
    }
    let mut labels = vec!["(intercept)".to_string()];
    labels.extend(columns.iter().map(|c| c.label.clone()));
    let design = Design {
        rows,
        k,
        y: dataset.outcome().to_vec(),
        labels,
    };
    let fit = design.fit()?;
    let contrast = |x0: f64| -> Vec<f64> {
        std::iter::once(0.0)
            .chain(columns.iter().map(|c| c.slope.at(x0)))
            .collect()
    };
    let contrasts: Vec<Vec<f64>> = grid.iter().map(|&x0| contrast(x0)).collect();
    let estimate: Vec<f64> = contrasts.iter().map(|c| fit.contrast(c)).collect();
    let se: Vec<f64> = contrasts
        .iter()
        .map(|c| fit.contrast_variance(c).max(0.0).sqrt())
        .collect();
    let map = |beta: &[f64]| {
        contrasts
            .iter()
            .map(|c| c.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    };
    let uniform = coefficient_bootstrap(&design, map, &estimate, &se, n_boot, level, seed)?;
    let mut meta = bands::metadata("pds_lasso", seed, n, n_boot);
    let names: Vec<&str> = selected.iter().map(|&j| candidates[j].label.as_str()).collect();
    meta.notes.push(format!(
        "selected {} of {} candidate terms: {}",
        selected.len(),
        candidates.len(),
        if names.is_empty() { "none".to_string() } else { names.join(", ") }
    ));
    if n_boot > 0 {
        meta.notes.push("bootstrap holds the selected terms fixed".into());
    }
    let trimmed = vec![false; grid.len()];
    Ok(bands::assemble(grid.to_vec(), estimate, se, trimmed, level, uniform, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_grid, ColumnRoles};
    use crate::dgp::{sample, DgpSpec};
    use crate::linear::estimate_linear;
    use crate::numerics::rng_stream;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn no_covariates_defers_to_kernel() {
        let ds = sample(&DgpSpec::KeyA1, 500, 3).unwrap();
        let grid = make_grid(&ds, 8).unwrap();
        let pds = estimate_pds_lasso(&ds, &grid, 0, 0.95, 4).unwrap();
        let ker = estimate_kernel(&ds, &grid, &KernelSpec::default(), 0, 0.95, 4).unwrap();
        assert_eq!(pds.estimate.len(), ker.estimate.len());
        for k in 0..grid.len() {
            assert!(pds.estimate[k] == ker.estimate[k] || (pds.estimate[k].is_nan() && ker.estimate[k].is_nan()));
        }
        assert_eq!(pds.metadata.estimator, "pds_lasso");
    }

    #[test]
    fn linear_model_with_irrelevant_covariates() {
        // Y = 1 + 0.5 D + X + 0.8 DX + Z1 + ε with ten covariates, nine
        // irrelevant; θ(x) = 0.5 + 0.8x.
        let n = 2000;
        let mut rng = rng_stream(11, 0);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let x: Vec<f64> = (0..n).map(|_| draw()).collect();
        let z: Vec<Vec<f64>> = (0..10).map(|_| (0..n).map(|_| draw()).collect()).collect();
        let d: Vec<f64> = (0..n).map(|i| 0.5 * x[i] + 0.3 * z[0][i] + draw()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * d[i] + x[i] + 0.8 * d[i] * x[i] + z[0][i] + draw())
            .collect();
        let names: Vec<String> = (1..=10).map(|j| format!("Z{j}")).collect();
        let ds = Dataset::new(y, d, x, z, ColumnRoles::default().with_covariates(&names), false).unwrap();
        let grid = vec![-1.0, 0.0, 1.0];
        let curve = estimate_pds_lasso(&ds, &grid, 0, 0.95, 0).unwrap();
        for (k, &x0) in grid.iter().enumerate() {
            let truth = 0.5 + 0.8 * x0;
            assert!((curve.estimate[k] - truth).abs() < 3.0 * curve.std_error[k], "{k}");
        }
        let note = &curve.metadata.notes[0];
        let dz = note.matches("D*Z").count();
        assert!(dz <= 5, "{note}");
    }

    #[test]
    fn fig3_beats_linear() {
        let ds = sample(&DgpSpec::Fig3Binary, 3000, 9).unwrap();
        let grid = make_grid(&ds, 20).unwrap();
        let truth = |x: f64| 1.0 - x * x;
        let pds = estimate_pds_lasso(&ds, &grid, 0, 0.95, 1).unwrap();
        let lin = estimate_linear(&ds, &grid, 0, 0.95, 1).unwrap();
        assert!(pds.rmse(truth) < lin.rmse(truth), "{} vs {}", pds.rmse(truth), lin.rmse(truth));
    }
}
