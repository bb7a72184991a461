//! One entry point for every estimator.

use crate::data::{CmeCurve, Dataset, EstimationRequest, EstimatorKind};
use crate::debiased::{estimate_aipw, estimate_dml_plm, estimate_pds_lasso_with, fit_nuisances_with, PdsConfig};
use crate::error::Result;
use crate::kernel::estimate_kernel;
use crate::linear::{estimate_binning, estimate_linear, BinSpec};

/// Resolves the request's grid against `dataset` and runs the estimator.
pub fn estimate(dataset: &Dataset, request: &EstimationRequest) -> Result<CmeCurve> {
    request.validate()?;
    let grid = request.grid.resolve(dataset)?;
    estimate_on_grid(dataset, request, &grid)
}

/// Runs the requested estimator on an explicit grid. `request.grid` is
/// ignored; the binning estimator reports at its bin medians.
pub fn estimate_on_grid(dataset: &Dataset, request: &EstimationRequest, grid: &[f64]) -> Result<CmeCurve> {
    request.validate()?;
    let (n_boot, level, seed) = (request.n_boot, request.confidence_level, request.seed);
    let kernel = request.kernel_spec();
    match request.estimator {
        EstimatorKind::Linear => estimate_linear(dataset, grid, n_boot, level, seed),
        EstimatorKind::Binning => {
            let bins = BinSpec::quantiles(dataset, request.n_bins)?;
            estimate_binning(dataset, &bins, n_boot, level, seed)
        }
        EstimatorKind::Kernel => estimate_kernel(dataset, grid, &kernel, n_boot, level, seed),
        EstimatorKind::AipwLasso => {
            let nuis = fit_nuisances_with(dataset, &request.nuisance_config(), seed)?;
            estimate_aipw(dataset, &nuis, grid, &kernel, n_boot, level, seed)
        }
        EstimatorKind::DmlPlm => {
            let nuis = fit_nuisances_with(dataset, &request.nuisance_config(), seed)?;
            estimate_dml_plm(dataset, &nuis, grid, &kernel, n_boot, level, seed)
        }
        EstimatorKind::PdsLasso => {
            let config = PdsConfig {
                fallback: kernel,
                ..PdsConfig::default()
            };
            estimate_pds_lasso_with(dataset, grid, &config, n_boot, level, seed)
        }
    }
}
