//! Doubly robust and double machine learning CME estimators.
//!
//! Nuisance functions are learned with cross-fitting ([`fit_nuisances`]);
//! AIPW and DML then run a local-linear second stage on the debiased
//! pseudo-outcome or residuals. PDS-LASSO selects controls for a fully
//! interacted parametric model.

pub mod aipw;
pub mod basis;
pub mod dml;
pub mod nuisance;
pub mod pds;
pub mod trees;

pub use aipw::{aipw_pseudo_outcome, estimate_aipw};
pub use basis::BasisExpansion;
pub use dml::estimate_dml_plm;
pub use nuisance::{
    clip_propensity, fit_nuisances, fit_nuisances_on_folds, fit_nuisances_with, oracle_nuisances,
    Learner, NuisanceConfig, NuisanceFits, PROPENSITY_CLIP,
};
pub use pds::{estimate_pds_lasso, estimate_pds_lasso_with, PdsConfig};
pub use trees::{fit_boosted, BoostedTrees, BoostingParams};

use crate::data::{Bandwidth, CmeCurve, Dataset};
use crate::error::{invalid, Result};
use crate::kernel::{KernelSpec, LocalProblem};

/// Cross-validated second-stage bandwidths are multiplied by
/// `n^(-UNDERSMOOTHING_EXPONENT)` so that smoothing bias is small relative
/// to the standard error the bands are built from.
pub const UNDERSMOOTHING_EXPONENT: f64 = 0.05;

pub(crate) const FROZEN_NOTE: &str = "bootstrap holds the cross-fitted nuisance predictions fixed";

fn check_lengths(dataset: &Dataset, nuis: &NuisanceFits) -> Result<()> {
    if nuis.n() != dataset.n() || nuis.treatment_marginal.len() != dataset.n() {
        return Err(invalid(format!(
            "nuisance fits cover {} observations but the dataset has {}",
            nuis.n(),
            dataset.n()
        )));
    }
    Ok(())
}

/// Bandwidth choice, trimming and bootstrap for a local second stage.
#[allow(clippy::too_many_arguments)]
fn second_stage(
    problem: &LocalProblem,
    name: &str,
    dataset: &Dataset,
    grid: &[f64],
    spec: &KernelSpec,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<CmeCurve> {
    spec.validate()?;
    if grid.is_empty() {
        return Err(invalid("evaluation grid is empty"));
    }
    let trim = spec.trim_for(0);
    let h = match spec.bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Auto => {
            let candidates = spec.candidate_bandwidths(dataset.moderator())?;
            let h_cv = problem.select_bandwidth(spec.kernel, &candidates, spec.cv_folds, seed, trim)?;
            h_cv * (dataset.n() as f64).powf(-UNDERSMOOTHING_EXPONENT)
        }
    };
    let mut curve = problem.estimate(name, grid, h, spec.kernel, trim, n_boot, level, seed)?;
    if matches!(spec.bandwidth, Bandwidth::Auto) {
        curve
            .metadata
            .notes
            .push(format!(
                "bandwidth: {}-fold cross-validated value times n^-{UNDERSMOOTHING_EXPONENT}",
                spec.cv_folds
            ));
    }
    if n_boot > 0 {
        curve.metadata.notes.push(FROZEN_NOTE.into());
    }
    Ok(curve)
}
