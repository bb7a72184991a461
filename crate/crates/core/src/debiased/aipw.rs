//! AIPW: local-linear regression of the doubly robust pseudo-outcome on `X`.

use super::{check_lengths, second_stage, NuisanceFits};
use crate::data::{CmeCurve, Dataset};
use crate::error::{invalid, CmeError, Result};
use crate::kernel::{KernelSpec, LocalProblem, Term};

/// Clipping rates above this attach a warning.
pub const CLIP_WARN_RATE: f64 = 0.10;
/// Clipping rates above this are an overlap failure.
pub const CLIP_FAIL_RATE: f64 = 0.50;

/// `Γ_i = m̂₁ − m̂₀ + D(Y − m̂₁)/ê − (1 − D)(Y − m̂₀)/(1 − ê)`.
pub fn aipw_pseudo_outcome(dataset: &Dataset, nuis: &NuisanceFits) -> Result<Vec<f64>> {
    if !dataset.treatment_binary() {
        return Err(invalid("AIPW requires a binary treatment"));
    }
    check_lengths(dataset, nuis)?;
    let (Some(e), Some(m1), Some(m0)) = (
        nuis.propensity.as_ref(),
        nuis.outcome_treated.as_ref(),
        nuis.outcome_control.as_ref(),
    ) else {
        return Err(invalid(
            "AIPW needs propensity, outcome_treated and outcome_control nuisances",
        ));
    };
    let d = dataset.treatment();
    if d.iter().all(|&v| v == 1.0) || d.iter().all(|&v| v == 0.0) {
        return Err(CmeError::OverlapFailure(
            "every unit has the same treatment status".into(),
        ));
    }
    if e.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(CmeError::OverlapFailure(
            "propensity scores must lie strictly inside (0, 1)".into(),
        ));
    }
    let y = dataset.outcome();
    Ok((0..dataset.n())
        .map(|i| {
            m1[i] - m0[i] + d[i] * (y[i] - m1[i]) / e[i]
                - (1.0 - d[i]) * (y[i] - m0[i]) / (1.0 - e[i])
        })
        .collect())
}

/// AIPW CME curve for a binary treatment.
pub fn estimate_aipw(
    dataset: &Dataset,
    nuis: &NuisanceFits,
    grid: &[f64],
    spec: &KernelSpec,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<CmeCurve> {
    let gamma = aipw_pseudo_outcome(dataset, nuis)?;
    let rate = nuis.clip_rate();
    if rate > CLIP_FAIL_RATE {
        return Err(CmeError::OverlapFailure(format!(
            "{:.1}% of propensity scores were clipped",
            100.0 * rate
        )));
    }
    let roles = dataset.roles();
    let problem = LocalProblem::new(
        dataset.moderator(),
        &gamma,
        Vec::new(),
        vec![Term::One, Term::Dx],
        0,
        vec!["(intercept)".into(), format!("{} - x0", roles.moderator)],
    );
    let mut curve = second_stage(&problem, "aipw_lasso", dataset, grid, spec, n_boot, level, seed)?;
    if rate > CLIP_WARN_RATE {
        curve.metadata.warnings.push(format!(
            "{:.1}% of propensity scores were clipped to [{}, {}]; overlap is weak",
            100.0 * rate,
            super::PROPENSITY_CLIP,
            1.0 - super::PROPENSITY_CLIP
        ));
    }
    curve
        .metadata
        .notes
        .push(format!("nuisances: {} ({} folds)", nuis.source, nuis.k_folds()));
    Ok(curve)
}
