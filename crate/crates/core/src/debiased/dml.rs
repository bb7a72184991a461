//! DML under the partially linear model: local residual-on-residual
//! regression.

use super::{check_lengths, second_stage, NuisanceFits};
use crate::data::{CmeCurve, Dataset};
use crate::error::Result;
use crate::kernel::{KernelSpec, LocalProblem, Term};

/// At each `x0`, kernel-weighted least squares of `Y − Ê[Y|V]` on
/// `{1, D̃, D̃·(X − x0)}` with `D̃ = D − Ê[D|V]`; `θ̂(x0)` is the `D̃`
/// coefficient. Points where `D̃` barely varies in the window are trimmed.
pub fn estimate_dml_plm(
    dataset: &Dataset,
    nuis: &NuisanceFits,
    grid: &[f64],
    spec: &KernelSpec,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<CmeCurve> {
    check_lengths(dataset, nuis)?;
    let y = dataset.outcome();
    let d = dataset.treatment();
    let y_res: Vec<f64> = (0..dataset.n()).map(|i| y[i] - nuis.outcome_marginal[i]).collect();
    let d_res: Vec<f64> = (0..dataset.n()).map(|i| d[i] - nuis.treatment_marginal[i]).collect();
    let roles = dataset.roles();
    let problem = LocalProblem::new(
        dataset.moderator(),
        &y_res,
        vec![&d_res],
        vec![Term::One, Term::Col(0), Term::ColDx(0)],
        1,
        vec![
            "(intercept)".into(),
            format!("{} residual", roles.treatment),
            format!("{} residual * ({} - x0)", roles.treatment, roles.moderator),
        ],
    )
    .with_variance_check(0);
    let mut curve = second_stage(&problem, "dml_plm", dataset, grid, spec, n_boot, level, seed)?;
    curve
        .metadata
        .notes
        .push(format!("nuisances: {} ({} folds)", nuis.source, nuis.k_folds()));
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_grid, ColumnRoles};
    use crate::debiased::oracle_nuisances;
    use crate::dgp::{cme_oracle, sample, DgpSpec};
    use crate::kernel::KernelType;

    #[test]
    fn oracle_nuisances_recover_fig4_effect() {
        let spec = DgpSpec::Fig4Continuous;
        let ds = sample(&spec, 4000, 8).unwrap();
        let nuis = oracle_nuisances(&spec, &ds).unwrap();
        let grid = make_grid(&ds, 15).unwrap();
        let ks = KernelSpec::fixed(KernelType::Epanechnikov, 0.6);
        let curve = estimate_dml_plm(&ds, &nuis, &grid, &ks, 0, 0.95, 1).unwrap();
        for k in curve.active() {
            let truth = cme_oracle(&spec, grid[k]).unwrap();
            assert!(
                (curve.estimate[k] - truth).abs() < 4.0 * curve.std_error[k] + 0.1,
                "x={} est={} truth={truth}",
                grid[k],
                curve.estimate[k]
            );
        }
    }

    #[test]
    fn constant_residual_treatment_is_trimmed() {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 20.0).collect();
        let d: Vec<f64> = x.iter().map(|v| 0.3 * v).collect();
        let ds = Dataset::new(x.clone(), d.clone(), x, vec![], ColumnRoles::default(), false).unwrap();
        let nuis = NuisanceFits::supplied(None, None, None, vec![0.0; n], d).unwrap();
        let err = estimate_dml_plm(&ds, &nuis, &[5.0], &KernelSpec::fixed(KernelType::Epanechnikov, 2.0), 0, 0.95, 0)
            .unwrap_err();
        assert!(matches!(err, crate::CmeError::InsufficientData(_)), "{err}");
    }
}
