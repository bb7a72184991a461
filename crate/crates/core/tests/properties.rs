use cme_core::data::ingest_csv_from;
use cme_core::debiased::nuisance::{clip_propensity, fit_nuisances_on_folds, NuisanceConfig};
use cme_core::dgp::{sample, DgpSpec};
use cme_core::kernel::{estimate_kernel, KernelSpec, KernelType};
use cme_core::linear::{estimate_binning, estimate_linear, BinSpec};
use cme_core::numerics::{fold_assignment, lasso_cd, logistic_irls, wls};
use cme_core::{make_grid, ColumnRoles, Dataset, MissingPolicy};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

fn key_sample(n: usize, seed: u64) -> Dataset {
    sample(&DgpSpec::KeyA1, n, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ingest_round_trips_bitwise(rows in prop::collection::vec((finite(), finite(), finite(), finite()), 1..40)) {
        let roles = ColumnRoles::new("Y", "D", "X").with_covariates(&["Z1"]);
        let ds = Dataset::new(
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            vec![rows.iter().map(|r| r.3).collect()],
            roles.clone(),
            false,
        ).unwrap();
        let mut buf = Vec::new();
        ds.write_csv_to(&mut buf).unwrap();
        let back = ingest_csv_from(buf.as_slice(), &roles, MissingPolicy::Reject, false).unwrap();
        for (a, b) in [
            (ds.outcome(), back.outcome()),
            (ds.treatment(), back.treatment()),
            (ds.moderator(), back.moderator()),
            (ds.covariate(0), back.covariate(0)),
        ] {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn grid_is_deterministic(seed in 0u64..1000, size in 2usize..80) {
        let ds = key_sample(300, seed);
        prop_assert_eq!(make_grid(&ds, size).unwrap(), make_grid(&ds, size).unwrap());
    }

    #[test]
    fn wls_solution_is_a_local_minimum(
        data in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -5.0f64..5.0, 0.1f64..2.0), 8..40)
    ) {
        let n = data.len();
        let design = DMatrix::from_fn(n, 3, |i, j| match j { 0 => 1.0, 1 => data[i].0, _ => data[i].1 });
        let y: Vec<f64> = data.iter().map(|r| r.2).collect();
        let w: Vec<f64> = data.iter().map(|r| r.3).collect();
        let Ok(fit) = wls(&design, &y, &w) else { return Ok(()); };
        let objective = |b: &[f64]| -> f64 {
            (0..n).map(|i| {
                let r = y[i] - (0..3).map(|j| design[(i, j)] * b[j]).sum::<f64>();
                w[i] * r * r
            }).sum()
        };
        let base = objective(&fit.coefficients);
        for j in 0..3 {
            for delta in [1e-4, -1e-4] {
                let mut b = fit.coefficients.clone();
                b[j] += delta;
                prop_assert!(objective(&b) > base);
            }
        }
    }

    #[test]
    fn lasso_objective_never_increases(
        data in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 5), 12..50),
        frac in 0.0f64..1.0,
    ) {
        let n = data.len();
        let design = DMatrix::from_fn(n, 4, |i, j| data[i][j]);
        let y: Vec<f64> = data.iter().map(|r| r[4] + r[0] - 0.5 * r[1]).collect();
        let lambda = frac * cme_core::numerics::lambda_max(&design, &y);
        let fit = lasso_cd(&design, &y, lambda).unwrap();
        for pair in fit.objective_trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0));
        }
    }

    #[test]
    fn logistic_log_likelihood_never_decreases(
        data in prop::collection::vec((-2.0f64..2.0, 0.0f64..1.0), 30..120),
        ridge in 0.1f64..2.0,
    ) {
        let n = data.len();
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { data[i].0 });
        let labels: Vec<f64> = data.iter()
            .map(|&(x, u)| if u < 1.0 / (1.0 + (-x).exp()) { 1.0 } else { 0.0 })
            .collect();
        prop_assume!(labels.contains(&1.0) && labels.contains(&0.0));
        let fit = logistic_irls(&design, &labels, ridge).unwrap();
        for pair in fit.log_likelihood.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-10 * pair[0].abs().max(1.0));
        }
    }

    #[test]
    fn clipping_count_shrinks_as_the_interval_widens(
        raw in prop::collection::vec(0.0f64..=1.0, 1..200),
        a in 0.0f64..0.49,
        b in 0.0f64..0.49,
    ) {
        let (narrow, wide) = if a > b { (a, b) } else { (b, a) };
        let (_, moved_narrow) = clip_propensity(&raw, narrow);
        let (clipped, moved_wide) = clip_propensity(&raw, wide);
        prop_assert!(moved_wide <= moved_narrow);
        prop_assert!(clipped.iter().all(|&p| p >= wide && p <= 1.0 - wide));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_estimators_are_affine_equivariant_in_the_outcome(
        seed in 0u64..10_000,
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let ds = key_sample(400, seed);
        let moved = ds.with_outcome(ds.outcome().iter().map(|y| scale * y + shift).collect()).unwrap();
        let grid = make_grid(&ds, 15).unwrap();
        let bins = BinSpec::quantiles(&ds, 3).unwrap();
        let pairs = [
            (estimate_linear(&ds, &grid, 0, 0.95, 0).unwrap(), estimate_linear(&moved, &grid, 0, 0.95, 0).unwrap()),
            (estimate_binning(&ds, &bins, 0, 0.95, 0).unwrap(), estimate_binning(&moved, &bins, 0, 0.95, 0).unwrap()),
        ];
        for (a, b) in &pairs {
            for k in 0..a.len() {
                prop_assert!(close(b.estimate[k], scale * a.estimate[k], 1e-9));
                prop_assert!(close(b.std_error[k], scale * a.std_error[k], 1e-9));
            }
        }
    }

    #[test]
    fn shifting_the_moderator_shifts_the_linear_curve(seed in 0u64..10_000, s in -20.0f64..20.0) {
        let ds = key_sample(400, seed);
        let shifted = ds.with_moderator(ds.moderator().iter().map(|x| x + s).collect()).unwrap();
        let grid = make_grid(&ds, 15).unwrap();
        let moved_grid: Vec<f64> = grid.iter().map(|x| x + s).collect();
        let a = estimate_linear(&ds, &grid, 0, 0.95, 0).unwrap();
        let b = estimate_linear(&shifted, &moved_grid, 0, 0.95, 0).unwrap();
        for k in 0..grid.len() {
            prop_assert!(close(a.estimate[k], b.estimate[k], 1e-8), "{} vs {}", a.estimate[k], b.estimate[k]);
            prop_assert!(close(a.std_error[k], b.std_error[k], 1e-8));
        }
    }

    #[test]
    fn binning_with_out_of_range_cuts_is_one_bin(seed in 0u64..10_000, offset in 0.1f64..100.0) {
        let ds = key_sample(300, seed);
        let (lo, hi) = ds.moderator().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        let outside = BinSpec::with_cut_points(&ds, &[lo - offset, hi + offset]).unwrap();
        let one = BinSpec::quantiles(&ds, 1).unwrap();
        let a = estimate_binning(&ds, &outside, 0, 0.95, 0).unwrap();
        let b = estimate_binning(&ds, &one, 0, 0.95, 0).unwrap();
        prop_assert_eq!(a.len(), 1);
        prop_assert!(close(a.estimate[0], b.estimate[0], 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn uniform_band_contains_pointwise_band(seed in 0u64..10_000) {
        let ds = key_sample(600, seed);
        let grid = make_grid(&ds, 12).unwrap();
        let spec = KernelSpec::fixed(KernelType::Epanechnikov, 0.8);
        let curve = estimate_kernel(&ds, &grid, &spec, 100, 0.95, seed).unwrap();
        let uniform = curve.ci_uniform.as_ref().unwrap();
        for k in curve.active() {
            prop_assert!(uniform.lower[k] <= curve.ci_pointwise.lower[k]);
            prop_assert!(uniform.upper[k] >= curve.ci_pointwise.upper[k]);
        }
    }

    #[test]
    fn relabeling_folds_leaves_nuisances_unchanged(seed in 0u64..10_000, shift in 1usize..50) {
        let ds = sample(&DgpSpec::Fig3Binary, 400, seed).unwrap();
        let folds = fold_assignment(ds.n(), 3, seed);
        let relabeled: Vec<usize> = folds.iter().map(|&f| 100 + (f + shift) % 3 * 7).collect();
        let config = NuisanceConfig::default();
        let a = fit_nuisances_on_folds(&ds, &config, &folds, 9).unwrap();
        let b = fit_nuisances_on_folds(&ds, &config, &relabeled, 9).unwrap();
        prop_assert_eq!(a.propensity, b.propensity);
        prop_assert_eq!(a.outcome_treated, b.outcome_treated);
        prop_assert_eq!(a.outcome_control, b.outcome_control);
        prop_assert_eq!(a.outcome_marginal, b.outcome_marginal);
        prop_assert_eq!(a.treatment_marginal, b.treatment_marginal);
    }

    #[test]
    fn predictions_never_see_their_own_fold(seed in 0u64..10_000, held in 0usize..3) {
        // Corrupting the outcomes of one fold must leave that fold's
        // predictions untouched and move the others.
        let ds = sample(&DgpSpec::Fig3Binary, 400, seed).unwrap();
        let folds = fold_assignment(ds.n(), 3, seed);
        let target = folds.iter().copied().min().unwrap() + held;
        let corrupted: Vec<f64> = ds.outcome().iter().zip(&folds)
            .map(|(&y, &f)| if f == target { y + 100.0 } else { y })
            .collect();
        let bad = ds.with_outcome(corrupted).unwrap();
        let config = NuisanceConfig::default();
        let a = fit_nuisances_on_folds(&ds, &config, &folds, 2).unwrap();
        let b = fit_nuisances_on_folds(&bad, &config, &folds, 2).unwrap();
        let mut others_moved = false;
        for i in 0..ds.n() {
            if folds[i] == target {
                prop_assert_eq!(a.outcome_marginal[i], b.outcome_marginal[i]);
                prop_assert_eq!(a.propensity.as_ref().unwrap()[i], b.propensity.as_ref().unwrap()[i]);
            } else if a.outcome_marginal[i] != b.outcome_marginal[i] {
                others_moved = true;
            }
        }
        prop_assert!(others_moved);
    }
}
