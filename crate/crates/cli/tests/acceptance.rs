//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured values, then asserts the criterion.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cme_core::debiased::{estimate_aipw, estimate_dml_plm, fit_nuisances, Learner, NuisanceFits};
use cme_core::dgp::{cape_oracle, cme_oracle, sample, true_propensity, DgpSpec};
use cme_core::kernel::{estimate_kernel, KernelSpec, KernelType};
use cme_core::linear::{estimate_binning, estimate_linear, fit_linear, BinSpec};
use cme_core::numerics::{lasso_cd, wls};
use cme_core::{make_grid, run_mc, EstimationRequest, EstimatorKind, GridSpec};
use nalgebra::DMatrix;
use rayon::prelude::*;

fn verdict(id: u32, pass: bool, detail: String) {
    println!("criterion {id}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

#[test]
fn criterion_1_linear_fit_converges_to_population_coefficients() {
    let start = Instant::now();
    let ds = sample(&DgpSpec::KeyA1, 200_000, 0).unwrap();
    let fit = fit_linear(&ds).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let target = [0.6, -0.5, 0.0, 0.8];
    let worst = (0..4)
        .map(|j| (fit.coefficients[j] - target[j]).abs())
        .fold(0.0, f64::max);
    verdict(
        1,
        worst <= 0.02 && elapsed < 5.0,
        format!(
            "coefficients {:?}, max deviation {worst:.4}, {elapsed:.2} s",
            &fit.coefficients[..4]
        ),
    );
}

#[test]
fn criterion_2_kernel_uniform_band_coverage() {
    let start = Instant::now();
    let covered: usize = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let ds = sample(&DgpSpec::KeyA1, 5000, seed).unwrap();
            let grid = make_grid(&ds, 50).unwrap();
            let curve = estimate_kernel(&ds, &grid, &KernelSpec::default(), 1000, 0.95, seed).unwrap();
            curve.uniform_covers(|x| x - 0.5).unwrap() as usize
        })
        .sum();
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        2,
        covered >= 180 && elapsed < 600.0,
        format!("{covered}/200 seeds covered, {elapsed:.0} s"),
    );
}

#[test]
fn criterion_3_kernel_tracks_cme_not_cape() {
    let spec = DgpSpec::Fig4Continuous;
    let ds = sample(&spec, 5000, 0).unwrap();
    let grid: Vec<f64> = (0..=30).map(|i| -1.5 + 0.1 * i as f64).collect();
    let curve = estimate_kernel(&ds, &grid, &KernelSpec::default(), 0, 0.95, 0).unwrap();
    let max_dev = grid
        .iter()
        .zip(&curve.estimate)
        .map(|(&x, &e)| (e - cme_oracle(&spec, x).unwrap()).abs())
        .fold(0.0, f64::max);
    let at_one = curve.estimate[25];
    let cape0 = cape_oracle(&spec, 0.0, 1.0).unwrap();
    let pass = max_dev < 0.25 && curve.trimmed.iter().all(|t| !t) && at_one.abs() < (at_one - cape0).abs();
    verdict(
        3,
        pass,
        format!("max |deviation| {max_dev:.3} on [-1.5, 1.5]; estimate at x = 1 is {at_one:.3} (CME 0, CAPE at d = 0 is {cape0})"),
    );
}

#[test]
fn criterion_4_debiased_estimators_on_binary_design() {
    let spec = DgpSpec::Fig3Binary;
    let truth = |x: f64| 1.0 - x * x;
    let rows: Vec<[bool; 4]> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let ds = sample(&spec, 5000, seed).unwrap();
            let grid = make_grid(&ds, 50).unwrap();
            let lin = estimate_linear(&ds, &grid, 0, 0.95, seed).unwrap().rmse(truth);
            let ks = KernelSpec::default();
            let nl = fit_nuisances(&ds, Learner::LassoBasis, 5, seed).unwrap();
            let a = estimate_aipw(&ds, &nl, &grid, &ks, 1000, 0.95, seed).unwrap();
            let nt = fit_nuisances(&ds, Learner::BoostedTrees, 5, seed).unwrap();
            let d = estimate_dml_plm(&ds, &nt, &grid, &ks, 1000, 0.95, seed).unwrap();
            [
                a.uniform_covers(truth).unwrap(),
                d.uniform_covers(truth).unwrap(),
                a.rmse(truth) < lin,
                d.rmse(truth) < lin,
            ]
        })
        .collect();
    let count = |j: usize| rows.iter().filter(|r| r[j]).count();
    let (ca, cd, ra, rd) = (count(0), count(1), count(2), count(3));
    verdict(
        4,
        ca >= 85 && cd >= 85 && ra >= 95 && rd >= 95,
        format!("uniform coverage AIPW {ca}/100, DML {cd}/100; RMSE below linear AIPW {ra}/100, DML {rd}/100"),
    );
}

#[test]
fn criterion_5_wald_test_size_and_power() {
    let request = EstimationRequest {
        estimator: EstimatorKind::Binning,
        n_boot: 0,
        grid: GridSpec::Size(10),
        ..Default::default()
    };
    let size = run_mc(&DgpSpec::LinearNull, &request, 2000, 1000, 0)
        .unwrap()
        .rejection_rate
        .unwrap();
    let power = run_mc(&DgpSpec::KeyA1, &request, 5000, 200, 0)
        .unwrap()
        .rejection_rate
        .unwrap();
    verdict(
        5,
        (0.03..=0.07).contains(&size) && power >= 0.95,
        format!("size {size:.3} over 1000 replications, power {power:.3} over 200"),
    );
}

#[test]
fn criterion_6_collapse_identities() {
    let ds = sample(&DgpSpec::KeyA1, 5000, 0).unwrap();
    let grid = make_grid(&ds, 50).unwrap();
    let linear = estimate_linear(&ds, &grid, 0, 0.95, 0).unwrap();
    let x = ds.moderator();
    let range = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
    let wide = KernelSpec::fixed(KernelType::Uniform, 2.0 * range);
    let kernel = estimate_kernel(&ds, &grid, &wide, 0, 0.95, 0).unwrap();
    let kernel_gap = (0..grid.len())
        .map(|k| (kernel.estimate[k] - linear.estimate[k]).abs())
        .fold(0.0, f64::max);

    let one_bin = estimate_binning(&ds, &BinSpec::quantiles(&ds, 1).unwrap(), 0, 0.95, 0).unwrap();
    let line = estimate_linear(&ds, &one_bin.grid, 0, 0.95, 0).unwrap();
    let bin_gap = (one_bin.estimate[0] - line.estimate[0]).abs();

    let n = ds.n();
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => ds.treatment()[i],
        1 => x[i],
        _ => ds.treatment()[i] * x[i],
    });
    let lasso = lasso_cd(&design, ds.outcome(), 0.0).unwrap();
    let with_intercept = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { design[(i, j - 1)] });
    let ols = wls(&with_intercept, ds.outcome(), &vec![1.0; n]).unwrap();
    let lasso_gap = (0..3)
        .map(|j| (lasso.coefficients[j] - ols.coefficients[j + 1]).abs())
        .chain(std::iter::once((lasso.intercept - ols.coefficients[0]).abs()))
        .fold(0.0, f64::max);
    verdict(
        6,
        kernel_gap <= 1e-8 && bin_gap <= 1e-8 && lasso_gap <= 1e-6,
        format!("uniform-kernel gap {kernel_gap:.2e}, one-bin gap {bin_gap:.2e}, lasso(0) gap {lasso_gap:.2e}"),
    );
}

#[test]
fn criterion_7_aipw_with_true_propensity_and_zero_outcome_model() {
    let spec = DgpSpec::Fig3Binary;
    let ds = sample(&spec, 20_000, 0).unwrap();
    let n = ds.n();
    let e: Vec<f64> = (0..n)
        .map(|i| true_propensity(ds.moderator()[i], ds.covariate(0)[i]))
        .collect();
    let nuis = NuisanceFits::supplied(Some(e.clone()), Some(vec![0.0; n]), Some(vec![0.0; n]), vec![0.0; n], e)
        .unwrap();
    let grid = make_grid(&ds, 50).unwrap();
    let curve = estimate_aipw(&ds, &nuis, &grid, &KernelSpec::default(), 0, 0.95, 0).unwrap();
    let rmse = curve.rmse(|x| 1.0 - x * x);
    verdict(
        7,
        rmse < 0.15,
        format!("grid RMSE {rmse:.3} at bandwidth {:.3}", curve.metadata.bandwidth.unwrap()),
    );
}

fn cme(args: &[&str], threads: usize) {
    let out = Command::new(env!("CARGO_BIN_EXE_cme"))
        .args(args)
        .args(["--threads", &threads.to_string()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "cme {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn criterion_8_cli_outputs_are_deterministic_across_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut checked = Vec::new();
    let mut all_equal = true;
    let sim = |t: usize, rep: usize| root.join(format!("sim_{t}_{rep}"));
    for t in [1, 8] {
        for rep in 0..2 {
            let out = sim(t, rep);
            cme(&["simulate", "--dgp", "fig3_binary", "--n", "3000", "--seed", "4", "--output", out.to_str().unwrap()], t);
        }
    }
    let data = sim(1, 0).join("fig3_binary_n3000_seed4.csv");
    let data = data.to_str().unwrap();
    let runs: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        ("simulate", vec![], vec!["fig3_binary_n3000_seed4.json"]),
        ("kernel", vec!["estimate", "--input", data, "--estimator", "kernel", "--n-boot", "300", "--seed", "7"], vec!["curve.json", "overlap.json"]),
        ("aipw", vec!["estimate", "--input", data, "--covariates", "Z1,Z2", "--treatment-binary", "true", "--estimator", "aipw_lasso", "--n-boot", "300", "--seed", "7"], vec!["curve.json", "overlap.json"]),
        ("dml", vec!["estimate", "--input", data, "--covariates", "Z1,Z2", "--treatment-binary", "true", "--estimator", "dml_plm", "--learner", "boosted_trees", "--n-boot", "300", "--seed", "7"], vec!["curve.json"]),
        ("pds", vec!["estimate", "--input", data, "--covariates", "Z1,Z2", "--treatment-binary", "true", "--estimator", "pds_lasso", "--n-boot", "300", "--seed", "7"], vec!["curve.json"]),
        ("binning", vec!["estimate", "--input", data, "--estimator", "binning", "--n-boot", "300", "--seed", "7"], vec!["curve.json"]),
        ("diagnose", vec!["diagnose", "--input", data, "--treatment-binary", "true"], vec!["overlap.json"]),
        ("benchmark", vec!["benchmark", "--dgp", "key_a1", "--n", "1000", "--replications", "20", "--n-boot", "200", "--seed", "3"], vec!["report.json"]),
    ];
    for (name, args, files) in runs {
        let dirs: Vec<_> = [1usize, 8]
            .iter()
            .flat_map(|&t| (0..2).map(move |rep| (t, rep)))
            .map(|(t, rep)| {
                if name == "simulate" {
                    return sim(t, rep);
                }
                let out = root.join(format!("{name}_{t}_{rep}"));
                let mut full = args.clone();
                full.extend(["--output", out.to_str().unwrap()]);
                cme(&full, t);
                out
            })
            .collect();
        for f in files {
            let first = read(&dirs[0].join(f));
            let same = dirs.iter().all(|d| read(&d.join(f)) == first);
            all_equal &= same;
            checked.push(format!("{name}/{f}: {}", if same { "identical" } else { "DIFFERENT" }));
        }
    }
    verdict(8, all_equal, checked.join(", "));
}
