use cme_core::dgp::DgpSpec;
use cme_core::{run_mc, Bandwidth, EstimationRequest, EstimatorKind, GridSpec, McReport};

fn kernel_request() -> EstimationRequest {
    EstimationRequest {
        estimator: EstimatorKind::Kernel,
        grid: GridSpec::Size(10),
        bandwidth: Bandwidth::Fixed(0.8),
        n_boot: 100,
        ..EstimationRequest::default()
    }
}

#[test]
fn doubling_replications_moves_coverage_by_monte_carlo_noise_only() {
    let request = kernel_request();
    let pairs = 10u64;
    let mut close = 0;
    for s in 0..pairs {
        let short = run_mc(&DgpSpec::KeyA1, &request, 500, 200, s).unwrap();
        let long = run_mc(&DgpSpec::KeyA1, &request, 500, 400, s + 1000).unwrap();
        let (a, b) = (short.uniform_coverage.unwrap(), long.uniform_coverage.unwrap());
        if (a - b).abs() < 0.07 {
            close += 1;
        }
    }
    assert!(close >= 9, "{close}/{pairs} pairs within 0.07");
}

#[test]
fn report_survives_json_and_has_one_csv_row_per_grid_point() {
    let report = run_mc(&DgpSpec::Fig4Continuous, &kernel_request(), 400, 12, 3).unwrap();
    let back = McReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back.to_json().unwrap(), report.to_json().unwrap());
    let mut csv = Vec::new();
    report.write_csv_to(&mut csv).unwrap();
    let lines = String::from_utf8(csv).unwrap().lines().count();
    assert_eq!(lines, report.grid.len() + 1);
}
