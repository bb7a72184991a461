//! Deterministic numerical kernels: weighted least squares with robust
//! covariance, ridge-logistic IRLS, coordinate-descent LASSO and
//! counter-based random streams.

mod lasso;
mod linalg;
mod logistic;
mod rng;
mod wls;

pub use lasso::{
    cv_lambda, lambda_max, lasso_cd, lasso_cd_with, LassoFit, LassoOptions, LAMBDA_PATH_LEN,
};
pub use linalg::Cholesky;
pub use logistic::{logistic_irls, sigmoid, LogisticFit};
pub use rng::{derive_seed, fold_assignment, rng_stream, streams, StreamRng};
pub use wls::{wls, wls_labeled, NormalEquations, WlsFit};

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len().saturating_sub(1)).max(1) as f64).sqrt()
}

/// Two-sided standard normal critical value for confidence `level`.
pub fn normal_critical(level: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let std = Normal::standard();
    std.inverse_cdf(0.5 + level / 2.0)
}
