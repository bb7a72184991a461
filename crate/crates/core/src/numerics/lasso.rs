//! LASSO by cyclic coordinate descent with covariance updates.
//!
//! The problem solved is
//! `min (1/2n)·‖y − b0 − Xβ‖² + λ‖β‖₁` on the standardized design
//! (centered columns with unit population variance). Each sweep costs
//! `O(p²)` once the Gram matrix is formed, independent of `n`.

use nalgebra::DMatrix;

use super::rng::fold_assignment;
use crate::error::{invalid, Result};

pub const LAMBDA_PATH_LEN: usize = 50;

#[derive(Debug, Clone, Copy)]
pub struct LassoOptions {
    /// KKT tolerance on the standardized scale.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_sweeps: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    /// Slopes on the original scale of the design.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub active_set: Vec<usize>,
    pub sweeps: usize,
    /// Objective value after each sweep.
    pub objective_trace: Vec<f64>,
    /// Largest KKT violation at termination (standardized scale).
    pub kkt_violation: f64,
}

impl LassoFit {
    pub fn predict_row(&self, row: impl Iterator<Item = f64>) -> f64 {
        self.intercept + row.zip(&self.coefficients).map(|(x, b)| x * b).sum::<f64>()
    }

    pub fn predict(&self, design: &DMatrix<f64>) -> Vec<f64> {
        (0..design.nrows())
            .map(|i| self.predict_row((0..design.ncols()).map(|j| design[(i, j)])))
            .collect()
    }
}

/// Sufficient statistics of a standardized problem.
struct Standardized {
    p: usize,
    means: Vec<f64>,
    sds: Vec<f64>,
    y_mean: f64,
    /// `yᵀy / n` of the centered response.
    yy: f64,
    /// Gram matrix of the standardized design divided by `n`, row-major.
    gram: Vec<f64>,
    /// `X_sᵀ y_c / n`.
    xty: Vec<f64>,
}

impl Standardized {
    fn from_rows(design: &DMatrix<f64>, response: &[f64], rows: &[usize]) -> Self {
        let p = design.ncols();
        let n = rows.len() as f64;
        let y_mean = rows.iter().map(|&i| response[i]).sum::<f64>() / n;
        let mut means = vec![0.0; p];
        let mut sds = vec![0.0; p];
        for j in 0..p {
            let col = design.column(j);
            let m = rows.iter().map(|&i| col[i]).sum::<f64>() / n;
            let v = rows.iter().map(|&i| (col[i] - m).powi(2)).sum::<f64>() / n;
            means[j] = m;
            // Treat numerically constant columns as constant.
            sds[j] = if v > 1e-24 * (1.0 + m * m) { v.sqrt() } else { 0.0 };
        }
        let mut std_cols: Vec<Vec<f64>> = Vec::with_capacity(p);
        for j in 0..p {
            let col = design.column(j);
            let s = sds[j];
            std_cols.push(if s > 0.0 {
                rows.iter().map(|&i| (col[i] - means[j]) / s).collect()
            } else {
                vec![0.0; rows.len()]
            });
        }
        let yc: Vec<f64> = rows.iter().map(|&i| response[i] - y_mean).collect();
        let yy = yc.iter().map(|v| v * v).sum::<f64>() / n;
        let xty: Vec<f64> = std_cols
            .iter()
            .map(|c| c.iter().zip(&yc).map(|(a, b)| a * b).sum::<f64>() / n)
            .collect();
        let mut gram = vec![0.0; p * p];
        for a in 0..p {
            if sds[a] == 0.0 {
                continue;
            }
            for b in a..p {
                if sds[b] == 0.0 {
                    continue;
                }
                let g = std_cols[a]
                    .iter()
                    .zip(&std_cols[b])
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    / n;
                gram[a * p + b] = g;
                gram[b * p + a] = g;
            }
        }
        Self {
            p,
            means,
            sds,
            y_mean,
            yy,
            gram,
            xty,
        }
    }

    fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn objective(&self, beta: &[f64], q: &[f64], lambda: f64) -> f64 {
        let p = self.p;
        let mut quad = 0.0;
        let mut lin = 0.0;
        let mut l1 = 0.0;
        for j in 0..p {
            quad += beta[j] * q[j];
            lin += beta[j] * self.xty[j];
            l1 += beta[j].abs();
        }
        0.5 * self.yy - lin + 0.5 * quad + lambda * l1
    }

    fn kkt_violation(&self, beta: &[f64], q: &[f64], lambda: f64) -> f64 {
        (0..self.p)
            .filter(|&j| self.sds[j] > 0.0)
            .map(|j| {
                let grad = self.xty[j] - q[j];
                if beta[j] == 0.0 {
                    (grad.abs() - lambda).max(0.0)
                } else {
                    (grad - lambda * beta[j].signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Runs coordinate descent from `beta` (warm start), updating it and
    /// `q = Gβ` in place.
    fn solve(
        &self,
        beta: &mut [f64],
        q: &mut [f64],
        lambda: f64,
        opts: &LassoOptions,
    ) -> (usize, Vec<f64>, f64) {
        let p = self.p;
        let mut trace = Vec::new();
        let mut sweeps = 0;
        let mut violation = self.kkt_violation(beta, q, lambda);
        while violation > opts.tol && sweeps < opts.max_sweeps {
            sweeps += 1;
            for j in 0..p {
                if self.sds[j] == 0.0 {
                    continue;
                }
                let gjj = self.gram[j * p + j];
                let r = self.xty[j] - q[j] + gjj * beta[j];
                let new = soft_threshold(r, lambda) / gjj;
                let delta = new - beta[j];
                if delta != 0.0 {
                    beta[j] = new;
                    let row = &self.gram[j * p..(j + 1) * p];
                    for (qk, g) in q.iter_mut().zip(row) {
                        *qk += delta * g;
                    }
                }
            }
            trace.push(self.objective(beta, q, lambda));
            violation = self.kkt_violation(beta, q, lambda);
        }
        (sweeps, trace, violation)
    }

    fn to_fit(&self, beta: &[f64], lambda: f64, sweeps: usize, trace: Vec<f64>, kkt: f64) -> LassoFit {
        let coefficients: Vec<f64> = beta
            .iter()
            .zip(&self.sds)
            .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
            .collect();
        let intercept = self.y_mean
            - coefficients
                .iter()
                .zip(&self.means)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        let active_set = (0..self.p).filter(|&j| beta[j] != 0.0).collect();
        LassoFit {
            coefficients,
            intercept,
            lambda,
            active_set,
            sweeps,
            objective_trace: trace,
            kkt_violation: kkt,
        }
    }
}

#[inline]
fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn check_shapes(design: &DMatrix<f64>, response: &[f64]) -> Result<()> {
    if design.nrows() != response.len() {
        return Err(invalid(format!(
            "design has {} rows but response has {}",
            design.nrows(),
            response.len()
        )));
    }
    if design.nrows() < 2 {
        return Err(invalid("LASSO needs at least two observations"));
    }
    Ok(())
}

/// Smallest penalty at which every slope is zero (standardized design,
/// centered response).
pub fn lambda_max(design: &DMatrix<f64>, response: &[f64]) -> f64 {
    let rows: Vec<usize> = (0..design.nrows()).collect();
    Standardized::from_rows(design, response, &rows).lambda_max()
}

pub fn lasso_cd(design: &DMatrix<f64>, response: &[f64], lambda: f64) -> Result<LassoFit> {
    lasso_cd_with(design, response, lambda, &LassoOptions::default())
}

pub fn lasso_cd_with(
    design: &DMatrix<f64>,
    response: &[f64],
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    check_shapes(design, response)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda must be non-negative"));
    }
    let rows: Vec<usize> = (0..design.nrows()).collect();
    let prob = Standardized::from_rows(design, response, &rows);
    let mut beta = vec![0.0; prob.p];
    let mut q = vec![0.0; prob.p];
    let (sweeps, trace, kkt) = prob.solve(&mut beta, &mut q, lambda, opts);
    Ok(prob.to_fit(&beta, lambda, sweeps, trace, kkt))
}

fn lambda_path(lmax: f64, n: usize, p: usize) -> Vec<f64> {
    let ratio: f64 = if n > p { 1e-3 } else { 1e-2 };
    (0..LAMBDA_PATH_LEN)
        .map(|i| lmax * ratio.powf(i as f64 / (LAMBDA_PATH_LEN - 1) as f64))
        .collect()
}

/// Cross-validated penalty: the value on a 50-point log-spaced path that
/// minimizes mean out-of-fold squared error.
pub fn cv_lambda(design: &DMatrix<f64>, response: &[f64], n_folds: usize, seed: u64) -> Result<f64> {
    Ok(cv_lambda_curve(design, response, n_folds, seed)?.0)
}

/// The selected penalty together with the full `(lambda, cv_error)` curve.
pub(crate) fn cv_lambda_curve(
    design: &DMatrix<f64>,
    response: &[f64],
    n_folds: usize,
    seed: u64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    check_shapes(design, response)?;
    let n = design.nrows();
    if n_folds < 2 {
        return Err(invalid("n_folds must be at least 2"));
    }
    if n < n_folds {
        return Err(invalid(format!("{n} observations cannot fill {n_folds} folds")));
    }
    let lmax = lambda_max(design, response);
    if lmax == 0.0 {
        return Ok((0.0, vec![(0.0, 0.0)]));
    }
    let path = lambda_path(lmax, n, design.ncols());
    let folds = fold_assignment(n, n_folds, seed);
    let opts = LassoOptions {
        tol: 1e-7,
        ..LassoOptions::default()
    };
    let mut sse = vec![0.0; path.len()];
    for f in 0..n_folds {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let prob = Standardized::from_rows(design, response, &train);
        let mut beta = vec![0.0; prob.p];
        let mut q = vec![0.0; prob.p];
        for (li, &lambda) in path.iter().enumerate() {
            let (sweeps, _, kkt) = prob.solve(&mut beta, &mut q, lambda, &opts);
            let fit = prob.to_fit(&beta, lambda, sweeps, Vec::new(), kkt);
            for &i in &test {
                let pred = fit.predict_row((0..design.ncols()).map(|j| design[(i, j)]));
                sse[li] += (response[i] - pred).powi(2);
            }
        }
    }
    let curve: Vec<(f64, f64)> = path
        .iter()
        .zip(&sse)
        .map(|(&l, &s)| (l, s / n as f64))
        .collect();
    let best = curve
        .iter()
        .fold((f64::INFINITY, f64::INFINITY), |acc, &(l, e)| if e < acc.1 { (l, e) } else { acc });
    Ok((best.0, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{rng_stream, wls};
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_stream(seed, 0);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_stream(seed, 1);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn zero_lambda_matches_ols() {
        let n = 300;
        let x = gaussian_design(n, 4, 5);
        let e = noise(n, 5);
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 2.0 * x[(i, 0)] - x[(i, 2)] + 0.5 * x[(i, 3)] + e[i])
            .collect();
        let fit = lasso_cd(&x, &y, 0.0).unwrap();
        let with_ones = DMatrix::from_fn(n, 5, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let ols = wls(&with_ones, &y, &vec![1.0; n]).unwrap();
        assert!((fit.intercept - ols.coefficients[0]).abs() < 1e-6);
        for j in 0..4 {
            assert!((fit.coefficients[j] - ols.coefficients[j + 1]).abs() < 1e-6);
        }
    }

    #[test]
    fn full_shrinkage_threshold() {
        let n = 200;
        let x = gaussian_design(n, 6, 8);
        let y: Vec<f64> = (0..n).map(|i| x[(i, 1)] + noise(n, 8)[i]).collect();
        let lmax = lambda_max(&x, &y);
        let fit = lasso_cd(&x, &y, lmax).unwrap();
        assert!(fit.coefficients.iter().all(|&b| b == 0.0));
        assert!(fit.active_set.is_empty());
        let below = lasso_cd(&x, &y, 0.99 * lmax).unwrap();
        assert!(!below.active_set.is_empty());
    }

    #[test]
    fn orthonormal_design_soft_thresholds_ols() {
        // Columns with mean zero and unit population variance that are
        // mutually orthogonal: the standardized Gram is the identity, so the
        // solution is soft-thresholded OLS coordinate by coordinate.
        let n = 8;
        let h = [
            [1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0],
            [1.0, 1.0, -1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, 1.0],
            [-1.0, -1.0, 1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, -1.0],
        ];
        let x = DMatrix::from_fn(n, 3, |i, j| h[i][j]);
        let y = [3.0, 1.0, 2.5, -0.5, 0.2, 0.1, -1.0, 0.4];
        let ybar = y.iter().sum::<f64>() / n as f64;
        let lambda = 0.3;
        let fit = lasso_cd(&x, &y, lambda).unwrap();
        for j in 0..3 {
            let ols: f64 = (0..n).map(|i| h[i][j] * (y[i] - ybar)).sum::<f64>() / n as f64;
            let want = ols.signum() * (ols.abs() - lambda).max(0.0);
            assert!((fit.coefficients[j] - want).abs() < 1e-12, "coordinate {j}");
        }
    }

    #[test]
    fn kkt_holds_and_objective_never_increases() {
        let n = 150;
        let x = gaussian_design(n, 10, 21);
        // Correlated columns make the descent take many sweeps.
        let x = DMatrix::from_fn(n, 10, |i, j| x[(i, j)] + 0.8 * x[(i, 0)]);
        let e = noise(n, 21);
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] - 2.0 * x[(i, 3)] + e[i]).collect();
        let lambda = 0.05;
        let fit = lasso_cd(&x, &y, lambda).unwrap();
        assert!(fit.kkt_violation <= 1e-6);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        // Recompute the KKT conditions independently on the standardized scale.
        let means: Vec<f64> = (0..10).map(|j| x.column(j).mean()).collect();
        let sds: Vec<f64> = (0..10)
            .map(|j| (x.column(j).iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / n as f64).sqrt())
            .collect();
        let resid: Vec<f64> = (0..n)
            .map(|i| y[i] - fit.predict_row((0..10).map(|j| x[(i, j)])))
            .collect();
        for j in 0..10 {
            let g: f64 = (0..n).map(|i| (x[(i, j)] - means[j]) / sds[j] * resid[i]).sum::<f64>() / n as f64;
            let bstd = fit.coefficients[j] * sds[j];
            if bstd == 0.0 {
                assert!(g.abs() <= lambda + 1e-6);
            } else {
                assert!((g - lambda * bstd.signum()).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn cv_selects_signal_columns() {
        let n = 1000;
        let x = gaussian_design(n, 22, 31);
        let e = noise(n, 31);
        let y: Vec<f64> = (0..n).map(|i| 1.5 * x[(i, 0)] - 1.0 * x[(i, 1)] + e[i]).collect();
        let lambda = cv_lambda(&x, &y, 5, 4).unwrap();
        let fit = lasso_cd(&x, &y, lambda).unwrap();
        assert!(fit.active_set.contains(&0) && fit.active_set.contains(&1));
        assert_eq!(lambda, cv_lambda(&x, &y, 5, 4).unwrap());
    }

    #[test]
    fn cv_on_noise_prefers_heavy_shrinkage() {
        let n = 400;
        let x = gaussian_design(n, 10, 41);
        let y = noise(n, 42);
        let (lambda, curve) = cv_lambda_curve(&x, &y, 5, 7).unwrap();
        let lmax = curve[0].0;
        // The CV error at the full-shrinkage end is within noise of the
        // minimum and the error grows as the penalty vanishes.
        let best_idx = (0..curve.len())
            .min_by(|&a, &b| curve[a].1.total_cmp(&curve[b].1))
            .unwrap();
        let best = curve[best_idx].1;
        // Flat within noise at the heavy end, monotone toward the light end.
        assert!(curve[0].1 - best < 0.02 * curve[0].1);
        for w in curve[best_idx..].windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-12);
        }
        assert!(lambda >= lmax * 0.1, "lambda {lambda} vs lmax {lmax}");
    }

    #[test]
    fn cv_needs_enough_rows() {
        let x = gaussian_design(3, 2, 1);
        assert!(cv_lambda(&x, &[1.0, 2.0, 3.0], 5, 0).is_err());
    }
}
