use nalgebra::{DMatrix, DVector};

use super::linalg::Cholesky;
use crate::error::{invalid, CmeError, Result};

const MAX_ITER: usize = 100;
const COEF_TOL: f64 = 1e-8;
/// A linear predictor this large on an unpenalized fit means the
/// likelihood is being maximized at infinity.
const SEPARATION_ETA: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized log-likelihood at the start and after every iteration.
    pub log_likelihood: Vec<f64>,
}

impl LogisticFit {
    pub fn predict(&self, design: &DMatrix<f64>) -> Vec<f64> {
        let eta = design * DVector::from_column_slice(&self.coefficients);
        eta.iter().map(|&e| sigmoid(e)).collect()
    }
}

#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn penalized_loglik(eta: &[f64], labels: &[f64], beta: &[f64], penalized: &[bool], ridge: f64) -> f64 {
    let ll: f64 = eta
        .iter()
        .zip(labels)
        .map(|(&e, &y)| y * e - softplus(e))
        .sum();
    let pen: f64 = beta
        .iter()
        .zip(penalized)
        .filter(|(_, &p)| p)
        .map(|(b, _)| b * b)
        .sum();
    ll - 0.5 * ridge * pen
}

/// Ridge-penalized logistic regression by Newton/IRLS with step halving.
///
/// Constant columns (the intercept) are not penalized. The penalty is
/// `ridge/2 · Σβ_j²` on the log-likelihood scale.
pub fn logistic_irls(design: &DMatrix<f64>, labels: &[f64], l2_ridge: f64) -> Result<LogisticFit> {
    let (n, k) = design.shape();
    if labels.len() != n {
        return Err(invalid("labels and design rows differ"));
    }
    if !(l2_ridge >= 0.0) {
        return Err(invalid("ridge penalty must be non-negative"));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(invalid("labels must be 0 or 1"));
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == n {
        return Err(invalid("logistic regression needs both classes"));
    }
    let penalized: Vec<bool> = (0..k)
        .map(|j| {
            let first = design[(0, j)];
            (1..n).any(|i| design[(i, j)] != first)
        })
        .collect();

    let mut beta = vec![0.0; k];
    let mut eta = vec![0.0; n];
    let mut obj = penalized_loglik(&eta, labels, &beta, &penalized, l2_ridge);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    let mut row = vec![0.0; k];

    while iterations < MAX_ITER {
        iterations += 1;
        let mut hess = DMatrix::<f64>::zeros(k, k);
        let mut grad = vec![0.0; k];
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let w = p * (1.0 - p);
            let r = labels[i] - p;
            for j in 0..k {
                row[j] = design[(i, j)];
                grad[j] += row[j] * r;
            }
            for a in 0..k {
                let wa = w * row[a];
                for b in a..k {
                    hess[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..k {
            if penalized[a] {
                hess[(a, a)] += l2_ridge;
                grad[a] -= l2_ridge * beta[a];
            }
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        let chol = match Cholesky::factor(&hess) {
            Ok(c) => c,
            Err(_) if l2_ridge == 0.0 => return Err(CmeError::Separation),
            Err(cols) => {
                return Err(CmeError::RankDeficient {
                    columns: cols.iter().map(|j| format!("column {j}")).collect(),
                })
            }
        };
        let step = chol.solve(&grad);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let cand_eta: Vec<f64> = (0..n)
                .map(|i| (0..k).map(|j| design[(i, j)] * cand[j]).sum())
                .collect();
            let cand_obj = penalized_loglik(&cand_eta, labels, &cand, &penalized, l2_ridge);
            if cand_obj >= obj {
                accepted = Some((cand, cand_eta, cand_obj));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_eta, cand_obj)) = accepted else {
            // No ascent possible: at the optimum up to rounding.
            converged = true;
            break;
        };
        let max_change = beta
            .iter()
            .zip(&cand)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = cand;
        eta = cand_eta;
        obj = cand_obj;
        trace.push(obj);
        if l2_ridge == 0.0 && eta.iter().any(|e| e.abs() > SEPARATION_ETA) {
            return Err(CmeError::Separation);
        }
        if max_change < COEF_TOL {
            converged = true;
            break;
        }
    }

    Ok(LogisticFit {
        coefficients: beta,
        iterations,
        converged,
        log_likelihood: trace,
    })
}
