use nalgebra::DMatrix;

use super::linalg::Cholesky;
use crate::error::{invalid, CmeError, Result};

/// Accumulates `X'WX` and `X'Wy` one row at a time.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    k: usize,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    sum_w: f64,
    n_positive: usize,
}

impl NormalEquations {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            xtx: vec![0.0; k * k],
            xty: vec![0.0; k],
            sum_w: 0.0,
            n_positive: 0,
        }
    }

    #[inline]
    pub fn add(&mut self, row: &[f64], y: f64, w: f64) {
        if w == 0.0 {
            return;
        }
        let k = self.k;
        for a in 0..k {
            let wa = w * row[a];
            self.xty[a] += wa * y;
            let base = a * k;
            for b in a..k {
                self.xtx[base + b] += wa * row[b];
            }
        }
        self.sum_w += w;
        self.n_positive += 1;
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// Sum of weights.
    pub fn effective_n(&self) -> f64 {
        self.sum_w
    }

    /// Number of rows with positive weight.
    pub fn n_positive(&self) -> usize {
        self.n_positive
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.k;
        DMatrix::from_fn(k, k, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.xtx[a * k + b]
        })
    }

    /// Solves the normal equations; on rank deficiency returns the offending
    /// column indices.
    pub fn solve(&self) -> std::result::Result<(Vec<f64>, Cholesky), Vec<usize>> {
        let chol = Cholesky::factor(&self.gram())?;
        let beta = chol.solve(&self.xty);
        Ok((beta, chol))
    }
}

/// Weighted least-squares fit with HC1 covariance.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coefficients: Vec<f64>,
    /// Heteroskedasticity-robust (HC1) covariance of the coefficients.
    pub covariance: DMatrix<f64>,
    pub residuals: Vec<f64>,
    /// Sum of weights.
    pub effective_n: f64,
}

impl WlsFit {
    /// Variance of the linear combination `c'β`.
    pub fn contrast_variance(&self, c: &[f64]) -> f64 {
        let k = c.len();
        let mut v = 0.0;
        for i in 0..k {
            if c[i] == 0.0 {
                continue;
            }
            for j in 0..k {
                v += c[i] * self.covariance[(i, j)] * c[j];
            }
        }
        v
    }

    pub fn contrast(&self, c: &[f64]) -> f64 {
        c.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

/// Minimizes `Σ w_i (y_i − x_i'β)²`.
pub fn wls(design: &DMatrix<f64>, response: &[f64], weights: &[f64]) -> Result<WlsFit> {
    let labels: Vec<String> = (0..design.ncols()).map(|j| format!("column {j}")).collect();
    wls_labeled(design, response, weights, &labels)
}

/// [`wls`] with column labels used in rank-deficiency errors.
pub fn wls_labeled<S: AsRef<str>>(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: &[f64],
    labels: &[S],
) -> Result<WlsFit> {
    let (n, k) = design.shape();
    if response.len() != n || weights.len() != n {
        return Err(invalid(format!(
            "design has {n} rows but response has {} and weights {}",
            response.len(),
            weights.len()
        )));
    }
    if labels.len() != k {
        return Err(invalid("one label per design column required"));
    }
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(invalid("weights must be finite and non-negative"));
    }
    let mut ne = NormalEquations::new(k);
    let mut row = vec![0.0; k];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = design[(i, j)];
        }
        ne.add(&row, response[i], weights[i]);
    }
    if ne.effective_n() <= k as f64 {
        return Err(CmeError::InsufficientData(format!(
            "effective sample size {} does not exceed {k} regressors",
            ne.effective_n()
        )));
    }
    let (beta, chol) = ne.solve().map_err(|cols| CmeError::RankDeficient {
        columns: cols.iter().map(|&j| labels[j].as_ref().to_string()).collect(),
    })?;

    let mut residuals = Vec::with_capacity(n);
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let mut fitted = 0.0;
        for j in 0..k {
            row[j] = design[(i, j)];
            fitted += row[j] * beta[j];
        }
        let e = response[i] - fitted;
        residuals.push(e);
        let s = weights[i] * e;
        if s == 0.0 {
            continue;
        }
        let s2 = s * s;
        for a in 0..k {
            let ra = s2 * row[a];
            for b in a..k {
                meat[(a, b)] += ra * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    let bread = chol.inverse();
    let m = ne.n_positive();
    let dof = if m > k { m as f64 / (m - k) as f64 } else { 1.0 };
    let mut covariance = &bread * meat * &bread * dof;
    let t = covariance.transpose();
    covariance = (covariance + t) * 0.5;

    Ok(WlsFit {
        coefficients: beta,
        covariance,
        residuals,
        effective_n: ne.effective_n(),
    })
}
