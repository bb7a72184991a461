//! Local-linear kernel estimator of the CME.
//!
//! At each evaluation point `x0` the outcome is regressed by weighted least
//! squares on `{1, D, X − x0, D·(X − x0), Z}` with weights
//! `K((X_i − x0)/h)`. The coefficient on `D` is the CME estimate at `x0`.
//! Covariates enter with locally varying coefficients.
//!
//! The same machinery, [`LocalProblem`], powers the second stage of the
//! AIPW and DML estimators with different regressor sets.

use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{self, bootstrap_counts, SupT};
use crate::data::{Bandwidth, CmeCurve, Dataset};
use crate::error::{invalid, CmeError, Result};
use crate::numerics::{fold_assignment, quantile_sorted, std_dev, Cholesky};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelType {
    #[default]
    Epanechnikov,
    Uniform,
    Gaussian,
}

impl KernelType {
    /// Unnormalized kernel with `K(0) = 1`, so the sum of weights reads as
    /// a count of "effective" observations.
    #[inline]
    pub fn weight(self, u: f64) -> f64 {
        match self {
            KernelType::Epanechnikov => {
                if u.abs() <= 1.0 {
                    1.0 - u * u
                } else {
                    0.0
                }
            }
            KernelType::Uniform => {
                if u.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            KernelType::Gaussian => (-0.5 * u * u).exp(),
        }
    }

    fn compact(self) -> bool {
        !matches!(self, KernelType::Gaussian)
    }
}

impl std::str::FromStr for KernelType {
    type Err = CmeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epanechnikov" => Ok(KernelType::Epanechnikov),
            "uniform" => Ok(KernelType::Uniform),
            "gaussian" => Ok(KernelType::Gaussian),
            other => Err(invalid(format!(
                "unknown kernel {other:?}; valid: epanechnikov, uniform, gaussian"
            ))),
        }
    }
}

pub const DEFAULT_CV_FOLDS: usize = 5;
pub const DEFAULT_BANDWIDTH_GRID_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    pub kernel: KernelType,
    pub bandwidth: Bandwidth,
    pub cv_folds: usize,
    /// Candidate bandwidths for cross-validation. `None` uses 20
    /// log-spaced values spanning `[0.05, 2] × sd(X)`.
    pub bandwidth_grid: Option<Vec<f64>>,
    /// Effective-sample-size cutoff below which a grid point is trimmed.
    /// `None` uses `4 · (4 + p)`.
    pub trim_threshold: Option<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            kernel: KernelType::Epanechnikov,
            bandwidth: Bandwidth::Auto,
            cv_folds: DEFAULT_CV_FOLDS,
            bandwidth_grid: None,
            trim_threshold: None,
        }
    }
}

impl KernelSpec {
    pub fn fixed(kernel: KernelType, h: f64) -> Self {
        Self {
            kernel,
            bandwidth: Bandwidth::Fixed(h),
            ..Self::default()
        }
    }

    /// The cross-validation candidates for a given moderator sample.
    pub fn candidate_bandwidths(&self, moderator: &[f64]) -> Result<Vec<f64>> {
        match &self.bandwidth_grid {
            Some(grid) => {
                if grid.is_empty() {
                    return Err(invalid("bandwidth grid is empty"));
                }
                if grid.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
                    return Err(invalid("bandwidth grid values must be positive"));
                }
                if grid.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("bandwidth grid must be strictly increasing"));
                }
                Ok(grid.clone())
            }
            None => {
                let sd = std_dev(moderator);
                if !(sd > 0.0) {
                    return Err(CmeError::ConstantModerator);
                }
                Ok(log_grid(0.05 * sd, 2.0 * sd, DEFAULT_BANDWIDTH_GRID_LEN))
            }
        }
    }

    pub fn trim_for(&self, p: usize) -> f64 {
        self.trim_threshold.unwrap_or(default_trim(p))
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.cv_folds < 2 {
            return Err(invalid("cv_folds must be at least 2"));
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid(format!("bandwidth must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Default effective-sample-size cutoff `4 · (4 + p)`.
pub fn default_trim(p: usize) -> f64 {
    4.0 * (4 + p) as f64
}

pub(crate) fn log_grid(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    let ratio = hi / lo;
    (0..len)
        .map(|i| lo * ratio.powf(i as f64 / (len - 1) as f64))
        .collect()
}

/// One regressor of a local design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Term {
    One,
    /// Auxiliary column `c`.
    Col(usize),
    /// `X − x0`.
    Dx,
    /// Column `c` times `X − x0`.
    ColDx(usize),
}

impl Term {
    /// `(base column, power of X − x0)`; base 0 is the constant.
    fn split(self) -> (usize, usize) {
        match self {
            Term::One => (0, 0),
            Term::Col(c) => (c + 1, 0),
            Term::Dx => (0, 1),
            Term::ColDx(c) => (c + 1, 1),
        }
    }
}

/// Rows per block of precomputed moments.
const BLOCK: usize = 64;
/// Highest power of `X − x0` needed: 2 from the design, 2 from the
/// Epanechnikov weight.
const MAX_POW: usize = 4;

const BINOM: [[f64; MAX_POW + 1]; MAX_POW + 1] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// A local regression problem with rows sorted by the moderator.
///
/// Every regressor is a base column (the constant or an auxiliary column)
/// times `(X − x0)^0` or `(X − x0)^1`, so all normal-equation entries are
/// kernel-weighted sums of `(X − x0)^e · g_s` where `g_s` runs over pairwise
/// products of base columns and of base columns with `y`. For compact
/// kernels those sums are assembled from per-block power moments about
/// each block's center plus the rows at the window edges.
#[derive(Debug, Clone)]
pub(crate) struct LocalProblem {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Base columns in sorted order; `base[0]` is all ones.
    base: Vec<Vec<f64>>,
    /// Original row index of each sorted position.
    order: Vec<usize>,
    terms: Vec<Term>,
    theta: usize,
    labels: Vec<String>,
    /// Auxiliary column whose local weighted variance must be
    /// non-negligible.
    variance_col: Option<usize>,
    /// Products per row (`m` of them), row-major.
    products: Vec<f64>,
    m: usize,
}

/// Block moments for one row weighting (bootstrap counts, a fold mask,
/// or none).
pub(crate) struct Prepared<'a> {
    mult: Option<&'a [f64]>,
    centers: Vec<f64>,
    /// `[block][power][product]`.
    moments: Vec<f64>,
}

/// Result of one local fit.
#[derive(Debug, Clone)]
pub(crate) struct LocalFit {
    pub coefs: Vec<f64>,
    pub theta: f64,
    pub se: f64,
    pub effective_n: f64,
}

impl LocalProblem {
    pub fn new(
        x: &[f64],
        y: &[f64],
        cols: Vec<&[f64]>,
        terms: Vec<Term>,
        theta: usize,
        labels: Vec<String>,
    ) -> Self {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        let n = x.len();
        let mut base = vec![vec![1.0; n]];
        base.extend(
            cols.into_iter()
                .map(|c| order.iter().map(|&i| c[i]).collect::<Vec<f64>>()),
        );
        let y: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let nb = base.len();
        let m = nb * (nb + 1) / 2 + nb;
        let mut products = Vec::with_capacity(n * m);
        for s in 0..n {
            for a in 0..nb {
                for b in a..nb {
                    products.push(base[a][s] * base[b][s]);
                }
            }
            for col in &base {
                products.push(col[s] * y[s]);
            }
        }
        Self {
            x: order.iter().map(|&i| x[i]).collect(),
            y,
            base,
            order,
            terms,
            theta,
            labels,
            variance_col: None,
            products,
            m,
        }
    }

    pub fn with_variance_check(mut self, col: usize) -> Self {
        self.variance_col = Some(col);
        self
    }

    /// The kernel-estimator design `{1, D, X−x0, D(X−x0), Z}`.
    pub fn kernel_design(dataset: &Dataset) -> Self {
        let mut cols: Vec<&[f64]> = vec![dataset.treatment()];
        let mut terms = vec![Term::One, Term::Col(0), Term::Dx, Term::ColDx(0)];
        let roles = dataset.roles();
        let mut labels = vec![
            "(intercept)".to_string(),
            roles.treatment.clone(),
            format!("{} - x0", roles.moderator),
            format!("{} * ({} - x0)", roles.treatment, roles.moderator),
        ];
        for j in 0..dataset.p() {
            cols.push(dataset.covariate(j));
            terms.push(Term::Col(j + 1));
            labels.push(roles.covariates[j].clone());
        }
        Self::new(
            dataset.moderator(),
            dataset.outcome(),
            cols,
            terms,
            1,
            labels,
        )
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn k(&self) -> usize {
        self.terms.len()
    }

    fn nb(&self) -> usize {
        self.base.len()
    }

    fn pair(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let nb = self.nb();
        a * nb - a * (a + 1) / 2 + b
    }

    fn ypair(&self, a: usize) -> usize {
        self.nb() * (self.nb() + 1) / 2 + a
    }

    /// Block moments `Σ_s mult_s (X_s − c_b)^i g_s` for `i ≤ 4`.
    pub fn prepare<'a>(&self, mult: Option<&'a [f64]>) -> Prepared<'a> {
        let n = self.n();
        let m = self.m;
        let nblocks = n / BLOCK;
        let mut centers = Vec::with_capacity(nblocks);
        let mut moments = vec![0.0; nblocks * (MAX_POW + 1) * m];
        for b in 0..nblocks {
            let rows = b * BLOCK..(b + 1) * BLOCK;
            let c = 0.5 * (self.x[rows.start] + self.x[rows.end - 1]);
            centers.push(c);
            let out = &mut moments[b * (MAX_POW + 1) * m..(b + 1) * (MAX_POW + 1) * m];
            for s in rows {
                let w = mult.map_or(1.0, |v| v[s]);
                if w == 0.0 {
                    continue;
                }
                let g = &self.products[s * m..(s + 1) * m];
                let d = self.x[s] - c;
                let mut pw = w;
                for i in 0..=MAX_POW {
                    let dst = &mut out[i * m..(i + 1) * m];
                    for (o, gv) in dst.iter_mut().zip(g) {
                        *o += pw * gv;
                    }
                    pw *= d;
                }
            }
        }
        Prepared {
            mult,
            centers,
            moments,
        }
    }

    fn window(&self, x0: f64, h: f64, kernel: KernelType) -> Range<usize> {
        if kernel.compact() {
            let lo = self.x.partition_point(|&v| v < x0 - h);
            let hi = self.x.partition_point(|&v| v <= x0 + h);
            lo..hi
        } else {
            0..self.n()
        }
    }

    /// Adds `Σ w_s (X_s − x0)^e g_s` (e = 0, 1, 2) over `rows` into `out`.
    fn direct_sums(
        &self,
        rows: Range<usize>,
        x0: f64,
        h: f64,
        kernel: KernelType,
        mult: Option<&[f64]>,
        out: &mut [f64],
    ) {
        let m = self.m;
        for s in rows {
            let dx = self.x[s] - x0;
            let w = kernel.weight(dx / h) * mult.map_or(1.0, |v| v[s]);
            if w == 0.0 {
                continue;
            }
            let g = &self.products[s * m..(s + 1) * m];
            let (w1, w2) = (w * dx, w * dx * dx);
            let (o0, rest) = out.split_at_mut(m);
            let (o1, o2) = rest.split_at_mut(m);
            for j in 0..m {
                o0[j] += w * g[j];
                o1[j] += w1 * g[j];
                o2[j] += w2 * g[j];
            }
        }
    }

    /// Kernel-weighted sums `W_e = Σ_s K((X_s − x0)/h) mult_s (X_s − x0)^e g_s`
    /// for `e = 0, 1, 2`, laid out as `[e][product]`.
    fn weighted_sums(&self, prep: &Prepared, x0: f64, h: f64, kernel: KernelType) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; 3 * m];
        let window = self.window(x0, h, kernel);
        if !kernel.compact() {
            self.direct_sums(window, x0, h, kernel, prep.mult, &mut out);
            return out;
        }
        let first = window.start.div_ceil(BLOCK);
        let last = window.end / BLOCK;
        if first >= last {
            self.direct_sums(window, x0, h, kernel, prep.mult, &mut out);
            return out;
        }
        self.direct_sums(window.start..first * BLOCK, x0, h, kernel, prep.mult, &mut out);
        self.direct_sums(last * BLOCK..window.end, x0, h, kernel, prep.mult, &mut out);

        let mut raw = vec![0.0; (MAX_POW + 1) * m];
        let top = match kernel {
            KernelType::Epanechnikov => MAX_POW,
            _ => 2,
        };
        for b in first..last {
            let delta = prep.centers[b] - x0;
            let mut dp = [1.0; MAX_POW + 1];
            for i in 1..=MAX_POW {
                dp[i] = dp[i - 1] * delta;
            }
            let mom = &prep.moments[b * (MAX_POW + 1) * m..(b + 1) * (MAX_POW + 1) * m];
            for j in 0..=top {
                let dst = &mut raw[j * m..(j + 1) * m];
                for i in 0..=j {
                    let coef = BINOM[j][i] * dp[j - i];
                    let src = &mom[i * m..(i + 1) * m];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += coef * s;
                    }
                }
            }
        }
        let inv_h2 = 1.0 / (h * h);
        for e in 0..3 {
            for j in 0..m {
                let mut v = raw[e * m + j];
                if kernel == KernelType::Epanechnikov {
                    v -= raw[(e + 2) * m + j] * inv_h2;
                }
                out[e * m + j] += v;
            }
        }
        out
    }

    #[inline]
    fn fill_row(&self, s: usize, dx: f64, out: &mut [f64]) {
        for (slot, term) in out.iter_mut().zip(&self.terms) {
            let (b, p) = term.split();
            let v = self.base[b][s];
            *slot = if p == 0 { v } else { v * dx };
        }
    }


    /// Weighted local fit at `x0`; `prep` carries the row multiplicities
    /// (bootstrap counts or fold masks, in sorted order).
    pub fn fit(
        &self,
        prep: &Prepared,
        x0: f64,
        h: f64,
        kernel: KernelType,
        with_se: bool,
    ) -> Result<LocalFit> {
        let k = self.k();
        let m = self.m;
        let sums = self.weighted_sums(prep, x0, h, kernel);
        let effective_n = sums[self.pair(0, 0)];
        if !(effective_n > k as f64) {
            return Err(CmeError::InsufficientData(format!(
                "effective sample size {effective_n:.2} at x0 = {x0} does not exceed {k} regressors"
            )));
        }
        if let Some(c) = self.variance_col {
            let sw = effective_n;
            let mean = sums[self.pair(0, c + 1)] / sw;
            let second = sums[self.pair(c + 1, c + 1)] / sw;
            let var = second - mean * mean;
            if !(var > 1e-8 * (1.0 + second)) {
                return Err(CmeError::Degenerate(format!(
                    "residualized treatment has no variation near x0 = {x0}"
                )));
            }
        }
        let split: Vec<(usize, usize)> = self.terms.iter().map(|t| t.split()).collect();
        let gram = DMatrix::from_fn(k, k, |i, j| {
            let (bi, pi) = split[i];
            let (bj, pj) = split[j];
            sums[(pi + pj) * m + self.pair(bi, bj)]
        });
        let rhs: Vec<f64> = split
            .iter()
            .map(|&(b, p)| sums[p * m + self.ypair(b)])
            .collect();
        let chol = Cholesky::factor(&gram).map_err(|cols| CmeError::RankDeficient {
            columns: cols.iter().map(|&j| self.labels[j].clone()).collect(),
        })?;
        let coefs = chol.solve(&rhs);
        let theta = coefs[self.theta];
        let se = if with_se {
            self.sandwich_se(prep.mult, x0, h, kernel, &coefs, &chol)
        } else {
            f64::NAN
        };
        Ok(LocalFit {
            coefs,
            theta,
            se,
            effective_n,
        })
    }

    /// HC1 standard error of the `theta` coefficient.
    fn sandwich_se(
        &self,
        mult: Option<&[f64]>,
        x0: f64,
        h: f64,
        kernel: KernelType,
        coefs: &[f64],
        chol: &Cholesky,
    ) -> f64 {
        let k = self.k();
        let mut e = vec![0.0; k];
        e[self.theta] = 1.0;
        let a = chol.solve(&e);
        let mut row = vec![0.0; k];
        let mut acc = 0.0;
        let mut positive = 0usize;
        for s in self.window(x0, h, kernel) {
            let dx = self.x[s] - x0;
            let w = kernel.weight(dx / h) * mult.map_or(1.0, |v| v[s]);
            if w == 0.0 {
                continue;
            }
            positive += 1;
            self.fill_row(s, dx, &mut row);
            let mut fitted = 0.0;
            let mut ax = 0.0;
            for j in 0..k {
                fitted += row[j] * coefs[j];
                ax += row[j] * a[j];
            }
            let infl = w * (self.y[s] - fitted) * ax;
            acc += infl * infl;
        }
        let dof = if positive > k {
            positive as f64 / (positive - k) as f64
        } else {
            1.0
        };
        (acc * dof).sqrt()
    }

    /// Fitted value of the local model at the sample point `s` itself.
    fn predict_at(&self, s: usize, coefs: &[f64]) -> f64 {
        let mut row = vec![0.0; self.k()];
        self.fill_row(s, 0.0, &mut row);
        row.iter().zip(coefs).map(|(a, b)| a * b).sum()
    }

    /// K-fold out-of-fold mean squared prediction error for each candidate
    /// bandwidth. Held-out points outside the 1%–99% moderator quantile
    /// range are not scored. A candidate whose local fit is degenerate (or
    /// below `min_eff`) at any scored point gets `None`.
    pub fn cv_curve(
        &self,
        kernel: KernelType,
        candidates: &[f64],
        folds: usize,
        seed: u64,
        min_eff: f64,
    ) -> Vec<Option<f64>> {
        let n = self.n();
        let fold_of_row = fold_assignment(n, folds, seed);
        let fold: Vec<usize> = self.order.iter().map(|&i| fold_of_row[i]).collect();
        let masks: Vec<Vec<f64>> = (0..folds)
            .map(|f| fold.iter().map(|&g| if g == f { 0.0 } else { 1.0 }).collect())
            .collect();
        let preps: Vec<Prepared> = masks.iter().map(|mk| self.prepare(Some(mk))).collect();
        let lo = quantile_sorted(&self.x, 0.01);
        let hi = quantile_sorted(&self.x, 0.99);
        let scored: Vec<usize> = (0..n).filter(|&s| self.x[s] >= lo && self.x[s] <= hi).collect();
        candidates
            .par_iter()
            .map(|&h| {
                let mut sse = 0.0;
                for &s in &scored {
                    let fit = self.fit(&preps[fold[s]], self.x[s], h, kernel, false).ok()?;
                    if fit.effective_n < min_eff {
                        return None;
                    }
                    let e = self.y[s] - self.predict_at(s, &fit.coefs);
                    sse += e * e;
                }
                Some(sse / scored.len() as f64)
            })
            .collect()
    }

    /// The CV-minimizing candidate.
    pub fn select_bandwidth(
        &self,
        kernel: KernelType,
        candidates: &[f64],
        folds: usize,
        seed: u64,
        min_eff: f64,
    ) -> Result<f64> {
        if folds < 2 {
            return Err(invalid("cv_folds must be at least 2"));
        }
        if self.n() < folds {
            return Err(invalid("fewer observations than cross-validation folds"));
        }
        let curve = self.cv_curve(kernel, candidates, folds, seed, min_eff);
        let mut best: Option<(f64, f64)> = None;
        for (&h, mspe) in candidates.iter().zip(&curve) {
            if let Some(m) = *mspe {
                if best.is_none_or(|(_, b)| m < b) {
                    best = Some((h, m));
                }
            }
        }
        best.map(|(h, _)| h).ok_or_else(|| {
            CmeError::Degenerate("every candidate bandwidth yields degenerate local fits".into())
        })
    }

    /// Point estimates and standard errors on a grid; points with
    /// effective sample size below `trim` (or a degenerate fit) are trimmed.
    pub fn curve(&self, grid: &[f64], h: f64, kernel: KernelType, trim: f64) -> LocalCurve {
        let prep = self.prepare(None);
        let fits: Vec<Option<LocalFit>> = grid
            .par_iter()
            .map(|&x0| {
                self.fit(&prep, x0, h, kernel, true)
                    .ok()
                    .filter(|f| f.effective_n >= trim && f.se.is_finite())
            })
            .collect();
        let mut out = LocalCurve {
            estimate: Vec::with_capacity(grid.len()),
            se: Vec::with_capacity(grid.len()),
            trimmed: Vec::with_capacity(grid.len()),
        };
        for f in fits {
            match f {
                Some(f) => {
                    out.estimate.push(f.theta);
                    out.se.push(f.se);
                    out.trimmed.push(false);
                }
                None => {
                    out.estimate.push(f64::NAN);
                    out.se.push(f64::NAN);
                    out.trimmed.push(true);
                }
            }
        }
        out
    }

    /// Full estimate with sup-t bootstrap band. Bootstrap replicates
    /// resample rows with replacement and hold `h` and the trimmed set
    /// fixed.
    #[allow(clippy::too_many_arguments)]
    pub fn estimate(
        &self,
        name: &str,
        grid: &[f64],
        h: f64,
        kernel: KernelType,
        trim: f64,
        n_boot: usize,
        level: f64,
        seed: u64,
    ) -> Result<CmeCurve> {
        let base = self.curve(grid, h, kernel, trim);
        if base.trimmed.iter().all(|&t| t) {
            return Err(CmeError::InsufficientData(
                "every grid point was trimmed for insufficient local data".into(),
            ));
        }
        let uniform: Option<SupT> = if n_boot > 0 {
            let n = self.n();
            Some(bands::sup_t(
                &base.estimate,
                &base.se,
                &base.trimmed,
                n_boot,
                level,
                seed,
                |rng| {
                    let counts = bootstrap_counts(n, rng);
                    let prep = self.prepare(Some(&counts));
                    let mut star = vec![f64::NAN; grid.len()];
                    for (k, &x0) in grid.iter().enumerate() {
                        if base.trimmed[k] {
                            continue;
                        }
                        star[k] = self.fit(&prep, x0, h, kernel, false).ok()?.theta;
                    }
                    Some(star)
                },
            )?)
        } else {
            None
        };
        let mut meta = bands::metadata(name, seed, self.n(), n_boot);
        meta.bandwidth = Some(h);
        Ok(bands::assemble(
            grid.to_vec(),
            base.estimate,
            base.se,
            base.trimmed,
            level,
            uniform,
            meta,
        ))
    }
}
#[derive(Debug, Clone)]
pub(crate) struct LocalCurve {
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub trimmed: Vec<bool>,
}

/// Result of [`local_linear_fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalLinearFit {
    pub theta: f64,
    pub se: f64,
    pub effective_n: f64,
}

fn fixed_bandwidth(spec: &KernelSpec) -> Result<f64> {
    match spec.bandwidth {
        Bandwidth::Fixed(h) => Ok(h),
        Bandwidth::Auto => Err(invalid(
            "a fixed bandwidth is required here; run select_bandwidth first",
        )),
    }
}

/// Local-linear CME estimate at a single point with a fixed bandwidth.
pub fn local_linear_fit(dataset: &Dataset, x0: f64, spec: &KernelSpec) -> Result<LocalLinearFit> {
    spec.validate()?;
    let h = fixed_bandwidth(spec)?;
    let problem = LocalProblem::kernel_design(dataset);
    let fit = problem.fit(&problem.prepare(None), x0, h, spec.kernel, true)?;
    Ok(LocalLinearFit {
        theta: fit.theta,
        se: fit.se,
        effective_n: fit.effective_n,
    })
}

/// K-fold cross-validated bandwidth for the kernel estimator.
pub fn select_bandwidth(dataset: &Dataset, spec: &KernelSpec, seed: u64) -> Result<f64> {
    spec.validate()?;
    let problem = LocalProblem::kernel_design(dataset);
    let candidates = spec.candidate_bandwidths(dataset.moderator())?;
    problem.select_bandwidth(
        spec.kernel,
        &candidates,
        spec.cv_folds,
        seed,
        spec.trim_for(dataset.p()),
    )
}

/// `(bandwidth, out-of-fold MSPE)` pairs; `None` marks degenerate candidates.
pub fn bandwidth_cv_curve(
    dataset: &Dataset,
    spec: &KernelSpec,
    seed: u64,
) -> Result<Vec<(f64, Option<f64>)>> {
    spec.validate()?;
    let problem = LocalProblem::kernel_design(dataset);
    let candidates = spec.candidate_bandwidths(dataset.moderator())?;
    let curve = problem.cv_curve(
        spec.kernel,
        &candidates,
        spec.cv_folds,
        seed,
        spec.trim_for(dataset.p()),
    );
    Ok(candidates.into_iter().zip(curve).collect())
}

/// Resolves `spec.bandwidth` against the data, running cross-validation
/// when it is `auto`.
pub fn resolve_bandwidth(dataset: &Dataset, spec: &KernelSpec, seed: u64) -> Result<f64> {
    match spec.bandwidth {
        Bandwidth::Fixed(h) => Ok(h),
        Bandwidth::Auto => select_bandwidth(dataset, spec, seed),
    }
}

/// The kernel CME curve with pointwise and (if `n_boot > 0`) sup-t uniform
/// bands.
pub fn estimate_kernel(
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
    let h = resolve_bandwidth(dataset, spec, seed)?;
    let problem = LocalProblem::kernel_design(dataset);
    let mut curve = problem.estimate(
        "kernel",
        grid,
        h,
        spec.kernel,
        spec.trim_for(dataset.p()),
        n_boot,
        level,
        seed,
    )?;
    if matches!(spec.bandwidth, Bandwidth::Auto) {
        curve
            .metadata
            .notes
            .push(format!("bandwidth selected by {}-fold cross-validation", spec.cv_folds));
    }
    Ok(curve)
}
