//! Cross-fitted nuisance functions.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::BasisExpansion;
use super::trees::{fit_boosted, BoostingParams};
use crate::data::Dataset;
use crate::dgp::{structural_outcome, true_propensity, DgpSpec};
use crate::error::{invalid, CmeError, Result};
use crate::numerics::{
    cv_lambda, derive_seed, fold_assignment, lasso_cd, logistic_irls, streams,
};

pub const PROPENSITY_CLIP: f64 = 0.01;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    #[default]
    LassoBasis,
    BoostedTrees,
}

impl Learner {
    pub fn name(self) -> &'static str {
        match self {
            Learner::LassoBasis => "lasso_basis",
            Learner::BoostedTrees => "boosted_trees",
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Learner {
    type Err = CmeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lasso_basis" => Ok(Learner::LassoBasis),
            "boosted_trees" => Ok(Learner::BoostedTrees),
            other => Err(invalid(format!(
                "unknown learner {other:?}; valid names: lasso_basis, boosted_trees"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceConfig {
    pub learner: Learner,
    pub k_folds: usize,
    /// Folds for choosing the LASSO penalty inside each training set.
    pub lasso_cv_folds: usize,
    /// Ridge penalty of the logistic propensity model on the standardized
    /// basis.
    pub logistic_ridge: f64,
    pub boosting: BoostingParams,
    /// Propensities are clipped into `[clip, 1 − clip]`.
    pub clip: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            learner: Learner::LassoBasis,
            k_folds: DEFAULT_FOLDS,
            lasso_cv_folds: 5,
            logistic_ridge: 1.0,
            boosting: BoostingParams::default(),
            clip: PROPENSITY_CLIP,
        }
    }
}

impl NuisanceConfig {
    pub fn with_learner(learner: Learner) -> Self {
        Self {
            learner,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(invalid("k_folds must be at least 2"));
        }
        if self.lasso_cv_folds < 2 {
            return Err(invalid("lasso_cv_folds must be at least 2"));
        }
        if !(self.logistic_ridge >= 0.0) {
            return Err(invalid("logistic_ridge must be non-negative"));
        }
        if !(self.clip >= 0.0 && self.clip < 0.5) {
            return Err(invalid("clip must lie in [0, 0.5)"));
        }
        self.boosting.validate()
    }
}

/// Nuisance predictions, one per observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFits {
    /// Clipped `ê(V)`; binary treatment only.
    pub propensity: Option<Vec<f64>>,
    /// `m̂₁(V) = Ê[Y | D = 1, V]`; binary treatment only.
    pub outcome_treated: Option<Vec<f64>>,
    /// `m̂₀(V) = Ê[Y | D = 0, V]`; binary treatment only.
    pub outcome_control: Option<Vec<f64>>,
    /// `Ê[Y | V]`.
    pub outcome_marginal: Vec<f64>,
    /// `Ê[D | V]`.
    pub treatment_marginal: Vec<f64>,
    /// Cross-fitting fold of each observation, `1..=K`.
    pub fold_id: Vec<usize>,
    /// Number of propensities moved by clipping.
    pub clipped: usize,
    /// How the predictions were produced.
    pub source: String,
}

impl NuisanceFits {
    pub fn n(&self) -> usize {
        self.outcome_marginal.len()
    }

    pub fn k_folds(&self) -> usize {
        self.fold_id.iter().copied().max().unwrap_or(0)
    }

    pub fn clip_rate(&self) -> f64 {
        if self.n() == 0 {
            0.0
        } else {
            self.clipped as f64 / self.n() as f64
        }
    }

    /// Nuisances supplied directly rather than learned. `propensity` is
    /// clipped into `[PROPENSITY_CLIP, 1 − PROPENSITY_CLIP]`.
    pub fn supplied(
        propensity: Option<Vec<f64>>,
        outcome_treated: Option<Vec<f64>>,
        outcome_control: Option<Vec<f64>>,
        outcome_marginal: Vec<f64>,
        treatment_marginal: Vec<f64>,
    ) -> Result<Self> {
        let n = outcome_marginal.len();
        let lens = [
            propensity.as_ref().map_or(n, |v| v.len()),
            outcome_treated.as_ref().map_or(n, |v| v.len()),
            outcome_control.as_ref().map_or(n, |v| v.len()),
            treatment_marginal.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(invalid("nuisance vectors must share one length"));
        }
        let all = [
            propensity.as_deref(),
            outcome_treated.as_deref(),
            outcome_control.as_deref(),
            Some(outcome_marginal.as_slice()),
            Some(treatment_marginal.as_slice()),
        ];
        if all.iter().flatten().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(invalid("nuisance predictions must be finite"));
        }
        let (propensity, clipped) = match propensity {
            Some(p) => {
                let (c, k) = clip_propensity(&p, PROPENSITY_CLIP);
                (Some(c), k)
            }
            None => (None, 0),
        };
        Ok(Self {
            propensity,
            outcome_treated,
            outcome_control,
            outcome_marginal,
            treatment_marginal,
            fold_id: vec![1; n],
            clipped,
            source: "supplied".into(),
        })
    }
}

/// Clips into `[bound, 1 − bound]` and counts the values moved.
pub fn clip_propensity(raw: &[f64], bound: f64) -> (Vec<f64>, usize) {
    let mut moved = 0;
    let clipped = raw
        .iter()
        .map(|&p| {
            let c = p.clamp(bound, 1.0 - bound);
            if c != p {
                moved += 1;
            }
            c
        })
        .collect();
    (clipped, moved)
}

/// The moderator and covariates, `V = (X, Z)`.
fn features(dataset: &Dataset) -> (Vec<&[f64]>, Vec<String>) {
    let roles = dataset.roles();
    let mut cols = vec![dataset.moderator()];
    let mut names = vec![roles.moderator.clone()];
    for j in 0..dataset.p() {
        cols.push(dataset.covariate(j));
        names.push(roles.covariates[j].clone());
    }
    (cols, names)
}

/// Everything a learner needs to predict one target on held-out rows.
struct FoldData<'a> {
    v: &'a [&'a [f64]],
    basis: &'a DMatrix<f64>,
    config: &'a NuisanceConfig,
    seed: u64,
}

impl FoldData<'_> {
    fn regress(&self, target: &[f64], train: &[usize], test: &[usize], tag: u64) -> Result<Vec<f64>> {
        let seed = derive_seed(self.seed, tag);
        match self.config.learner {
            Learner::LassoBasis => {
                let x = self.basis.select_rows(train);
                let y: Vec<f64> = train.iter().map(|&i| target[i]).collect();
                let lambda = cv_lambda(&x, &y, self.config.lasso_cv_folds, seed)?;
                let fit = lasso_cd(&x, &y, lambda)?;
                Ok(test
                    .iter()
                    .map(|&i| fit.predict_row(self.basis.row(i).iter().copied()))
                    .collect())
            }
            Learner::BoostedTrees => {
                let model = fit_boosted(self.v, target, train, &self.config.boosting, seed)?;
                Ok(model.predict(self.v, test))
            }
        }
    }

    /// Raw (unclipped) estimate of `P(D = 1 | V)`.
    fn classify(&self, labels: &[f64], train: &[usize], test: &[usize], tag: u64) -> Result<Vec<f64>> {
        match self.config.learner {
            Learner::LassoBasis => {
                let l = self.basis.ncols();
                let mut means = vec![0.0; l];
                let mut sds = vec![0.0; l];
                for j in 0..l {
                    let col: Vec<f64> = train.iter().map(|&i| self.basis[(i, j)]).collect();
                    let m = col.iter().sum::<f64>() / col.len() as f64;
                    let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / col.len() as f64;
                    means[j] = m;
                    sds[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
                }
                let standardized = |i: usize, j: usize| {
                    if j == 0 {
                        1.0
                    } else {
                        (self.basis[(i, j - 1)] - means[j - 1]) / sds[j - 1]
                    }
                };
                let design = DMatrix::from_fn(train.len(), l + 1, |r, j| standardized(train[r], j));
                let y: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
                let fit = logistic_irls(&design, &y, self.config.logistic_ridge)?;
                let test_design = DMatrix::from_fn(test.len(), l + 1, |r, j| standardized(test[r], j));
                Ok(fit.predict(&test_design))
            }
            Learner::BoostedTrees => self.regress(labels, train, test, tag),
        }
    }
}

/// Learns the nuisances with `k_folds`-fold cross-fitting.
pub fn fit_nuisances(dataset: &Dataset, learner: Learner, k_folds: usize, seed: u64) -> Result<NuisanceFits> {
    let config = NuisanceConfig {
        learner,
        k_folds,
        ..NuisanceConfig::default()
    };
    fit_nuisances_with(dataset, &config, seed)
}

pub fn fit_nuisances_with(dataset: &Dataset, config: &NuisanceConfig, seed: u64) -> Result<NuisanceFits> {
    config.validate()?;
    if dataset.n() < config.k_folds {
        return Err(invalid(format!(
            "{} observations cannot fill {} folds",
            dataset.n(),
            config.k_folds
        )));
    }
    let folds = fold_assignment(dataset.n(), config.k_folds, seed);
    fit_nuisances_on_folds(dataset, config, &folds, seed)
}

/// Cross-fitting with explicit fold labels (any values; equal labels share
/// a fold). Each fold's learners are seeded by the smallest row index in
/// the held-out fold, so relabeling folds leaves every prediction
/// unchanged.
pub fn fit_nuisances_on_folds(
    dataset: &Dataset,
    config: &NuisanceConfig,
    folds: &[usize],
    seed: u64,
) -> Result<NuisanceFits> {
    config.validate()?;
    let n = dataset.n();
    if folds.len() != n {
        return Err(invalid("one fold label per observation required"));
    }
    let mut labels: Vec<usize> = folds.to_vec();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(invalid("cross-fitting needs at least two folds"));
    }
    let binary = dataset.treatment_binary();
    let (v, names) = features(dataset);
    let basis = BasisExpansion::new(&names).expand(&v);
    let base_seed = derive_seed(seed, streams::NUISANCE);
    let d = dataset.treatment();
    let y = dataset.outcome();

    struct FoldOut {
        test: Vec<usize>,
        e: Option<Vec<f64>>,
        m1: Option<Vec<f64>>,
        m0: Option<Vec<f64>>,
        my: Vec<f64>,
        md: Vec<f64>,
    }

    let outputs: Vec<FoldOut> = labels
        .par_iter()
        .map(|&label| -> Result<FoldOut> {
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == label).collect();
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != label).collect();
            let fd = FoldData {
                v: &v,
                basis: &basis,
                config,
                seed: derive_seed(base_seed, test[0] as u64),
            };
            let my = fd.regress(y, &train, &test, 0)?;
            if binary {
                let treated: Vec<usize> = train.iter().copied().filter(|&i| d[i] == 1.0).collect();
                let control: Vec<usize> = train.iter().copied().filter(|&i| d[i] == 0.0).collect();
                if treated.is_empty() || control.is_empty() {
                    return Err(CmeError::OverlapFailure(format!(
                        "treatment takes a single value in the training folds for fold {label}"
                    )));
                }
                let e = fd.classify(d, &train, &test, 1)?;
                let m1 = fd.regress(y, &treated, &test, 2)?;
                let m0 = fd.regress(y, &control, &test, 3)?;
                Ok(FoldOut {
                    test,
                    md: e.clone(),
                    e: Some(e),
                    m1: Some(m1),
                    m0: Some(m0),
                    my,
                })
            } else {
                let md = fd.regress(d, &train, &test, 1)?;
                Ok(FoldOut {
                    test,
                    e: None,
                    m1: None,
                    m0: None,
                    my,
                    md,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut fold_id = vec![0; n];
    let mut outcome_marginal = vec![0.0; n];
    let mut treatment_marginal = vec![0.0; n];
    let mut raw_e = binary.then(|| vec![0.0; n]);
    let mut m1 = binary.then(|| vec![0.0; n]);
    let mut m0 = binary.then(|| vec![0.0; n]);
    for (f, out) in outputs.iter().enumerate() {
        for (k, &i) in out.test.iter().enumerate() {
            fold_id[i] = f + 1;
            outcome_marginal[i] = out.my[k];
            treatment_marginal[i] = out.md[k];
            if let (Some(dst), Some(src)) = (raw_e.as_mut(), out.e.as_ref()) {
                dst[i] = src[k];
            }
            if let (Some(dst), Some(src)) = (m1.as_mut(), out.m1.as_ref()) {
                dst[i] = src[k];
            }
            if let (Some(dst), Some(src)) = (m0.as_mut(), out.m0.as_ref()) {
                dst[i] = src[k];
            }
        }
    }
    let (propensity, clipped) = match raw_e {
        Some(e) => {
            let (c, k) = clip_propensity(&e, config.clip);
            (Some(c), k)
        }
        None => (None, 0),
    };
    Ok(NuisanceFits {
        propensity,
        outcome_treated: m1,
        outcome_control: m0,
        outcome_marginal,
        treatment_marginal,
        fold_id,
        clipped,
        source: config.learner.name().into(),
    })
}

/// The true nuisance functions of a simulation design evaluated on
/// `dataset` (which must come from that design).
pub fn oracle_nuisances(spec: &DgpSpec, dataset: &Dataset) -> Result<NuisanceFits> {
    let x = dataset.moderator();
    let n = dataset.n();
    let mut fits = match spec {
        DgpSpec::Fig3Binary => {
            if dataset.p() != 2 {
                return Err(invalid("fig3_binary data must carry covariates Z1 and Z2"));
            }
            let (z1, z2) = (dataset.covariate(0), dataset.covariate(1));
            let e: Vec<f64> = (0..n).map(|i| true_propensity(x[i], z1[i])).collect();
            let m1: Vec<f64> = (0..n)
                .map(|i| structural_outcome(spec, 1.0, x[i], &[z1[i], z2[i]]))
                .collect();
            let m0: Vec<f64> = (0..n)
                .map(|i| structural_outcome(spec, 0.0, x[i], &[z1[i], z2[i]]))
                .collect();
            let my: Vec<f64> = (0..n).map(|i| m0[i] + e[i] * (m1[i] - m0[i])).collect();
            NuisanceFits::supplied(Some(e.clone()), Some(m1), Some(m0), my, e)?
        }
        DgpSpec::KeyA1 | DgpSpec::Fig4Continuous | DgpSpec::LinearNull => {
            // D | X ~ N(0.5X, σ²) with σ² = 0.75 (key_a1, linear_null) or 1.
            let var = if matches!(spec, DgpSpec::Fig4Continuous) { 1.0 } else { 0.75 };
            let md: Vec<f64> = x.iter().map(|&v| 0.5 * v).collect();
            let my: Vec<f64> = x
                .iter()
                .map(|&v| {
                    let m = 0.5 * v;
                    let second = m * m + var;
                    match spec {
                        DgpSpec::KeyA1 => second - 0.5 * m,
                        DgpSpec::Fig4Continuous => 1.0 + 1.5 * v + second - m * v * v,
                        _ => 1.0 + m + v,
                    }
                })
                .collect();
            NuisanceFits::supplied(None, None, None, my, md)?
        }
        DgpSpec::Custom(_) => {
            return Err(CmeError::OracleRequired(
                "dgp custom has no analytic nuisance functions".into(),
            ))
        }
    };
    fits.source = "oracle".into();
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnRoles;
    use crate::dgp::sample;

    #[test]
    fn clipping_counts() {
        let (c, k) = clip_propensity(&[0.0, 0.005, 0.5, 0.995, 1.0], 0.01);
        assert_eq!(k, 4);
        assert_eq!(c, vec![0.01, 0.01, 0.5, 0.99, 0.99]);
    }

    #[test]
    fn constant_outcome_is_predicted_exactly() {
        for learner in [Learner::LassoBasis, Learner::BoostedTrees] {
            let ds = sample(&DgpSpec::Fig3Binary, 600, 3).unwrap();
            let ds = ds.with_outcome(vec![2.5; 600]).unwrap();
            let fits = fit_nuisances(&ds, learner, 3, 1).unwrap();
            for v in &fits.outcome_marginal {
                assert!((v - 2.5).abs() < 1e-6, "{learner}: {v}");
            }
        }
    }

    #[test]
    fn folds_partition_rows() {
        let ds = sample(&DgpSpec::Fig4Continuous, 500, 2).unwrap();
        let fits = fit_nuisances(&ds, Learner::LassoBasis, 5, 4).unwrap();
        assert_eq!(fits.k_folds(), 5);
        for f in 1..=5 {
            assert!(fits.fold_id.contains(&f));
        }
        assert!(fits.propensity.is_none());
    }

    #[test]
    fn all_treated_is_an_overlap_failure() {
        let n = 100;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 10.0).collect();
        let ds = Dataset::new(x.clone(), vec![1.0; n], x, vec![], ColumnRoles::default(), true).unwrap();
        let err = fit_nuisances(&ds, Learner::LassoBasis, 5, 0).unwrap_err();
        assert!(matches!(err, CmeError::OverlapFailure(_)), "{err}");
    }

    #[test]
    fn oracle_for_fig3_matches_design() {
        let ds = sample(&DgpSpec::Fig3Binary, 50, 1).unwrap();
        let o = oracle_nuisances(&DgpSpec::Fig3Binary, &ds).unwrap();
        let e = o.propensity.as_ref().unwrap();
        assert!(e.iter().all(|&p| p > 0.0 && p < 1.0));
        let (m1, m0) = (o.outcome_treated.unwrap(), o.outcome_control.unwrap());
        for i in 0..50 {
            let x = ds.moderator()[i];
            assert!((m1[i] - m0[i] - (1.0 - x * x)).abs() < 1e-12);
        }
    }
}
