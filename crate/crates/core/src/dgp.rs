//! Simulation designs with analytic CME and CAPE oracles.
//!
//! | name | moderator | treatment | outcome | θ(x) |
//! |---|---|---|---|---|
//! | `key_a1` | `N(0,1)` | `corr(D,X) = 0.5`, `N(0,1)` | `D² − 0.5D + ε` | `x − 0.5` |
//! | `fig3_binary` | `U[−2,2]` | logit `0.5X + 0.5Z1` | see [`structural_outcome`] | `1 − x²` |
//! | `fig4_continuous` | `U[−2,2]` | `0.5X + ε_D` | `1 + 1.5X + D² − DX² + ε` | `x − x²` |
//! | `linear_null` | `N(0,1)` | `corr(D,X) = 0.5` | `1 + D + X + ε` | `1` |
//!
//! Sampling runs in chunks of [`CHUNK`] rows; chunk `c` draws from
//! `rng_stream(seed, c)`, so samples are identical under any thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnRoles, Dataset};
use crate::error::{invalid, CmeError, Result};
use crate::numerics::{rng_stream, sigmoid, Cholesky, StreamRng};

pub const CHUNK: usize = 4096;

/// Parameters of the `custom` design: `(D, X0)` standard bivariate normal
/// with the given correlation, `X = shift + scale·X0`, and
/// `Y = D² − 0.5D + noise_sd·ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CustomParams {
    pub correlation: f64,
    pub shift: f64,
    pub scale: f64,
    pub noise_sd: f64,
}

impl Default for CustomParams {
    fn default() -> Self {
        Self {
            correlation: 0.5,
            shift: 0.0,
            scale: 1.0,
            noise_sd: 1.0,
        }
    }
}

impl CustomParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.correlation > -1.0 && self.correlation < 1.0) {
            return Err(invalid("custom correlation must lie in (-1, 1)"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(invalid("custom scale must be positive"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(invalid("custom noise_sd must be non-negative"));
        }
        if !self.shift.is_finite() {
            return Err(invalid("custom shift must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DgpSpec {
    KeyA1,
    Fig3Binary,
    Fig4Continuous,
    LinearNull,
    Custom(CustomParams),
}

impl DgpSpec {
    pub const NAMES: [&'static str; 5] = [
        "key_a1",
        "fig3_binary",
        "fig4_continuous",
        "linear_null",
        "custom",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DgpSpec::KeyA1 => "key_a1",
            DgpSpec::Fig3Binary => "fig3_binary",
            DgpSpec::Fig4Continuous => "fig4_continuous",
            DgpSpec::LinearNull => "linear_null",
            DgpSpec::Custom(_) => "custom",
        }
    }

    pub fn parameters(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        match self {
            DgpSpec::KeyA1 | DgpSpec::LinearNull => {
                m.insert("correlation".into(), 0.5);
            }
            DgpSpec::Fig3Binary => {
                m.insert("x_lower".into(), -2.0);
                m.insert("x_upper".into(), 2.0);
                m.insert("propensity_x".into(), 0.5);
                m.insert("propensity_z1".into(), 0.5);
            }
            DgpSpec::Fig4Continuous => {
                m.insert("x_lower".into(), -2.0);
                m.insert("x_upper".into(), 2.0);
                m.insert("treatment_slope".into(), 0.5);
            }
            DgpSpec::Custom(p) => {
                m.insert("correlation".into(), p.correlation);
                m.insert("shift".into(), p.shift);
                m.insert("scale".into(), p.scale);
                m.insert("noise_sd".into(), p.noise_sd);
            }
        }
        m
    }

    pub fn treatment_binary(&self) -> bool {
        matches!(self, DgpSpec::Fig3Binary)
    }

    pub fn has_oracle(&self) -> bool {
        !matches!(self, DgpSpec::Custom(_))
    }

    /// Covariate column names produced by [`sample`].
    pub fn covariate_names(&self) -> Vec<String> {
        match self {
            DgpSpec::Fig3Binary => vec!["Z1".into(), "Z2".into()],
            _ => Vec::new(),
        }
    }

    /// Human-readable outcome equation and oracles.
    pub fn formulas(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let (design, outcome, cme, cape) = match self {
            DgpSpec::KeyA1 => (
                "(D, X) ~ N(0, [[1, 0.5], [0.5, 1]])",
                "Y = D^2 - 0.5 D + e,  e ~ N(0, 1)",
                Some("theta(x) = x - 0.5"),
                Some("rho(d, x) = 2 d - 0.5"),
            ),
            DgpSpec::Fig3Binary => (
                "X ~ U[-2, 2], Z1, Z2 ~ N(0, 1), P(D = 1 | X, Z) = logistic(0.5 X + 0.5 Z1)",
                "Y = 1 + X^2 + D - X^2 D + exp(Z1 + 0.5 X) Z2 + Z1^2 - 2 1(Z2 > 0) Z2 + 3 sin(Z1 + Z2) + e",
                Some("theta(x) = 1 - x^2"),
                None,
            ),
            DgpSpec::Fig4Continuous => (
                "X ~ U[-2, 2], D = 0.5 X + e_D, e_D ~ N(0, 1)",
                "Y = 1 + 1.5 X + D^2 - D X^2 + e",
                Some("theta(x) = x - x^2"),
                Some("rho(d, x) = 2 d - x^2"),
            ),
            DgpSpec::LinearNull => (
                "(D, X) ~ N(0, [[1, 0.5], [0.5, 1]])",
                "Y = 1 + D + X + e",
                Some("theta(x) = 1"),
                None,
            ),
            DgpSpec::Custom(_) => (
                "(D, X0) ~ N(0, [[1, correlation], [correlation, 1]]), X = shift + scale X0",
                "Y = D^2 - 0.5 D + noise_sd e",
                None,
                None,
            ),
        };
        m.insert("design".into(), design.into());
        m.insert("outcome".into(), outcome.into());
        if let Some(c) = cme {
            m.insert("cme".into(), c.into());
        }
        if let Some(c) = cape {
            m.insert("cape".into(), c.into());
        }
        m
    }

    fn validate(&self) -> Result<()> {
        match self {
            DgpSpec::Custom(p) => p.validate(),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DgpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DgpSpec {
    type Err = CmeError;

    /// Parses a design name; `custom` gets default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "key_a1" => Ok(DgpSpec::KeyA1),
            "fig3_binary" => Ok(DgpSpec::Fig3Binary),
            "fig4_continuous" => Ok(DgpSpec::Fig4Continuous),
            "linear_null" => Ok(DgpSpec::LinearNull),
            "custom" => Ok(DgpSpec::Custom(CustomParams::default())),
            other => Err(invalid(format!(
                "unknown dgp {other:?}; valid names: {}",
                DgpSpec::NAMES.join(", ")
            ))),
        }
    }
}

/// One simulated row before assembly into a [`Dataset`].
struct Row {
    y: f64,
    d: f64,
    x: f64,
    z: [f64; 2],
}

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

fn correlated_pair(rng: &mut StreamRng, rho: f64) -> (f64, f64) {
    let x = normal(rng);
    let d = rho * x + (1.0 - rho * rho).sqrt() * normal(rng);
    (d, x)
}

fn draw_row(spec: &DgpSpec, rng: &mut StreamRng) -> Row {
    match *spec {
        DgpSpec::KeyA1 => {
            let (d, x) = correlated_pair(rng, 0.5);
            let y = structural_outcome(spec, d, x, &[]) + normal(rng);
            Row { y, d, x, z: [0.0; 2] }
        }
        DgpSpec::LinearNull => {
            let (d, x) = correlated_pair(rng, 0.5);
            let y = structural_outcome(spec, d, x, &[]) + normal(rng);
            Row { y, d, x, z: [0.0; 2] }
        }
        DgpSpec::Fig4Continuous => {
            let x = rng.random_range(-2.0..=2.0);
            let d = 0.5 * x + normal(rng);
            let y = structural_outcome(spec, d, x, &[]) + normal(rng);
            Row { y, d, x, z: [0.0; 2] }
        }
        DgpSpec::Fig3Binary => {
            let x = rng.random_range(-2.0..=2.0);
            let z1 = normal(rng);
            let z2 = normal(rng);
            let e = true_propensity(x, z1);
            let d = if rng.random::<f64>() < e { 1.0 } else { 0.0 };
            let z = [z1, z2];
            let y = structural_outcome(spec, d, x, &z) + normal(rng);
            Row { y, d, x, z }
        }
        DgpSpec::Custom(p) => {
            let (d, x0) = correlated_pair(rng, p.correlation);
            let x = p.shift + p.scale * x0;
            let y = structural_outcome(spec, d, x, &[]) + p.noise_sd * normal(rng);
            Row { y, d, x, z: [0.0; 2] }
        }
    }
}

/// Draws `n` rows from the design.
pub fn sample(spec: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(CmeError::EmptyDataset);
    }
    let chunks = n.div_ceil(CHUNK);
    let rows: Vec<Vec<Row>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_stream(seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| draw_row(spec, &mut rng)).collect()
        })
        .collect();
    let rows: Vec<Row> = rows.into_iter().flatten().collect();
    let names = spec.covariate_names();
    let covariates: Vec<Vec<f64>> = (0..names.len())
        .map(|j| rows.iter().map(|r| r.z[j]).collect())
        .collect();
    Dataset::new(
        rows.iter().map(|r| r.y).collect(),
        rows.iter().map(|r| r.d).collect(),
        rows.iter().map(|r| r.x).collect(),
        covariates,
        ColumnRoles::default().with_covariates(&names),
        spec.treatment_binary(),
    )
}

/// `E[Y | D = d, X = x, Z = z]`: the outcome equation without its noise
/// term. `z` holds `(Z1, Z2)` for `fig3_binary` and is ignored otherwise.
pub fn structural_outcome(spec: &DgpSpec, d: f64, x: f64, z: &[f64]) -> f64 {
    match spec {
        DgpSpec::KeyA1 | DgpSpec::Custom(_) => d * d - 0.5 * d,
        DgpSpec::LinearNull => 1.0 + d + x,
        DgpSpec::Fig4Continuous => 1.0 + 1.5 * x + d * d - d * x * x,
        DgpSpec::Fig3Binary => {
            let (z1, z2) = (z[0], z[1]);
            let indicator = if z2 > 0.0 { 1.0 } else { 0.0 };
            1.0 + x * x + d - x * x * d + (z1 + 0.5 * x).exp() * z2 + z1 * z1
                - 2.0 * indicator * z2
                + 3.0 * (z1 + z2).sin()
        }
    }
}

/// The `fig3_binary` propensity `P(D = 1 | X = x, Z1 = z1)`.
pub fn true_propensity(x: f64, z1: f64) -> f64 {
    sigmoid(0.5 * x + 0.5 * z1)
}

fn oracle_required(spec: &DgpSpec) -> CmeError {
    CmeError::OracleRequired(format!("dgp {} has no analytic CME oracle", spec.name()))
}

/// True CME `θ(x) = E[∂Y/∂D | X = x]`.
pub fn cme_oracle(spec: &DgpSpec, x: f64) -> Result<f64> {
    match spec {
        DgpSpec::KeyA1 => Ok(x - 0.5),
        DgpSpec::Fig3Binary => Ok(1.0 - x * x),
        DgpSpec::Fig4Continuous => Ok(x - x * x),
        DgpSpec::LinearNull => Ok(1.0),
        DgpSpec::Custom(_) => Err(oracle_required(spec)),
    }
}

pub fn cme_oracle_curve(spec: &DgpSpec, grid: &[f64]) -> Result<Vec<f64>> {
    grid.iter().map(|&x| cme_oracle(spec, x)).collect()
}

/// True CAPE `ρ(d, x) = E[∂Y/∂D | D = d, X = x]`.
pub fn cape_oracle(spec: &DgpSpec, d: f64, x: f64) -> Result<f64> {
    match spec {
        DgpSpec::KeyA1 => Ok(2.0 * d - 0.5),
        DgpSpec::Fig4Continuous => Ok(2.0 * d - x * x),
        other => Err(CmeError::Unsupported(format!(
            "no CAPE oracle for dgp {}",
            other.name()
        ))),
    }
}

/// Population coefficients `(β0, βd, βx, βdx)` of the least-squares
/// projection of `Y` on `(1, D, X, DX)`.
pub fn linear_plim_oracle(spec: &DgpSpec) -> Result<[f64; 4]> {
    match spec {
        DgpSpec::KeyA1 => Ok([0.6, -0.5, 0.0, 0.8]),
        other => Err(CmeError::Unsupported(format!(
            "no population linear coefficients for dgp {}",
            other.name()
        ))),
    }
}

/// Solves `M⁻¹ b` with `M = E[WWᵀ]`, `b = E[WY]`, `W = (1, D, X, DX)`,
/// estimating both moments from `draws` simulated rows.
pub fn linear_plim_monte_carlo(spec: &DgpSpec, draws: usize, seed: u64) -> Result<[f64; 4]> {
    spec.validate()?;
    if draws == 0 {
        return Err(CmeError::EmptyDataset);
    }
    let chunks = draws.div_ceil(CHUNK);
    let moments: Vec<([f64; 16], [f64; 4])> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_stream(seed, c as u64);
            let len = CHUNK.min(draws - c * CHUNK);
            let mut m = [0.0; 16];
            let mut b = [0.0; 4];
            for _ in 0..len {
                let r = draw_row(spec, &mut rng);
                let w = [1.0, r.d, r.x, r.d * r.x];
                for a in 0..4 {
                    b[a] += w[a] * r.y;
                    for k in 0..4 {
                        m[a * 4 + k] += w[a] * w[k];
                    }
                }
            }
            (m, b)
        })
        .collect();
    let mut m = [0.0; 16];
    let mut b = [0.0; 4];
    for (mc, bc) in &moments {
        for i in 0..16 {
            m[i] += mc[i];
        }
        for i in 0..4 {
            b[i] += bc[i];
        }
    }
    let matrix = nalgebra::DMatrix::from_row_slice(4, 4, &m);
    let chol = Cholesky::factor(&matrix).map_err(|_| CmeError::RankDeficient {
        columns: vec!["population moment matrix".into()],
    })?;
    let beta = chol.solve(&b);
    Ok([beta[0], beta[1], beta[2], beta[3]])
}
