//! Pointwise and sup-t uniform confidence bands.
//!
//! The uniform band is `θ̂(x_k) ± c*·se(x_k)` where `c*` is the
//! `level`-quantile of the bootstrap distribution of
//! `max_k |θ̂*_b(x_k) − θ̂(x_k)| / se(x_k)` over non-trimmed grid points.
//! Replicate `b` draws from `rng_stream(seed, b)`, so the band does not
//! depend on how replicates are scheduled across threads.

use rand::Rng;
use rayon::prelude::*;

use crate::data::{Band, CmeCurve, CurveMetadata};
use crate::error::{CmeError, Result};
use crate::numerics::{normal_critical, rng_stream, StreamRng};

pub const MIN_BOOT_SUCCESSES: usize = 50;

/// Multinomial resampling counts: how often each of `n` rows is drawn in
/// a bootstrap sample of size `n`.
pub fn bootstrap_counts(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    let mut counts = vec![0.0; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1.0;
    }
    counts
}

#[derive(Debug, Clone, Copy)]
pub struct SupT {
    pub multiplier: f64,
    pub successes: usize,
}

/// Runs `n_boot` replicates and returns the sup-t critical value.
///
/// `replicate` returns the re-estimated curve, or `None` when the
/// replicate's fit is degenerate. The returned multiplier is never below
/// the pointwise normal critical value, so the uniform band always
/// contains the pointwise band.
pub fn sup_t<F>(
    estimate: &[f64],
    se: &[f64],
    trimmed: &[bool],
    n_boot: usize,
    level: f64,
    seed: u64,
    replicate: F,
) -> Result<SupT>
where
    F: Fn(&mut StreamRng) -> Option<Vec<f64>> + Sync,
{
    let active: Vec<usize> = (0..estimate.len())
        .filter(|&k| !trimmed[k] && se[k] > 0.0 && se[k].is_finite())
        .collect();
    let stats: Vec<Option<f64>> = (0..n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_stream(seed, b);
            let star = replicate(&mut rng)?;
            let mut sup = 0.0_f64;
            for &k in &active {
                let t = (star[k] - estimate[k]).abs() / se[k];
                if !t.is_finite() {
                    return None;
                }
                sup = sup.max(t);
            }
            Some(sup)
        })
        .collect();
    let mut ok: Vec<f64> = stats.into_iter().flatten().collect();
    if ok.len() < MIN_BOOT_SUCCESSES {
        return Err(CmeError::Bootstrap {
            successes: ok.len(),
        });
    }
    ok.sort_by(f64::total_cmp);
    let idx = ((level * ok.len() as f64).ceil() as usize).clamp(1, ok.len()) - 1;
    Ok(SupT {
        multiplier: ok[idx].max(normal_critical(level)),
        successes: ok.len(),
    })
}

/// Assembles a curve from point estimates and standard errors. Trimmed
/// points carry NaN estimates.
pub(crate) fn assemble(
    grid: Vec<f64>,
    mut estimate: Vec<f64>,
    mut se: Vec<f64>,
    trimmed: Vec<bool>,
    level: f64,
    uniform: Option<SupT>,
    mut metadata: CurveMetadata,
) -> CmeCurve {
    for k in 0..grid.len() {
        if trimmed[k] {
            estimate[k] = f64::NAN;
            se[k] = f64::NAN;
        }
    }
    let z = normal_critical(level);
    let ci_pointwise = Band::around(&estimate, &se, z);
    let ci_uniform = uniform.map(|u| Band::around(&estimate, &se, u.multiplier));
    metadata.confidence_level = level;
    metadata.pointwise_multiplier = z;
    metadata.uniform_multiplier = uniform.map(|u| u.multiplier);
    metadata.bootstrap_successes = uniform.map(|u| u.successes);
    CmeCurve {
        grid,
        estimate,
        std_error: se,
        ci_pointwise,
        ci_uniform,
        trimmed,
        metadata,
    }
}

pub(crate) fn metadata(estimator: &str, seed: u64, n: usize, n_boot: usize) -> CurveMetadata {
    CurveMetadata {
        estimator: estimator.to_string(),
        bandwidth: None,
        seed,
        n,
        n_boot,
        confidence_level: 0.0,
        pointwise_multiplier: 0.0,
        uniform_multiplier: None,
        bootstrap_successes: None,
        warnings: Vec::new(),
        notes: Vec::new(),
    }
}
