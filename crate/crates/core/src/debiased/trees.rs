//! Gradient-boosted regression trees with squared loss.
//!
//! Trees are grown level by level with exact greedy splits over presorted
//! features. A random share of the training rows is held out for early
//! stopping; the returned ensemble is truncated at the round with the
//! lowest validation error.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{rng_stream, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub min_leaf: usize,
    /// Rounds without validation improvement before stopping.
    pub patience: usize,
}

impl Default for BoostingParams {
    fn default() -> Self {
        Self {
            rounds: 200,
            max_depth: 3,
            learning_rate: 0.1,
            validation_fraction: 0.2,
            min_leaf: 10,
            patience: 20,
        }
    }
}

impl BoostingParams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.max_depth == 0 {
            return Err(invalid("boosting needs at least one round of depth >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(invalid("learning_rate must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid("validation_fraction must lie in [0, 1)"));
        }
        if self.min_leaf == 0 {
            return Err(invalid("min_leaf must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &dyn Fn(usize) -> f64) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row(feature) <= threshold { left } else { right },
                Node::Leaf(v) => return v,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedTrees {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    /// Validation error after each completed round (empty without a
    /// validation split).
    pub validation_trace: Vec<f64>,
}

impl BoostedTrees {
    pub fn rounds(&self) -> usize {
        self.trees.len()
    }

    /// Prediction for row `i` of column-major `features`.
    pub fn predict_row(&self, features: &[&[f64]], i: usize) -> f64 {
        let get = |f: usize| features[f][i];
        self.base
            + self.learning_rate * self.trees.iter().map(|t| t.predict(&get)).sum::<f64>()
    }

    pub fn predict(&self, features: &[&[f64]], rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.predict_row(features, i)).collect()
    }
}

/// Grows one tree on the fit rows. `cols[f][i]` is feature `f` of fit row
/// `i`; `sorted[f]` orders fit rows by feature `f`.
fn grow_tree(cols: &[Vec<f64>], sorted: &[Vec<u32>], r: &[f64], params: &BoostingParams) -> Tree {
    let m = r.len();
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut node_of = vec![0usize; m];
    let mut frontier = vec![0usize];
    for _ in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let nn = nodes.len();
        let mut open = vec![false; nn];
        for &q in &frontier {
            open[q] = true;
        }
        let mut cnt = vec![0usize; nn];
        let mut sum = vec![0.0; nn];
        for i in 0..m {
            cnt[node_of[i]] += 1;
            sum[node_of[i]] += r[i];
        }
        let mut best: Vec<Option<(f64, usize, f64)>> = vec![None; nn];
        let mut lc = vec![0usize; nn];
        let mut ls = vec![0.0; nn];
        let mut last = vec![0.0; nn];
        for (f, order) in sorted.iter().enumerate() {
            lc.iter_mut().for_each(|v| *v = 0);
            ls.iter_mut().for_each(|v| *v = 0.0);
            for &iu in order {
                let i = iu as usize;
                let q = node_of[i];
                if !open[q] {
                    continue;
                }
                let v = cols[f][i];
                if lc[q] > 0 && v > last[q] {
                    let nl = lc[q];
                    let nr = cnt[q] - nl;
                    if nl >= params.min_leaf && nr >= params.min_leaf {
                        let sl = ls[q];
                        let sr = sum[q] - sl;
                        let gain = sl * sl / nl as f64 + sr * sr / nr as f64
                            - sum[q] * sum[q] / cnt[q] as f64;
                        if gain > best[q].map_or(1e-12, |b| b.0) {
                            best[q] = Some((gain, f, 0.5 * (last[q] + v)));
                        }
                    }
                }
                lc[q] += 1;
                ls[q] += r[i];
                last[q] = v;
            }
        }
        let mut next = Vec::new();
        let mut children = vec![None; nn];
        for &q in &frontier {
            if let Some((_, feature, threshold)) = best[q] {
                let left = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                nodes[q] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right: left + 1,
                };
                children[q] = Some((feature, threshold, left));
                next.push(left);
                next.push(left + 1);
            }
        }
        for i in 0..m {
            if let Some((feature, threshold, left)) = children[node_of[i]] {
                node_of[i] = if cols[feature][i] <= threshold { left } else { left + 1 };
            }
        }
        frontier = next;
    }
    let mut cnt = vec![0usize; nodes.len()];
    let mut sum = vec![0.0; nodes.len()];
    for i in 0..m {
        cnt[node_of[i]] += 1;
        sum[node_of[i]] += r[i];
    }
    for (q, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf(v) = node {
            *v = if cnt[q] > 0 { sum[q] / cnt[q] as f64 } else { 0.0 };
        }
    }
    Tree { nodes }
}

/// Fits the ensemble on `rows` of column-major `features` against `y`.
pub fn fit_boosted(
    features: &[&[f64]],
    y: &[f64],
    rows: &[usize],
    params: &BoostingParams,
    seed: u64,
) -> Result<BoostedTrees> {
    params.validate()?;
    if rows.is_empty() {
        return Err(invalid("boosting needs at least one training row"));
    }
    let mut shuffled = rows.to_vec();
    let n_val = (params.validation_fraction * rows.len() as f64).round() as usize;
    let n_val = if rows.len() - n_val < 2 * params.min_leaf { 0 } else { n_val };
    if n_val > 0 {
        shuffled.shuffle(&mut rng_stream(seed, streams::VALIDATION));
    }
    let (val_rows, fit_rows) = shuffled.split_at(n_val);

    let m = fit_rows.len();
    let cols: Vec<Vec<f64>> = features
        .iter()
        .map(|c| fit_rows.iter().map(|&i| c[i]).collect())
        .collect();
    let sorted: Vec<Vec<u32>> = cols
        .iter()
        .map(|c| {
            let mut o: Vec<u32> = (0..m as u32).collect();
            o.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
            o
        })
        .collect();
    let target: Vec<f64> = fit_rows.iter().map(|&i| y[i]).collect();
    let base = target.iter().sum::<f64>() / m as f64;
    let mut fitted = vec![base; m];
    let mut val_pred: Vec<f64> = vec![base; val_rows.len()];
    let val_y: Vec<f64> = val_rows.iter().map(|&i| y[i]).collect();

    let mut trees = Vec::new();
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, 0usize);
    for round in 0..params.rounds {
        let r: Vec<f64> = target.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let tree = grow_tree(&cols, &sorted, &r, params);
        for i in 0..m {
            let get = |f: usize| cols[f][i];
            fitted[i] += params.learning_rate * tree.predict(&get);
        }
        if !val_rows.is_empty() {
            let mut sse = 0.0;
            for (k, &i) in val_rows.iter().enumerate() {
                let get = |f: usize| features[f][i];
                val_pred[k] += params.learning_rate * tree.predict(&get);
                sse += (val_y[k] - val_pred[k]).powi(2);
            }
            let mse = sse / val_rows.len() as f64;
            trace.push(mse);
            if mse < best.0 {
                best = (mse, round + 1);
            }
        }
        trees.push(tree);
        if !val_rows.is_empty() && round + 1 - best.1 >= params.patience {
            break;
        }
    }
    if !val_rows.is_empty() {
        trees.truncate(best.1);
    }
    Ok(BoostedTrees {
        base,
        learning_rate: params.learning_rate,
        trees,
        validation_trace: trace,
    })
}
