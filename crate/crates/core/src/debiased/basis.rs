//! Polynomial basis with pairwise interactions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const MAX_DEGREE: usize = 3;

/// Powers `v, v², v³` of every source variable followed by all pairwise
/// products `v_a·v_b` (`a < b`), in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisExpansion {
    pub sources: Vec<String>,
    pub labels: Vec<String>,
}

impl BasisExpansion {
    pub fn new<S: AsRef<str>>(sources: &[S]) -> Self {
        let sources: Vec<String> = sources.iter().map(|s| s.as_ref().to_string()).collect();
        let mut labels = Vec::new();
        for s in &sources {
            labels.push(s.clone());
            for d in 2..=MAX_DEGREE {
                labels.push(format!("{s}^{d}"));
            }
        }
        for a in 0..sources.len() {
            for b in a + 1..sources.len() {
                labels.push(format!("{}*{}", sources[a], sources[b]));
            }
        }
        Self { sources, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Expands one observation.
    pub fn expand_row(&self, values: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for &v in values {
            let mut p = v;
            out.push(p);
            for _ in 2..=MAX_DEGREE {
                p *= v;
                out.push(p);
            }
        }
        for a in 0..values.len() {
            for b in a + 1..values.len() {
                out.push(values[a] * values[b]);
            }
        }
    }

    /// Expands column-major source data into an `n × len` design.
    pub fn expand(&self, columns: &[&[f64]]) -> DMatrix<f64> {
        assert_eq!(columns.len(), self.sources.len(), "one column per source");
        let n = columns.first().map_or(0, |c| c.len());
        let mut m = DMatrix::zeros(n, self.len());
        let mut vals = vec![0.0; columns.len()];
        let mut row = Vec::with_capacity(self.len());
        for i in 0..n {
            for (v, c) in vals.iter_mut().zip(columns) {
                *v = c[i];
            }
            self.expand_row(&vals, &mut row);
            for (j, r) in row.iter().enumerate() {
                m[(i, j)] = *r;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_stable() {
        let b = BasisExpansion::new(&["X", "Z1", "Z2"]);
        assert_eq!(b.len(), 12);
        assert_eq!(
            b.labels,
            vec![
                "X", "X^2", "X^3", "Z1", "Z1^2", "Z1^3", "Z2", "Z2^2", "Z2^3", "X*Z1", "X*Z2",
                "Z1*Z2"
            ]
        );
        assert_eq!(BasisExpansion::new(&["X", "Z1", "Z2"]), b);
    }

    #[test]
    fn expansion_values() {
        let b = BasisExpansion::new(&["a", "b"]);
        let m = b.expand(&[&[2.0], &[-1.0]]);
        let row: Vec<f64> = m.row(0).iter().copied().collect();
        assert_eq!(row, vec![2.0, 4.0, 8.0, -1.0, 1.0, -1.0, -2.0]);
    }
}
