use nalgebra::{DMatrix, DVector};

/// Relative pivot below which a column is treated as collinear with the
/// columns before it.
const PIVOT_TOL: f64 = 1e-11;

/// Cholesky factor of a symmetric positive definite matrix, computed on
/// the diagonally scaled matrix so the collinearity test is scale free.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: DMatrix<f64>,
    scale: Vec<f64>,
}

impl Cholesky {
    /// Factors `a`. On failure returns the indices of the columns that are
    /// (numerically) linear combinations of earlier columns.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self, Vec<usize>> {
        let k = a.nrows();
        let max_diag = (0..k).map(|j| a[(j, j)]).fold(0.0_f64, f64::max);
        let mut bad = Vec::new();
        let scale: Vec<f64> = (0..k)
            .map(|j| {
                let d = a[(j, j)];
                if d > max_diag * 1e-300 && d > 0.0 {
                    d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut lower = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            if scale[j] == 0.0 {
                bad.push(j);
                continue;
            }
            let mut d = 1.0;
            for p in 0..j {
                d -= lower[(j, p)] * lower[(j, p)];
            }
            if d <= PIVOT_TOL {
                bad.push(j);
                continue;
            }
            let ljj = d.sqrt();
            lower[(j, j)] = ljj;
            for i in (j + 1)..k {
                if scale[i] == 0.0 {
                    continue;
                }
                let mut s = a[(i, j)] / (scale[i] * scale[j]);
                for p in 0..j {
                    s -= lower[(i, p)] * lower[(j, p)];
                }
                lower[(i, j)] = s / ljj;
            }
        }
        if bad.is_empty() {
            Ok(Self { lower, scale })
        } else {
            Err(bad)
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.dim();
        let mut z: Vec<f64> = b.iter().zip(&self.scale).map(|(v, s)| v / s).collect();
        for i in 0..k {
            let mut s = z[i];
            for p in 0..i {
                s -= self.lower[(i, p)] * z[p];
            }
            z[i] = s / self.lower[(i, i)];
        }
        for i in (0..k).rev() {
            let mut s = z[i];
            for p in (i + 1)..k {
                s -= self.lower[(p, i)] * z[p];
            }
            z[i] = s / self.lower[(i, i)];
        }
        z.iter().zip(&self.scale).map(|(v, s)| v / s).collect()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let k = self.dim();
        let mut inv = DMatrix::<f64>::zeros(k, k);
        let mut e = vec![0.0; k];
        for j in 0..k {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            inv.set_column(j, &DVector::from_vec(col));
        }
        // Symmetrize away rounding.
        let t = inv.transpose();
        (inv + t) * 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]);
        let chol = Cholesky::factor(&a).unwrap();
        let x = chol.solve(&[1.0, 2.0, 3.0]);
        let back = &a * DVector::from_vec(x);
        for (got, want) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let inv = chol.inverse();
        let id = &a * inv;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reports_collinear_column() {
        // Column 2 = column 0 + column 1.
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 2.0, 3.0, 1.0, 5.0, 6.0]);
        let g = x.transpose() * &x;
        assert_eq!(Cholesky::factor(&g).unwrap_err(), vec![2]);
    }
}
