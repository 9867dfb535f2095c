use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordinary least squares with intercept. Solved through the SVD
/// pseudo-inverse, so collinear columns (one-hot blocks next to the intercept)
/// get the minimum-norm solution instead of an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl LinearModel {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Result<LinearModel> {
        let n = xs.len();
        let d = xs.first().map(|x| x.len()).ok_or_else(|| Error::input("empty training set"))?;
        let x = DMatrix::from_fn(n, d + 1, |r, c| if c == 0 { 1.0 } else { xs[r][c - 1] });
        let y = DVector::from_column_slice(ys);
        let pinv = x.pseudo_inverse(1e-10).map_err(|e| Error::input(format!("least squares: {e}")))?;
        let beta = pinv * y;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("least-squares solution"));
        }
        Ok(LinearModel { intercept: beta[0], weights: beta.iter().skip(1).copied().collect() })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_intercept() {
        let m = LinearModel { intercept: 2.5, weights: vec![0.0; 3] };
        assert_eq!(m.predict(&[1.0, -4.0, 9.0]), 2.5);
    }

    #[test]
    fn duplicated_column_is_tolerated() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64]).collect();
        let ys: Vec<f64> = (0..10).map(|i| 1.0 + 2.0 * i as f64).collect();
        let m = LinearModel::fit(&xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.predict(x) - y).abs() < 1e-9);
        }
        assert!((m.weights[0] - m.weights[1]).abs() < 1e-9);
    }
}
